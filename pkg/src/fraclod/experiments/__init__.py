"""JSON-configured experiment drivers, tables and plots."""
from .config import ConfigError, ExperimentConfig, load_config, scaled
from .drivers import DRIVERS, decay_slope, run_experiment
from .output import ResultTable, emit_basis_csv, emit_csv, emit_svg_plot, emit_vector_csv, read_csv

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "scaled", "DRIVERS", "decay_slope",
           "run_experiment", "ResultTable", "emit_csv", "emit_svg_plot", "emit_vector_csv",
           "emit_basis_csv", "read_csv"]
