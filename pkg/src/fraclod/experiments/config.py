"""JSON experiment configs: dataclasses, validation and scaling.

One experiment per file. Relative file paths are resolved against the
directory holding the config. Unknown keys are rejected so typos fail early.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..coefficients import FieldError, ScalarFunction
from ..interpolation import VARIANTS, arc_domain
from .geometry import BUILTIN_NETWORKS

KINDS = ("dual_norm_table", "decay_demo", "convergence", "patch_study", "wave")


class ConfigError(ValueError):
    pass


@dataclass
class MeshConfig:
    coarse_n: list = field(default_factory=lambda: [16])   # structured coarse meshes
    fine_n: int = 64                                        # structured fine mesh
    file: str | None = None                                 # unstructured coarsest mesh
    refinements: int = 4                                    # levels above ``file``


@dataclass
class FieldConfig:
    n: int = 64
    lo: float = 0.1
    hi: float = 0.9
    seeds: list = field(default_factory=lambda: [2024])
    level: int | None = None   # grid width = H of this refinement level (unstructured runs)


@dataclass
class InterfaceConfig:
    A: Any = 1.0
    B: Any = 0.0
    f: list = field(default_factory=lambda: [0.0])


@dataclass
class SourceConfig:
    f: Any = 0.0
    B: float = 1.0


@dataclass
class InterpolationConfig:
    variants: list = field(default_factory=lambda: ["fracture-aware"])
    sigmas: list = field(default_factory=lambda: [500.0])


@dataclass
class WaveConfig:
    tau: float = 1e-2
    t_end: float = 1.0
    sample_times: list = field(default_factory=lambda: [0.1, 1.0])
    switch_off: float | None = None


@dataclass
class DualConfig:
    shapes: list = field(default_factory=lambda: [1, 2])
    a: list = field(default_factory=lambda: [2.0, 20.0, 200.0, 2000.0])


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    mesh: MeshConfig = field(default_factory=MeshConfig)
    geometry: str | None = None
    fracture_file: str | None = None
    coefficient: FieldConfig = field(default_factory=FieldConfig)
    interface: InterfaceConfig = field(default_factory=InterfaceConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    interpolation: InterpolationConfig = field(default_factory=InterpolationConfig)
    k: list = field(default_factory=lambda: [2])
    wave: WaveConfig = field(default_factory=WaveConfig)
    dual: DualConfig = field(default_factory=DualConfig)
    decay_layers: list = field(default_factory=lambda: [2, 5])
    workers: int = 1
    scale: float = 1.0
    base_dir: str = "."

    def path(self, name: str | None) -> Path | None:
        if name is None:
            return None
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


_SECTIONS = {
    "mesh": MeshConfig, "coefficient": FieldConfig, "interface": InterfaceConfig,
    "source": SourceConfig, "interpolation": InterpolationConfig, "wave": WaveConfig,
    "dual": DualConfig,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)} - {"base_dir"}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")
    return data


def config_from_dict(data: dict, base_dir=".") -> ExperimentConfig:
    data = dict(_build(ExperimentConfig, data, "config"))
    if "kind" not in data:
        raise ConfigError("config: missing 'kind'")
    for key, cls in _SECTIONS.items():
        if key in data:
            data[key] = cls(**_build(cls, data[key], key))
    cfg = ExperimentConfig(**data, base_dir=str(base_dir))
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(data, path.parent)
    if not cfg.name:
        cfg.name = path.stem
    return cfg


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _pos_int(x, name) -> None:
    _require(isinstance(x, int) and not isinstance(x, bool) and x >= 1, f"{name} must be a positive integer, got {x!r}")


def _pos(x, name) -> None:
    _require(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0,
             f"{name} must be a positive number, got {x!r}")


def _function(spec, name) -> None:
    try:
        ScalarFunction.from_dict(spec)
    except (FieldError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def validate(cfg: ExperimentConfig) -> None:
    """Check ranges and references; raises ``ConfigError`` before any computation."""
    _require(cfg.kind in KINDS, f"kind must be one of {KINDS}, got {cfg.kind!r}")
    _pos(cfg.scale, "scale")
    _require(cfg.scale <= 1, "scale must not exceed 1")
    _pos_int(cfg.workers, "workers")
    if cfg.kind == "dual_norm_table":
        _require(len(cfg.dual.shapes) > 0 and all(s in (1, 2) for s in cfg.dual.shapes), "dual.shapes must be drawn from {1, 2}")
        _require(len(cfg.dual.a) > 0, "dual.a must not be empty")
        for a in cfg.dual.a:
            _pos(a, "dual.a")
            for shape in cfg.dual.shapes:
                try:
                    arc_domain(float(a), int(shape))
                except ValueError as exc:
                    raise ConfigError(f"dual.a={a}: {exc}") from exc
        return

    m = cfg.mesh
    if cfg.kind == "convergence":
        _require(m.file is not None, "convergence needs mesh.file")
        _require(cfg.path(m.file).is_file(), f"mesh file {cfg.path(m.file)} does not exist")
        _pos_int(m.refinements, "mesh.refinements")
        _require(m.refinements >= 2, "mesh.refinements must be at least 2")
        _require(len(cfg.k) in (1, m.refinements), "k must hold one value or one per coarse level")
    else:
        _pos_int(m.fine_n, "mesh.fine_n")
        _require(len(m.coarse_n) > 0, "mesh.coarse_n must not be empty")
        for n in m.coarse_n:
            _pos_int(n, "mesh.coarse_n")
            _require(m.fine_n % n == 0 and _is_pow2(m.fine_n // n),
                     f"mesh.fine_n={m.fine_n} must be a power-of-two multiple of coarse_n={n}")

    _require((cfg.geometry is None) != (cfg.fracture_file is None),
             "give exactly one of geometry and fracture_file")
    if cfg.geometry is not None:
        _require(cfg.geometry in BUILTIN_NETWORKS, f"unknown geometry {cfg.geometry!r}; known: {sorted(BUILTIN_NETWORKS)}")
    else:
        _require(cfg.path(cfg.fracture_file).is_file(), f"fracture file {cfg.path(cfg.fracture_file)} does not exist")

    c = cfg.coefficient
    _pos_int(c.n, "coefficient.n")
    _pos(c.lo, "coefficient.lo")
    _require(isinstance(c.hi, (int, float)) and c.hi >= c.lo, "coefficient.hi must be >= coefficient.lo")
    _require(len(c.seeds) > 0 and all(isinstance(s, int) and s >= 0 for s in c.seeds),
             "coefficient.seeds must be non-negative integers")
    if c.level is not None:
        _require(cfg.kind == "convergence", "coefficient.level only applies to convergence runs")
        _require(isinstance(c.level, int) and 0 <= c.level <= m.refinements, "coefficient.level out of range")

    for name, v in (("interface.A", cfg.interface.A), ("interface.B", cfg.interface.B)):
        vals = v if isinstance(v, list) else [v]
        _require(len(vals) > 0, f"{name} must not be empty")
        for x in vals:
            _require(isinstance(x, (int, float)) and math.isfinite(x), f"{name} must be numeric")
    for x in (cfg.interface.A if isinstance(cfg.interface.A, list) else [cfg.interface.A]):
        _pos(x, "interface.A")
    for i, g in enumerate(cfg.interface.f):
        _function(g, f"interface.f[{i}]")
    _function(cfg.source.f, "source.f")
    _require(isinstance(cfg.source.B, (int, float)) and cfg.source.B > 0, "source.B must be positive")

    ip = cfg.interpolation
    _require(len(ip.variants) > 0 and all(v in VARIANTS for v in ip.variants), f"interpolation.variants must be drawn from {VARIANTS}")
    _require(len(ip.sigmas) > 0, "interpolation.sigmas must not be empty")
    for s in ip.sigmas:
        _pos(s, "interpolation.sigmas")
    _require(len(cfg.k) > 0, "k must not be empty")
    for k in cfg.k:
        _pos_int(k, "k")

    if cfg.kind == "decay_demo":
        lo, hi = (cfg.decay_layers + [None, None])[:2]
        _require(len(cfg.decay_layers) == 2 and isinstance(lo, int) and isinstance(hi, int) and 0 <= lo < hi,
                 "decay_layers must be [first, last] with 0 <= first < last")
    if cfg.kind == "wave":
        w = cfg.wave
        _pos(w.tau, "wave.tau")
        _pos(w.t_end, "wave.t_end")
        _require(abs(w.t_end / w.tau - round(w.t_end / w.tau)) < 1e-9, "wave.t_end must be a multiple of wave.tau")
        _require(len(w.sample_times) > 0, "wave.sample_times must not be empty")
        for t in w.sample_times:
            _pos(t, "wave.sample_times")
            _require(t <= w.t_end + 1e-12 and abs(t / w.tau - round(t / w.tau)) < 1e-9,
                     f"sample time {t} is not on the time grid")
        if w.switch_off is not None:
            _pos(w.switch_off, "wave.switch_off")
            _require(w.switch_off < w.t_end, "wave.switch_off must be before t_end")


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def scaled(cfg: ExperimentConfig, scale: float | None = None) -> ExperimentConfig:
    """Shrink resolutions by ``2^round(log2(1/scale))`` while keeping nesting.

    Structured sizes are divided (coarse sizes never below 2), the refinement
    count of unstructured runs drops by the same number of halvings (never
    below 2) and the coefficient grid follows the fine mesh.
    """
    s = cfg.scale if scale is None else float(scale)
    if not (math.isfinite(s) and 0 < s <= 1):
        raise ConfigError(f"scale must lie in (0, 1], got {s}")
    halvings = int(round(math.log2(1.0 / s)))
    if halvings == 0:
        return replace(cfg, scale=s)
    d = 2 ** halvings
    m = cfg.mesh
    if cfg.kind == "convergence":
        refs = max(2, m.refinements - halvings)
        mesh = replace(m, refinements=refs)
        coef = replace(cfg.coefficient, level=None if cfg.coefficient.level is None
                       else max(0, cfg.coefficient.level - (m.refinements - refs)))
        k = cfg.k if len(cfg.k) == 1 else cfg.k[:refs]
        out = replace(cfg, mesh=mesh, coefficient=coef, k=k, scale=s)
    elif cfg.kind == "dual_norm_table":
        out = replace(cfg, scale=s)
    else:
        fine = max(4, m.fine_n // d)
        coarse = sorted({max(2, min(fine // 2, n // d)) for n in m.coarse_n})
        coef = replace(cfg.coefficient, n=max(1, cfg.coefficient.n // d))
        out = replace(cfg, mesh=replace(m, fine_n=fine, coarse_n=coarse), coefficient=coef, scale=s)
    validate(out)
    return out


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
