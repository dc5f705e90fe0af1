"""Experiment drivers: each takes a validated config and returns a ResultTable."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..coefficients import GridField, InterfaceData, SourceTerm, as_function, layered_field, sample_uniform
from ..fem import AssembledForms, assemble_forms, relative_energy_error, solve_reference
from ..fracture import FractureNetwork, FractureTrace, load_fractures, trace_fracture
from ..interpolation import arc_domain, build_interpolation, dual_basis, sigma_mass_matrix
from ..lod import coarse_fem_solution, coarse_system, corrected_basis, decay_profile, global_corrector, lod_solve
from ..mesh import TriMesh, load_mesh, refine, unit_square_structured
from ..wave import TimeGrid, constant_profile, switch_off, wave_solve
from .config import ConfigError, ExperimentConfig
from .geometry import builtin_network, polyline_layers
from .output import ResultTable, emit_basis_csv, emit_vector_csv

log = logging.getLogger("fraclod")


# ---------------------------------------------------------------- shared inputs

def load_network(cfg: ExperimentConfig) -> FractureNetwork:
    if cfg.geometry is not None:
        return builtin_network(cfg.geometry)
    return load_fractures(cfg.path(cfg.fracture_file))


def _per_polyline(v, npoly: int, name: str) -> np.ndarray:
    vals = np.atleast_1d(np.asarray(v, dtype=float))
    if vals.size == 1:
        return np.full(npoly, vals[0])
    if vals.size != npoly:
        raise ConfigError(f"{name} has {vals.size} entries for {npoly} polylines")
    return vals


def interface_data(cfg: ExperimentConfig, npoly: int) -> InterfaceData:
    f = cfg.interface.f
    if len(f) not in (1, npoly):
        raise ConfigError(f"interface.f has {len(f)} entries for {npoly} polylines")
    return InterfaceData(_per_polyline(cfg.interface.A, npoly, "interface.A"),
                         _per_polyline(cfg.interface.B, npoly, "interface.B"), list(f))


def source_term(cfg: ExperimentConfig) -> SourceTerm:
    return SourceTerm(as_function(cfg.source.f), float(cfg.source.B))


def coefficient_field(cfg: ExperimentConfig, n: int | None = None, region=None) -> GridField:
    c = cfg.coefficient
    n = c.n if n is None else n
    if len(c.seeds) == 1:
        return sample_uniform(n, c.lo, c.hi, c.seeds[0])
    if region is None:
        raise ConfigError("several coefficient seeds need layer interfaces to split the domain")
    return layered_field(n, c.lo, c.hi, c.seeds, region)


@dataclass(eq=False)
class StructuredSetup:
    network: FractureNetwork
    fine: TriMesh
    fine_trace: FractureTrace
    forms: AssembledForms


def structured_setup(cfg: ExperimentConfig, with_mass: bool = False) -> StructuredSetup:
    net = load_network(cfg)
    fine = unit_square_structured(cfg.mesh.fine_n)
    ft = trace_fracture(fine, net)
    forms = assemble_forms(fine, coefficient_field(cfg), ft, interface_data(cfg, len(net.polylines)),
                           source_term(cfg), with_mass=with_mass)
    return StructuredSetup(net, fine, ft, forms)


def structured_coarse(n: int, net: FractureNetwork) -> tuple[TriMesh, FractureTrace]:
    c = unit_square_structured(n)
    return c, trace_fracture(c, net)


def _eoc(e0: float, e1: float, h0: float, h1: float) -> float:
    if not (e0 > 0 and e1 > 0):
        return math.nan
    return math.log(e0 / e1) / math.log(h0 / h1)


# ---------------------------------------------------------------- dual norms

def run_dual_norm_table(cfg: ExperimentConfig) -> ResultTable:
    """Dual-basis norms of the three corners for arcs in the reference triangle."""
    table = ResultTable(["shape", "a", "psi1", "psi2", "psi3"])
    for shape in cfg.dual.shapes:
        for a in cfg.dual.a:
            dom = arc_domain(float(a), int(shape))
            M = sigma_mass_matrix(dom)
            norms = [dual_basis(i, dom, M).norm for i in range(3)]
            table.add(int(shape), float(a), *norms)
    return table


# ---------------------------------------------------------------- decay

def center_node(mesh: TriMesh, point=(0.5, 0.5)) -> int:
    d = np.linalg.norm(mesh.vertices - np.asarray(point), axis=1)
    return int(np.argmin(d))


def run_decay_demo(cfg: ExperimentConfig, export_dir=None) -> ResultTable:
    """Ring energies of the global corrector of the hat at (0.5, 0.5), per variant.

    With ``export_dir`` each variant's corrector is written as
    ``<name>_corrector_<variant>.csv`` (node, dof, value).
    """
    setup = structured_setup(cfg)
    coarse, ct = structured_coarse(cfg.mesh.coarse_n[0], setup.network)
    N = center_node(coarse)
    center = coarse.triangles_of_vertex(N)
    table = ResultTable(["variant", "layer", "energy", "sup"])
    for variant in cfg.interpolation.variants:
        op = build_interpolation(setup.fine, coarse, ct, setup.fine_trace, cfg.interpolation.sigmas[0], variant)
        lam = op.prolongation_full[:, N].toarray().ravel()
        q = global_corrector(setup.forms, op, lam)
        if export_dir is not None:
            emit_basis_csv(q[:, None], Path(export_dir) / f"{cfg.name}_corrector_{variant}.csv", nodes=[N])
        prof = decay_profile(q, center, setup.forms, coarse)
        for m, e, s in zip(prof.layers, prof.energy, prof.sup):
            table.add(variant, int(m), float(e), float(s))
    return table


def decay_slope(table: ResultTable, variant: str, first: int, last: int) -> float:
    """Least-squares slope of ``ln(ring energy)`` over layers ``first..last``."""
    sub = table.where(variant=variant)
    layers = np.array(sub.column("layer"), dtype=float)
    energy = np.array(sub.column("energy"), dtype=float)
    sel = (layers >= first) & (layers <= last)
    if sel.sum() < 2 or np.any(energy[sel] <= 0):
        raise ValueError(f"not enough positive ring energies on layers {first}..{last}")
    return float(np.polyfit(layers[sel], np.log(energy[sel]), 1)[0])


# ---------------------------------------------------------------- convergence

def run_convergence(cfg: ExperimentConfig) -> ResultTable:
    """LOD and coarse FEM errors on a refinement hierarchy of an unstructured mesh."""
    coarsest = load_mesh(cfg.path(cfg.mesh.file))
    net = load_network(cfg)
    if not trace_fracture(coarsest, net).union_of_edges:
        raise ConfigError("the interfaces must be unions of edges of the coarsest mesh")
    levels = refine(coarsest, cfg.mesh.refinements)
    fine = levels[-1]
    n = cfg.coefficient.n if cfg.coefficient.level is None else max(1, int(round(1.0 / levels[cfg.coefficient.level].H)))
    region = polyline_layers(net) if len(cfg.coefficient.seeds) > 1 else None
    ft = trace_fracture(fine, net)
    forms = assemble_forms(fine, coefficient_field(cfg, n, region), ft,
                           interface_data(cfg, len(net.polylines)), source_term(cfg))
    uh = solve_reference(forms)
    table = ResultTable(["level", "nodes", "H", "k", "error_lod", "eoc_lod", "error_fem", "eoc_fem"])
    prev = None
    for lev in range(cfg.mesh.refinements):
        t0 = time.perf_counter()
        coarse = levels[lev]
        k = cfg.k[lev] if len(cfg.k) > 1 else cfg.k[0]
        op = build_interpolation(fine, coarse, trace_fracture(coarse, net), ft,
                                 cfg.interpolation.sigmas[0], cfg.interpolation.variants[0])
        _, u = lod_solve(forms, corrected_basis(k, op, forms, workers=cfg.workers))
        e_lod = relative_energy_error(uh, u, forms)
        e_fem = relative_energy_error(uh, coarse_fem_solution(forms, op), forms)
        H = coarse.H
        eocs = (math.nan, math.nan) if prev is None else (_eoc(prev[1], e_lod, prev[0], H), _eoc(prev[2], e_fem, prev[0], H))
        table.add(lev, coarse.nv, H, k, e_lod, eocs[0], e_fem, eocs[1])
        prev = (H, e_lod, e_fem)
        log.info("level %d: %d nodes, k=%d, lod %.3e, fem %.3e (%.1fs)", lev, coarse.nv, k, e_lod, e_fem,
                 time.perf_counter() - t0)
    return table


# ---------------------------------------------------------------- patch study

def run_patch_study(cfg: ExperimentConfig) -> ResultTable:
    """Relative LOD error against patch size for each variant and threshold."""
    setup = structured_setup(cfg)
    coarse, ct = structured_coarse(cfg.mesh.coarse_n[0], setup.network)
    uh = solve_reference(setup.forms)
    table = ResultTable(["series", "variant", "sigma", "k", "error"])
    for variant in cfg.interpolation.variants:
        # the element-based operator ignores the threshold
        sigmas = cfg.interpolation.sigmas if variant == "fracture-aware" else [cfg.interpolation.sigmas[0]]
        for S in sigmas:
            op = build_interpolation(setup.fine, coarse, ct, setup.fine_trace, S, variant)
            label = f"{variant} sigma={S:g}" if variant == "fracture-aware" else variant
            for k in cfg.k:
                t0 = time.perf_counter()
                _, u = lod_solve(setup.forms, corrected_basis(k, op, setup.forms, workers=cfg.workers))
                err = relative_energy_error(uh, u, setup.forms)
                table.add(label, variant, float(S) if variant == "fracture-aware" else math.nan, int(k), err)
                log.info("%s k=%d: %.4e (%.1fs)", label, k, err, time.perf_counter() - t0)
    return table


# ---------------------------------------------------------------- wave

def _time_label(t: float) -> str:
    return f"{t:g}"


def energy_drift(energy: np.ndarray, first_step: int) -> float:
    """Largest relative energy change over the steps starting at ``first_step``."""
    e = np.asarray(energy, dtype=float)
    if first_step >= e.size - 1:
        return 0.0
    base = np.maximum(np.abs(e[first_step:-1]), np.finfo(float).tiny)
    return float(np.max(np.abs(np.diff(e[first_step:])) / base))


def run_wave(cfg: ExperimentConfig, export_dir=None) -> ResultTable:
    """Crank–Nicolson in the corrected coarse space against the fine reference.

    With ``export_dir`` the displacement snapshots (fine vertex dofs) are written
    as ``<name>_reference_t<t>.csv`` and ``<name>_lod<n>_t<t>.csv``.
    """
    setup = structured_setup(cfg, with_mass=True)
    forms = setup.forms
    w = cfg.wave
    grid = TimeGrid(w.tau, w.t_end)
    profile = constant_profile if w.switch_off is None else switch_off(w.switch_off)
    free = forms.dofs.free
    ref = wave_solve(forms.M, forms.K, forms.F_free, grid, w.sample_times, profile)
    if export_dir is not None:
        for t in w.sample_times:
            uf = np.zeros(setup.fine.nv)
            uf[free] = ref.at(t)
            emit_vector_csv(uf, Path(export_dir) / f"{cfg.name}_reference_t{_time_label(t)}.csv")
    times = [float(t) for t in w.sample_times]
    cols = ["H", "n_coarse", "k"] + [f"error_t{_time_label(t)}" for t in times] + [f"eoc_t{_time_label(t)}" for t in times]
    if w.switch_off is not None:
        cols.append("energy_drift")
        # steps from t_n > t_off see zero forcing at both ends
        first = int(math.floor(w.switch_off / w.tau + 1e-9)) + 1
    table = ResultTable(cols)
    prev = None
    k = cfg.k[0]
    for nc in cfg.mesh.coarse_n:
        t0 = time.perf_counter()
        coarse, ct = structured_coarse(nc, setup.network)
        op = build_interpolation(setup.fine, coarse, ct, setup.fine_trace,
                                 cfg.interpolation.sigmas[0], cfg.interpolation.variants[0])
        basis = corrected_basis(k, op, forms, workers=cfg.workers)
        sysm = coarse_system(basis, forms, with_mass=True)
        traj = wave_solve(sysm.mass, sysm.stiffness, sysm.load, grid, times, profile,
                          track_energy=w.switch_off is not None)
        errs = []
        for t in times:
            uf = np.zeros(setup.fine.nv)
            uf[free] = ref.at(t)
            ul = basis.B @ traj.at(t)
            errs.append(relative_energy_error(uf, ul, forms))
            if export_dir is not None:
                emit_vector_csv(ul, Path(export_dir) / f"{cfg.name}_lod{nc}_t{_time_label(t)}.csv")
        H = coarse.H
        eocs = [math.nan] * len(times) if prev is None else [_eoc(a, b, prev[0], H) for a, b in zip(prev[1], errs)]
        row = [H, int(nc), int(k)] + errs + eocs
        if w.switch_off is not None:
            row.append(energy_drift(traj.energy, first))
        table.add(*row)
        prev = (H, errs)
        log.info("coarse %d: errors %s (%.1fs)", nc, ", ".join(f"{e:.3e}" for e in errs), time.perf_counter() - t0)
    return table


# ---------------------------------------------------------------- mesh info

def run_mesh_info(cfg: ExperimentConfig) -> ResultTable:
    """Size, quality and interface statistics of every mesh a config uses."""
    if cfg.kind == "dual_norm_table":
        raise ConfigError("dual_norm_table configs use no mesh")
    net = load_network(cfg)
    if cfg.kind == "convergence":
        meshes = [(f"level{i}", m) for i, m in enumerate(refine(load_mesh(cfg.path(cfg.mesh.file)), cfg.mesh.refinements))]
    else:
        meshes = [(f"coarse{n}", unit_square_structured(n)) for n in cfg.mesh.coarse_n]
        meshes.append((f"fine{cfg.mesh.fine_n}", unit_square_structured(cfg.mesh.fine_n)))
    table = ResultTable(["mesh", "nodes", "triangles", "H", "min_angle_deg", "pieces", "crossed", "edge_aligned"])
    for name, m in meshes:
        tr = trace_fracture(m, net)
        table.add(name, m.nv, m.nt, m.H, float(np.degrees(m.min_angle)), tr.n, int(np.count_nonzero(tr.crossed)),
                  int(tr.union_of_edges))
    return table


DRIVERS = {
    "dual_norm_table": run_dual_norm_table,
    "decay_demo": run_decay_demo,
    "convergence": run_convergence,
    "patch_study": run_patch_study,
    "wave": run_wave,
}

PLOTS = {
    "dual_norm_table": dict(x="a", ys=["psi1", "psi2"], logx=True, logy=True, group="shape"),
    "decay_demo": dict(x="layer", ys=["energy"], logy=True, group="variant"),
    "convergence": dict(x="H", ys=["error_lod", "error_fem"], logx=True, logy=True),
    "patch_study": dict(x="k", ys=["error"], logy=True, group="series"),
}


def plot_spec(cfg: ExperimentConfig, table: ResultTable) -> dict:
    if cfg.kind == "wave":
        return dict(x="H", ys=[c for c in table.columns if c.startswith("error_t")], logx=True, logy=True)
    return PLOTS[cfg.kind]


EXPORTING = ("decay_demo", "wave")


def run_experiment(cfg: ExperimentConfig, export_dir=None) -> ResultTable:
    """Run the driver of ``cfg.kind``; ``export_dir`` only affects decay and wave runs."""
    if export_dir is not None and cfg.kind in EXPORTING:
        return DRIVERS[cfg.kind](cfg, export_dir=export_dir)
    return DRIVERS[cfg.kind](cfg)
