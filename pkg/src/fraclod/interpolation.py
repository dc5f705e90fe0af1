"""Scott–Zhang type quasi-interpolation with fracture-trace nodal variables.

A nodal variable of coarse node ``N`` is ``v -> ∫_σ ψ_{N,σ} v`` where ``ψ``
lives in the coarse P1 space restricted to ``σ`` and is biorthogonal to the
coarse hats there. ``σ`` is either a coarse triangle or the fracture trace
``Γ_T`` inside a closed coarse triangle. Nodes whose trace domains all have
large dual-basis norms fall back to triangle averaging.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad

from .fem import GAUSS2, P1_MASS_PER_AREA
from .fracture import FractureTrace
from .mesh import TriMesh, ancestor_map, barycentric, neighborhood
from .sparse_linalg import as_csr

DEFAULT_SIGMA = 500.0
RANK_TOL = 1e-12
CONSISTENCY_TOL = 1e-8


class InterpolationError(RuntimeError):
    pass


@dataclass(eq=False)
class IntegrationDomain:
    """Integration set inside one triangle with corners ``corners``.

    ``kind`` is ``"triangle"`` (the whole triangle), ``"trace"`` (a union of
    straight pieces ``segments`` of shape (P, 2, 2)) or ``"arc"`` (a circular
    arc below its centre, parametrized by ``x`` in ``[x0, x1]``).
    """

    kind: str
    corners: np.ndarray
    nodes: np.ndarray | None = None
    triangle: int = -1
    segments: np.ndarray | None = None
    center: tuple = (0.0, 0.0)
    radius: float = 0.0
    xrange: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("triangle", "trace", "arc"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        self.corners = np.asarray(self.corners, dtype=float)
        if self.kind == "trace":
            self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 2, 2)

    @property
    def measure(self) -> float:
        if self.kind == "triangle":
            d1 = self.corners[1] - self.corners[0]
            d2 = self.corners[2] - self.corners[0]
            return 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        if self.kind == "trace":
            return float(np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1).sum())
        return quad(lambda x: self._arc_point(x)[2], *self.xrange, epsabs=1e-14, epsrel=1e-13)[0]

    def _arc_point(self, x):
        """Point on the lower arc and the arclength density ``ds/dx``."""
        cx, cy = self.center
        r = self.radius
        x0 = self.xrange[1] - cx
        u = x - cx
        s0 = np.sqrt(r * r - x0 * x0)
        su = np.sqrt(r * r - u * u)
        # y measured from the endpoint height without cancellation
        y_end = cy - s0
        y = y_end + (u * u - x0 * x0) / (s0 + su)
        return x, y, r / su


def triangle_domain(mesh: TriMesh, T: int) -> IntegrationDomain:
    return IntegrationDomain("triangle", mesh.corners[T], mesh.triangles[T], T)


def trace_domain(mesh: TriMesh, trace: FractureTrace, T: int) -> IntegrationDomain:
    """``Γ ∩ T`` for the closed triangle ``T`` (pieces on its edges included)."""
    p = trace.closed_pieces(T)
    segs = np.stack([trace.a[p], trace.b[p]], axis=1) if p.size else np.zeros((0, 2, 2))
    return IntegrationDomain("trace", mesh.corners[T], mesh.triangles[T], T, segments=segs)


REFERENCE_TRIANGLE = np.array([[0.0, 0.0], [-1.0, 1.0], [1.0, 1.0]])


def arc_domain(a: float, shape: int) -> IntegrationDomain:
    """Circular arc with centre ``(0, a)`` inside the reference triangle.

    Shape 1 joins ``(-1, 1)`` and ``(1, 1)``; shape 2 joins ``(-0.5, 0.5)``
    and ``(0.5, 0.5)``.
    """
    if shape not in (1, 2):
        raise ValueError("shape must be 1 or 2")
    e = 1.0 if shape == 1 else 0.5
    if not a > e:
        raise ValueError(f"arc centre height {a} does not lie above the arc endpoints")
    r = float(np.hypot(e, a - e))
    dom = IntegrationDomain("arc", REFERENCE_TRIANGLE, None, -1, center=(0.0, float(a)), radius=r,
                            xrange=(-e, e))
    xs = np.linspace(-e, e, 201)
    _, ys, _ = dom._arc_point(xs)
    tol = 1e-12
    if np.any(ys < np.abs(xs) - tol) or np.any(ys > 1.0 + tol):
        raise ValueError(f"arc for a={a}, shape={shape} does not stay inside the triangle")
    return dom


def sigma_mass_matrix(domain: IntegrationDomain, tol: float = 1e-13) -> np.ndarray:
    """3x3 matrix ``∫_σ λ_i λ_j`` over the triangle's three vertex hats."""
    c = domain.corners
    if domain.kind == "triangle":
        return domain.measure * P1_MASS_PER_AREA
    if domain.kind == "trace":
        s = domain.segments
        if s.shape[0] == 0:
            return np.zeros((3, 3))
        L = np.linalg.norm(s[:, 1] - s[:, 0], axis=1)
        pts = s[:, None, 0, :] + GAUSS2[None, :, None] * (s[:, 1] - s[:, 0])[:, None, :]
        lam = barycentric(c, pts)                       # (P, 2, 3)
        return np.einsum("p,pgi,pgj->ij", 0.5 * L, lam, lam)
    M = np.empty((3, 3))
    x0, x1 = domain.xrange
    for i in range(3):
        for j in range(i, 3):
            def integrand(x, i=i, j=j):
                px, py, ds = domain._arc_point(x)
                lam = barycentric(c, np.array([px, py]))
                return lam[i] * lam[j] * ds
            M[i, j] = M[j, i] = quad(integrand, x0, x1, epsabs=tol, epsrel=tol, limit=200)[0]
    return M


@dataclass
class DualBasis:
    node: int
    coeffs: np.ndarray
    norm: float
    status: str
    residual: float


def solve_dual(M: np.ndarray, local: int) -> tuple[np.ndarray, float, str, float]:
    """Minimum-norm solution of ``M c = e_local`` with a rank-revealing threshold."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    scale = np.abs(w).max() if w.size else 0.0
    e = np.zeros(M.shape[0])
    e[local] = 1.0
    if scale == 0.0:
        return np.zeros_like(e), np.inf, "no-solution", 1.0
    keep = w > RANK_TOL * scale
    proj = V.T @ e
    c = V[:, keep] @ (proj[keep] / w[keep])
    res = float(np.abs(M @ c - e).max())
    # solvable iff e has no component along the numerical null space
    if not keep.all() and np.abs(proj[~keep]).max() > CONSISTENCY_TOL:
        return c, np.inf, "no-solution", res
    status = "unique" if keep.all() else "min-norm"
    return c, float(np.sqrt(np.sum(proj[keep] ** 2 / w[keep]))), status, res


def dual_basis(N: int, domain: IntegrationDomain, M: np.ndarray | None = None) -> DualBasis:
    """Dual basis function of node ``N`` over ``domain``.

    ``N`` is a global vertex id when the domain carries node ids, otherwise a
    local corner index 0..2.
    """
    if domain.nodes is not None:
        hit = np.flatnonzero(domain.nodes == N)
        if hit.size == 0:
            raise ValueError(f"node {N} is not a vertex of the domain's triangle")
        local = int(hit[0])
    else:
        local = int(N)
    if M is None:
        M = sigma_mass_matrix(domain)
    c, nrm, status, res = solve_dual(M, local)
    return DualBasis(int(N), c, nrm, status, res)


def indicator(N: int, T: int, mesh: TriMesh, trace: FractureTrace | None) -> float:
    """Scaled trace dual-basis norm ``sqrt(diam T) ||ψ_{N,Γ_T}||``; ``inf`` if none exists."""
    if trace is None or trace.closed_pieces(T).size == 0:
        return np.inf
    db = dual_basis(N, trace_domain(mesh, trace, T))
    if db.status == "no-solution":
        return np.inf
    return float(np.sqrt(mesh.diameters[T]) * db.norm)


@dataclass(eq=False)
class NodeSets:
    """Per free coarse node: adjacent triangles and the selected trace domains."""

    mesh: TriMesh
    variant: str
    Sigma: float
    free: np.ndarray
    tri_sets: list
    gamma_sets: list
    indicators: dict = field(default_factory=dict)
    trace_coeffs: dict = field(default_factory=dict)
    tri_coeffs: dict = field(default_factory=dict)

    @property
    def in_gamma(self) -> np.ndarray:
        return np.array([g.size > 0 for g in self.gamma_sets], dtype=bool)

    @property
    def gamma_nodes(self) -> np.ndarray:
        return self.free[self.in_gamma]


VARIANTS = ("fracture-aware", "element-based")


def classify(mesh: TriMesh, trace: FractureTrace | None, Sigma: float = DEFAULT_SIGMA,
             variant: str = "fracture-aware") -> NodeSets:
    """Select trace integration domains by thresholding the indicator."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if not Sigma > 0:
        raise ValueError("threshold must be positive")
    free = mesh.free_vertices
    vt = mesh.vertex_triangles
    diam = mesh.diameters
    tri_sets, gamma_sets = [], []
    inds, tcoef, ecoef = {}, {}, {}
    trace_M: dict[int, np.ndarray] = {}
    use_trace = variant == "fracture-aware" and trace is not None and trace.n > 0
    for N in free:
        Ts = np.sort(vt.indices[vt.indptr[N]:vt.indptr[N + 1]])
        tri_sets.append(Ts)
        sel = []
        if use_trace:
            for T in Ts:
                if not trace.crossed[T]:
                    inds[(int(N), int(T))] = np.inf
                    continue
                if T not in trace_M:
                    trace_M[T] = sigma_mass_matrix(trace_domain(mesh, trace, T))
                local = int(np.flatnonzero(mesh.triangles[T] == N)[0])
                c, nrm, status, _ = solve_dual(trace_M[T], local)
                s = np.inf if status == "no-solution" else float(np.sqrt(diam[T]) * nrm)
                inds[(int(N), int(T))] = s
                if s < Sigma:
                    sel.append(int(T))
                    tcoef[(int(N), int(T))] = c
        gamma_sets.append(np.array(sel, dtype=np.int64))
        if not sel:
            for T in Ts:
                local = int(np.flatnonzero(mesh.triangles[T] == N)[0])
                c, _, status, _ = solve_dual(mesh.areas[T] * P1_MASS_PER_AREA, local)
                if status != "unique":
                    raise InterpolationError(f"degenerate triangle {T}")
                ecoef[(int(N), int(T))] = c
    return NodeSets(mesh, variant, float(Sigma), free, tri_sets, gamma_sets, inds, tcoef, ecoef)


def fracture_edges(mesh: TriMesh, trace: FractureTrace) -> np.ndarray:
    """Mesh edge ids covered by the fracture (requires an edge-aligned trace)."""
    if not trace.union_of_edges:
        raise InterpolationError("fracture is not a union of mesh edges")
    return np.unique(_piece_edges(mesh, trace))


def _piece_edges(mesh: TriMesh, trace: FractureTrace) -> np.ndarray:
    a = barycentric(mesh.corners[trace.tri], trace.a)
    b = barycentric(mesh.corners[trace.tri], trace.b)
    tol = 1e-10
    loc = np.argmax((np.abs(a) < tol) & (np.abs(b) < tol), axis=1)
    return mesh.tri_edges[trace.tri, loc]


def edge_rule_sets(mesh: TriMesh, trace: FractureTrace) -> list:
    """Per free node: triangles holding a fracture edge that contains the node."""
    E = fracture_edges(mesh, trace)
    ev = mesh.edges[E]
    et = mesh.edge_triangles[E]
    out = []
    for N in mesh.free_vertices:
        hit = (ev[:, 0] == N) | (ev[:, 1] == N)
        Ts = et[hit].ravel()
        out.append(np.unique(Ts[Ts >= 0]))
    return out


@dataclass(eq=False)
class InterpolationOperator:
    """``I_H`` as a sparse map from fine vertex values to free coarse nodal values."""

    coarse: TriMesh
    fine: TriMesh
    nodesets: NodeSets
    matrix_full: sp.csr_matrix
    prolongation_full: sp.csr_matrix

    @property
    def variant(self) -> str:
        return self.nodesets.variant

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Rows: free coarse nodes; columns: free fine dofs."""
        return as_csr(self.matrix_full[:, self.fine.free_vertices])

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Free coarse hats expressed in free fine dofs."""
        return as_csr(self.prolongation_full[self.fine.free_vertices][:, self.coarse.free_vertices])

    def apply(self, v) -> np.ndarray:
        """Free coarse nodal values of a fine vertex vector."""
        return self.matrix_full @ np.asarray(v, dtype=float)

    def prolongate(self, vH) -> np.ndarray:
        """Fine vertex vector of a coarse function given at free coarse nodes."""
        full = np.zeros(self.coarse.nv)
        full[self.coarse.free_vertices] = vH
        return self.prolongation_full @ full

    def quasi_interpolant(self, v) -> np.ndarray:
        """``I_H v`` represented on the fine mesh."""
        return self.prolongate(self.apply(v))


def prolongation_matrix(fine: TriMesh, coarse: TriMesh) -> sp.csr_matrix:
    """(nv_fine, nv_coarse) values of coarse hats at fine vertices."""
    anc = ancestor_map(fine, coarse)
    first = np.full(fine.nv, -1, dtype=np.int64)
    order = np.arange(fine.nt)[::-1]
    first[fine.triangles[order].ravel()] = np.repeat(order, 3)
    T = anc[first]
    lam = barycentric(coarse.corners[T], fine.vertices)
    lam[np.abs(lam) < 1e-14] = 0.0
    rows = np.repeat(np.arange(fine.nv), 3)
    P = sp.coo_matrix((lam.ravel(), (rows, coarse.triangles[T].ravel())), shape=(fine.nv, coarse.nv))
    P = as_csr(P)
    P.eliminate_zeros()
    return P


def _element_moments(fine: TriMesh, coarse: TriMesh, anc: np.ndarray) -> sp.csr_matrix:
    """Rows ``3 T + j``: ``∫_T λ_j^T φ_m`` for every fine hat ``φ_m``."""
    lam = barycentric(coarse.corners[anc][:, None, :, :], fine.corners)   # (t, l, j)
    Mloc = fine.areas[:, None, None] * P1_MASS_PER_AREA[None]        # (t, l, m)
    vals = np.einsum("tlj,tlm->tjm", lam, Mloc)
    rows = (3 * anc[:, None, None] + np.arange(3)[None, :, None]) * np.ones((1, 1, 3), dtype=np.int64)
    cols = np.broadcast_to(fine.triangles[:, None, :], vals.shape)
    return as_csr(sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * coarse.nt, fine.nv)))


def _trace_moments(fine: TriMesh, coarse: TriMesh, anc: np.ndarray, ftrace: FractureTrace) -> sp.csr_matrix:
    """Rows ``3 T + j``: ``∫_{Γ_T} λ_j^T φ_m`` using the fine pieces inside closed ``T``."""
    if ftrace is None or ftrace.n == 0:
        return sp.csr_matrix((3 * coarse.nt, fine.nv))
    pts = ftrace.a[:, None, :] + GAUSS2[None, :, None] * (ftrace.b - ftrace.a)[:, None, :]
    phi = barycentric(fine.corners[ftrace.tri][:, None, :, :], pts)        # (p, g, m)
    w = 0.5 * ftrace.lengths
    rows, cols, vals = [], [], []
    owners = [anc[ftrace.tri], np.where(ftrace.nbr >= 0, anc[np.maximum(ftrace.nbr, 0)], -1)]
    for k, T in enumerate(owners):
        sel = T >= 0
        if k == 1:
            sel &= T != owners[0]
        if not np.any(sel):
            continue
        Ts = T[sel]
        lam = barycentric(coarse.corners[Ts][:, None, :, :], pts[sel])     # (p, g, j)
        v = np.einsum("p,pgj,pgm->pjm", w[sel], lam, phi[sel])
        r = (3 * Ts[:, None, None] + np.arange(3)[None, :, None]) * np.ones((1, 1, 3), dtype=np.int64)
        c = np.broadcast_to(fine.triangles[ftrace.tri[sel]][:, None, :], v.shape)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel())
    return as_csr(sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(3 * coarse.nt, fine.nv)))


def assemble_interpolation(fine: TriMesh, coarse: TriMesh, nodesets: NodeSets,
                           fine_trace: FractureTrace | None) -> InterpolationOperator:
    """Sparse ``I_H``: averaged nodal variables applied to the fine P1 basis."""
    anc = ancestor_map(fine, coarse)
    nf = nodesets.free.size
    re, ce, ve, rt, ct, vt = [], [], [], [], [], []
    for r, N in enumerate(nodesets.free):
        G = nodesets.gamma_sets[r]
        if G.size:
            for T in G:
                c = nodesets.trace_coeffs[(int(N), int(T))]
                rt += [r] * 3
                ct += list(3 * int(T) + np.arange(3))
                vt += list(c / G.size)
        else:
            Ts = nodesets.tri_sets[r]
            for T in Ts:
                c = nodesets.tri_coeffs[(int(N), int(T))]
                re += [r] * 3
                ce += list(3 * int(T) + np.arange(3))
                ve += list(c / Ts.size)
    shape = (nf, 3 * coarse.nt)
    Ce = sp.csr_matrix((ve, (re, ce)), shape=shape)
    I = Ce @ _element_moments(fine, coarse, anc)
    if rt:
        Ct = sp.csr_matrix((vt, (rt, ct)), shape=shape)
        I = I + Ct @ _trace_moments(fine, coarse, anc, fine_trace)
    I = as_csr(I)
    I.data[np.abs(I.data) < 1e-15 * max(np.abs(I.data).max(initial=0.0), 1e-300)] = 0.0
    I.eliminate_zeros()
    return InterpolationOperator(coarse, fine, nodesets, I, prolongation_matrix(fine, coarse))


def build_interpolation(fine: TriMesh, coarse: TriMesh, coarse_trace: FractureTrace | None,
                        fine_trace: FractureTrace | None, Sigma: float = DEFAULT_SIGMA,
                        variant: str = "fracture-aware") -> InterpolationOperator:
    return assemble_interpolation(fine, coarse, classify(coarse, coarse_trace, Sigma, variant), fine_trace)


def assumption_quotients(op: InterpolationOperator, v, fine_trace: FractureTrace | None) -> np.ndarray:
    """Per coarse element ``||v - I_H v||_T / (H (||∇v||_{U(T)} + ||∇_τ v||_{U(T)∩Γ}))``.

    Bulk and tangential seminorms use unit coefficients. Elements where the
    denominator vanishes get ``nan``.
    """
    from .fem import element_mass
    from .mesh import p1_gradients
    fine, coarse = op.fine, op.coarse
    v = np.asarray(v, dtype=float)
    w = v - op.quasi_interpolant(v)
    anc = ancestor_map(fine, coarse)
    Me = element_mass(fine, 1.0)
    wl = w[fine.triangles]
    l2 = np.bincount(anc, weights=np.einsum("ti,tij,tj->t", wl, Me, wl), minlength=coarse.nt)
    G = p1_gradients(fine.corners)
    grad = np.einsum("tid,ti->td", G, v[fine.triangles])
    g2 = np.bincount(anc, weights=fine.areas * (grad ** 2).sum(axis=1), minlength=coarse.nt)
    t2 = np.zeros(coarse.nt)
    if fine_trace is not None and fine_trace.n:
        tau = (fine_trace.b - fine_trace.a) / fine_trace.lengths[:, None]
        gt = np.einsum("pd,pd->p", grad[fine_trace.tri], tau)
        t2 = np.bincount(anc[fine_trace.tri], weights=fine_trace.lengths * gt ** 2, minlength=coarse.nt)
    out = np.full(coarse.nt, np.nan)
    for T in range(coarse.nt):
        mask = np.zeros(coarse.nt, dtype=bool)
        mask[T] = True
        U = neighborhood(coarse, mask)
        den = coarse.diameters[T] * (np.sqrt(g2[U].sum()) + np.sqrt(t2[U].sum()))
        if den > 0:
            out[T] = np.sqrt(l2[T]) / den
    return out
