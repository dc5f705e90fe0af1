"""Localized correctors, the corrected coarse basis and the upscaled solve.

For a coarse element ``T`` and one of its free vertices ``i`` the corrector
``φ_{T,i}`` lives in the kernel of ``I_H`` restricted to the patch
``U^k(T)`` and solves

    a(φ_{T,i}, w) = a_T(λ_i, w)   for all such w,

where ``a_T`` is the bilinear form restricted to ``T`` (interface pieces are
attributed to the fine triangle that owns them, so the ``a_T`` sum to ``a``).
The kernel constraint is imposed with Lagrange multipliers. The corrected basis
is ``b_i = λ_i - Σ_T φ_{T,i}``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import AssembledForms
from .interpolation import InterpolationOperator
from .mesh import TriMesh, ancestor_map, barycentric, layer_index, patch_mask
from .sparse_linalg import SaddleFactor, SingularPatchError, as_csr, solve_spd

DENSE_LIMIT = 4000


@dataclass(eq=False)
class LODContext:
    """Read-only data shared by all patch problems of one mesh pair."""

    forms: AssembledForms
    interp: InterpolationOperator

    @property
    def fine(self) -> TriMesh:
        return self.forms.mesh

    @property
    def coarse(self) -> TriMesh:
        return self.interp.coarse

    @cached_property
    def anc(self) -> np.ndarray:
        return ancestor_map(self.fine, self.coarse)

    @cached_property
    def children(self) -> sp.csr_matrix:
        """Coarse element -> fine elements (row pattern, sorted)."""
        nt = self.fine.nt
        return sp.csr_matrix((np.ones(nt), (self.anc, np.arange(nt))), shape=(self.coarse.nt, nt))

    @cached_property
    def owned_pieces(self) -> sp.csr_matrix:
        tr = self.forms.trace
        n = 0 if tr is None else tr.n
        rows = self.anc[tr.tri] if n else np.zeros(0, dtype=np.int64)
        return sp.csr_matrix((np.ones(n), (rows, np.arange(n))), shape=(self.coarse.nt, n))

    @cached_property
    def degree(self) -> np.ndarray:
        return np.bincount(self.fine.triangles.ravel(), minlength=self.fine.nv)

    @cached_property
    def free_mask(self) -> np.ndarray:
        m = np.zeros(self.fine.nv, dtype=bool)
        m[self.fine.free_vertices] = True
        return m

    @cached_property
    def I_csc(self) -> sp.csc_matrix:
        return self.interp.matrix_full.tocsc()

    @cached_property
    def coarse_free_index(self) -> np.ndarray:
        out = -np.ones(self.coarse.nv, dtype=np.int64)
        out[self.coarse.free_vertices] = np.arange(self.coarse.free_vertices.size)
        return out

    def fine_elements(self, coarse_elems) -> np.ndarray:
        c = self.children
        return np.concatenate([c.indices[c.indptr[T]:c.indptr[T + 1]] for T in coarse_elems])

    def interior_dofs(self, coarse_elems) -> np.ndarray:
        """Free fine vertices whose every incident fine element lies in the patch."""
        ft = self.fine_elements(coarse_elems)
        verts, counts = np.unique(self.fine.triangles[ft].ravel(), return_counts=True)
        keep = (counts == self.degree[verts]) & self.free_mask[verts]
        return verts[keep]

    def element_load(self, T: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``a_T(λ_i, φ_m)`` for the free vertices ``i`` of coarse ``T``.

        Returns ``(fine vertex ids, coarse free indices, values (n_vertices, n_free))``.
        """
        forms = self.forms
        ct = self.children.indices[self.children.indptr[T]:self.children.indptr[T + 1]]
        cT = self.coarse.corners[T]
        tris = self.fine.triangles[ct]
        lam = barycentric(cT, self.fine.corners[ct])                      # (t, l, i)
        vals = np.einsum("tml,tli->tmi", forms.elem_K[ct], lam)
        rows = [tris.ravel()]
        data = [vals.reshape(-1, 3)]
        op = self.owned_pieces
        pc = op.indices[op.indptr[T]:op.indptr[T + 1]]
        if pc.size:
            ptri = forms.trace.tri[pc]
            plam = barycentric(cT, self.fine.corners[ptri])
            rows.append(self.fine.triangles[ptri].ravel())
            data.append(np.einsum("pml,pli->pmi", forms.piece_K[pc], plam).reshape(-1, 3))
        rows = np.concatenate(rows)
        data = np.concatenate(data)
        verts, inv = np.unique(rows, return_inverse=True)
        acc = np.zeros((verts.size, 3))
        np.add.at(acc, inv, data)
        cols = self.coarse_free_index[self.coarse.triangles[T]]
        free = cols >= 0
        return verts, cols[free], acc[:, free]


@dataclass
class PatchResult:
    T: int
    dofs: np.ndarray
    nodes: np.ndarray
    values: np.ndarray


def solve_patch(ctx: LODContext, T: int, k: int) -> PatchResult:
    """All correctors ``φ_{T,i}`` of coarse element ``T`` on ``U^k(T)``."""
    coarse_elems = np.flatnonzero(patch_mask(ctx.coarse, T, k))
    dofs = ctx.interior_dofs(coarse_elems)
    verts, nodes, load = ctx.element_load(T)
    if nodes.size == 0 or dofs.size == 0:
        return PatchResult(T, dofs, nodes, np.zeros((dofs.size, nodes.size)))
    pos = np.searchsorted(dofs, verts)
    pos = np.clip(pos, 0, dofs.size - 1)
    hit = dofs[pos] == verts
    rhs = np.zeros((dofs.size, nodes.size))
    rhs[pos[hit]] = load[hit]
    K = ctx.forms.K_full[dofs][:, dofs]
    C = ctx.I_csc[:, dofs]
    rows = np.unique(C.indices)
    C = C.tocsr()[rows]
    try:
        fac = SaddleFactor(K, C, name=f"(T={T}, k={k})")
        w, _ = fac.solve(rhs)
    except SingularPatchError as exc:
        raise SingularPatchError(f"{exc} for nodes {nodes.tolist()}") from exc
    return PatchResult(T, dofs, nodes, w)


def element_corrector(ctx: LODContext, T: int, i: int, k: int) -> np.ndarray:
    """Fine vertex vector of ``φ_{T,i}`` (``i`` a coarse vertex id of ``T``)."""
    res = solve_patch(ctx, T, k)
    out = np.zeros(ctx.fine.nv)
    col = np.flatnonzero(res.nodes == ctx.coarse_free_index[i])
    if col.size:
        out[res.dofs] = res.values[:, col[0]]
    return out


@dataclass(eq=False)
class CorrectedBasis:
    """Columns ``b_i = λ_i - Q_k λ_i`` as fine vertex vectors, one per free coarse node."""

    k: int
    Sigma: float
    variant: str
    B: sp.csr_matrix
    Q: sp.csr_matrix
    interp: InterpolationOperator

    @property
    def n(self) -> int:
        return self.B.shape[1]


def corrected_basis(k: int, interp: InterpolationOperator, forms: AssembledForms,
                    workers: int = 1) -> CorrectedBasis:
    """Assemble ``Q_k λ_i`` from per-element patch solves (deterministic element order)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    ctx = LODContext(forms, interp)
    elems = range(ctx.coarse.nt)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda T: solve_patch(ctx, T, k), elems))
    else:
        results = [solve_patch(ctx, T, k) for T in elems]
    rows, cols, vals = [], [], []
    for r in results:
        if r.values.size:
            rows.append(np.repeat(r.dofs, r.nodes.size))
            cols.append(np.tile(r.nodes, r.dofs.size))
            vals.append(r.values.ravel())
    nfc = ctx.coarse.free_vertices.size
    shape = (ctx.fine.nv, nfc)
    if rows:
        Q = as_csr(sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=shape))
    else:
        Q = sp.csr_matrix(shape)
    P = as_csr(interp.prolongation_full[:, ctx.coarse.free_vertices])
    P = as_csr(P.multiply(ctx.free_mask[:, None]))
    P.eliminate_zeros()
    B = as_csr(P - Q)
    return CorrectedBasis(k, interp.nodesets.Sigma, interp.variant, B, Q, interp)


@dataclass(eq=False)
class CoarseSystem:
    stiffness: np.ndarray | sp.csr_matrix
    load: np.ndarray
    mass: np.ndarray | sp.csr_matrix | None = None

    @property
    def dense(self) -> bool:
        return isinstance(self.stiffness, np.ndarray)


def _galerkin(B: sp.csr_matrix, A: sp.csr_matrix):
    G = as_csr(B.T @ A @ B)
    G = as_csr(0.5 * (G + G.T))
    return G.toarray() if B.shape[1] <= DENSE_LIMIT else G


def coarse_system(basis: CorrectedBasis, forms: AssembledForms, with_mass: bool = False) -> CoarseSystem:
    B = basis.B
    K = _galerkin(B, forms.K_full)
    M = _galerkin(B, forms.M_full) if with_mass else None
    return CoarseSystem(K, B.T @ forms.F, M)


def solve_coarse(A, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    if isinstance(A, np.ndarray):
        return sla.cho_solve(sla.cho_factor(A), b)
    return solve_spd(A, b)


def lod_solve(forms: AssembledForms, basis: CorrectedBasis,
              system: CoarseSystem | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Galerkin solution in ``span{b_i}``: coarse coefficients and fine vertex vector."""
    if system is None:
        system = coarse_system(basis, forms)
    c = solve_coarse(system.stiffness, system.load)
    return c, basis.B @ c


def global_corrector(forms: AssembledForms, interp: InterpolationOperator, v) -> np.ndarray:
    """``Q v``: a-projection of the fine vertex vector ``v`` onto ``ker I_H``."""
    dofs = forms.dofs
    C = interp.matrix
    rhs = (forms.K_full @ np.asarray(v, dtype=float))[dofs.free]
    w, _ = SaddleFactor(forms.K, C, name="global").solve(rhs)
    return dofs.extend(w)


def global_basis(interp: InterpolationOperator, forms: AssembledForms) -> CorrectedBasis:
    """Ideal (non-localized) basis, one global saddle solve with all right-hand sides."""
    dofs = forms.dofs
    P = as_csr(interp.prolongation_full[:, interp.coarse.free_vertices])
    rhs = (forms.K_full @ P)[dofs.free].toarray()
    fac = SaddleFactor(forms.K, interp.matrix, name="global")
    w, _ = fac.solve(rhs)
    Q = as_csr(sp.csr_matrix(dofs.extend(w)))
    Pf = as_csr(P.multiply(np.isin(np.arange(forms.mesh.nv), dofs.free)[:, None]))
    return CorrectedBasis(-1, interp.nodesets.Sigma, interp.variant, as_csr(Pf - Q), Q, interp)


def coarse_fem_solution(forms: AssembledForms, interp: InterpolationOperator) -> np.ndarray:
    """Standard P1 Galerkin solution in the coarse space, as a fine vector.

    The coarse hats are prolongated to the fine mesh and the full bulk plus
    interface form is integrated there, so the coefficient is represented
    exactly as in the reference and only the trial space differs.
    """
    P = interp.prolongation
    free = forms.dofs.free
    KH = as_csr(P.T @ forms.K @ P)
    c = solve_spd(KH, P.T @ forms.F[free])
    return interp.prolongate(c)


@dataclass
class DecayProfile:
    layers: np.ndarray
    energy: np.ndarray
    sup: np.ndarray


def decay_profile(v, center, forms: AssembledForms, coarse: TriMesh) -> DecayProfile:
    """Energy of ``v`` on the coarse rings ``U^m(center) \\ U^{m-1}(center)``.

    The energy is split elementwise: each fine element (and each interface piece
    through its owning element) is charged to the ring of its coarse ancestor,
    so the squared ring energies sum to ``a(v, v)``. ``sup`` is the max of ``|v|``
    over the vertices of the ring's fine elements.
    """
    v = np.asarray(v, dtype=float)
    fine = forms.mesh
    anc = ancestor_map(fine, coarse)
    layer = layer_index(coarse, center)[anc]
    vl = v[fine.triangles]
    e = np.einsum("ti,tij,tj->t", vl, forms.elem_K, vl)
    nl = int(layer.max()) + 1
    E = np.bincount(layer, weights=e, minlength=nl)
    if forms.trace is not None and forms.trace.n:
        tr = forms.trace
        pv = v[fine.triangles[tr.tri]]
        E += np.bincount(layer[tr.tri], weights=np.einsum("pi,pij,pj->p", pv, forms.piece_K, pv),
                         minlength=nl)
    sup = np.zeros(nl)
    np.maximum.at(sup, layer, np.abs(vl).max(axis=1))
    return DecayProfile(np.arange(nl), np.sqrt(np.maximum(E, 0.0)), sup)
