"""Sparse linear algebra used throughout the package.

Matrices are plain ``scipy.sparse.csr_matrix`` objects (sorted, duplicate
free); vectors are 1-D float arrays. SPD systems are factored with SuperLU in
symmetric mode without pivoting, which is an LDL^T factorization in disguise:
a non-positive pivot means the matrix is not SPD. Saddle-point (KKT) systems
are factored with pivoted LU.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinAlgError(RuntimeError):
    pass


class NotSPDError(LinAlgError):
    pass


class NotPSDError(LinAlgError):
    pass


class SingularPatchError(LinAlgError):
    pass


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR form: sorted column indices, duplicates summed."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_matrix) -> None:
    """Raise ``ValueError`` if ``A`` violates the CSR structural invariants."""
    offs = A.indptr
    if offs[0] != 0 or offs[-1] != A.indices.size or np.any(np.diff(offs) < 0):
        raise ValueError("row offsets must be non-decreasing and end at nnz")
    for i in range(A.shape[0]):
        cols = A.indices[offs[i]:offs[i + 1]]
        if cols.size > 1 and np.any(np.diff(cols) <= 0):
            raise ValueError(f"row {i}: column indices not strictly increasing")


def is_symmetric(A, rtol: float = 1e-14) -> bool:
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        return False
    diff = abs(A - A.T)
    scale = abs(A).max() if A.nnz else 0.0
    return diff.nnz == 0 or diff.max() <= rtol * max(scale, np.finfo(float).tiny)


def spmv(A, x) -> np.ndarray:
    """Matrix-vector product with dimension checking.

    SciPy's CSR kernel walks each row left to right, so the accumulation order
    is fixed and the result bitwise reproducible.
    """
    A = sp.csr_matrix(A)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} times {x.shape}")
    return A @ x


class SPDFactor:
    """Factor-once, solve-many wrapper for symmetric positive definite matrices."""

    def __init__(self, A, refine_steps: int = 2):
        A = sp.csc_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.A = A
        self.n = A.shape[0]
        self.refine_steps = refine_steps
        if self.n == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise NotSPDError(f"matrix not SPD: {exc}") from exc
        piv = lu.U.diagonal()
        if not np.all(lu.perm_r == lu.perm_c) or np.any(piv <= 0.0):
            raise NotSPDError("matrix not SPD: non-positive pivot")
        self._lu = lu

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs length {b.shape[0]} != {self.n}")
        if self._lu is None:
            return np.zeros_like(b)
        if not np.any(b):
            return np.zeros_like(b)
        x = self._lu.solve(b)
        for _ in range(self.refine_steps):
            r = b - self.A @ x
            x = x + self._lu.solve(r)
        return x


def solve_spd(A, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    return SPDFactor(A).solve(b)


def independent_rows(C, tol: float = 1e-14) -> np.ndarray:
    """Indices of a maximal set of linearly independent rows of ``C``.

    Pivoted Cholesky of the Gram matrix ``C C^T``; a row is dependent when its
    remaining pivot falls below ``tol`` times the largest diagonal entry.
    """
    m = C.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    G = C @ C.T
    G = G.toarray() if sp.issparse(G) else np.asarray(G)
    d = np.diag(G).copy()
    thr = tol * d.max()
    L = np.zeros((m, m))
    order = []
    resid = d.copy()
    active = np.ones(m, dtype=bool)
    for j in range(m):
        cand = np.where(active, resid, -np.inf)
        p = int(np.argmax(cand))
        if cand[p] <= thr:
            break
        order.append(p)
        active[p] = False
        col = (G[:, p] - L[:, :j] @ L[p, :j]) / np.sqrt(resid[p])
        col[~active] = 0.0
        L[:, j] = col
        L[p, j] = np.sqrt(resid[p])
        resid = resid - col ** 2
    return np.sort(np.array(order, dtype=np.int64))


@dataclass
class SaddleSystem:
    """``[[K, C^T], [C, 0]] [w; mu] = [rhs_primal; rhs_dual]``."""

    K: sp.spmatrix
    C: sp.spmatrix
    rhs_primal: np.ndarray
    rhs_dual: np.ndarray
    name: str = ""


@dataclass
class SaddleFactor:
    """Factorization of a KKT matrix after dropping redundant constraint rows.

    Rows with max-norm below ``row_tol`` are dropped, then rows linearly
    dependent on the remaining ones (see :func:`independent_rows`). Kept rows
    are rescaled to unit max-norm. When ``K`` is SPD the system is solved
    through the dense Schur complement ``C K^-1 C^T`` (few, wide constraint
    rows make a sparse LU of the full KKT matrix fill in badly); otherwise, or
    with ``method="lu"``, the full KKT matrix gets a pivoted sparse LU. The
    multipliers returned by :meth:`solve` are in the original scaling, zero on
    dropped rows.
    """

    K: sp.spmatrix
    C: sp.spmatrix
    name: str = ""
    row_tol: float = 1e-14
    dep_tol: float = 1e-14
    method: str = "schur"
    kept: np.ndarray = field(init=False)

    def __post_init__(self):
        K = sp.csr_matrix(self.K, dtype=float)
        C = sp.csr_matrix(self.C, dtype=float)
        n = K.shape[0]
        if C.shape[0] and C.shape[1] != n:
            raise ValueError("constraint columns must match K")
        self.n, self.m = n, C.shape[0]
        rowmax = abs(C).max(axis=1).toarray().ravel() if self.m else np.zeros(0)
        kept = np.flatnonzero(rowmax >= self.row_tol)
        kept = kept[independent_rows(sp.diags(1.0 / rowmax[kept]) @ C[kept], self.dep_tol)]
        self.kept = kept
        self._C = C
        self._scale = 1.0 / rowmax[self.kept]
        Ck = sp.diags(self._scale) @ C[self.kept]
        self._Ck = Ck
        if self.kept.size == 0:
            try:
                self._spd = SPDFactor(K)
            except NotSPDError as exc:
                raise SingularPatchError(f"singular patch problem {self.name}: {exc}") from exc
            self._lu = None
            return
        self._spd = None
        kkt = sp.bmat([[K, Ck.T], [Ck, None]], format="csc")
        self._kkt = kkt
        self._lu = None
        if self.method not in ("schur", "lu"):
            raise ValueError(f"unknown saddle method {self.method!r}")
        if self.method == "schur":
            try:
                spd = SPDFactor(K, refine_steps=0)
                Y = spd.solve(Ck.T.toarray())
                S = Ck @ Y
                self._schur = (spd, Y, sla.cho_factor(0.5 * (S + S.T)))
                return
            except (NotSPDError, np.linalg.LinAlgError):
                pass
        self._schur = None
        try:
            self._lu = spla.splu(kkt, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularPatchError(f"singular patch problem {self.name}: {exc}") from exc

    def solve(self, rhs_primal, rhs_dual=None, tol: float = 1e-9):
        f = np.asarray(rhs_primal, dtype=float)
        multi = f.ndim == 2
        f2 = f if multi else f[:, None]
        if rhs_dual is None:
            g2 = np.zeros((self.m, f2.shape[1]))
        else:
            g = np.asarray(rhs_dual, dtype=float)
            g2 = g if g.ndim == 2 else g[:, None]
        zero = np.flatnonzero(abs(self._C).max(axis=1).toarray().ravel() < self.row_tol) if self.m else []
        if len(zero) and np.any(np.abs(g2[zero]) > 0):
            raise SingularPatchError(f"singular patch problem {self.name}: "
                                     "inconsistent rhs on a zero constraint row")
        mu = np.zeros((self.m, f2.shape[1]))
        if self._spd is not None:
            w = np.column_stack([self._spd.solve(f2[:, j]) for j in range(f2.shape[1])])
        else:
            gk = g2[self.kept] * self._scale[:, None]
            b = np.vstack([f2, gk])
            x = self._kkt_solve(b)
            r = b - self._kkt @ x
            x = x + self._kkt_solve(r)
            if not np.all(np.isfinite(x)):
                raise SingularPatchError(f"singular patch problem {self.name}: non-finite solution")
            w = x[:self.n]
            mu[self.kept] = x[self.n:] * self._scale[:, None]
            res = np.abs(b - self._kkt @ x)
            bnorm = np.abs(b).max(axis=0)
            bad = res.max(axis=0) > tol * np.maximum(bnorm, 1.0)
            if np.any(bad):
                raise SingularPatchError(f"singular patch problem {self.name}: "
                                         f"KKT residual {res.max():.3e}")
        if self.kept.size < self.m:
            gap = np.abs(self._C @ w - g2).max(axis=0)
            if np.any(gap > tol * np.maximum(np.abs(g2).max(axis=0), 1.0)):
                raise SingularPatchError(f"singular patch problem {self.name}: "
                                         "dependent constraint rows with inconsistent rhs")
        if not multi:
            return w[:, 0], mu[:, 0]
        return w, mu

    def _kkt_solve(self, b):
        if self._schur is None:
            return self._lu.solve(b)
        spd, Y, S = self._schur
        x0 = spd.solve(b[:self.n])
        mu = sla.cho_solve(S, self._Ck @ x0 - b[self.n:])
        return np.vstack([x0 - Y @ mu, mu])


def solve_saddle(S: SaddleSystem):
    """Solve a KKT system; returns ``(w, mu)``."""
    f = np.asarray(S.rhs_primal, dtype=float)
    g = np.asarray(S.rhs_dual, dtype=float)
    if not np.any(f) and not np.any(g):
        return np.zeros(f.shape[0]), np.zeros(g.shape[0])
    C = S.C if S.C is not None else sp.csr_matrix((0, f.shape[0]))
    return SaddleFactor(S.K, C, name=S.name).solve(f, g)


def energy_norm(A, v) -> float:
    v = np.asarray(v, dtype=float)
    s = float(np.max(np.abs(v))) if v.size else 0.0
    if s == 0.0:
        return 0.0
    w = v / s   # avoids under/overflow of v^T A v
    q = float(w @ (A @ w))
    if q < -1e-12 * float(w @ w):
        raise NotPSDError(f"matrix not PSD: v^T A v = {q * s * s:.3e}")
    return s * float(np.sqrt(max(q, 0.0)))


def estimate_eoc(errors, mesh_sizes) -> np.ndarray:
    """Experimental orders of convergence between consecutive levels."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(mesh_sizes, dtype=float)
    if e.shape != h.shape or e.ndim != 1 or e.size < 2:
        raise ValueError("errors and mesh sizes must be 1-D of equal length >= 2")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and mesh sizes must be strictly positive")
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
