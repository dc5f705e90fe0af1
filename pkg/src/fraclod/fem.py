"""P1 discretization of the bulk + interface bilinear form (SFEM).

Fine-space vectors are indexed by mesh vertex and vanish on Dirichlet
vertices. The interface is not required to follow mesh edges: each fracture
piece contributes a tangential stiffness on the triangle that owns it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .coefficients import GridField, InterfaceData, SourceTerm, as_function
from .fracture import FractureTrace
from .mesh import TriMesh, barycentric, p1_gradients
from .sparse_linalg import as_csr, energy_norm, solve_spd

GAUSS2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
P1_MASS_PER_AREA = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(eq=False)
class DofMap:
    mesh: TriMesh

    @cached_property
    def free(self) -> np.ndarray:
        return self.mesh.free_vertices

    @cached_property
    def vertex_to_dof(self) -> np.ndarray:
        out = -np.ones(self.mesh.nv, dtype=np.int64)
        out[self.free] = np.arange(self.free.size)
        return out

    @property
    def ndof(self) -> int:
        return self.free.size

    def restrict(self, A):
        if sp.issparse(A):
            return A.tocsr()[self.free][:, self.free]
        return np.asarray(A)[self.free]

    def extend(self, x) -> np.ndarray:
        x = np.asarray(x)
        out = np.zeros((self.mesh.nv,) + x.shape[1:])
        out[self.free] = x
        return out


def local_p1_stiffness(corners, A_T: float = 1.0) -> np.ndarray:
    corners = np.asarray(corners, dtype=float)
    d1 = corners[1] - corners[0]
    d2 = corners[2] - corners[0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    if area <= 0:
        raise ValueError("degenerate or clockwise triangle")
    G = p1_gradients(corners)
    return A_T * area * G @ G.T


def _scatter(tris: np.ndarray, local: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return as_csr(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def element_coefficients(mesh: TriMesh, coef) -> np.ndarray:
    """Per-triangle bulk coefficient: field value at the centroid."""
    if isinstance(coef, GridField):
        return coef.eval(mesh.corners.mean(axis=1))
    coef = np.asarray(coef, dtype=float)
    if coef.ndim == 0:
        return np.full(mesh.nt, float(coef))
    if coef.shape != (mesh.nt,):
        raise ValueError("per-element coefficient has wrong length")
    return coef


def element_stiffness(mesh: TriMesh, coef) -> np.ndarray:
    """(nt, 3, 3) local stiffness matrices."""
    G = p1_gradients(mesh.corners)
    a = element_coefficients(mesh, coef) * mesh.areas
    return a[:, None, None] * np.einsum("tid,tjd->tij", G, G)


def assemble_bulk_stiffness(mesh: TriMesh, coef) -> sp.csr_matrix:
    return _scatter(mesh.triangles, element_stiffness(mesh, coef), mesh.nv)


def piece_stiffness(trace: FractureTrace, iface: InterfaceData) -> np.ndarray:
    """(P, 3, 3) tangential stiffness of each piece on its owning triangle."""
    mesh = trace.mesh
    if trace.n == 0:
        return np.zeros((0, 3, 3))
    L = trace.lengths
    tau = (trace.b - trace.a) / L[:, None]
    G = p1_gradients(mesh.corners[trace.tri])
    g = np.einsum("pid,pd->pi", G, tau)
    A = iface.A[trace.polyline] if iface.A.size > 1 else np.full(trace.n, iface.A[0])
    return (A * L)[:, None, None] * g[:, :, None] * g[:, None, :]


def assemble_interface_stiffness(mesh: TriMesh, trace: FractureTrace, iface: InterfaceData) -> sp.csr_matrix:
    if trace.n == 0:
        return sp.csr_matrix((mesh.nv, mesh.nv))
    return _scatter(mesh.triangles[trace.tri], piece_stiffness(trace, iface), mesh.nv)


def element_mass(mesh: TriMesh, B=1.0) -> np.ndarray:
    b = element_coefficients(mesh, B) * mesh.areas
    return b[:, None, None] * P1_MASS_PER_AREA[None]


def assemble_mass(mesh: TriMesh, B=1.0) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    return _scatter(mesh.triangles, element_mass(mesh, B), mesh.nv)


def _piece_basis_at_gauss(trace: FractureTrace):
    """Barycentric values of the owning triangle's basis at the 2 Gauss points."""
    mesh = trace.mesh
    pts = trace.a[:, None, :] + GAUSS2[None, :, None] * (trace.b - trace.a)[:, None, :]
    corners = mesh.corners[trace.tri]
    phi = barycentric(corners[:, None, :, :], pts)       # (P, 2, 3)
    return pts, phi


def piece_mass(trace: FractureTrace, iface: InterfaceData) -> np.ndarray:
    if trace.n == 0:
        return np.zeros((0, 3, 3))
    _, phi = _piece_basis_at_gauss(trace)
    B = iface.B[trace.polyline] if iface.B.size > 1 else np.full(trace.n, iface.B[0])
    w = 0.5 * trace.lengths * B
    return w[:, None, None] * np.einsum("pgi,pgj->pij", phi, phi)


def assemble_interface_mass(trace: FractureTrace, iface: InterfaceData) -> sp.csr_matrix:
    mesh = trace.mesh
    if trace.n == 0:
        return sp.csr_matrix((mesh.nv, mesh.nv))
    return _scatter(mesh.triangles[trace.tri], piece_mass(trace, iface), mesh.nv)


def assemble_load(mesh: TriMesh, source: SourceTerm, trace: FractureTrace | None = None,
                  iface: InterfaceData | None = None) -> np.ndarray:
    f = as_function(source.f)
    c = mesh.corners
    if getattr(f, "kind", "") == "box":
        fc = f(c.mean(axis=1))
        loc = (mesh.areas * fc / 3.0)[:, None] * np.ones(3)
    else:
        # edge-midpoint rule; midpoint of the edge opposite vertex i has phi_i = 0
        mids = np.stack([0.5 * (c[:, 1] + c[:, 2]), 0.5 * (c[:, 2] + c[:, 0]), 0.5 * (c[:, 0] + c[:, 1])], axis=1)
        fm = f(mids)                                   # (nt, 3)
        phi = 0.5 * (1.0 - np.eye(3))                  # phi_i at midpoint m
        loc = (mesh.areas / 3.0)[:, None] * (fm @ phi.T)
    F = np.bincount(mesh.triangles.ravel(), weights=loc.ravel(), minlength=mesh.nv)
    if trace is not None and iface is not None and trace.n:
        pts, phi = _piece_basis_at_gauss(trace)
        fg = np.empty((trace.n, 2))
        for i in np.unique(trace.polyline):
            sel = trace.polyline == i
            fg[sel] = iface.source(int(i))(pts[sel])
        loc = 0.5 * trace.lengths[:, None] * np.einsum("pg,pgi->pi", fg, phi)
        F += np.bincount(mesh.triangles[trace.tri].ravel(), weights=loc.ravel(), minlength=mesh.nv)
    return F


@dataclass(eq=False)
class AssembledForms:
    """Fine-scale operators (vertex indexed, Dirichlet rows included)."""

    mesh: TriMesh
    trace: FractureTrace | None
    elem_K: np.ndarray
    piece_K: np.ndarray
    K_bulk: sp.csr_matrix
    K_iface: sp.csr_matrix
    F: np.ndarray
    M_bulk: sp.csr_matrix | None = None
    M_iface: sp.csr_matrix | None = None

    @cached_property
    def dofs(self) -> DofMap:
        return DofMap(self.mesh)

    @cached_property
    def K_full(self) -> sp.csr_matrix:
        return as_csr(self.K_bulk + self.K_iface)

    @cached_property
    def K(self) -> sp.csr_matrix:
        """Stiffness restricted to free dofs."""
        return self.dofs.restrict(self.K_full)

    @cached_property
    def M_full(self) -> sp.csr_matrix:
        if self.M_bulk is None:
            raise ValueError("mass matrices were not assembled")
        M = self.M_bulk if self.M_iface is None else self.M_bulk + self.M_iface
        return as_csr(M)

    @cached_property
    def M(self) -> sp.csr_matrix:
        return self.dofs.restrict(self.M_full)

    @property
    def F_free(self) -> np.ndarray:
        return self.F[self.dofs.free]

    def energy(self, u) -> float:
        return energy_norm(self.K_full, u)

    def with_load(self, F) -> "AssembledForms":
        out = AssembledForms(self.mesh, self.trace, self.elem_K, self.piece_K, self.K_bulk,
                             self.K_iface, np.asarray(F, dtype=float), self.M_bulk, self.M_iface)
        for key in ("dofs", "K_full", "K", "M_full", "M"):
            if key in self.__dict__:
                out.__dict__[key] = self.__dict__[key]
        return out


def assemble_forms(mesh: TriMesh, coef, trace: FractureTrace | None, iface: InterfaceData | None,
                   source: SourceTerm, with_mass: bool = False) -> AssembledForms:
    elem_K = element_stiffness(mesh, coef)
    K_bulk = _scatter(mesh.triangles, elem_K, mesh.nv)
    if trace is not None and iface is not None and trace.n:
        piece_K = piece_stiffness(trace, iface)
        K_iface = _scatter(mesh.triangles[trace.tri], piece_K, mesh.nv)
    else:
        piece_K = np.zeros((0, 3, 3))
        K_iface = sp.csr_matrix((mesh.nv, mesh.nv))
    F = assemble_load(mesh, source, trace, iface)
    M_bulk = M_iface = None
    if with_mass:
        M_bulk = assemble_mass(mesh, source.B)
        if trace is not None and iface is not None:
            M_iface = assemble_interface_mass(trace, iface)
    return AssembledForms(mesh, trace, elem_K, piece_K, K_bulk, K_iface, F, M_bulk, M_iface)


def solve_reference(forms: AssembledForms) -> np.ndarray:
    """Fine SFEM solution, zero on Dirichlet vertices."""
    return forms.dofs.extend(solve_spd(forms.K, forms.F_free))


def relative_energy_error(u_ref, u_other, forms: AssembledForms) -> float:
    """``|u_ref - u_other|_a / |u_ref|_a``; 0 when both vanish."""
    ref = forms.energy(u_ref)
    diff = forms.energy(np.asarray(u_ref) - np.asarray(u_other))
    if ref == 0.0:
        if diff == 0.0:
            return 0.0
        raise ValueError("reference solution has zero energy")
    return diff / ref
