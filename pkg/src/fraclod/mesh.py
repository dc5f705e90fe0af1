"""Conforming triangle meshes, quadrisection hierarchies and element patches."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class TriMesh:
    vertices: np.ndarray              # (nv, 2) float
    triangles: np.ndarray             # (nt, 3) int, counter-clockwise
    boundary: np.ndarray              # (nv,) bool
    level: int = 0
    parent: "TriMesh | None" = None
    parent_element: np.ndarray | None = None   # child element -> parent element
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary = np.asarray(self.boundary, dtype=bool)

    @property
    def nv(self) -> int:
        return self.vertices.shape[0]

    @property
    def nt(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def corners(self) -> np.ndarray:
        """(nt, 3, 2) vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.corners
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """(nt, 3) length of the edge opposite each local vertex."""
        c = self.corners
        return np.stack([np.linalg.norm(c[:, (i + 2) % 3] - c[:, (i + 1) % 3], axis=1)
                         for i in range(3)], axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths.max(axis=1)

    @cached_property
    def inscribed_diameters(self) -> np.ndarray:
        return 4.0 * self.areas / self.edge_lengths.sum(axis=1)

    @property
    def H(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def gamma(self) -> float:
        """Shape-regularity constant: max(H/d_T, max d_T'/d_T)."""
        d = self.inscribed_diameters
        return float(max(self.H / d.min(), d.max() / d.min()))

    @cached_property
    def min_angle(self) -> float:
        c = self.corners
        ang = []
        for i in range(3):
            a = c[:, (i + 1) % 3] - c[:, i]
            b = c[:, (i + 2) % 3] - c[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            ang.append(np.arccos(np.clip(cosang, -1, 1)))
        return float(np.min(ang))

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge i is opposite local vertex i
        loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        key = np.sort(loc, axis=1)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        return edges, inv.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) unique edges, vertex indices sorted."""
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """(nt, 3) global edge index of the edge opposite each local vertex."""
        return self._edge_data[1]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(ne, 2) adjacent triangles per edge, -1 where absent."""
        ne = self.edges.shape[0]
        out = -np.ones((ne, 2), dtype=np.int64)
        te = self.tri_edges.ravel()
        tri = np.repeat(np.arange(self.nt), 3)
        order = np.argsort(te, kind="stable")
        te, tri = te[order], tri[order]
        first = np.ones(te.size, dtype=bool)
        first[1:] = te[1:] != te[:-1]
        out[te[first], 0] = tri[first]
        out[te[~first], 1] = tri[~first]
        return out

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """(nt, nv) element-vertex incidence matrix."""
        rows = np.repeat(np.arange(self.nt), 3)
        return sp.csr_matrix((np.ones(3 * self.nt), (rows, self.triangles.ravel())),
                             shape=(self.nt, self.nv))

    @cached_property
    def vertex_triangles(self) -> sp.csr_matrix:
        """(nv, nt) vertex-element incidence; row i lists the triangles around vertex i."""
        return self.incidence.T.tocsr()

    def triangles_of_vertex(self, v: int) -> np.ndarray:
        vt = self.vertex_triangles
        return vt.indices[vt.indptr[v]:vt.indptr[v + 1]]

    @property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def barycentric(self, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``pts[i]`` in triangle ``tri[i]``."""
        c = self.corners[tri]
        return barycentric(c, pts)

    def check(self) -> None:
        """Validate orientation and conformity; raise :class:`MeshError` otherwise."""
        if np.any(~np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if self.triangles.min() < 0 or self.triangles.max() >= self.nv:
            raise MeshError("triangle references a vertex out of range")
        if np.any(self.areas <= 0):
            bad = np.flatnonzero(self.areas <= 0)[0]
            raise MeshError(f"triangle {bad} has non-positive area")
        et = self.edge_triangles
        counts = (et >= 0).sum(axis=1)
        # an edge shared by more than two triangles collapses into a single key
        per_edge = np.bincount(self.tri_edges.ravel(), minlength=self.edges.shape[0])
        if np.any(per_edge > 2):
            raise MeshError("non-conforming mesh: edge shared by more than two triangles")
        # boundary edges must have both vertices on the boundary
        bnd_edges = self.edges[counts == 1]
        if not np.all(self.boundary[bnd_edges]):
            raise MeshError("non-conforming mesh: hanging edge inside the domain")
        # total area must equal the area enclosed by the boundary edges
        if self.extra.get("check_area", True):
            p = self.vertices
            cross = 0.0
            for tri_i, (e0, e1) in zip(et[counts == 1, 0], bnd_edges):
                t = self.triangles[tri_i]
                # orient the boundary edge along the owning triangle
                pos0 = int(np.flatnonzero(t == e0)[0])
                a, b = (e0, e1) if t[(pos0 + 1) % 3] == e1 else (e1, e0)
                cross += p[a, 0] * p[b, 1] - p[b, 0] * p[a, 1]
            if not np.isclose(0.5 * cross, self.areas.sum(), rtol=1e-10, atol=0):
                raise MeshError("non-conforming mesh: overlapping triangles")


def barycentric(corners: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points in triangles (broadcasting over rows)."""
    c0 = corners[..., 0, :]
    d1 = corners[..., 1, :] - c0
    d2 = corners[..., 2, :] - c0
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    r = pts - c0
    l1 = (r[..., 0] * d2[..., 1] - r[..., 1] * d2[..., 0]) / det
    l2 = (d1[..., 0] * r[..., 1] - d1[..., 1] * r[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def p1_gradients(corners: np.ndarray) -> np.ndarray:
    """(..., 3, 2) constant gradients of the three P1 basis functions."""
    x = corners[..., 0]
    y = corners[..., 1]
    det = (x[..., 1] - x[..., 0]) * (y[..., 2] - y[..., 0]) - (x[..., 2] - x[..., 0]) * (y[..., 1] - y[..., 0])
    gx = np.stack([y[..., 1] - y[..., 2], y[..., 2] - y[..., 0], y[..., 0] - y[..., 1]], axis=-1)
    gy = np.stack([x[..., 2] - x[..., 1], x[..., 0] - x[..., 2], x[..., 1] - x[..., 0]], axis=-1)
    return np.stack([gx, gy], axis=-1) / det[..., None, None]


def unit_square_structured(n: int) -> TriMesh:
    """``2 n^2`` right triangles, each square split along its rising diagonal."""
    if n < 1:
        raise MeshError("need at least one cell per side")
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])
    bnd = (X.ravel() == 0) | (X.ravel() == 1) | (Y.ravel() == 0) | (Y.ravel() == 1)
    return TriMesh(verts, tris, bnd, level=0)


def refine_quadrisect(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints.

    Child ``4 T + c`` of parent ``T``: three corner children then the middle one.
    """
    edges, te = mesh.edges, mesh.tri_edges
    nv = mesh.nv
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    et = mesh.edge_triangles
    bnd_edge = et[:, 1] < 0
    bnd = np.concatenate([mesh.boundary, bnd_edge & mesh.boundary[edges].all(axis=1)])
    a, b, c = mesh.triangles.T
    m_bc, m_ca, m_ab = (te + nv).T     # edge opposite vertex 0 is (1, 2), etc.
    kids = np.stack([
        np.column_stack([a, m_ab, m_ca]),
        np.column_stack([m_ab, b, m_bc]),
        np.column_stack([m_ca, m_bc, c]),
        np.column_stack([m_ab, m_bc, m_ca]),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.nt), 4)
    return TriMesh(verts, kids, bnd, level=mesh.level + 1, parent=mesh, parent_element=parent,
                   extra={k: v for k, v in mesh.extra.items() if k == "check_area"})


def refine(mesh: TriMesh, times: int) -> list[TriMesh]:
    """Hierarchy ``[mesh, refine(mesh), ...]`` of length ``times + 1``."""
    out = [mesh]
    for _ in range(times):
        out.append(refine_quadrisect(out[-1]))
    return out


def ancestor_map(fine: TriMesh, coarse: TriMesh, tol: float = 1e-10) -> np.ndarray:
    """Coarse ancestor of every fine element.

    Follows the refinement history when ``fine`` descends from ``coarse``;
    otherwise fine centroids are located geometrically and every fine element
    must lie inside its ancestor.
    """
    amap = np.arange(fine.nt)
    m = fine
    while m is not coarse and m.parent is not None:
        amap = m.parent_element[amap]
        m = m.parent
    if m is coarse:
        return amap
    return _locate_ancestors(fine, coarse, tol)


def _locate_ancestors(fine: TriMesh, coarse: TriMesh, tol: float) -> np.ndarray:
    from matplotlib.tri import Triangulation

    tri = Triangulation(coarse.vertices[:, 0], coarse.vertices[:, 1], coarse.triangles)
    amap = tri.get_trifinder()(*fine.corners.mean(axis=1).T).astype(np.int64)
    if np.any(amap < 0):
        raise MeshError("fine mesh is not nested in the coarse mesh")
    lam = barycentric(coarse.corners[amap][:, None], fine.corners)
    if lam.min() < -tol:
        raise MeshError("fine mesh is not nested in the coarse mesh")
    return amap


@dataclass(frozen=True)
class Patch:
    center: tuple
    k: int
    elements: np.ndarray


def neighborhood(mesh: TriMesh, mask: np.ndarray) -> np.ndarray:
    """Elements sharing at least one vertex with the masked element set."""
    touched = (mesh.incidence.T @ mask.astype(float)) > 0
    return (mesh.incidence @ touched.astype(float)) > 0


def patch_mask(mesh: TriMesh, center, k: int) -> np.ndarray:
    mask = np.zeros(mesh.nt, dtype=bool)
    mask[np.atleast_1d(center)] = True
    for _ in range(k):
        new = neighborhood(mesh, mask)
        if new.sum() == mask.sum():
            break
        mask = new
    return mask


def patch(mesh: TriMesh, T, k: int) -> Patch:
    """k-layer vertex-neighbour patch around element ``T`` (or a set of elements)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    center = tuple(int(t) for t in np.atleast_1d(T))
    return Patch(center, k, np.flatnonzero(patch_mask(mesh, center, k)))


def layer_index(mesh: TriMesh, center) -> np.ndarray:
    """Smallest ``m`` with element in ``U^m(center)``, for every element."""
    layer = -np.ones(mesh.nt, dtype=np.int64)
    mask = np.zeros(mesh.nt, dtype=bool)
    mask[np.atleast_1d(center)] = True
    layer[mask] = 0
    m = 0
    while not mask.all():
        m += 1
        new = neighborhood(mesh, mask)
        if new.sum() == mask.sum():
            break
        layer[new & ~mask] = m
        mask = new
    return layer


def load_mesh(path) -> TriMesh:
    """Read the whitespace-separated ``NV NT NB`` text format."""
    tokens = Path(path).read_text().split()
    try:
        nv, nt, nb = (int(t) for t in tokens[:3])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed header") from exc
    need = 3 + 2 * nv + 3 * nt + nb
    if len(tokens) != need:
        raise MeshError(f"{path}: header declares {nv} vertices, {nt} triangles, {nb} boundary "
                        f"vertices ({need} tokens) but file holds {len(tokens)} tokens")
    pos = 3
    try:
        verts = np.array([float(t) for t in tokens[pos:pos + 2 * nv]]).reshape(nv, 2)
        pos += 2 * nv
        tris = np.array([int(t) for t in tokens[pos:pos + 3 * nt]], dtype=np.int64).reshape(nt, 3)
        pos += 3 * nt
        bidx = np.array([int(t) for t in tokens[pos:pos + nb]], dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"{path}: malformed entry ({exc})") from exc
    if nb and (bidx.min() < 0 or bidx.max() >= nv):
        raise MeshError(f"{path}: boundary index out of range")
    bnd = np.zeros(nv, dtype=bool)
    bnd[bidx] = True
    mesh = TriMesh(verts, tris, bnd)
    if nt and (tris.min() < 0 or tris.max() >= nv):
        raise MeshError(f"{path}: triangle references a vertex out of range")
    if np.any(mesh.areas == 0):
        raise MeshError(f"{path}: zero-area triangle {int(np.flatnonzero(mesh.areas == 0)[0])}")
    if np.any(mesh.areas < 0):
        raise MeshError(f"{path}: triangle {int(np.flatnonzero(mesh.areas < 0)[0])} is not counter-clockwise")
    mesh.check()
    return mesh


def save_mesh(mesh: TriMesh, path) -> None:
    bidx = np.flatnonzero(mesh.boundary)
    lines = [f"{mesh.nv} {mesh.nt} {bidx.size}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    lines += [str(i) for i in bidx]
    Path(path).write_text("\n".join(lines) + "\n")
