"""Built-in fracture networks and meshes used by the experiment drivers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import Delaunay

from ..fracture import FractureNetwork, trace_fracture
from ..mesh import MeshError, TriMesh

GRID = 64.0


def gamma_vertical_half() -> FractureNetwork:
    return FractureNetwork([np.array([[0.5, 0.0], [0.5, 1.0]])])


# unit moves along edges of the rising-diagonal structured mesh
_LATTICE_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1))


def rasterize(p, q) -> np.ndarray:
    """Lattice path from ``p`` to ``q`` along structured-mesh edges, hugging the chord.

    Each move is the admissible unit step (horizontal, vertical or rising
    diagonal, never moving away from ``q``) whose end point lies closest to
    the line through ``p`` and ``q``; ties prefer the diagonal. Collinear
    moves are merged, so the result is the polyline of corner points.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p != np.round(p)) or np.any(q != np.round(q)) or np.all(p == q):
        raise ValueError("end points must be distinct lattice points")
    d = q - p
    normal = np.array([-d[1], d[0]]) / np.hypot(*d)
    pts = [p]
    cur = p
    while np.any(cur != q):
        best = None
        for step in _LATTICE_STEPS:
            s = np.array(step, dtype=float)
            if np.any((s != 0) & (np.sign(s) != np.sign(q - cur))):
                continue
            nxt = cur + s
            key = (round(abs((nxt - p) @ normal), 12), -np.abs(s).sum())
            if best is None or key < best[0]:
                best = (key, nxt)
        cur = best[1]
        pts.append(cur)
    pts = np.array(pts)
    keep = [0]
    for i in range(1, len(pts) - 1):
        a = pts[i] - pts[keep[-1]]
        b = pts[i + 1] - pts[i]
        if a[0] * b[1] - a[1] * b[0] != 0:
            keep.append(i)
    keep.append(len(pts) - 1)
    return pts[keep]


def five_interfaces_2e7() -> FractureNetwork:
    """Five straight fractures snapped to the ``1/64`` lattice.

    Three meet at a triple junction ``J``; two end at immersed tips. Each chord
    is replaced by its lattice path (see :func:`rasterize`), so the network is
    edge aligned on any structured mesh with ``n`` a multiple of 64 while
    crossing coarser meshes as a staircase.
    """
    J = (34, 42)
    chords = [
        ((0, 30), J),          # west
        (J, (44, 64)),         # north
        (J, (20, 0)),          # south
        ((64, 12), (46, 28)),  # east, tip at (46, 28)
        ((64, 54), (47, 47)),  # east, tip at (47, 47)
    ]
    return FractureNetwork([rasterize(a, b) / GRID for a, b in chords])


@dataclass(eq=False)
class LayeredSetup:
    mesh: TriMesh
    network: FractureNetwork
    region: Callable[[np.ndarray], np.ndarray]


TWO_LAYER_LEFT = np.array([[0.25, 0.0], [0.32, 0.3], [0.22, 0.62], [0.3, 1.0]])
TWO_LAYER_RIGHT = np.array([[0.7, 0.0], [0.78, 0.38], [0.66, 0.7], [0.74, 1.0]])


def polyline_layers(network: FractureNetwork) -> Callable[[np.ndarray], np.ndarray]:
    """Region id = number of polylines left of the point.

    Every polyline must be strictly monotone in ``y`` and span ``0 <= y <= 1``,
    so the polylines split the unit square into vertical layers.
    """
    polys = []
    for p in network.polylines:
        p = p if p[-1, 1] > p[0, 1] else p[::-1]
        if np.any(np.diff(p[:, 1]) <= 0) or abs(p[0, 1]) > 1e-12 or abs(p[-1, 1] - 1) > 1e-12:
            raise ValueError("layer interfaces must be y-monotone and span the unit square")
        polys.append(p)

    def region(pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[0], dtype=np.int64)
        for p in polys:
            out += pts[:, 0] > np.interp(pts[:, 1], p[:, 1], p[:, 0])
        return out

    return region


def two_layer_region(pts) -> np.ndarray:
    """Region id 0, 1, 2 left of, between and right of the two interfaces."""
    return polyline_layers(FractureNetwork([TWO_LAYER_LEFT, TWO_LAYER_RIGHT]))(pts)


def _resample(poly, h):
    out = [poly[0]]
    for p, q in zip(poly[:-1], poly[1:]):
        m = max(1, int(round(np.linalg.norm(q - p) / h)))
        out += [p + (q - p) * t for t in np.arange(1, m + 1) / m]
    return np.array(out)


def _dist_to_polyline(pts, poly):
    d = np.full(pts.shape[0], np.inf)
    for p, q in zip(poly[:-1], poly[1:]):
        e = q - p
        t = np.clip(((pts - p) @ e) / (e @ e), 0.0, 1.0)
        d = np.minimum(d, np.linalg.norm(pts - (p + t[:, None] * e), axis=1))
    return d


def _side_points(n_inner, fixed=()):
    """``n_inner`` equispaced interior points on [0, 1] merged with fixed ones."""
    s = list(np.arange(1, n_inner + 1) / (n_inner + 1))
    for f in fixed:
        s = [x for x in s if abs(x - f) > 0.5 / (n_inner + 1)]
    return sorted(s + list(fixed))


def two_layer_unstructured(n_nodes: int = 237, seed: int = 7) -> LayeredSetup:
    """Delaunay mesh of the unit square whose edges contain two zig-zag interfaces.

    Interface points are placed first; lattice points too close to an
    interface are discarded so every interface sub-segment is a Gabriel edge.
    The lattice is thinned deterministically to hit ``n_nodes`` exactly.
    """
    h = 1.0 / 11.0
    left = _resample(TWO_LAYER_LEFT, h)
    right = _resample(TWO_LAYER_RIGHT, h)
    bottom = [(x, 0.0) for x in _side_points(10, (0.25, 0.7))]
    top = [(x, 1.0) for x in _side_points(10, (0.3, 0.74))]
    sides = [(0.0, y) for y in _side_points(11)] + [(1.0, y) for y in _side_points(10)]
    corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    bnd = np.unique(np.round(np.array(corners + bottom + top + sides), 15), axis=0)
    iface = np.vstack([left[1:-1], right[1:-1]])
    rng = np.random.default_rng(seed)
    need = n_nodes - bnd.shape[0] - iface.shape[0]
    for trial in range(50):
        m = 16 + trial
        s = (np.arange(m) + 0.5) / m
        X, Y = np.meshgrid(s, s)
        cand = np.column_stack([X.ravel(), Y.ravel()])
        cand += (rng.random(cand.shape) - 0.5) * (0.3 / m)
        gap = 0.75 * h
        ok = (_dist_to_polyline(cand, left) > gap) & (_dist_to_polyline(cand, right) > gap)
        ok &= np.all((cand > 0.6 / 11) & (cand < 1 - 0.6 / 11), axis=1)
        cand = cand[ok]
        if cand.shape[0] >= need:
            break
    else:
        raise MeshError("could not place enough interior points")
    cand = cand[np.sort(rng.choice(cand.shape[0], size=need, replace=False))]
    verts = np.vstack([bnd, iface, cand])
    tri = Delaunay(verts).simplices.astype(np.int64)
    d1 = verts[tri[:, 1]] - verts[tri[:, 0]]
    d2 = verts[tri[:, 2]] - verts[tri[:, 0]]
    cw = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[cw] = tri[cw][:, [0, 2, 1]]
    boundary = np.zeros(verts.shape[0], dtype=bool)
    boundary[: bnd.shape[0]] = True
    mesh = TriMesh(verts, tri, boundary)
    mesh.check()
    net = FractureNetwork([left, right])
    if not trace_fracture(mesh, net).union_of_edges:
        raise MeshError("interfaces are not unions of mesh edges")
    return LayeredSetup(mesh, net, two_layer_region)


BUILTIN_NETWORKS = {
    "gamma_vertical_half": gamma_vertical_half,
    "five_interfaces_2e7": five_interfaces_2e7,
    "two_layer_unstructured": lambda: two_layer_unstructured().network,
}


def builtin_network(name: str) -> FractureNetwork:
    if name not in BUILTIN_NETWORKS:
        raise KeyError(f"unknown built-in geometry {name!r}; known: {sorted(BUILTIN_NETWORKS)}")
    return BUILTIN_NETWORKS[name]()
