"""Polyline fracture networks and their per-triangle traces."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, barycentric


class FractureError(ValueError):
    pass


@dataclass(eq=False)
class FractureNetwork:
    """Fracture polylines. Intersections must be shared chain vertices."""

    polylines: list
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        self.polylines = [np.asarray(p, dtype=float).reshape(-1, 2) for p in self.polylines]
        x0, x1, y0, y1 = self.bounds
        diam = np.hypot(x1 - x0, y1 - y0)
        for i, p in enumerate(self.polylines):
            if p.shape[0] < 2:
                raise FractureError(f"polyline {i} needs at least two points")
            seglen = np.linalg.norm(np.diff(p, axis=0), axis=1)
            if np.any(seglen <= 1e-12 * diam):
                raise FractureError(f"polyline {i} has a degenerate segment")
        self._check_simple()

    @cached_property
    def segments(self) -> np.ndarray:
        """(S, 2, 2) segment endpoints."""
        return np.concatenate([np.stack([p[:-1], p[1:]], axis=1) for p in self.polylines])

    @cached_property
    def segment_polyline(self) -> np.ndarray:
        return np.concatenate([np.full(p.shape[0] - 1, i) for i, p in enumerate(self.polylines)])

    @cached_property
    def segment_local(self) -> np.ndarray:
        return np.concatenate([np.arange(p.shape[0] - 1) for p in self.polylines])

    @cached_property
    def segment_offset(self) -> np.ndarray:
        """Arclength of each segment start along its polyline."""
        out = []
        for p in self.polylines:
            seglen = np.linalg.norm(np.diff(p, axis=0), axis=1)
            out.append(np.concatenate([[0.0], np.cumsum(seglen)[:-1]]))
        return np.concatenate(out)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([np.linalg.norm(np.diff(p, axis=0), axis=1).sum() for p in self.polylines])

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    def _on_domain_boundary(self, pt) -> bool:
        x0, x1, y0, y1 = self.bounds
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        return (abs(pt[0] - x0) < tol or abs(pt[0] - x1) < tol
                or abs(pt[1] - y0) < tol or abs(pt[1] - y1) < tol)

    @cached_property
    def intersection_points(self) -> np.ndarray:
        """Chain vertices shared by two or more polylines."""
        pts = []
        for i, p in enumerate(self.polylines):
            for q in self.polylines[i + 1:]:
                d = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
                for a, _ in zip(*np.nonzero(d < 1e-12)):
                    if not any(np.allclose(p[a], x, atol=1e-12) for x in pts):
                        pts.append(p[a])
        return np.array(pts).reshape(-1, 2)

    @cached_property
    def tip_points(self) -> np.ndarray:
        """Polyline endpoints inside the domain not shared with another polyline."""
        tips = []
        inter = self.intersection_points
        for i, p in enumerate(self.polylines):
            for end in (p[0], p[-1]):
                if self._on_domain_boundary(end):
                    continue
                if inter.size and np.any(np.linalg.norm(inter - end, axis=1) < 1e-12):
                    continue
                # endpoint of one polyline lying on another polyline's chain vertex
                if any(np.any(np.linalg.norm(q - end, axis=1) < 1e-12)
                       for j, q in enumerate(self.polylines) if j != i):
                    continue
                tips.append(end)
        return np.array(tips).reshape(-1, 2)

    def _check_simple(self) -> None:
        segs = self.segments
        S = segs.shape[0]
        for i in range(S):
            for j in range(i + 1, S):
                if _segments_cross(segs[i], segs[j]):
                    raise FractureError(f"segments {i} and {j} intersect away from a shared vertex")


def _segments_cross(s, t, tol=1e-12) -> bool:
    """True if two segments meet anywhere other than at a common endpoint."""
    p, r = s[0], s[1] - s[0]
    q, u = t[0], t[1] - t[0]
    shared = [(a, b) for a in (0, 1) for b in (0, 1) if np.linalg.norm(s[a] - t[b]) < tol]
    rxu = r[0] * u[1] - r[1] * u[0]
    qp = q - p
    scale = np.linalg.norm(r) * np.linalg.norm(u)
    if abs(rxu) <= tol * scale:
        # parallel: collinear overlap counts as crossing
        if abs(qp[0] * r[1] - qp[1] * r[0]) > tol * np.linalg.norm(r) * max(np.linalg.norm(qp), 1.0):
            return False
        rr = r @ r
        t0 = (qp @ r) / rr
        t1 = ((q + u - p) @ r) / rr
        lo, hi = min(t0, t1), max(t0, t1)
        overlap = min(hi, 1.0) - max(lo, 0.0)
        return overlap > tol
    tt = (qp[0] * u[1] - qp[1] * u[0]) / rxu
    ss = (qp[0] * r[1] - qp[1] * r[0]) / rxu
    if -tol <= tt <= 1 + tol and -tol <= ss <= 1 + tol:
        hit = p + tt * r
        return not any(np.linalg.norm(hit - s[a]) < 1e-9 * max(1.0, np.sqrt(scale)) for a, _ in shared)
    return False


def load_fractures(path) -> FractureNetwork:
    tokens = Path(path).read_text().split()
    try:
        npoly = int(tokens[0])
        pos = 1
        polys = []
        for _ in range(npoly):
            m = int(tokens[pos])
            pos += 1
            pts = np.array([float(t) for t in tokens[pos:pos + 2 * m]])
            if pts.size != 2 * m:
                raise FractureError(f"{path}: polyline declares {m} points but file ends early")
            polys.append(pts.reshape(m, 2))
            pos += 2 * m
    except (ValueError, IndexError) as exc:
        raise FractureError(f"{path}: malformed fracture file ({exc})") from exc
    if pos != len(tokens):
        raise FractureError(f"{path}: trailing data after {npoly} polylines")
    return FractureNetwork(polys)


def save_fractures(frac: FractureNetwork, path) -> None:
    lines = [str(len(frac.polylines))]
    for p in frac.polylines:
        lines.append(str(p.shape[0]))
        lines += [f"{x:.17g} {y:.17g}" for x, y in p]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(eq=False)
class FractureTrace:
    """Fracture pieces clipped to mesh triangles.

    Every piece of the fracture appears exactly once, owned by ``tri``. A piece
    lying on an interior mesh edge also records the triangle across the edge
    in ``nbr`` (otherwise -1), so ``Gamma ∩ T`` for a closed triangle ``T`` is
    the set of pieces with ``tri == T`` or ``nbr == T``.
    """

    mesh: TriMesh
    tri: np.ndarray
    nbr: np.ndarray
    a: np.ndarray
    b: np.ndarray
    polyline: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    on_edge: np.ndarray
    full_edge: np.ndarray

    @property
    def n(self) -> int:
        return self.tri.size

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.b - self.a, axis=1)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def union_of_edges(self) -> bool:
        return bool(self.n == 0 or np.all(self.on_edge & self.full_edge))

    @cached_property
    def _closed_map(self) -> sp.csr_matrix:
        rows = np.concatenate([self.tri, self.nbr[self.nbr >= 0]])
        cols = np.concatenate([np.arange(self.n), np.flatnonzero(self.nbr >= 0)])
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.mesh.nt, self.n))

    def closed_pieces(self, T: int) -> np.ndarray:
        """Indices of pieces in ``Gamma ∩ T`` (closed triangle)."""
        m = self._closed_map
        return np.sort(m.indices[m.indptr[T]:m.indptr[T + 1]])

    @cached_property
    def crossed(self) -> np.ndarray:
        """Boolean mask of triangles whose closure carries fracture length."""
        return np.diff(self._closed_map.indptr) > 0

    def owned_pieces(self, T: int) -> np.ndarray:
        return np.flatnonzero(self.tri == T)


def trace_fracture(mesh: TriMesh, frac: FractureNetwork, tol: float = 1e-10) -> FractureTrace:
    """Clip each fracture segment against every triangle it meets."""
    segs = frac.segments
    c = mesh.corners
    lo = c.min(axis=1)
    hi = c.max(axis=1)
    diam = mesh.diameters
    out = {k: [] for k in ("tri", "a", "b", "seg", "t0", "t1", "edge")}
    for s, (p, q) in enumerate(segs):
        slo = np.minimum(p, q)
        shi = np.maximum(p, q)
        pad = tol * diam
        cand = np.flatnonzero(np.all(lo - pad[:, None] <= shi, axis=1) & np.all(hi + pad[:, None] >= slo, axis=1))
        if cand.size == 0:
            continue
        lp = barycentric(c[cand], np.broadcast_to(p, (cand.size, 2)))
        lq = barycentric(c[cand], np.broadcast_to(q, (cand.size, 2)))
        d = lq - lp
        t0 = np.zeros(cand.size)
        t1 = np.ones(cand.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = -lp / d
        # coordinates that barely change along the segment (segment parallel to
        # that edge, up to rounding from refinement) are tested, not clipped
        flat = np.abs(d) < tol
        inside_flat = np.minimum(lp, lq) >= -tol
        t0 = np.maximum(t0, np.where((d > 0) & ~flat, bound, -np.inf).max(axis=1))
        t1 = np.minimum(t1, np.where((d < 0) & ~flat, bound, np.inf).min(axis=1))
        ok = np.all(~flat | inside_flat, axis=1)
        seglen = np.linalg.norm(q - p)
        keep = ok & ((t1 - t0) * seglen > tol * diam[cand])
        if not np.any(keep):
            continue
        cand, t0, t1 = cand[keep], t0[keep], t1[keep]
        a = p + t0[:, None] * (q - p)
        b = p + t1[:, None] * (q - p)
        la = lp[keep] + t0[:, None] * d[keep]
        lb = lp[keep] + t1[:, None] * d[keep]
        on = (np.abs(la) < tol) & (np.abs(lb) < tol)
        edge = np.where(on.any(axis=1), mesh.tri_edges[cand, np.argmax(on, axis=1)], -1)
        out["tri"].append(cand)
        out["a"].append(a)
        out["b"].append(b)
        out["seg"].append(np.full(cand.size, s))
        out["t0"].append(t0)
        out["t1"].append(t1)
        out["edge"].append(edge)
    if out["tri"]:
        data = {k: np.concatenate(v) for k, v in out.items()}
    else:
        data = {k: np.zeros((0, 2) if k in ("a", "b") else 0) for k in out}
        data["tri"] = data["tri"].astype(np.int64)
        data["seg"] = data["seg"].astype(np.int64)
        data["edge"] = data["edge"].astype(np.int64)

    # deduplicate pieces found from both sides of an edge
    n = data["tri"].size
    nbr = -np.ones(n, dtype=np.int64)
    drop = np.zeros(n, dtype=bool)
    groups: dict = {}
    for i in np.flatnonzero(data["edge"] >= 0):
        key = (int(data["seg"][i]), int(data["edge"][i]))
        groups.setdefault(key, []).append(i)
    for idx in groups.values():
        idx = sorted(idx, key=lambda i: data["tri"][i])
        if len(idx) > 2:
            raise FractureError("edge piece found in more than two triangles")
        if len(idx) == 2:
            keep_i, other = idx
            nbr[keep_i] = data["tri"][other]
            drop[other] = True
    sel = ~drop
    seg = data["seg"][sel]
    seglen = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    t0, t1 = data["t0"][sel], data["t1"][sel]
    edge = data["edge"][sel]
    on_edge = edge >= 0
    pl = np.linalg.norm(data["b"][sel] - data["a"][sel], axis=1)
    elen = np.zeros(pl.size)
    if on_edge.any():
        ev = mesh.edges[edge[on_edge]]
        elen[on_edge] = np.linalg.norm(mesh.vertices[ev[:, 1]] - mesh.vertices[ev[:, 0]], axis=1)
    full = on_edge & (np.abs(pl - elen) <= tol * np.maximum(elen, 1e-300) * 10)

    covered = np.bincount(seg, weights=pl, minlength=segs.shape[0])
    if not np.allclose(covered, seglen, rtol=1e-9, atol=0):
        bad = int(np.flatnonzero(~np.isclose(covered, seglen, rtol=1e-9, atol=0))[0])
        raise FractureError(f"fracture segment {bad} leaves the meshed domain")
    return FractureTrace(
        mesh=mesh,
        tri=data["tri"][sel].astype(np.int64),
        nbr=nbr[sel],
        a=data["a"][sel],
        b=data["b"][sel],
        polyline=frac.segment_polyline[seg],
        s0=frac.segment_offset[seg] + t0 * seglen[seg],
        s1=frac.segment_offset[seg] + t1 * seglen[seg],
        on_edge=on_edge,
        full_edge=full,
    )
