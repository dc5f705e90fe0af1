"""Permeability fields, interface constants and source terms.

Random bulk fields are counter based: the value of cell (row, col) is

    z   = splitmix64(seed ^ (row * 0x9E3779B97F4A7C15 mod 2**64) ^ col)
    val = lo + (hi - lo) * (z >> 11) * 2**-53

so a field is a pure function of ``(n, lo, hi, seed)`` independent of
traversal order. Rows index ``y``, columns index ``x``; cells are right-open.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64(x: np.ndarray) -> np.ndarray:
    """One SplitMix64 output per 64-bit input state (vectorized)."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def cell_uniforms(n: int, seed: int) -> np.ndarray:
    """(n, n) array of uniforms in [0, 1) keyed by (seed, row, col)."""
    rows = np.arange(n, dtype=np.uint64)
    cols = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        rowkey = rows * np.uint64(GOLDEN)
    key = np.uint64(seed & _MASK) ^ rowkey[:, None] ^ cols[None, :]
    z = splitmix64(key)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


class FieldError(ValueError):
    pass


@dataclass(eq=False)
class GridField:
    n: int
    lo: float
    hi: float
    seed: int | None
    values: np.ndarray

    def eval(self, pts) -> np.ndarray:
        """Values at points (vectorized); cells are right-open, ``x = 1`` maps to the last cell."""
        pts = np.asarray(pts, dtype=float)
        if np.any(pts < -1e-14) or np.any(pts > 1 + 1e-14):
            raise FieldError("point outside the unit square")
        ij = np.clip(np.floor(pts * self.n).astype(np.int64), 0, self.n - 1)
        return self.values[ij[..., 1], ij[..., 0]]

    def scaled(self, c: float) -> "GridField":
        return GridField(self.n, c * self.lo, c * self.hi, self.seed, c * self.values)


def sample_uniform(n: int, lo: float, hi: float, seed: int) -> GridField:
    if n < 1:
        raise FieldError("need at least one cell per side")
    if not lo < hi:
        raise FieldError(f"need lo < hi, got [{lo}, {hi})")
    vals = lo + (hi - lo) * cell_uniforms(n, seed)
    vals = np.where(vals >= hi, np.nextafter(hi, lo), vals)
    return GridField(n, lo, hi, seed, vals)


def constant_field(c: float, n: int = 1) -> GridField:
    return GridField(n, c, c, None, np.full((n, n), float(c)))


def eval_bulk(fld: GridField, p) -> float:
    return float(fld.eval(np.asarray(p, dtype=float)))


def layered_field(n: int, lo: float, hi: float, seeds: Sequence[int],
                  region: Callable[[np.ndarray], np.ndarray]) -> GridField:
    """Field whose cells use the seed of the region holding the cell centre.

    ``region`` maps an (m, 2) array of points to integer region ids indexing
    ``seeds``.
    """
    s = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(s, s)
    ids = np.asarray(region(np.column_stack([X.ravel(), Y.ravel()]))).reshape(n, n)
    if np.any(ids < 0) or np.any(ids >= len(seeds)):
        raise FieldError("region lookup failed for some cell centres")
    vals = np.empty((n, n))
    for r, seed in enumerate(seeds):
        layer = sample_uniform(n, lo, hi, seed).values
        vals[ids == r] = layer[ids == r]
    return GridField(n, lo, hi, None, vals)


FORMULAS: dict[str, Callable] = {
    "9+sin(x+y)": lambda x, y: 9.0 + np.sin(x + y),
    "9+cos(x+y)": lambda x, y: 9.0 + np.cos(x + y),
    "sin(pi*x)*sin(pi*y)": lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
    "2*pi^2*sin(pi*x)*sin(pi*y)": lambda x, y: 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y),
}


@dataclass(frozen=True)
class ScalarFunction:
    """Constant, axis-aligned box indicator, or named analytic formula."""

    kind: str = "constant"
    value: float = 0.0
    box: tuple = (0.0, 1.0, 0.0, 1.0)      # x0, x1, y0, y1
    outside: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "box", "formula"):
            raise FieldError(f"unknown function kind {self.kind!r}")
        if self.kind == "formula" and self.name not in FORMULAS:
            raise FieldError(f"unknown formula {self.name!r}; known: {sorted(FORMULAS)}")

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0], pts[..., 1]
        if self.kind == "constant":
            return np.full(x.shape, float(self.value))
        if self.kind == "box":
            x0, x1, y0, y1 = self.box
            inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
            return np.where(inside, self.value, self.outside)
        return FORMULAS[self.name](x, y)

    def scaled(self, c: float) -> "ScalarFunction":
        return ScalarFunction(self.kind, c * self.value, self.box, c * self.outside,
                              self.name) if self.kind != "formula" else _ScaledFormula(self, c)

    @classmethod
    def from_dict(cls, d) -> "ScalarFunction":
        if isinstance(d, (int, float)):
            return cls("constant", float(d))
        d = dict(d)
        kind = d.pop("kind", "constant")
        if kind == "box":
            box = d.pop("box")
            return cls("box", float(d.pop("value", 1.0)), tuple(float(b) for b in box),
                       float(d.pop("outside", 0.0)))
        if kind == "formula":
            return cls("formula", name=d.pop("name"))
        return cls("constant", float(d.pop("value", 0.0)))


@dataclass(frozen=True)
class _ScaledFormula:
    base: ScalarFunction
    factor: float

    def __call__(self, pts):
        return self.factor * self.base(pts)

    def scaled(self, c):
        return _ScaledFormula(self.base, c * self.factor)


def as_function(f) -> ScalarFunction:
    if isinstance(f, (ScalarFunction, _ScaledFormula)):
        return f
    return ScalarFunction.from_dict(f)


@dataclass(eq=False)
class InterfaceData:
    """Per-polyline tangential permeability, density and source."""

    A: np.ndarray
    B: np.ndarray
    f: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_1d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_1d(np.asarray(self.B, dtype=float))
        if np.any(self.A <= 0):
            raise FieldError("interface permeability must be positive")
        if np.any(self.B < 0):
            raise FieldError("interface density must be non-negative")
        self.f = [as_function(g) for g in self.f]

    @classmethod
    def uniform(cls, npoly: int, A: float, B: float = 0.0, f=0.0) -> "InterfaceData":
        return cls(np.full(npoly, A), np.full(npoly, B), [f] * npoly)

    def source(self, i: int):
        if not self.f:
            return ScalarFunction("constant", 0.0)
        return self.f[i] if len(self.f) > 1 else self.f[0]

    def scaled_source(self, c: float) -> "InterfaceData":
        return InterfaceData(self.A, self.B, [g.scaled(c) for g in self.f])


@dataclass(frozen=True)
class SourceTerm:
    f: ScalarFunction = ScalarFunction("constant", 0.0)
    B: float = 1.0

    def scaled(self, c: float) -> "SourceTerm":
        return SourceTerm(self.f.scaled(c), self.B)
