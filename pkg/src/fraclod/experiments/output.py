"""Result tables, CSV output and static SVG line plots."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


@dataclass
class ResultTable:
    """Named columns; one row per measurement, rows kept in insertion order."""

    columns: list
    rows: list = field(default_factory=list)

    def __post_init__(self):
        self.columns = list(self.columns)
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        for r in self.rows:
            self._check(r)

    def _check(self, row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} entries, table has {len(self.columns)} columns")

    def add(self, *row) -> None:
        self._check(row)
        self.rows.append(tuple(row))

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def where(self, **match) -> "ResultTable":
        idx = {k: self.columns.index(k) for k in match}
        keep = [r for r in self.rows if all(r[idx[k]] == v for k, v in match.items())]
        return ResultTable(self.columns, keep)

    def __len__(self) -> int:
        return len(self.rows)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return "%.17g" % x
    if hasattr(x, "dtype"):
        return _fmt(x.item())
    return str(x)


def csv_text(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def emit_csv(table: ResultTable, path) -> Path:
    path = Path(path)
    path.write_text(csv_text(table), newline="")
    return path


def emit_vector_csv(values, path, dofs=None) -> Path:
    """One ``dof,value`` row per entry; ``dofs`` defaults to ``0..n-1``."""
    values = np.asarray(values, dtype=float).ravel()
    dofs = np.arange(values.size) if dofs is None else np.asarray(dofs, dtype=np.int64).ravel()
    if dofs.shape != values.shape:
        raise ValueError("dofs and values differ in length")
    return emit_csv(ResultTable(["dof", "value"], [(int(d), float(v)) for d, v in zip(dofs, values)]), path)


def emit_basis_csv(B, path, nodes=None) -> Path:
    """Nonzeros of a basis matrix (fine dofs x coarse nodes) as ``node,dof,value``.

    Column ``j`` is labelled ``nodes[j]`` (default ``j``); rows are sorted by node, then dof.
    """
    C = sp.csc_matrix(B)
    C.sum_duplicates()
    C.sort_indices()
    nodes = np.arange(C.shape[1]) if nodes is None else np.asarray(nodes, dtype=np.int64)
    if nodes.size != C.shape[1]:
        raise ValueError("one node label per column required")
    table = ResultTable(["node", "dof", "value"])
    for j in range(C.shape[1]):
        lo, hi = C.indptr[j], C.indptr[j + 1]
        for d, v in zip(C.indices[lo:hi], C.data[lo:hi]):
            table.add(int(nodes[j]), int(d), float(v))
    return emit_csv(table, path)


def read_csv(path) -> ResultTable:
    """Parse a CSV written by :func:`emit_csv`; numeric fields become floats."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")

    def conv(s):
        try:
            return float(s)
        except ValueError:
            return s

    return ResultTable(rows[0], [tuple(conv(s) for s in r) for r in rows[1:]])


def emit_svg_plot(table: ResultTable, x: str, ys: Sequence[str], path, logx: bool = False,
                  logy: bool = False, group: str | None = None, title: str = "") -> Path:
    """Line plot of ``ys`` against ``x``, one line per (y, group value)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for c in [x, *ys] + ([group] if group else []):
        if c not in table.columns:
            raise KeyError(f"unknown column {c!r}")
    matplotlib.rcParams["svg.hashsalt"] = "fraclod"
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    groups = [None] if group is None else list(dict.fromkeys(table.column(group)))
    for g in groups:
        sub = table if g is None else table.where(**{group: g})
        for y in ys:
            pts = [(a, b) for a, b in zip(sub.column(x), sub.column(y))
                   if isinstance(b, (int, float)) and math.isfinite(b) and (not logy or b > 0)]
            if not pts:
                continue
            label = y if g is None else (f"{g}" if len(ys) == 1 else f"{y} {g}")
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(ys[0] if len(ys) == 1 else "value")
    if title:
        ax.set_title(title)
    if ax.lines:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
