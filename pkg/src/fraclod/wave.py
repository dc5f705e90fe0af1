"""Crank–Nicolson integration of ``M u'' + K u = F(t)`` as a first-order pair.

With ``v = u'`` the trapezoidal rule gives

    (M + τ²/4 K) v1 = (M - τ²/4 K) v0 - τ K u0 + τ/2 (F0 + F1)
    u1 = u0 + τ/2 (v0 + v1)

which conserves ``½ vᵀMv + ½ uᵀKu`` exactly when ``F = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .sparse_linalg import SPDFactor


@dataclass
class WaveState:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    t_end: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("time step must be positive")
        if self.t_end < 0:
            raise ValueError("final time must be non-negative")
        if abs(self.t_end / self.tau - round(self.t_end / self.tau)) > 1e-9:
            raise ValueError(f"t_end={self.t_end} is not a multiple of tau={self.tau}")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.tau))

    def step_of(self, t: float) -> int:
        n = t / self.tau
        if abs(n - round(n)) > 1e-9 or round(n) > self.steps or n < -1e-9:
            raise ValueError(f"sample time {t} is not on the time grid")
        return int(round(n))


class _Solver:
    def __init__(self, A):
        if sp.issparse(A):
            self._f = SPDFactor(A)
            self.solve = self._f.solve
        else:
            c = sla.cho_factor(np.asarray(A))
            self.solve = lambda b: sla.cho_solve(c, b)


class CrankNicolson:
    """Factor ``M + τ²/4 K`` once and advance states."""

    def __init__(self, M, K, tau: float):
        self.M, self.K, self.tau = M, K, float(tau)
        q = 0.25 * self.tau ** 2
        if sp.issparse(M):
            self._lhs = _Solver(sp.csr_matrix(M + q * K))
            self._rhs = sp.csr_matrix(M - q * K)
        else:
            self._lhs = _Solver(np.asarray(M) + q * np.asarray(K))
            self._rhs = np.asarray(M) - q * np.asarray(K)

    def step(self, state: WaveState, F0, F1) -> WaveState:
        tau = self.tau
        b = self._rhs @ state.v - tau * (self.K @ state.u) + 0.5 * tau * (np.asarray(F0) + np.asarray(F1))
        v1 = self._lhs.solve(b)
        u1 = state.u + 0.5 * tau * (state.v + v1)
        return WaveState(u1, v1, state.t + tau)


def cn_step(M, K, F0, F1, state: WaveState, tau: float) -> WaveState:
    return CrankNicolson(M, K, tau).step(state, F0, F1)


def discrete_energy(M, K, state: WaveState) -> float:
    return 0.5 * float(state.v @ (M @ state.v)) + 0.5 * float(state.u @ (K @ state.u))


def constant_profile(t: float) -> float:
    return 1.0


def switch_off(t_off: float) -> Callable[[float], float]:
    """Forcing amplitude 1 up to ``t_off`` and 0 afterwards."""
    return lambda t: 1.0 if t <= t_off + 1e-12 else 0.0


@dataclass
class Trajectory:
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    energy: np.ndarray

    def at(self, t: float) -> np.ndarray:
        hit = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if hit.size == 0:
            raise KeyError(f"time {t} was not sampled")
        return self.u[hit[0]]


def wave_solve(M, K, F, grid: TimeGrid, sample_times: Sequence[float],
               profile: Callable[[float], float] = constant_profile,
               state: WaveState | None = None, track_energy: bool = False) -> Trajectory:
    """March from rest (or ``state``) with load ``profile(t) F`` and record samples."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    if state is None:
        state = WaveState(np.zeros(n), np.zeros(n), 0.0)
    want = sorted({grid.step_of(t) for t in sample_times})
    cn = CrankNicolson(M, K, grid.tau)
    us, vs, ts, es = [], [], [], []
    energy = [discrete_energy(M, K, state)] if track_energy else []
    for step in range(grid.steps + 1):
        if step in want:
            us.append(state.u.copy())
            vs.append(state.v.copy())
            ts.append(step * grid.tau)
        if step == grid.steps:
            break
        t0 = step * grid.tau
        state = cn.step(state, profile(t0) * F, profile(t0 + grid.tau) * F)
        if track_energy:
            energy.append(discrete_energy(M, K, state))
    return Trajectory(np.array(ts), np.array(us), np.array(vs), np.array(energy))


def wave_error_at(t: float, fine: Trajectory, lod_fine_u: Trajectory, K) -> float:
    """Relative energy error at ``t``; both trajectories expressed in fine dofs."""
    ref = fine.at(t)
    d = ref - lod_fine_u.at(t)
    nref = float(np.sqrt(max(ref @ (K @ ref), 0.0)))
    if nref == 0.0:
        raise ValueError("reference displacement has zero energy")
    return float(np.sqrt(max(d @ (K @ d), 0.0))) / nref
