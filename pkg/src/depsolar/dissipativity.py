"""Incremental dissipativity monitor.

Works on increments of state and input between consecutive samples. A
quadratic supply rate in (du, dx), a quadratic storage in dx, the
dissipation inequality, and a geometric decay test on the supply-rate
series together give a run-time stability verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import DimensionError

TOL_ZERO = 1e-12


@dataclass(frozen=True)
class IncrementBounds:
    delta_alpha: float
    delta_beta: float

    def __post_init__(self):
        if not (self.delta_alpha > 0 and self.delta_beta > 0):
            raise ValueError("increment bounds must be strictly positive")


@dataclass(frozen=True)
class SupplyRateParams:
    P_mult: np.ndarray
    K_mult: np.ndarray
    S_mult: np.ndarray
    L_store: np.ndarray
    tau: float = 0.9
    gamma: float = 0.99
    k0: int = 0

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P_mult, dtype=float))
        K = np.atleast_2d(np.asarray(self.K_mult, dtype=float))
        S = np.atleast_2d(np.asarray(self.S_mult, dtype=float))
        L = np.atleast_2d(np.asarray(self.L_store, dtype=float))
        m, n = P.shape[0], K.shape[0]
        if P.shape != (m, m) or K.shape != (n, n) or S.shape != (m, n) or L.shape != (n, n):
            raise DimensionError("multiplier shapes must be P m*m, K n*n, S m*n, L n*n")
        if not (np.allclose(P, P.T) and np.allclose(K, K.T)):
            raise ValueError("P_mult and K_mult must be symmetric")
        if not np.allclose(L, L.T) or np.linalg.eigvalsh(L).min() <= 0:
            raise ValueError("L_store must be symmetric positive definite")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if int(self.k0) < 0:
            raise ValueError("k0 must be nonnegative")
        for name, val in (("P_mult", P), ("K_mult", K), ("S_mult", S), ("L_store", L)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "k0", int(self.k0))

    @classmethod
    def default(cls, n: int = 2, m: int = 2, **kw) -> "SupplyRateParams":
        return cls(np.eye(m), np.eye(n), np.zeros((m, n)), np.eye(n), **kw)

    def with_k0(self, k0: int) -> "SupplyRateParams":
        return SupplyRateParams(self.P_mult, self.K_mult, self.S_mult, self.L_store,
                                self.tau, self.gamma, k0)


@dataclass
class StabilityVerdict:
    dissipation_ok: np.ndarray
    decay_ok: np.ndarray
    psi: np.ndarray
    V: np.ndarray
    violated_at: int | None = None
    bounds_ok: np.ndarray | None = field(default=None)

    @property
    def stable(self) -> bool:
        return self.violated_at is None

    @property
    def first_dissipation_violation(self) -> int | None:
        bad = np.flatnonzero(~self.dissipation_ok)
        return int(bad[0]) if bad.size else None


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)


def increments(x_k, x_k1, u_k, u_k1) -> tuple[np.ndarray, np.ndarray]:
    x_k, x_k1, u_k, u_k1 = map(_vec, (x_k, x_k1, u_k, u_k1))
    if x_k.shape != x_k1.shape or u_k.shape != u_k1.shape:
        raise DimensionError("increment operands must share dimensions")
    return x_k1 - x_k, u_k1 - u_k


def check_increment_bounds(dx, du, b: IncrementBounds) -> bool:
    dx, du = _vec(dx), _vec(du)
    return bool(dx @ dx <= b.delta_alpha and du @ du <= b.delta_beta)


def supply_rate(du, dx, p: SupplyRateParams) -> float:
    du, dx = _vec(du), _vec(dx)
    if du.shape[0] != p.P_mult.shape[0] or dx.shape[0] != p.K_mult.shape[0]:
        raise DimensionError("increments inconsistent with multiplier shapes")
    cross = du @ p.S_mult @ dx
    return float(du @ p.P_mult @ du + 2.0 * cross + dx @ p.K_mult @ dx)


def storage(dx, p: SupplyRateParams) -> float:
    dx = _vec(dx)
    if dx.shape[0] != p.L_store.shape[0]:
        raise DimensionError("increment inconsistent with L_store")
    return float(dx @ p.L_store @ dx)


def check_dissipation(V_next: float, V_cur: float, psi: float, p: SupplyRateParams) -> bool:
    return bool(V_next - p.tau * V_cur <= psi)


def _decay_flags(psi: np.ndarray, gamma: float, k0: int) -> np.ndarray:
    ok = np.ones(psi.shape[0], dtype=bool)
    for j in range(k0 + 1, psi.shape[0]):
        prev = psi[j - 1]
        if prev > TOL_ZERO and psi[j] > gamma * prev:
            ok[j] = False
    return ok


def check_asymptotic_decay(psi_series, p: SupplyRateParams) -> StabilityVerdict:
    """Geometric decay psi[j] <= gamma * psi[j-1] for every j > k0.

    Entries at or below ``TOL_ZERO`` count as converged. ``violated_at`` is
    the index of the first entry that fails to decay.
    """
    psi = np.asarray(psi_series, dtype=float).reshape(-1)
    if psi.size == 0:
        raise ValueError("psi series is empty")
    if not 0 <= p.k0 < psi.size:
        raise IndexError(f"k0={p.k0} outside series of length {psi.size}")
    decay = _decay_flags(psi, p.gamma, p.k0)
    bad = np.flatnonzero(~decay)
    return StabilityVerdict(
        dissipation_ok=np.ones(psi.size, dtype=bool),
        decay_ok=decay,
        psi=psi,
        V=np.full(psi.size, np.nan),
        violated_at=int(bad[0]) if bad.size else None,
    )


def evaluate_trajectory(xs, us, p: SupplyRateParams,
                        bounds: IncrementBounds | None = None) -> StabilityVerdict:
    """Verdict for a logged closed-loop run.

    ``xs[k]`` is the state at sample k and ``us[k]`` the input applied from
    ``xs[k]`` to ``xs[k+1]``. Increment k is dx = xs[k+1] - xs[k] and
    du = us[k+1] - us[k]; the dissipation check at k compares V at k+1 and k
    against psi at k.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    K = min(xs.shape[0], us.shape[0]) - 1
    if K < 1:
        raise ValueError("need at least two samples to form increments")
    dX = xs[1:K + 1] - xs[:K]
    dU = us[1:K + 1] - us[:K]
    psi = np.array([supply_rate(du, dx, p) for du, dx in zip(dU, dX)])
    V = np.array([storage(dx, p) for dx in dX])
    diss = np.ones(K, dtype=bool)
    for k in range(K - 1):
        diss[k] = check_dissipation(V[k + 1], V[k], psi[k], p)
    k0 = min(p.k0, K - 1)
    decay = _decay_flags(psi, p.gamma, k0)
    bounds_ok = None
    if bounds is not None:
        bounds_ok = np.array([check_increment_bounds(dx, du, bounds) for dx, du in zip(dX, dU)])
    bad = np.flatnonzero(~(diss & decay))
    return StabilityVerdict(diss, decay, psi, V, int(bad[0]) if bad.size else None, bounds_ok)


def saturation_end(us, u_max, atol: float = 1e-9) -> int:
    """Index of the first sample after which no input component sits on its limit."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    sat = np.any(np.abs(us) >= np.asarray(u_max) - atol, axis=1)
    idx = np.flatnonzero(sat)
    return int(idx[-1]) + 1 if idx.size else 0


class DissipativityMonitor:
    """Streaming monitor owned by one controller.

    Feed it (x, u) pairs as they happen; the verdict is recomputed from the
    stored series, so rebuilding it from a log reproduces it exactly.
    """

    def __init__(self, params: SupplyRateParams, bounds: IncrementBounds | None = None):
        self.params = params
        self.bounds = bounds
        self.xs: list[np.ndarray] = []
        self.us: list[np.ndarray] = []

    def reset(self) -> None:
        self.xs.clear()
        self.us.clear()

    def update(self, x, u) -> float | None:
        """Record a sample; returns the newest supply-rate value once available."""
        self.xs.append(_vec(x).copy())
        self.us.append(_vec(u).copy())
        if len(self.xs) < 2:
            return None
        dx, du = increments(self.xs[-2], self.xs[-1], self.us[-2], self.us[-1])
        return supply_rate(du, dx, self.params)

    def seed(self, x_prev, x_last, u_prev, u_last) -> None:
        """Restart from two replicated samples (used on takeover)."""
        self.reset()
        self.update(x_prev, u_prev)
        self.update(x_last, u_last)

    def last_increments(self) -> tuple[np.ndarray, np.ndarray] | None:
        if len(self.xs) < 2:
            return None
        return increments(self.xs[-2], self.xs[-1], self.us[-2], self.us[-1])

    def verdict(self) -> StabilityVerdict:
        return evaluate_trajectory(np.array(self.xs), np.array(self.us), self.params, self.bounds)
