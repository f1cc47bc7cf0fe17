"""Receding-horizon controller for a box-constrained linear model.

The finite-horizon quadratic cost is condensed onto the stacked input
vector and minimised by monotone accelerated projected gradient descent
(box projection on the inputs). Predicted states are clamped to the state
bounds inside the cost, which keeps the problem total when a target sits
near a mechanical stop. When no predicted state touches its bound the
result is polished by an exact solve on the free inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plant import DimensionError, StateSpaceModel


class MpcConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MpcConfig:
    Q: np.ndarray
    R: np.ndarray
    N: int = 10
    ref: np.ndarray | None = None
    max_iters: int = 500
    tol: float = 1e-9

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T):
            raise MpcConfigError("Q must be square and symmetric")
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise MpcConfigError("R must be square and symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise MpcConfigError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise MpcConfigError("R must be positive definite")
        if int(self.N) < 1:
            raise MpcConfigError(f"horizon N must be >= 1, got {self.N}")
        if not self.tol > 0:
            raise MpcConfigError("tol must be positive")
        if int(self.max_iters) < 1:
            raise MpcConfigError("max_iters must be >= 1")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "max_iters", int(self.max_iters))
        if self.ref is not None:
            object.__setattr__(self, "ref", np.asarray(self.ref, dtype=float).reshape(-1))

    @classmethod
    def default(cls, n: int = 2, m: int = 2, **kw) -> "MpcConfig":
        return cls(Q=np.eye(n), R=0.1 * np.eye(m), **kw)

    def with_ref(self, ref) -> "MpcConfig":
        return MpcConfig(self.Q, self.R, self.N, ref, self.max_iters, self.tol)


@dataclass
class ControlSequence:
    u_seq: np.ndarray  # (N, m)
    cost: float
    converged: bool
    iterations: int = 0
    cost_history: list[float] = field(default_factory=list, repr=False)


def predict(model: StateSpaceModel, x0, u_seq) -> np.ndarray:
    """Nominal (unclamped) trajectory of N+1 states starting at ``x0``."""
    if isinstance(u_seq, ControlSequence):
        u_seq = u_seq.u_seq
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if x0.shape[0] != model.n or u_seq.shape[1] != model.m:
        raise DimensionError(
            f"x0 {x0.shape} / u_seq {u_seq.shape} inconsistent with n={model.n}, m={model.m}"
        )
    traj = np.empty((u_seq.shape[0] + 1, model.n))
    traj[0] = x0
    for l, u in enumerate(u_seq, start=1):
        traj[l] = model.A @ traj[l - 1] + model.B @ u
    return traj


def state_reference(model: StateSpaceModel, ref) -> np.ndarray:
    """Lift an output setpoint to a state target through the pseudo-inverse of C."""
    ref = np.asarray(ref, dtype=float).reshape(-1)
    if ref.shape[0] != model.p:
        raise DimensionError(f"ref has {ref.shape[0]} entries, model has {model.p} outputs")
    return np.linalg.pinv(model.C) @ ref


class MpcController:
    """Condensed-QP solver bound to one model and weighting set.

    Holds the prediction matrices and the previous solution (shifted by one
    step) as a warm start. Instances are owned by a single caller.
    """

    def __init__(self, model: StateSpaceModel, cfg: MpcConfig):
        n, m, N = model.n, model.m, cfg.N
        if cfg.Q.shape != (n, n) or cfg.R.shape != (m, m):
            raise DimensionError("Q/R shapes inconsistent with the model")
        self.model = model
        self.cfg = cfg
        A, B = model.A, model.B
        Phi = np.empty((N * n, n))
        Gamma = np.zeros((N * n, N * m))
        Apow = [np.eye(n)]
        for _ in range(N):
            Apow.append(A @ Apow[-1])
        for l in range(1, N + 1):
            Phi[(l - 1) * n:l * n] = Apow[l]
            for j in range(l):
                Gamma[(l - 1) * n:l * n, j * m:(j + 1) * m] = Apow[l - 1 - j] @ B
        self.Phi, self.Gamma = Phi, Gamma
        self.Qbar = np.kron(np.eye(N), cfg.Q)
        self.Rbar = np.kron(np.eye(N), cfg.R)
        self.H = 2.0 * (Gamma.T @ self.Qbar @ Gamma + self.Rbar)
        self.lipschitz = float(np.linalg.eigvalsh(self.H).max())
        self.lo = np.tile(model.u_bounds[:, 0], N)
        self.hi = np.tile(model.u_bounds[:, 1], N)
        self.xlo = np.tile(model.x_bounds[:, 0], N)
        self.xhi = np.tile(model.x_bounds[:, 1], N)
        self._C_pinv = np.linalg.pinv(model.C)
        self._warm: np.ndarray | None = None

    def reset(self) -> None:
        self._warm = None

    def _cost(self, U, free, Xr):
        X = free + self.Gamma @ U
        Xc = np.clip(X, self.xlo, self.xhi)
        E = Xc - Xr
        return float(E @ self.Qbar @ E + U @ self.Rbar @ U), X, Xc

    def _grad(self, U, X, Xc, Xr):
        mask = (X == Xc).astype(float)
        return 2.0 * (self.Gamma.T @ (mask * (self.Qbar @ (Xc - Xr))) + self.Rbar @ U)

    def solve(self, x0, ref=None, warm_start: bool = True) -> ControlSequence:
        model, cfg = self.model, self.cfg
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape[0] != model.n:
            raise DimensionError(f"x0 has {x0.shape[0]} entries, model expects {model.n}")
        if ref is None:
            ref = cfg.ref
        xr = np.zeros(model.n) if ref is None else self._C_pinv @ np.asarray(ref, dtype=float).reshape(model.p)
        N, m = cfg.N, model.m
        Xr = np.tile(xr, N)
        free = self.Phi @ x0

        if warm_start and self._warm is not None:
            U = np.clip(self._warm, self.lo, self.hi)
        else:
            U = np.zeros(N * m)
            U = np.clip(U, self.lo, self.hi)
        J, X, Xc = self._cost(U, free, Xr)
        history = [J]
        step = 1.0 / self.lipschitz
        Y, U_prev, t = U.copy(), U.copy(), 1.0
        converged = False
        it = 0
        for it in range(1, cfg.max_iters + 1):
            _, XY, XYc = self._cost(Y, free, Xr)
            Z = np.clip(Y - step * self._grad(Y, XY, XYc, Xr), self.lo, self.hi)
            Jz, XZ, XZc = self._cost(Z, free, Xr)
            U_prev = U
            if Jz <= J:
                decrease = J - Jz
                U, J, X, Xc = Z, Jz, XZ, XZc
            else:
                decrease = 0.0
            history.append(J)
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            Y = U + (t / t_next) * (Z - U) + ((t - 1.0) / t_next) * (U - U_prev)
            t = t_next
            if decrease <= cfg.tol * (1.0 + J) and Jz <= J + cfg.tol * (1.0 + J):
                converged = True
                break

        U, J, X, Xc = self._polish(U, J, X, Xc, free, Xr)
        if history[-1] != J:
            history.append(J)
        self._warm = np.concatenate([U[m:], U[-m:]])
        return ControlSequence(U.reshape(N, m), J, converged, it, history)

    def _polish(self, U, J, X, Xc, free, Xr):
        if np.any(X != Xc):
            return U, J, X, Xc
        g = self._grad(U, X, Xc, Xr)
        span = np.maximum(1.0, np.abs(self.hi - self.lo))
        span = np.where(np.isfinite(span), span, 1.0)
        at_lo = (U - self.lo <= 1e-9 * span) & (g > 0)
        at_hi = (self.hi - U <= 1e-9 * span) & (g < 0)
        fixed = at_lo | at_hi
        fr = ~fixed
        if not fr.any():
            return U, J, X, Xc
        b = 2.0 * self.Gamma.T @ self.Qbar @ (free - Xr)
        cand = U.copy()
        cand[at_lo] = self.lo[at_lo]
        cand[at_hi] = self.hi[at_hi]
        rhs = -(b[fr] + self.H[np.ix_(fr, fixed)] @ cand[fixed])
        cand[fr] = np.linalg.solve(self.H[np.ix_(fr, fr)], rhs)
        if np.any(cand < self.lo) or np.any(cand > self.hi):
            return U, J, X, Xc
        Jc, Xn, Xnc = self._cost(cand, free, Xr)
        if Jc <= J and np.all(Xn == Xnc):
            return cand, Jc, Xn, Xnc
        return U, J, X, Xc

    def feedback(self, x0, ref=None) -> np.ndarray:
        return self.solve(x0, ref).u_seq[0]


def solve(model: StateSpaceModel, x0, cfg: MpcConfig) -> ControlSequence:
    """Minimise the horizon cost from ``x0`` (cold start, no shared state)."""
    return MpcController(model, cfg).solve(x0, warm_start=False)


def feedback(model: StateSpaceModel, x0, cfg: MpcConfig) -> np.ndarray:
    """Implicit state feedback: the first input of the optimal sequence."""
    return solve(model, x0, cfg).u_seq[0]
