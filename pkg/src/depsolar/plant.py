"""Discrete-time two-axis solar tracker dynamics.

The inner servo loop of the tracker is folded into a rate-limited single
integrator per axis: the controller commands an angular rate (deg/s) and
the angle integrates it over one sample period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Vector or matrix shapes do not agree with the model."""


@dataclass(frozen=True)
class StateSpaceModel:
    """x(k+1) = A x(k) + B u(k), y(k) = C x(k) with box bounds on x and u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float
    x_bounds: np.ndarray  # (n, 2) rows of [min, max]
    u_bounds: np.ndarray  # (m, 2)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        xb = np.atleast_2d(np.asarray(self.x_bounds, dtype=float))
        ub = np.atleast_2d(np.asarray(self.u_bounds, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got {C.shape}")
        if xb.shape != (n, 2) or ub.shape != (B.shape[1], 2):
            raise DimensionError("bounds must be (dim, 2) arrays of [min, max]")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if np.any(xb[:, 0] > xb[:, 1]) or np.any(ub[:, 0] > ub[:, 1]):
            raise ValueError("every bound interval must satisfy min <= max")
        for name, val in (("A", A), ("B", B), ("C", C), ("x_bounds", xb), ("u_bounds", ub)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def clamp_state(self, x) -> np.ndarray:
        return np.clip(x, self.x_bounds[:, 0], self.x_bounds[:, 1])

    def clamp_input(self, u) -> np.ndarray:
        return np.clip(u, self.u_bounds[:, 0], self.u_bounds[:, 1])


@dataclass(frozen=True)
class PlantState:
    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))


@dataclass(frozen=True)
class TrackerParams:
    slew_max: float = 0.45
    dt: float = 1.0
    axes: int = field(default=2, init=False)

    def __post_init__(self):
        if not self.slew_max > 0:
            raise ValueError(f"slew_max must be positive, got {self.slew_max}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def make_tracker_model(params: TrackerParams) -> StateSpaceModel:
    """Per-axis integrator for (azimuth, elevation), both limited to [0, 90] deg."""
    eye = np.eye(2)
    return StateSpaceModel(
        A=eye,
        B=params.dt * eye,
        C=eye,
        dt=params.dt,
        x_bounds=np.array([[0.0, 90.0], [0.0, 90.0]]),
        u_bounds=np.array([[-params.slew_max, params.slew_max]] * 2),
    )


def step(model: StateSpaceModel, state: PlantState, u, *, clamp_input: bool = False) -> PlantState:
    """Advance one sample period; the new state is clamped to ``x_bounds``.

    Inputs outside ``u_bounds`` raise unless ``clamp_input`` is set.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != model.m:
        raise DimensionError(f"u has {u.shape[0]} entries, model expects {model.m}")
    if state.x.shape[0] != model.n:
        raise DimensionError(f"x has {state.x.shape[0]} entries, model expects {model.n}")
    if clamp_input:
        u = model.clamp_input(u)
    elif np.any(u < model.u_bounds[:, 0]) or np.any(u > model.u_bounds[:, 1]):
        raise ValueError(f"input {u} outside u_bounds")
    x_next = model.A @ state.x + model.B @ u
    return PlantState(model.clamp_state(x_next), state.t + model.dt)


def output(model: StateSpaceModel, state: PlantState) -> np.ndarray:
    return model.C @ state.x
