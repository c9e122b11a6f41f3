"""Market model parameters and utility specifications.

The variance process follows a stochastic Volterra square-root equation

    V_t = V_0 + int_0^t K(t-s) kappa (phi - V_s) ds
              + int_0^t K(t-s) sigma sqrt(V_s) dB_s,

with dB = rho dW_1 + sqrt(1 - rho^2) dW_2, and the risky asset earns the
risk premium theta * V_t on top of a deterministic piecewise-constant rate:

    dS_t = S_t (r_t + theta V_t) dt + S_t sqrt(V_t) dW_{1t}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import TimeGrid

__all__ = [
    "RateCurve",
    "ModelParams",
    "PowerUtility",
    "ExponentialUtility",
    "UtilitySpec",
    "utility_from_dict",
]


@dataclass(frozen=True)
class RateCurve:
    """Deterministic risk-free rate, piecewise constant on grid cells.

    A scalar is shorthand for a flat curve; an array gives one value per
    grid cell and must match the grid it is evaluated on.
    """

    values: float | tuple = 0.0

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(arr)):
            raise ValueError("rate curve must be finite")
        if np.any(arr < 0.0):
            raise ValueError("rate curve must be nonnegative")
        # keep hashable/frozen-friendly storage
        object.__setattr__(self, "values", float(arr[0]) if arr.size == 1 else tuple(map(float, arr)))

    def cell_values(self, grid: TimeGrid) -> np.ndarray:
        """Rate on each of the N cells of `grid`."""
        if isinstance(self.values, float):
            return np.full(grid.steps, self.values)
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != (grid.steps,):
            raise ValueError(
                f"rate curve has {arr.size} cells but grid has {grid.steps}"
            )
        return arr

    def integral_to_horizon(self, grid: TimeGrid) -> np.ndarray:
        """Exact int_{t_i}^T r_v dv for every node t_i (length N+1)."""
        cells = self.cell_values(grid) * grid.dt
        out = np.zeros(grid.steps + 1)
        out[:-1] = np.cumsum(cells[::-1])[::-1]
        return out


@dataclass(frozen=True)
class ModelParams:
    """Volterra Heston coefficients plus the rate curve.

    theta = 0 is tolerated as a degenerate solver-test input (it zeroes the
    risk premium and every strategy); the feasibility checks and the CLI
    reject it for production use.
    """

    v0: float
    kappa: float
    phi: float
    sigma: float
    rho: float
    theta: float
    rate: RateCurve = field(default_factory=RateCurve)

    def __post_init__(self):
        if isinstance(self.rate, (int, float)):
            object.__setattr__(self, "rate", RateCurve(float(self.rate)))
        for name in ("v0", "kappa", "phi", "sigma"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0.0):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if not (np.isfinite(self.rho) and abs(self.rho) <= 1.0):
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")


@dataclass(frozen=True)
class PowerUtility:
    """Power (CRRA) utility U(x) = x**gamma / gamma with 0 < gamma < 1."""

    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"power utility requires 0 < gamma < 1, got {self.gamma}")

    def terminal(self, x):
        return np.power(x, self.gamma) / self.gamma


@dataclass(frozen=True)
class ExponentialUtility:
    """Exponential (CARA) utility U(x) = -exp(-gamma x) / gamma with gamma > 0."""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"exponential utility requires gamma > 0, got {self.gamma}")

    def terminal(self, x):
        return -np.exp(-self.gamma * np.asarray(x)) / self.gamma


UtilitySpec = PowerUtility | ExponentialUtility


def utility_from_dict(data: dict) -> UtilitySpec:
    """Build a utility spec from its JSON form, e.g. {"kind": "power", "gamma": 0.5}."""
    if not isinstance(data, dict) or set(data) != {"kind", "gamma"}:
        raise ValueError("utility spec must be an object with fields 'kind' and 'gamma'")
    if data["kind"] == "power":
        return PowerUtility(float(data["gamma"]))
    if data["kind"] == "exponential":
        return ExponentialUtility(float(data["gamma"]))
    raise ValueError(f"unknown utility kind {data['kind']!r}")
