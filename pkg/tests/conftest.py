"""Shared fixtures: the sensitivity-study parameter set and oracle helpers.

The strategy-figure caption pins r=0.01, gamma=0.5, sigma=0.02, kappa=0.1,
theta=0.5, rho=-0.7, T=1 but leaves V0 and phi free (the strategy curves do
not depend on them).  Tests that need the variance level use V0=0.04 with
phi chosen so that kappa*phi = lam_power*V0, which makes the tilted-measure
forward variance exactly flat and keeps Monte Carlo bias far below the
statistical bands.
"""

import numpy as np
import pytest

from roughmerton import ExponentialUtility, ModelParams, PowerUtility

FIG2 = dict(kappa=0.1, sigma=0.02, rho=-0.7, theta=0.5, rate=0.01)
LAM_POWER = 0.107  # kappa - gamma/(1-gamma) * rho*theta*sigma at gamma=0.5
LAM_EXP = 0.093  # kappa + rho*sigma*theta


@pytest.fixture
def power_utility():
    return PowerUtility(0.5)


@pytest.fixture
def exp_utility():
    return ExponentialUtility(0.5)


@pytest.fixture
def fig2_model():
    """Sensitivity-study coefficients with a flat tilted forward variance."""
    v0 = 0.04
    return ModelParams(v0=v0, phi=LAM_POWER * v0 / FIG2["kappa"], **FIG2)


@pytest.fixture
def fig1a_model():
    """Skew-comparison coefficients (rough kernel uses H=0.12)."""
    return ModelParams(
        v0=0.0392, kappa=0.1, phi=0.3156, sigma=1.044, rho=-0.681, theta=0.5, rate=0.0
    )


def rk4_riccati(a, b, d, horizon, steps):
    """Dense RK4 for psi' = a psi^2 + b psi + d, psi(0) = 0 (the H=1/2 ODE)."""

    def f(x):
        return (a * x + b) * x + d

    h = horizon / steps
    psi = np.zeros(steps + 1, dtype=np.result_type(a, b, d, float))
    y = psi[0]
    for i in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        psi[i + 1] = y
    return psi
