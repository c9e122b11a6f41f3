"""Adams predictor-corrector solver for Riccati-Volterra equations.

The equations are of convolution type,

    psi(t) = int_0^t K(t - s) F(psi(s)) ds,      F(x) = a x^2 + b x + d,

with real coefficients for the portfolio curves and complex ones for the
characteristic function.  Stepping combines an explicit product-integration
predictor (F held left-constant per cell) with a corrector built on the
piecewise-linear product weights of the same kernel, fixed-point iterated at
the new node.  For the fractional kernel this is the standard fractional
Adams scheme and converges faster than first order.

Coefficient assembly for the two utility problems:

    power        lam = kappa - gamma/(1-gamma) * rho*theta*sigma
                 c   = (1-gamma) / (1-gamma + gamma*rho^2)
                 a   = sigma^2/2,  b = -lam,  d = gamma*theta^2 / (2c(1-gamma))
    exponential  lam = kappa + rho*sigma*theta
                 a   = sigma^2 (1-rho^2)/2,  b = -lam,  d = -theta^2/2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .kernels import KernelSpec, SampledFunction, SampledKernel
from .model import ExponentialUtility, ModelParams, PowerUtility

__all__ = [
    "RiccatiCoefficients",
    "RiccatiSolution",
    "solve_riccati",
    "solve_riccati_batch",
    "solve_power_psi",
    "solve_exponential_psi",
]

BLOWUP_BOUND = 1e8
CORRECTOR_TOL = 1e-12
CORRECTOR_MAX_ITER = 20


@dataclass(frozen=True)
class RiccatiCoefficients:
    """Coefficients of F(psi) = a*psi^2 + b*psi + d (real or complex)."""

    a: complex
    b: complex
    d: complex

    def __post_init__(self):
        for name in ("a", "b", "d"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient {name} must be finite")

    @property
    def is_complex(self) -> bool:
        return any(isinstance(v, complex) and v.imag != 0.0 for v in (self.a, self.b, self.d))


@dataclass
class RiccatiSolution:
    """psi on a grid together with the equation it solves.

    `kind` tags how the coefficients were assembled ("power", "exponential",
    "charfn" or "custom"); `lam` and `c_factor` carry the derived constants
    for downstream strategy and feasibility formulas.
    """

    psi: SampledFunction
    coefficients: RiccatiCoefficients
    kernel_spec: KernelSpec
    corrector_residual: float
    kind: str = "custom"
    lam: float | None = None
    c_factor: float | None = None

    @property
    def grid(self):
        return self.psi.grid

    @property
    def values(self) -> np.ndarray:
        return self.psi.values


def solve_riccati_batch(
    a: np.ndarray,
    b: np.ndarray,
    d: np.ndarray,
    k: SampledKernel,
    *,
    tol: float = CORRECTOR_TOL,
    max_iter: int = CORRECTOR_MAX_ITER,
    blowup: float = BLOWUP_BOUND,
) -> tuple[np.ndarray, float]:
    """Solve a batch of Riccati-Volterra equations sharing one kernel.

    a, b, d are broadcast-compatible coefficient arrays; returns the array
    of solutions with shape (N+1, batch) plus the worst corrector residual.
    Raises NumericalError on blow-up or a diverging corrector, reporting the
    failing node (moment explosion shows up here for complex coefficients).
    """
    a, b, d = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(b), np.atleast_1d(d))
    n = k.grid.steps
    w = k.weights
    right, left = k.linear_weights
    # Weight of F_{n-l} in the corrector sum for lags l = 1..n-1; F_0 takes
    # left[n-1] and the new node takes right[0].
    gamma_w = np.empty(n)
    gamma_w[0] = 0.0
    gamma_w[1:] = left[:-1] + right[1:]

    dtype = complex if np.iscomplexobj(a) or np.iscomplexobj(b) or np.iscomplexobj(d) else float
    psi = np.zeros((n + 1,) + a.shape, dtype=dtype)
    fvals = np.zeros_like(psi)
    fvals[0] = d

    def f_of(x):
        return (a * x + b) * x + d

    worst_residual = 0.0
    for i in range(1, n + 1):
        pred = w[i - 1 :: -1] @ fvals[:i].reshape(i, -1)
        hist = left[i - 1] * fvals[0].ravel()
        if i > 1:
            hist = hist + gamma_w[i - 1 : 0 : -1] @ fvals[1:i].reshape(i - 1, -1)
        hist = hist.reshape(a.shape)
        x = pred.reshape(a.shape)
        delta = np.inf
        # Newton on  x - hist - right[0]*F(x) = 0, started at the predictor;
        # plain fixed-point substitution loses contraction for stiff complex
        # coefficients (large Fourier arguments).
        for _ in range(max_iter):
            slope = 1.0 - right[0] * (2.0 * a * x + b)
            if np.any(np.abs(slope) < 1e-14):
                raise NumericalError("singular Newton step in Riccati corrector", node=i)
            x_new = x - (x - hist - right[0] * f_of(x)) / slope
            delta = float(np.max(np.abs(x_new - x)))
            x = x_new
            if delta <= tol:
                break
        if not np.all(np.isfinite(x)):
            raise NumericalError("Riccati corrector diverged", node=i)
        too_big = np.abs(x) > blowup
        if np.any(too_big):
            raise NumericalError(
                f"|psi| exceeded blow-up bound {blowup:g} (moment explosion)", node=i
            )
        worst_residual = max(worst_residual, delta)
        psi[i] = x
        fvals[i] = f_of(x)

    return psi, worst_residual


def solve_riccati(coeffs: RiccatiCoefficients, k: SampledKernel, **kwargs) -> RiccatiSolution:
    """Solve psi = K * (a psi^2 + b psi + d) on the kernel's grid."""
    psi, residual = solve_riccati_batch(
        np.asarray(coeffs.a), np.asarray(coeffs.b), np.asarray(coeffs.d), k, **kwargs
    )
    values = psi[:, 0]
    if not coeffs.is_complex:
        values = values.real
    return RiccatiSolution(
        psi=SampledFunction(grid=k.grid, values=values),
        coefficients=coeffs,
        kernel_spec=k.spec,
        corrector_residual=residual,
    )


def power_lambda(m: ModelParams, u: PowerUtility) -> float:
    """Mean-reversion speed under the power-utility tilted measure."""
    g = u.gamma
    return m.kappa - g / (1.0 - g) * m.rho * m.theta * m.sigma


def power_c_factor(m: ModelParams, u: PowerUtility) -> float:
    """Distortion exponent c = (1-gamma) / (1-gamma + gamma*rho^2)."""
    g = u.gamma
    return (1.0 - g) / (1.0 - g + g * m.rho**2)


def exponential_lambda(m: ModelParams, u: ExponentialUtility) -> float:
    """Mean-reversion speed under the exponential-utility tilted measure."""
    return m.kappa + m.rho * m.sigma * m.theta


def solve_power_psi(m: ModelParams, u: PowerUtility, k: SampledKernel, **kwargs) -> RiccatiSolution:
    """Riccati-Volterra solution driving the power-utility strategy."""
    if not isinstance(u, PowerUtility):
        raise TypeError("solve_power_psi requires a power utility")
    g = u.gamma
    lam = power_lambda(m, u)
    c = power_c_factor(m, u)
    coeffs = RiccatiCoefficients(
        a=m.sigma**2 / 2.0,
        b=-lam,
        d=g * m.theta**2 / (2.0 * c * (1.0 - g)),
    )
    sol = solve_riccati(coeffs, k, **kwargs)
    sol.kind = "power"
    sol.lam = lam
    sol.c_factor = c
    return sol


def solve_exponential_psi(
    m: ModelParams, u: ExponentialUtility, k: SampledKernel, **kwargs
) -> RiccatiSolution:
    """Riccati-Volterra solution driving the exponential-utility strategy."""
    if not isinstance(u, ExponentialUtility):
        raise TypeError("solve_exponential_psi requires an exponential utility")
    lam = exponential_lambda(m, u)
    coeffs = RiccatiCoefficients(
        a=m.sigma**2 * (1.0 - m.rho**2) / 2.0,
        b=-lam,
        d=-m.theta**2 / 2.0,
    )
    sol = solve_riccati(coeffs, k, **kwargs)
    sol.kind = "exponential"
    sol.lam = lam
    return sol
