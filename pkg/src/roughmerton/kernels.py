"""Memory kernels for the Volterra Heston variance process.

Supported kernel families (all strictly positive and completely monotone on
(0, inf), so every representable spec is admissible by construction):

    fractional   K(t) = t**(H - 1/2) / Gamma(H + 1/2),  0 < H <= 1/2
    exponential  K(t) = c * exp(-rate * t)
    constant     K(t) = c

Discretization is by product integration on a uniform grid: the exact cell
integrals w_k = int_{k*dt}^{(k+1)*dt} K(s) ds are available in closed form
for all three families, which absorbs the t=0 singularity of the fractional
kernel into w_0.  Convolution holds the co-factor piecewise constant on the
left endpoint of each cell, so

    (K*f)(t_i) ~= sum_{j<i} w_{i-1-j} f(t_j).

The resolvent of the second kind R_lam of lam*K, defined by

    lam*K - R_lam = lam * (K * R_lam),

is computed by a stepwise lower-triangular solve of the same product
quadrature, with the new node entering the last cell implicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridMismatchError, NumericalError

__all__ = [
    "FractionalKernel",
    "ExponentialKernel",
    "ConstantKernel",
    "KernelSpec",
    "TimeGrid",
    "SampledFunction",
    "SampledKernel",
    "Resolvent",
    "kernel_spec_from_dict",
    "kernel_value",
    "discretize_kernel",
    "convolve",
    "resolvent_second_kind",
]


@dataclass(frozen=True)
class FractionalKernel:
    """Power-law kernel t**(h - 1/2) / Gamma(h + 1/2) with Hurst index h."""

    h: float

    def __post_init__(self):
        if not 0.0 < self.h <= 0.5:
            raise ValueError(f"fractional kernel requires 0 < h <= 1/2, got {self.h}")

    @property
    def singular_at_zero(self) -> bool:
        return self.h < 0.5

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or (self.singular_at_zero and np.any(t == 0.0)):
            raise ValueError("fractional kernel is singular at t = 0 for h < 1/2")
        alpha = self.h + 0.5
        return t ** (alpha - 1.0) / math.gamma(alpha)

    def integral(self, a, b):
        """Exact int_a^b K(s) ds, valid down to a = 0."""
        alpha = self.h + 0.5
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (b**alpha - a**alpha) / math.gamma(alpha + 1.0)

    def first_moment(self, a, b):
        """Exact int_a^b s*K(s) ds."""
        alpha = self.h + 0.5
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (b ** (alpha + 1.0) - a ** (alpha + 1.0)) / ((alpha + 1.0) * math.gamma(alpha))

    def iterated_convolution(self, n: int, t):
        """n-fold convolution power K^{*n}(t); the family is closed under *."""
        alpha = self.h + 0.5
        t = np.asarray(t, dtype=float)
        return t ** (n * alpha - 1.0) / math.gamma(n * alpha)

    def iterated_convolution_integral(self, n: int, a, b):
        alpha = self.h + 0.5
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (b ** (n * alpha) - a ** (n * alpha)) / math.gamma(n * alpha + 1.0)

    def to_dict(self):
        return {"kind": "fractional", "H": self.h}


@dataclass(frozen=True)
class ExponentialKernel:
    """Kernel c * exp(-rate * t)."""

    c: float
    rate: float

    def __post_init__(self):
        if self.c <= 0.0 or self.rate <= 0.0:
            raise ValueError("exponential kernel requires c > 0 and rate > 0")

    @property
    def singular_at_zero(self) -> bool:
        return False

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise ValueError("kernel argument must be nonnegative")
        return self.c * np.exp(-self.rate * t)

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (self.c / self.rate) * (np.exp(-self.rate * a) - np.exp(-self.rate * b))

    def first_moment(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        r = self.rate

        def antideriv(t):
            return -(t / r + 1.0 / r**2) * np.exp(-r * t)

        return self.c * (antideriv(b) - antideriv(a))

    def iterated_convolution(self, n: int, t):
        t = np.asarray(t, dtype=float)
        return self.c**n * t ** (n - 1) * np.exp(-self.rate * t) / math.factorial(n - 1)

    def iterated_convolution_integral(self, n: int, a, b):
        # int t^{n-1} e^{-rate t} dt has an elementary antiderivative.
        r = self.rate

        def antideriv(t):
            t = np.asarray(t, dtype=float)
            acc = np.zeros_like(t)
            coef = 1.0
            for m in range(n - 1, -1, -1):
                acc = acc + coef * t**m
                coef *= m / r
            return -np.exp(-r * t) * acc / r

        scale = self.c**n / math.factorial(n - 1)
        return scale * (antideriv(b) - antideriv(a))

    def to_dict(self):
        return {"kind": "exponential", "c": self.c, "rate": self.rate}


@dataclass(frozen=True)
class ConstantKernel:
    """Kernel identically equal to c > 0 (the classical Heston limit)."""

    c: float

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("constant kernel requires c > 0")

    @property
    def singular_at_zero(self) -> bool:
        return False

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0):
            raise ValueError("kernel argument must be nonnegative")
        return np.full_like(t, self.c, dtype=float)

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.c * (b - a)

    def first_moment(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.c * (b**2 - a**2) / 2.0

    def iterated_convolution(self, n: int, t):
        t = np.asarray(t, dtype=float)
        return self.c**n * t ** (n - 1) / math.factorial(n - 1)

    def iterated_convolution_integral(self, n: int, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.c**n * (b**n - a**n) / math.factorial(n)

    def to_dict(self):
        return {"kind": "constant", "c": self.c}


KernelSpec = FractionalKernel | ExponentialKernel | ConstantKernel


def kernel_spec_from_dict(data: dict) -> KernelSpec:
    """Build a kernel spec from its JSON form, e.g. {"kind": "fractional", "H": 0.12}."""
    if not isinstance(data, dict) or "kind" not in data:
        raise ValueError("kernel spec must be an object with a 'kind' field")
    kind = data["kind"]
    extra = set(data) - {"kind"}
    if kind == "fractional":
        if extra != {"H"}:
            raise ValueError("fractional kernel takes exactly the field 'H'")
        return FractionalKernel(float(data["H"]))
    if kind == "exponential":
        if extra != {"c", "rate"}:
            raise ValueError("exponential kernel takes exactly the fields 'c' and 'rate'")
        return ExponentialKernel(float(data["c"]), float(data["rate"]))
    if kind == "constant":
        if extra != {"c"}:
            raise ValueError("constant kernel takes exactly the field 'c'")
        return ConstantKernel(float(data["c"]))
    raise ValueError(f"unknown kernel kind {kind!r}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = horizon with N = steps cells."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError("grid horizon must be positive")
        if self.steps < 2:
            raise ValueError("grid needs at least 2 steps")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass
class SampledFunction:
    """A function sampled on the N+1 nodes of a TimeGrid (real or complex)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.grid.steps + 1,):
            raise ValueError(
                f"expected {self.grid.steps + 1} samples, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sampled function contains non-finite entries")


@dataclass(frozen=True)
class SampledKernel:
    """Kernel discretized on a uniform grid via exact cell integrals.

    weights[k] = int_{k*dt}^{(k+1)*dt} K(s) ds  for k = 0..N-1.  Uniform
    spacing makes the weights translation invariant, so one length-N array
    serves every convolution lag.
    """

    spec: KernelSpec
    grid: TimeGrid
    weights: np.ndarray = field(repr=False)

    @cached_property
    def node_values(self) -> np.ndarray:
        """K(t_i) for i = 1..N (node 0 may be singular and is excluded)."""
        return np.asarray(self.spec.value(self.grid.nodes[1:]), dtype=float)

    @cached_property
    def first_cell_average(self) -> float:
        """Mean of K over the first cell; finite even for singular kernels."""
        return float(self.weights[0] / self.grid.dt)

    @cached_property
    def linear_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Product-integration weights for a piecewise-linear co-factor.

        Returns (right, left) per-lag arrays: the cell with lag k contributes
        right[k] * f(right node) + left[k] * f(left node).  Used by the Adams
        corrector; right[0] is the implicit weight on the newest node.
        """
        dt = self.grid.dt
        edges = np.arange(self.grid.steps + 1) * dt
        m0 = self.weights
        m1 = np.asarray(self.spec.first_moment(edges[:-1], edges[1:]), dtype=float)
        k = np.arange(self.grid.steps)
        right = (k + 1.0) * m0 - m1 / dt
        left = m1 / dt - k * m0
        return right, left


@dataclass
class Resolvent(SampledFunction):
    """Resolvent of the second kind of lam*K sampled on the grid.

    The node-0 entry stores the first-cell average lam*w_0/dt (the pointwise
    value may be infinite for singular kernels); `cumulative` holds
    int_0^{t_i} R(s) ds and `residual` the self-consistency defect of the
    defining identity measured with the canonical left-constant convolution.
    """

    lam: float = 0.0
    cumulative: np.ndarray = field(default=None, repr=False)
    residual: float = 0.0


def kernel_value(spec: KernelSpec, t):
    """Evaluate K(t); raises for the fractional singularity at t = 0."""
    return spec.value(t)


def discretize_kernel(spec: KernelSpec, grid: TimeGrid) -> SampledKernel:
    """Product-integration weights of `spec` on `grid` (closed form per cell)."""
    edges = grid.nodes
    weights = np.asarray(spec.integral(edges[:-1], edges[1:]), dtype=float)
    return SampledKernel(spec=spec, grid=grid, weights=weights)


def _require_same_grid(k: SampledKernel, f: SampledFunction):
    if f.grid != k.grid:
        raise GridMismatchError(
            f"kernel sampled on (T={k.grid.horizon}, N={k.grid.steps}) but "
            f"function on (T={f.grid.horizon}, N={f.grid.steps})"
        )


def convolve(k: SampledKernel, f: SampledFunction) -> SampledFunction:
    """(K*f)(t_i) with f held left-constant per cell; (K*f)(0) = 0."""
    _require_same_grid(k, f)
    n = k.grid.steps
    out = np.zeros(n + 1, dtype=f.values.dtype)
    out[1:] = np.convolve(f.values[:n], k.weights)[:n]
    return SampledFunction(grid=k.grid, values=out)


# Weight of the newest node inside the last cell of the resolvent solve.
# 1/2 pairs the two cell endpoints symmetrically, which keeps the defect
# against the left-constant convolution roughly centered instead of
# one-sided near the kernel singularity.
_IMPLICIT_WEIGHT = 0.5

# Neumann series R = lam*K - lam^2*K^{*2} + lam^3*K^{*3} - lam^4*K^{*4} + ...
# used to seed the boundary layer of the stepwise solve.
_NEUMANN_ORDER = 4
_NEUMANN_CELLS = 8


def _neumann_seed(k: SampledKernel, lam: float):
    """Closed-form boundary layer of the resolvent.

    Returns (m, values[0..m], cell_means[0..m-1]) where m cells are covered.
    Truncating the alternating series at order 4 is accurate while
    |lam| * int_0^{t_m} K stays well below 1, which bounds m adaptively.
    """
    n = k.grid.steps
    edges = k.grid.nodes
    dt = k.grid.dt
    m = min(_NEUMANN_CELLS, n)
    kernel_mass = np.cumsum(k.weights[:m])
    small = np.nonzero(abs(lam) * kernel_mass < 0.2)[0]
    m = int(small[-1] + 1) if small.size else 0
    if m == 0:
        return 0, None, None

    nodes = edges[1 : m + 1]
    values = np.zeros(m)
    cells = np.zeros(m)
    sign = 1.0
    for order in range(1, _NEUMANN_ORDER + 1):
        coef = sign * lam**order
        values += coef * np.asarray(k.spec.iterated_convolution(order, nodes), dtype=float)
        cells += coef * np.asarray(
            k.spec.iterated_convolution_integral(order, edges[:m], edges[1 : m + 1]),
            dtype=float,
        )
        sign = -sign
    return m, values, cells / dt


def resolvent_second_kind(k: SampledKernel, lam: float) -> Resolvent:
    """Solve R = lam*K - lam*(K*R) on the grid by stepwise product integration.

    The first few cells are seeded from the closed-form Neumann series so
    that the kernel singularity does not leave an O(dt^{2H}) boundary layer
    in the solution; the remaining nodes follow a lower-triangular solve
    with the newest node entering the last cell implicitly.

    Any real lam is admitted (feasibility of a parameter set is a separate
    concern).  Raises NumericalError if the implicit step becomes singular.
    """
    grid = k.grid
    n = grid.steps
    dt = grid.dt
    w = k.weights

    if lam == 0.0:
        zeros = np.zeros(n + 1)
        return Resolvent(grid=grid, values=zeros, lam=0.0,
                         cumulative=np.zeros(n + 1), residual=0.0)

    zeta = _IMPLICIT_WEIGHT
    denom = 1.0 + lam * w[0] * zeta
    if abs(denom) < 1e-12:
        raise NumericalError(
            f"singular implicit step in resolvent solve (1 + lam*w0*{zeta} = {denom})",
            node=1,
        )

    kv = k.node_values
    r = np.empty(n + 1)
    rbar = np.empty(n)  # representative value of R on cell [t_j, t_{j+1}]
    m, seed_values, seed_cells = _neumann_seed(k, lam)
    if m > 0:
        r[1 : m + 1] = seed_values
        rbar[:m] = seed_cells
        r[0] = seed_cells[0]
    else:
        r[0] = lam * k.first_cell_average

    conv = np.zeros(n + 1)  # (K*R)(t_i) under the solve's own quadrature
    for i in range(1, m + 1):
        conv[i] = w[i - 1 :: -1] @ rbar[:i]
    for i in range(m + 1, n + 1):
        hist = (1.0 - zeta) * w[0] * r[i - 1]
        if i > 1:
            hist += w[i - 1 : 0 : -1] @ rbar[: i - 1]
        r[i] = (lam * kv[i - 1] - lam * hist) / denom
        rbar[i - 1] = (1.0 - zeta) * r[i - 1] + zeta * r[i]
        conv[i] = hist + zeta * w[0] * r[i]

    if not np.all(np.isfinite(r)):
        bad = int(np.argmax(~np.isfinite(r)))
        raise NumericalError("resolvent solve produced non-finite values", node=bad)

    # int_0^{t_i} R = lam * (int_0^{t_i} K - int_0^{t_i} K*R): the kernel part
    # is exact and the smooth convolution part is integrated by trapezoid.
    kernel_cum = np.concatenate(([0.0], np.cumsum(w)))
    conv_cum = np.concatenate(([0.0], np.cumsum(0.5 * dt * (conv[:-1] + conv[1:]))))
    cumulative = lam * (kernel_cum - conv_cum)

    residual = _identity_defect(k, lam, r)

    return Resolvent(grid=grid, values=r, lam=lam, cumulative=cumulative,
                     residual=residual)


def _identity_defect(k: SampledKernel, lam: float, r: np.ndarray) -> float:
    """sup_i |lam*(K*R)(t_i) - (lam*K(t_i) - R(t_i))| for the sampled R.

    (K*R)(t_i) is evaluated from the nodal R samples with the leading
    singular part subtracted: K*R = lam*(K*K) - lam*K*(K*R), where (K*K) is
    closed form and the inner convolution uses the commuted nodal rule
    sum_j w_j R_{i-j} (which never touches the singular node 0).  Plain
    nodal quadrature of K*R would stall at O(dt^{2H}) inside the boundary
    layer of a doubly singular integrand.
    """
    n = k.grid.steps
    w = k.weights
    kv = k.node_values
    kk = np.asarray(k.spec.iterated_convolution(2, k.grid.nodes[1:]), dtype=float)
    inner = np.empty(n + 1)
    inner[0] = 0.0
    inner[1:] = np.convolve(w, r[1:])[:n]  # sum_{j<i} w_j R_{i-j}
    outer = np.convolve(inner[:n], w)[:n]
    conv = lam * kk - lam * outer
    return float(np.max(np.abs(lam * conv - lam * kv + r[1:])))
