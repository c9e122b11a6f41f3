"""Monte Carlo verification engine for the Volterra Heston model.

Variance paths use an explicit Euler scheme driven by the same product-
integration weights as the deterministic solvers,

    V_{i+1} = V_0 + sum_{j<=i} w_{i-j} [ drift_j + sigma sqrt(V_j^+) dB_j/dt ],

with full truncation V^+ = max(V, 0) inside drift and diffusion.  Under the
original measure drift_j = kappa (phi - V_j^+); under a tilted measure it is
kappa*phi - lam*V_j^+ with the matching Brownian shift on W_1.

Paths are generated in fixed-size chunks, each owning a counter-based
Philox stream keyed by (seed, chunk index), so ensembles are bit-identical
regardless of how many worker threads fill them.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curves import (
    ForwardVarianceCurve,
    StrategyCurve,
    forward_variance,
    m_initial_exponential,
    m_initial_power,
)
from .errors import GridMismatchError, NumericalError
from .kernels import SampledKernel, TimeGrid, discretize_kernel, resolvent_second_kind
from .model import ExponentialUtility, ModelParams, PowerUtility, UtilitySpec
from .riccati import RiccatiSolution, exponential_lambda, power_lambda

__all__ = [
    "Measure",
    "PathEnsemble",
    "WealthEnsemble",
    "McEstimate",
    "AuxiliaryPath",
    "VerificationResult",
    "simulate_paths",
    "evolve_wealth",
    "estimate_utility",
    "auxiliary_along_paths",
    "verify_m_identity",
    "expected_utility_reference",
]

# Fixed chunking is part of the determinism contract: results do not depend
# on the worker count because every chunk owns its own RNG stream and slot.
CHUNK_PATHS = 16384


@dataclass(frozen=True)
class Measure:
    """Sampling measure: original dynamics or a lam-tilted change of drift.

    Under the tilted measure the variance drift is kappa*phi - lam*V and the
    first Brownian motion is shifted, W1_tilted = W1 - shift * int sqrt(V).
    """

    kind: str
    lam: float | None = None
    shift: float = 0.0

    @classmethod
    def original(cls) -> "Measure":
        return cls(kind="original")

    @classmethod
    def tilted(cls, lam: float, shift: float) -> "Measure":
        return cls(kind="tilted", lam=lam, shift=shift)

    @classmethod
    def tilted_for(cls, m: ModelParams, u: UtilitySpec) -> "Measure":
        if isinstance(u, PowerUtility):
            g = u.gamma
            return cls.tilted(power_lambda(m, u), g * m.theta / (1.0 - g))
        return cls.tilted(exponential_lambda(m, u), -m.theta)


@dataclass
class PathEnsemble:
    """Simulated Brownian increments and (V, S) paths, one row per path."""

    grid: TimeGrid
    n_paths: int
    seed: int
    measure: Measure
    params: ModelParams
    dw1: np.ndarray = field(repr=False)
    dw2: np.ndarray = field(repr=False)
    variance: np.ndarray = field(repr=False)
    stock: np.ndarray = field(repr=False)

    def brownian_b_increments(self) -> np.ndarray:
        """dB = rho dW1 + sqrt(1-rho^2) dW2 of the ensemble's own measure."""
        rho = self.params.rho
        return rho * self.dw1 + np.sqrt(1.0 - rho**2) * self.dw2


@dataclass
class WealthEnsemble:
    """Wealth paths under a given strategy plus terminal utilities."""

    paths: PathEnsemble
    strategy: StrategyCurve
    utility: UtilitySpec
    x0: float
    wealth: np.ndarray = field(repr=False)
    utilities: np.ndarray = field(repr=False)


@dataclass
class McEstimate:
    mean: float
    stderr: float
    n_paths: int


@dataclass
class AuxiliaryPath:
    """Pathwise auxiliary process M and value process J at checkpoints."""

    t_indices: np.ndarray
    times: np.ndarray
    m_values: np.ndarray = field(repr=False)
    j_values: np.ndarray = field(repr=False)


@dataclass
class VerificationResult:
    """Monte Carlo side vs deterministic side of a value identity."""

    estimate: McEstimate
    reference: float
    z_score: float
    passed: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.mean,
            "stderr": self.estimate.stderr,
            "reference": self.reference,
            "z_score": self.z_score,
            "pass": self.passed,
            "degenerate": self.degenerate,
        }


def _simulate_chunk(m, k, grid, measure, seed, chunk_index, count, s0, out, row0):
    n = grid.steps
    dt = grid.dt
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, chunk_index], dtype=np.uint64))
    )
    z = rng.standard_normal((2, count, n))
    sqdt = np.sqrt(dt)
    dw1 = sqdt * z[0]
    dw2 = sqdt * z[1]

    rho = m.rho
    rho_c = np.sqrt(1.0 - rho**2)
    w = k.weights
    wrev = w[::-1].copy()

    v = np.empty((count, n + 1))
    v[:, 0] = m.v0
    g_arr = np.empty((count, n))
    tilted = measure.kind == "tilted"
    for i in range(n):
        vp = np.maximum(v[:, i], 0.0)
        if tilted:
            drift = m.kappa * m.phi - measure.lam * vp
        else:
            drift = m.kappa * (m.phi - vp)
        db = rho * dw1[:, i] + rho_c * dw2[:, i]
        g_arr[:, i] = drift + m.sigma * np.sqrt(vp) * db / dt
        v[:, i + 1] = m.v0 + g_arr[:, : i + 1] @ wrev[n - 1 - i :]

    vp = np.maximum(v[:, :n], 0.0)
    rate = m.rate.cell_values(grid)
    # log-Euler for S, exact in V; under a tilted measure the stored dW1 is
    # the tilted Brownian, so the shift re-enters the drift.
    drift_s = (rate + m.theta * vp + measure.shift * vp - 0.5 * vp) * dt
    log_incr = drift_s + np.sqrt(vp) * dw1
    s = np.empty((count, n + 1))
    s[:, 0] = s0
    s[:, 1:] = s0 * np.exp(np.cumsum(log_incr, axis=1))

    sl = slice(row0, row0 + count)
    out["dw1"][sl] = dw1
    out["dw2"][sl] = dw2
    out["v"][sl] = v
    out["s"][sl] = s


def simulate_paths(
    m: ModelParams,
    k: SampledKernel,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    measure: Measure | None = None,
    *,
    s0: float = 1.0,
    threads: int = 1,
) -> PathEnsemble:
    """Simulate the variance and stock paths on `grid`.

    Deterministic in (seed, params, grid, n_paths): chunked Philox streams
    make the ensemble identical for any `threads` value.
    """
    if k.grid != grid:
        raise GridMismatchError("kernel was discretized on a different grid")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if measure is None:
        measure = Measure.original()
    if measure.kind not in ("original", "tilted"):
        raise ValueError(f"unknown measure kind {measure.kind!r}")
    if measure.kind == "tilted" and measure.lam is None:
        raise ValueError("tilted measure needs lam")

    n = grid.steps
    out = {
        "dw1": np.empty((n_paths, n)),
        "dw2": np.empty((n_paths, n)),
        "v": np.empty((n_paths, n + 1)),
        "s": np.empty((n_paths, n + 1)),
    }
    jobs = []
    row0 = 0
    chunk_index = 0
    while row0 < n_paths:
        count = min(CHUNK_PATHS, n_paths - row0)
        jobs.append((chunk_index, count, row0))
        row0 += count
        chunk_index += 1

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(
                pool.map(
                    lambda job: _simulate_chunk(
                        m, k, grid, measure, seed, job[0], job[1], s0, out, job[2]
                    ),
                    jobs,
                )
            )
    else:
        for job in jobs:
            _simulate_chunk(m, k, grid, measure, seed, job[0], job[1], s0, out, job[2])

    return PathEnsemble(
        grid=grid, n_paths=n_paths, seed=seed, measure=measure, params=m,
        dw1=out["dw1"], dw2=out["dw2"], variance=out["v"], stock=out["s"],
    )


def evolve_wealth(
    paths: PathEnsemble,
    strategy: StrategyCurve,
    u: UtilitySpec,
    x0: float = 1.0,
) -> WealthEnsemble:
    """Wealth paths under the dollar exposure A_t sqrt(V_t).

    Power utility uses a log-Euler step (positivity is structural);
    exponential utility uses an arithmetic Euler step on the discounted
    wealth with the bond leg compounded exactly.
    """
    if strategy.grid != paths.grid:
        raise GridMismatchError("strategy and paths live on different grids")
    if x0 <= 0.0:
        raise ValueError("x0 must be positive")
    m = paths.params
    grid = paths.grid
    n = grid.steps
    dt = grid.dt
    rate = m.rate.cell_values(grid)
    vp = np.maximum(paths.variance[:, :n], 0.0)
    sqv = np.sqrt(vp)
    a_vals = strategy.values[:n]

    x = np.empty((paths.n_paths, n + 1))
    x[:, 0] = x0
    if isinstance(u, PowerUtility):
        log_incr = (rate + m.theta * a_vals * vp - 0.5 * a_vals**2 * vp) * dt \
            + a_vals * sqv * paths.dw1
        x[:, 1:] = x0 * np.exp(np.cumsum(log_incr, axis=1))
    elif isinstance(u, ExponentialUtility):
        growth = np.exp(rate * dt)
        for i in range(n):
            exposure = a_vals[i] * sqv[:, i]
            x[:, i + 1] = growth[i] * (
                x[:, i] + m.theta * exposure * sqv[:, i] * dt + exposure * paths.dw1[:, i]
            )
    else:
        raise TypeError(f"unsupported utility {u!r}")

    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.all(np.isfinite(x), axis=1)))
        raise NumericalError("wealth path overflowed", path=bad)
    utilities = u.terminal(x[:, -1])
    if not np.all(np.isfinite(utilities)):
        bad = int(np.argmax(~np.isfinite(utilities)))
        raise NumericalError("terminal utility is not finite", path=bad)
    return WealthEnsemble(
        paths=paths, strategy=strategy, utility=u, x0=x0, wealth=x, utilities=utilities
    )


def estimate_utility(w: WealthEnsemble) -> McEstimate:
    """Sample mean and standard error of U(X_T) over the ensemble."""
    vals = w.utilities
    n = vals.size
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean=mean, stderr=stderr, n_paths=n)


def _tilted_b_increments(paths: PathEnsemble, measure: Measure) -> np.ndarray:
    """Increments of the tilted B for the requested measure, whatever the
    ensemble was simulated under."""
    m = paths.params
    db = paths.brownian_b_increments()
    if paths.measure.kind == "tilted":
        if abs(paths.measure.shift - measure.shift) > 1e-14:
            raise ValueError("paths were tilted with a different Brownian shift")
        return db
    vp = np.maximum(paths.variance[:, : paths.grid.steps], 0.0)
    return db - m.rho * measure.shift * np.sqrt(vp) * paths.grid.dt


def auxiliary_along_paths(
    paths: PathEnsemble,
    wealth: WealthEnsemble,
    psi: RiccatiSolution,
    xi0: ForwardVarianceCurve,
    m: ModelParams,
    u: UtilitySpec,
    t_indices=None,
    *,
    m_tolerance: float = 1e-4,
) -> AuxiliaryPath:
    """Pathwise M_t and J_t at the checkpoint nodes (default quarters of T).

    The forward variance curve is propagated pathwise through its stochastic
    convolution with the resolvent; M_t then follows from its exponential
    formula and J_t distorts the wealth utility by M_t.
    """
    grid = paths.grid
    if wealth.paths is not paths and wealth.paths.grid != grid:
        raise GridMismatchError("wealth ensemble does not match the path ensemble")
    if psi.grid != grid or xi0.grid != grid:
        raise GridMismatchError("psi / xi0 are sampled on a different grid")
    n = grid.steps
    dt = grid.dt
    if t_indices is None:
        t_indices = sorted({0, n // 4, n // 2, (3 * n) // 4, n})
    t_indices = np.asarray(t_indices, dtype=int)
    if np.any(t_indices < 0) or np.any(t_indices > n):
        raise ValueError("checkpoint indices outside the grid")

    measure = Measure.tilted_for(m, u)
    if xi0.lam is None or abs(xi0.lam - measure.lam) > 1e-12 * max(1.0, abs(measure.lam)):
        raise ValueError("xi0 was computed for a different tilted measure")
    res = resolvent_second_kind(discretize_kernel(psi.kernel_spec, grid), measure.lam)

    psi_rev = psi.values[::-1]
    rint = m.rate.integral_to_horizon(grid)
    if isinstance(u, PowerUtility):
        g = u.gamma
        kernel_term = g * m.theta**2 / (2.0 * (1.0 - g)) + \
            psi.c_factor * m.sigma**2 / 2.0 * psi_rev**2
    else:
        kernel_term = -m.theta**2 / 2.0 + m.sigma**2 * (1.0 - m.rho**2) / 2.0 * psi_rev**2

    db_tilt = _tilted_b_increments(paths, measure)
    vp = np.maximum(paths.variance[:, :n], 0.0)
    gains = np.sqrt(vp) * db_tilt  # sqrt(V_u) dB~_u per cell

    m_out = np.empty((paths.n_paths, len(t_indices)))
    j_out = np.empty((paths.n_paths, len(t_indices)))
    for col, ti in enumerate(t_indices):
        n_s = n - ti + 1
        if ti == n:
            m_t = np.ones(paths.n_paths)
        else:
            xi_t = np.tile(xi0.values[ti:], (paths.n_paths, 1))
            if ti > 0:
                # R(s_k - t_j) for j < ti <= k: lags are always >= 1 cell
                lag = np.arange(ti, n + 1)[None, :] - np.arange(ti)[:, None]
                rmat = res.values[lag]
                xi_t += (m.sigma / measure.lam) * (gains[:, :ti] @ rmat)
            integrand = kernel_term[ti:] * xi_t
            quad = np.trapezoid(integrand, dx=dt, axis=1)
            if isinstance(u, PowerUtility):
                quad += u.gamma * rint[ti]
            m_t = np.exp(quad)
            if isinstance(u, ExponentialUtility) and np.any(m_t > 1.0 + 5.0 * m_tolerance):
                bad = int(np.argmax(m_t > 1.0 + 5.0 * m_tolerance))
                raise NumericalError(
                    "pathwise exponential-case M_t exceeded 1", path=bad, node=int(ti)
                )
        m_out[:, col] = m_t
        x_t = wealth.wealth[:, ti]
        if isinstance(u, PowerUtility):
            j_out[:, col] = x_t**u.gamma / u.gamma * m_t
        else:
            j_out[:, col] = -np.exp(-u.gamma * np.exp(rint[ti]) * x_t) / u.gamma * m_t

    return AuxiliaryPath(
        t_indices=t_indices, times=t_indices * dt, m_values=m_out, j_values=j_out
    )


def expected_utility_reference(
    m: ModelParams,
    u: UtilitySpec,
    psi: RiccatiSolution,
    xi0: ForwardVarianceCurve,
    grid: TimeGrid,
    x0: float = 1.0,
) -> float:
    """Deterministic value J_0 of the optimally invested portfolio.

    Power: J_0 = x0^gamma/gamma * M_0; exponential:
    J_0 = -exp(-gamma e^{int_0^T r} x0)/gamma * M_0.
    """
    if isinstance(u, PowerUtility):
        m0 = m_initial_power(m, u, psi, xi0, grid)
        return x0**u.gamma / u.gamma * m0
    m0 = m_initial_exponential(m, u, psi, xi0, grid)
    growth = float(np.exp(m.rate.integral_to_horizon(grid)[0]))
    return -np.exp(-u.gamma * growth * x0) / u.gamma * m0


def verify_m_identity(
    m: ModelParams,
    u: UtilitySpec,
    psi: RiccatiSolution,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    threads: int = 1,
    band: float = 3.0,
) -> VerificationResult:
    """Check the conditional-expectation form of M_0 by simulation.

    Power: E-tilde[exp(int_0^T (gamma r/c + gamma theta^2 V/(2c(1-gamma))))]
    against M_0^{1/c}.  Exponential: E-tilde[exp(-theta^2(1-rho^2)/2 int V)]
    against M_0^{1-rho^2}; |rho| = 1 degenerates to 1 = 1 and is reported as
    such.
    """
    if psi.grid != grid:
        raise GridMismatchError("psi is sampled on a different grid")
    k = discretize_kernel(psi.kernel_spec, grid)
    measure = Measure.tilted_for(m, u)
    xi0 = forward_variance(m, measure.lam, k)

    if isinstance(u, ExponentialUtility) and abs(m.rho) == 1.0:
        est = McEstimate(mean=1.0, stderr=0.0, n_paths=0)
        return VerificationResult(
            estimate=est, reference=1.0, z_score=0.0, passed=True, degenerate=True
        )

    paths = simulate_paths(m, k, grid, n_paths, seed, measure, threads=threads)
    vp = np.maximum(paths.variance[:, : grid.steps], 0.0)
    int_v = vp.sum(axis=1) * grid.dt

    if isinstance(u, PowerUtility):
        g = u.gamma
        c = psi.c_factor
        rate_part = (g / c) * m.rate.integral_to_horizon(grid)[0]
        samples = np.exp(rate_part + g * m.theta**2 / (2.0 * c * (1.0 - g)) * int_v)
        reference = m_initial_power(m, u, psi, xi0, grid) ** (1.0 / c)
    else:
        samples = np.exp(-m.theta**2 * (1.0 - m.rho**2) / 2.0 * int_v)
        reference = m_initial_exponential(m, u, psi, xi0, grid) ** (1.0 - m.rho**2)

    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
    est = McEstimate(mean=mean, stderr=stderr, n_paths=samples.size)
    if stderr > 0.0:
        z = (mean - reference) / stderr
    else:
        z = 0.0 if mean == reference else float("inf")
    return VerificationResult(
        estimate=est, reference=reference, z_score=float(z), passed=bool(abs(z) <= band)
    )
