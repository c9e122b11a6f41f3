"""Optimal Merton portfolios under the Volterra (rough) Heston model.

Solvers for the Riccati-Volterra equations behind the power- and
exponential-utility optimal strategies, the deterministic curves they feed
(forward variance, strategy multipliers, feasibility margins), a Monte
Carlo engine verifying the martingale structure, and Fourier tooling for
the ATM-skew signature of rough volatility.
"""

from .curves import (
    AssumptionReport,
    ForwardVarianceCurve,
    StrategyCurve,
    check_exponential_feasibility,
    check_power_feasibility,
    forward_variance,
    identity_residual,
    m_initial_exponential,
    m_initial_power,
    strategy_exponential,
    strategy_power,
)
from .errors import GridMismatchError, NumericalError
from .kernels import (
    ConstantKernel,
    ExponentialKernel,
    FractionalKernel,
    Resolvent,
    SampledFunction,
    SampledKernel,
    TimeGrid,
    convolve,
    discretize_kernel,
    kernel_spec_from_dict,
    kernel_value,
    resolvent_second_kind,
)
from .model import (
    ExponentialUtility,
    ModelParams,
    PowerUtility,
    RateCurve,
    utility_from_dict,
)
from .riccati import (
    RiccatiCoefficients,
    RiccatiSolution,
    solve_exponential_psi,
    solve_power_psi,
    solve_riccati,
)
from .simulate import (
    AuxiliaryPath,
    McEstimate,
    Measure,
    PathEnsemble,
    VerificationResult,
    WealthEnsemble,
    auxiliary_along_paths,
    estimate_utility,
    evolve_wealth,
    expected_utility_reference,
    simulate_paths,
    verify_m_identity,
)
from .skew import (
    CharFnRequest,
    SkewPoint,
    atm_skew_curve,
    black_call,
    characteristic_fn,
    implied_vol,
    price_call,
    price_put,
)

__version__ = "0.1.0"
