"""Command-line interface: JSON config in, CSV/JSON artifacts out.

Subcommands: riccati, strategy, check, simulate, verify, skew.  Exit codes:
0 success, 2 invalid config, 3 feasibility failure (without --force),
4 numerical failure.  Outputs are byte-stable for a fixed config and seed:
CSV floats are printed with 17 significant digits and accumulation orders
are fixed regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .curves import (
    check_exponential_feasibility,
    check_power_feasibility,
    forward_variance,
    strategy_exponential,
    strategy_power,
)
from .errors import NumericalError
from .kernels import TimeGrid, discretize_kernel, kernel_spec_from_dict
from .model import ExponentialUtility, ModelParams, PowerUtility, RateCurve, utility_from_dict
from .riccati import solve_exponential_psi, solve_power_psi
from .simulate import (
    Measure,
    estimate_utility,
    evolve_wealth,
    expected_utility_reference,
    simulate_paths,
    verify_m_identity,
)
from .skew import DEFAULT_STEPS, atm_skew_curve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FEASIBILITY = 3
EXIT_NUMERICAL = 4

_COMMANDS = ("riccati", "strategy", "check", "simulate", "verify", "skew")


class ConfigError(ValueError):
    """Invalid run configuration; message carries the offending field."""


def _require_object(data, path: str, required: tuple, optional: tuple = ()) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: must be a JSON object")
    unknown = sorted(set(data) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    missing = sorted(set(required) - set(data))
    if missing:
        raise ConfigError(f"{path}: missing field(s) {', '.join(missing)}")


def _number(data, path: str, *, positive=False, nonnegative=False) -> float:
    if isinstance(data, bool) or not isinstance(data, (int, float)):
        raise ConfigError(f"{path}: must be a number")
    val = float(data)
    if not np.isfinite(val):
        raise ConfigError(f"{path}: must be finite")
    if positive and val <= 0.0:
        raise ConfigError(f"{path}: must be positive")
    if nonnegative and val < 0.0:
        raise ConfigError(f"{path}: must be nonnegative")
    return val


def _integer(data, path: str, *, minimum=None) -> int:
    if isinstance(data, bool) or not isinstance(data, int):
        raise ConfigError(f"{path}: must be an integer")
    if minimum is not None and data < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return data


def _parse_model(data) -> ModelParams:
    _require_object(
        data, "model", ("v0", "kappa", "phi", "sigma", "rho", "theta"), ("rate",)
    )
    rate_raw = data.get("rate", 0.0)
    if isinstance(rate_raw, list):
        rate = RateCurve(tuple(_number(v, "model.rate[]", nonnegative=True) for v in rate_raw))
    else:
        rate = RateCurve(_number(rate_raw, "model.rate", nonnegative=True))
    theta = _number(data["theta"], "model.theta")
    if theta == 0.0:
        raise ConfigError("model.theta: must be nonzero (no risk premium otherwise)")
    try:
        return ModelParams(
            v0=_number(data["v0"], "model.v0", positive=True),
            kappa=_number(data["kappa"], "model.kappa", positive=True),
            phi=_number(data["phi"], "model.phi", positive=True),
            sigma=_number(data["sigma"], "model.sigma", positive=True),
            rho=_number(data["rho"], "model.rho"),
            theta=theta,
            rate=rate,
        )
    except ValueError as err:
        raise ConfigError(f"model: {err}") from err


def _parse_kernel(data):
    try:
        return kernel_spec_from_dict(data)
    except ValueError as err:
        raise ConfigError(f"kernel: {err}") from err


def _parse_utility(data):
    try:
        return utility_from_dict(data)
    except ValueError as err:
        raise ConfigError(f"utility: {err}") from err


def _parse_grid(data) -> TimeGrid:
    _require_object(data, "grid", ("horizon", "steps"))
    try:
        return TimeGrid(
            horizon=_number(data["horizon"], "grid.horizon", positive=True),
            steps=_integer(data["steps"], "grid.steps", minimum=2),
        )
    except ValueError as err:
        raise ConfigError(f"grid: {err}") from err


class RunConfig:
    """Validated configuration for one CLI command."""

    _SECTIONS = {
        "riccati": ("model", "kernel", "utility", "grid"),
        "strategy": ("model", "kernel", "utility", "grid"),
        "check": ("model", "kernel", "utility", "grid"),
        "simulate": ("model", "kernel", "utility", "grid", "simulate"),
        "verify": ("model", "kernel", "utility", "grid", "verify"),
        "skew": ("model", "kernel", "skew"),
    }
    # One config may drive several commands, so every known section is
    # tolerated; anything else is rejected.
    _ALL_SECTIONS = ("model", "kernel", "utility", "grid", "simulate", "verify", "skew", "force")

    def __init__(self, command: str, data: dict):
        if command not in _COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        required = self._SECTIONS[command]
        optional = tuple(s for s in self._ALL_SECTIONS if s not in required)
        _require_object(data, "config", required, optional)
        self.command = command
        self.force = bool(data.get("force", False))
        if "force" in data and not isinstance(data["force"], bool):
            raise ConfigError("force: must be a boolean")
        self.model = _parse_model(data["model"])
        self.kernel = _parse_kernel(data["kernel"])
        self.utility = _parse_utility(data["utility"]) if "utility" in required else None
        self.grid = _parse_grid(data["grid"]) if "grid" in required else None

        if command == "simulate":
            sec = data["simulate"]
            _require_object(sec, "simulate", ("n_paths", "seed"), ("scale", "x0"))
            self.n_paths = _integer(sec["n_paths"], "simulate.n_paths", minimum=1)
            self.seed = _integer(sec["seed"], "simulate.seed", minimum=0)
            self.scale = _number(sec.get("scale", 1.0), "simulate.scale", positive=True)
            self.x0 = _number(sec.get("x0", 1.0), "simulate.x0", positive=True)
        elif command == "verify":
            sec = data["verify"]
            _require_object(sec, "verify", ("n_paths", "seed"))
            self.n_paths = _integer(sec["n_paths"], "verify.n_paths", minimum=1)
            self.seed = _integer(sec["seed"], "verify.seed", minimum=0)
        elif command == "skew":
            sec = data["skew"]
            _require_object(sec, "skew", ("maturities",), ("half_width", "steps"))
            if not isinstance(sec["maturities"], list) or not sec["maturities"]:
                raise ConfigError("skew.maturities: must be a nonempty array")
            self.maturities = [
                _number(v, "skew.maturities[]", positive=True) for v in sec["maturities"]
            ]
            if any(b <= a for a, b in zip(self.maturities, self.maturities[1:])):
                raise ConfigError("skew.maturities: must be strictly ascending")
            self.half_width = _number(sec.get("half_width", 1e-3), "skew.half_width", positive=True)
            self.steps = _integer(sec.get("steps", DEFAULT_STEPS), "skew.steps", minimum=2)


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="ascii",
    )


def _solve_psi(cfg: RunConfig):
    k = discretize_kernel(cfg.kernel, cfg.grid)
    if isinstance(cfg.utility, PowerUtility):
        return solve_power_psi(cfg.model, cfg.utility, k)
    return solve_exponential_psi(cfg.model, cfg.utility, k)


def _strategy(cfg: RunConfig, psi):
    if isinstance(cfg.utility, PowerUtility):
        return strategy_power(cfg.model, cfg.utility, psi)
    return strategy_exponential(cfg.model, cfg.utility, psi)


def _feasibility(cfg: RunConfig):
    """Two-phase check: closed-form conditions first, eta via psi/A second."""
    if isinstance(cfg.utility, PowerUtility):
        checker = check_power_feasibility
    else:
        checker = check_exponential_feasibility
    try:
        return checker(cfg.model, cfg.utility, None)
    except ValueError:
        pass  # closed-form conditions hold; the eta condition needs A
    psi = _solve_psi(cfg)
    return checker(cfg.model, cfg.utility, _strategy(cfg, psi))


def _cmd_riccati(cfg: RunConfig, out: Path, threads: int) -> tuple[int, str]:
    psi = _solve_psi(cfg)
    vals = psi.values.astype(complex)
    rows = [(t, v.real, v.imag) for t, v in zip(cfg.grid.nodes, vals)]
    target = out / "riccati.csv"
    _write_csv(target, "t,psi_re,psi_im", rows)
    return EXIT_OK, f"riccati: wrote {target} (lam={_fmt(psi.lam)}, psi(T)={_fmt(vals[-1].real)})"


def _cmd_strategy(cfg: RunConfig, out: Path, threads: int) -> tuple[int, str]:
    psi = _solve_psi(cfg)
    curve = _strategy(cfg, psi)
    target = out / "strategy.csv"
    _write_csv(target, "t,A", zip(cfg.grid.nodes, curve.values))
    return EXIT_OK, f"strategy: wrote {target} (A(0)={_fmt(curve.values[0])}, A(T)={_fmt(curve.values[-1])})"


def _cmd_check(cfg: RunConfig, out: Path, threads: int) -> tuple[int, str]:
    report = _feasibility(cfg)
    target = out / "check.json"
    _write_json(target, report.to_dict())
    if not report.overall and not cfg.force:
        return EXIT_FEASIBILITY, f"check: FAIL, wrote {target}"
    return EXIT_OK, f"check: {'pass' if report.overall else 'fail (forced)'}, wrote {target}"


def _cmd_simulate(cfg: RunConfig, out: Path, threads: int) -> tuple[int, str]:
    report = _feasibility(cfg)
    if not report.overall and not cfg.force:
        return EXIT_FEASIBILITY, "simulate: feasibility failed (use --force to override)"
    psi = _solve_psi(cfg)
    curve = _strategy(cfg, psi)
    if cfg.scale != 1.0:
        curve.values = cfg.scale * curve.values
    k = discretize_kernel(cfg.kernel, cfg.grid)
    paths = simulate_paths(
        cfg.model, k, cfg.grid, cfg.n_paths, cfg.seed, Measure.original(), threads=threads
    )
    wealth = evolve_wealth(paths, curve, cfg.utility, cfg.x0)
    est = estimate_utility(wealth)
    xi0 = forward_variance(cfg.model, psi.lam, k)
    reference = expected_utility_reference(cfg.model, cfg.utility, psi, xi0, cfg.grid, cfg.x0)
    z = (est.mean - reference) / est.stderr if est.stderr > 0 else 0.0
    payload = {
        "estimate": est.mean,
        "stderr": est.stderr,
        "reference": reference,
        "z_score": z,
        "pass": bool(abs(z) <= 3.0),
        "n_paths": est.n_paths,
        "scale": cfg.scale,
    }
    target = out / "simulate.json"
    _write_json(target, payload)
    return EXIT_OK, f"simulate: E[U]={_fmt(est.mean)} +/- {_fmt(est.stderr)}, wrote {target}"


def _cmd_verify(cfg: RunConfig, out: Path, threads: int) -> tuple[int, str]:
    report = _feasibility(cfg)
    if not report.overall and not cfg.force:
        return EXIT_FEASIBILITY, "verify: feasibility failed (use --force to override)"
    psi = _solve_psi(cfg)
    result = verify_m_identity(
        cfg.model, cfg.utility, psi, cfg.grid, cfg.n_paths, cfg.seed, threads=threads
    )
    target = out / "verify.json"
    _write_json(target, result.to_dict())
    status = "pass" if result.passed else "FAIL"
    return EXIT_OK, f"verify: {status} z={_fmt(result.z_score)}, wrote {target}"


def _cmd_skew(cfg: RunConfig, out: Path, threads: int) -> tuple[int, str]:
    points = atm_skew_curve(
        cfg.model, cfg.kernel, cfg.maturities,
        half_width=cfg.half_width, steps=cfg.steps,
    )
    target = out / "skew.csv"
    _write_csv(target, "maturity,atm_vol,atm_skew",
               ((p.maturity, p.atm_vol, p.atm_skew) for p in points))
    return EXIT_OK, f"skew: wrote {target} ({len(points)} maturities)"


_HANDLERS = {
    "riccati": _cmd_riccati,
    "strategy": _cmd_strategy,
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "skew": _cmd_skew,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughmerton",
        description="Merton portfolios and skew curves under Volterra (rough) Heston",
    )
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", default=".", help="output directory (default: cwd)")
    parser.add_argument("--force", action="store_true",
                        help="proceed despite feasibility failures")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for path simulation")
    args = parser.parse_args(argv)

    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as err:
        print(f"error: config is not valid JSON: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = RunConfig(args.command, raw)
        if args.force:
            cfg.force = True
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        code, summary = _HANDLERS[args.command](cfg, out, args.threads)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL

    print(summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
