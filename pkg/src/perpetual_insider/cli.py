"""Command-line front end.

Every command is a pure function of its flags and the optional JSON config
file.  Exit codes: 0 ok, 2 parameter or configuration error, 3 solver
failure, 4 verification failure.  Errors are written to stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import boundaries as bd
from . import montecarlo as mc
from . import valuation as val
from .boundaries import GridSpec, dumps17
from .errors import (ConfigError, ConvergenceError, DegenerateError, DomainError,
                     MissingBoundaryError, ParameterError, PerpetualInsiderError, RootError,
                     SingularityError, StepError)
from .model import Family, OptionSpec, Side, StatePoint, build_params, check_regime, payoff

EXIT_OK, EXIT_PARAM, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4

UNITS = """\
units: r and delta are continuously compounded rates per year, sigma is the
volatility per square-root year, horizon and dt are in years.  Parameters
must satisfy delta' = 2r - delta - sigma^2 > 0.  The put side (running
maximum) needs alpha = 2(r - delta)/sigma^2 - 1 < 0, the call side (running
minimum) alpha > 0."""

# flag name -> (type, default)
FIELDS = {
    "r": (float, None), "delta": (float, None), "sigma": (float, None),
    "family": (int, 1), "side": (str, None), "strike": (float, 1.0),
    "j": (int, 0), "x": (float, None), "extremum": (float, None),
    "grid_min": (float, None), "grid_max": (float, None), "grid_points": (int, None),
    "paths": (int, 200_000), "dt": (float, 1e-3), "horizon": (float, 50.0),
    "seed": (int, 0), "perturb": (float, 1.0), "format": (str, "json"), "out": (str, None),
}

SCHEMA_DIR = Path(__file__).with_name("schemas")


def load_schema(name: str) -> dict:
    """Shipped JSON schema for the output of command ``name`` (or ``error``)."""
    key = {"plot-data": "surface"}.get(name, name)
    with open(SCHEMA_DIR / f"{key}.schema.json") as fh:
        return json.load(fh)


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, detail: dict | None = None):
        super().__init__(message)
        self.code, self.kind, self.detail = code, kind, detail or {}


# ------------------------------------------------------------------ parsing

def _add_common(p: argparse.ArgumentParser, contract: bool = True) -> None:
    g = p.add_argument_group("market")
    g.add_argument("--r", type=float, help="riskless rate per year")
    g.add_argument("--delta", type=float, help="dividend rate per year")
    g.add_argument("--sigma", type=float, help="volatility per sqrt(year)")
    if contract:
        g = p.add_argument_group("contract")
        g.add_argument("--family", type=int, choices=(1, 2, 3),
                       help="1 standard, 2 floating-strike lookback, 3 fixed-strike lookback (default 1)")
        g.add_argument("--side", choices=("put", "call"),
                       help="put (running maximum) or call (running minimum); default from the sign of alpha")
        g.add_argument("--strike", type=float, help="L_i (put) or K_i (call), default 1")
    g = p.add_argument_group("output")
    g.add_argument("--format", choices=("json", "csv"), help="json (17 digits, default) or csv (12 digits)")
    g.add_argument("--out", help="output file (default stdout)")
    g.add_argument("--config", help="JSON file with any of the flag values; flags take precedence")


def _add_state(p: argparse.ArgumentParser) -> None:
    p.add_argument("--j", type=int, choices=(0, 1), help="regime: 0 before the extremum time, 1 after")
    p.add_argument("--x", type=float, help="asset price")
    p.add_argument("--extremum", type=float, help="running maximum s (put) or minimum q (call)")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-min", type=float, help="smallest extremum on the grid")
    p.add_argument("--grid-max", type=float, help="largest extremum on the grid")
    p.add_argument("--grid-points", type=int, help="number of log-spaced grid points (default 200 for boundary, 16 for plot-data)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="perpetual-insider", formatter_class=fmt,
        description="Perpetual American options for a holder who learns the time of the "
                    "global extremum.\n\n" + UNITS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exponents", formatter_class=fmt, epilog=UNITS,
                       help="alpha, delta' and the two exponent pairs")
    _add_common(p, contract=False)

    p = sub.add_parser("boundary", formatter_class=fmt, epilog=UNITS,
                       help="exercise boundary on an extremum grid with bound columns")
    _add_common(p)
    p.add_argument("--j", type=int, choices=(0, 1), help="regime (default 0)")
    _add_grid(p)

    p = sub.add_parser("price", formatter_class=fmt, epilog=UNITS,
                       help="value, region and x-derivative at one state")
    _add_common(p)
    _add_state(p)

    p = sub.add_parser("verify", formatter_class=fmt, epilog=UNITS,
                       help="Monte-Carlo check of the closed-form value (exit 4 when |z| > 3)")
    _add_common(p)
    _add_state(p)
    g = p.add_argument_group("simulation")
    g.add_argument("--paths", type=int, help="number of paths (default 200000)")
    g.add_argument("--dt", type=float, help="time step in years (default 1e-3)")
    g.add_argument("--horizon", type=float, help="truncation horizon in years (default 50)")
    g.add_argument("--seed", type=int, help="64-bit seed (default 0)")
    g.add_argument("--perturb", type=float,
                   help="scale the exercise boundary; values other than 1 test suboptimality")

    p = sub.add_parser("plot-data", formatter_class=fmt, epilog=UNITS,
                       help="value surface on a wedge grid, with the boundary along the extremum axis")
    _add_common(p)
    p.add_argument("--j", type=int, choices=(0, 1), help="regime (default 0)")
    _add_grid(p)
    return parser


def resolve(ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    cfg = {k: d for k, (_, d) in FIELDS.items()}
    if getattr(ns, "config", None):
        try:
            with open(ns.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_PARAM, "ConfigError", f"cannot read config: {exc}")
        if not isinstance(doc, dict):
            raise CliError(EXIT_PARAM, "ConfigError", "config must be a JSON object")
        for key, v in doc.items():
            k = key.replace("-", "_")
            if k not in FIELDS:
                raise CliError(EXIT_PARAM, "ConfigError", f"unknown config key {key!r}")
            typ = FIELDS[k][0]
            try:
                cfg[k] = None if v is None else typ(v)
            except (TypeError, ValueError):
                raise CliError(EXIT_PARAM, "ConfigError", f"bad value for {key!r}: {v!r}")
    for k in FIELDS:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    for k in ("r", "delta", "sigma"):
        if cfg[k] is None:
            raise CliError(EXIT_PARAM, "ConfigError", f"--{k} is required")
    cfg["command"] = ns.command
    return cfg


# ------------------------------------------------------------------ helpers

def _params(cfg):
    return build_params(cfg["r"], cfg["delta"], cfg["sigma"])


def _spec(cfg, params):
    side = cfg["side"] or params.side.value
    return OptionSpec(cfg["family"], side, cfg["strike"])


def _grid(cfg, spec) -> np.ndarray:
    d = bd.default_grid(spec)
    lo = cfg["grid_min"] if cfg["grid_min"] is not None else d.lo
    hi = cfg["grid_max"] if cfg["grid_max"] is not None else d.hi
    n = cfg["grid_points"] or 200
    if n < 2:
        raise ConfigError("--grid-points must be at least 2")
    return GridSpec(lo, hi, points=n).values()


def _default_state(cfg, spec):
    """Diagonal at the strike, or a live point for the fixed strike; off the diagonal for j=1."""
    put = spec.side is Side.PUT
    m = cfg["extremum"]
    if m is None:
        m = spec.strike
        if spec.family is Family.FIXED:
            m *= 1.2 if put else 0.8
    x = cfg["x"]
    if x is None:
        x = m if cfg["j"] == 0 else m * (0.9 if put else 1.5)
    return float(x), float(m)


def _csv_num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12g}"
    if v is None:
        return ""
    s = str(v)
    if any(c in s for c in ',"\r\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_csv_num(v) for v in row) for row in rows]
    return "\r\n".join(lines) + "\r\n"


def _flat_csv(doc: dict, keys: list[str]) -> str:
    return _csv(keys, [[doc[k] for k in keys]])


def _emit(text: str, cfg) -> None:
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


# ------------------------------------------------------------------ commands

def cmd_exponents(cfg) -> tuple[str, int]:
    params = _params(cfg)
    b1, b2 = params.beta
    g1, g2 = params.gamma
    doc = {"r": params.r, "delta": params.delta, "sigma": params.sigma,
           "alpha": params.alpha, "delta_prime": params.delta_prime,
           "beta1": b1, "beta2": b2, "gamma1": g1, "gamma2": g2,
           "put_admissible": params.alpha < 0, "call_admissible": params.alpha > 0}
    if cfg["format"] == "csv":
        return _flat_csv(doc, list(doc)), EXIT_OK
    return dumps17(doc), EXIT_OK


def boundary_table(cfg) -> tuple[bd.BoundaryCurve, dict, dict]:
    params = _params(cfg)
    spec = _spec(cfg, params)
    j = check_regime(cfg["j"])
    grid = _grid(cfg, spec)
    bs = val.build_boundaries(spec, params, grid)
    curve = bs.curve(j)
    m = curve.grid
    b = curve.values
    bounds = bd.exercise_bounds(spec, params, j, m, bs.appendix)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = b / m
    extra = {"ratio": ratio, "abar": bounds["abar"], "appendix": bounds["appendix"]}
    meta = {"params": params.as_dict(), "spec": spec.as_dict(), "regime": j}
    return curve, extra, meta


def cmd_boundary(cfg) -> tuple[str, int]:
    curve, extra, meta = boundary_table(cfg)
    if cfg["format"] == "csv":
        return curve.to_csv(extra=extra), EXIT_OK
    doc = curve.to_dict(extra=extra)
    doc.update(meta)
    return dumps17(doc), EXIT_OK


def price_report(cfg) -> dict:
    params = _params(cfg)
    spec = _spec(cfg, params)
    j = check_regime(cfg["j"])
    x, m = _default_state(cfg, spec)
    p = StatePoint(x, m).check(spec.side)
    bs = val.build_boundaries(spec, params)
    res = val.value(spec, params, p, j, bs)
    app = val.value_appendix(spec, params, p, bs)
    ex_ante = val.insider_value(spec, params, p, bs)
    return {"params": params.as_dict(), "spec": spec.as_dict(), "x": x, "extremum": m, "regime": j,
            "value": res.value, "region": res.region.value, "gradient_x": res.gradient_x,
            "boundary": res.boundary, "payoff": float(payoff(spec, x, m)),
            "appendix_value": app.value, "appendix_boundary": app.boundary,
            "ex_ante_value": ex_ante}


PRICE_COLUMNS = ["x", "extremum", "regime", "value", "region", "gradient_x", "boundary", "payoff",
                 "appendix_value", "appendix_boundary", "ex_ante_value"]


def cmd_price(cfg) -> tuple[str, int]:
    doc = price_report(cfg)
    if cfg["format"] == "csv":
        return _flat_csv(doc, PRICE_COLUMNS), EXIT_OK
    return dumps17(doc), EXIT_OK


def verify_report(cfg) -> dict:
    params = _params(cfg)
    spec = _spec(cfg, params)
    j = check_regime(cfg["j"])
    x, m = _default_state(cfg, spec)
    StatePoint(x, m).check(spec.side)
    sim = mc.SimConfig(horizon=cfg["horizon"], dt=cfg["dt"], n_paths=cfg["paths"], seed=cfg["seed"])
    cf = val.value(spec, params, StatePoint(x, m), j).value
    est = mc.estimate_value(spec, params, x, m, j, sim, perturb=cfg["perturb"])
    rep = mc.verification_report(spec, params, x, m, j, sim, cf, est)
    rep["perturb"] = cfg["perturb"]
    if cfg["perturb"] == 1.0:
        z = rep["z_score"]
        rep["check"] = "agreement"
        rep["passed"] = bool(abs(z) <= 3.0)
    else:
        # a perturbed rule must not beat the optimal value by more than 2 stderr
        rep["check"] = "suboptimality"
        rep["passed"] = bool(est.mean <= cf + 2.0 * est.stderr)
    return rep


VERIFY_COLUMNS = ["regime", "x", "extremum", "closed_form", "mc_mean", "mc_stderr", "z_score", "n",
                  "dt", "horizon", "seed", "perturb", "check", "passed"]


def cmd_verify(cfg) -> tuple[str, int]:
    rep = verify_report(cfg)
    code = EXIT_OK if rep["passed"] else EXIT_VERIFY
    if cfg["format"] == "csv":
        return _flat_csv(rep, VERIFY_COLUMNS), code
    return dumps17(rep), code


def cmd_plot_data(cfg) -> tuple[str, int]:
    params = _params(cfg)
    spec = _spec(cfg, params)
    j = check_regime(cfg["j"])
    d = bd.default_grid(spec)
    lo = cfg["grid_min"] if cfg["grid_min"] is not None else d.lo
    hi = cfg["grid_max"] if cfg["grid_max"] is not None else d.hi
    n = cfg["grid_points"] or 16
    if n < 2:
        raise ConfigError("--grid-points must be at least 2")
    extrema = GridSpec(lo, hi, points=n).values()
    bs = val.build_boundaries(spec, params)
    pts = val.wedge_grid(spec, extrema, n_x=n)
    if j == 1:
        pts = [(x, m) for x, m in pts if x != m]
    rows = val.value_surface(spec, params, j, pts, bs)
    if cfg["format"] == "csv":
        return val.surface_to_csv(rows), EXIT_OK
    curve = bs.curve(j)
    meta = {"boundary": {"extremum": [float(v) for v in extrema],
                         "value": [float(v) for v in np.atleast_1d(curve(extrema))]}}
    return val.surface_to_json(rows, spec, params, meta=meta), EXIT_OK


COMMANDS = {"exponents": cmd_exponents, "boundary": cmd_boundary, "price": cmd_price,
            "verify": cmd_verify, "plot-data": cmd_plot_data}


# ------------------------------------------------------------------ entry point

def _classify(exc: Exception) -> int:
    if isinstance(exc, (ParameterError, DomainError, ConfigError, SingularityError)):
        return EXIT_PARAM
    if isinstance(exc, (ConvergenceError, RootError, DegenerateError, MissingBoundaryError,
                        StepError)):
        return EXIT_SOLVER
    return EXIT_SOLVER


def error_payload(code: int, kind: str, message: str, detail: dict | None = None) -> str:
    return dumps17({"error": kind, "message": message, "exit_code": code, "detail": detail or {}})


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve(ns)
        text, code = COMMANDS[ns.command](cfg)
    except CliError as exc:
        sys.stderr.write(error_payload(exc.code, exc.kind, str(exc), exc.detail))
        return exc.code
    except PerpetualInsiderError as exc:
        code = _classify(exc)
        detail = {"command": ns.command}
        sys.stderr.write(error_payload(code, type(exc).__name__, str(exc), detail))
        return code
    _emit(text, cfg)
    return code


if __name__ == "__main__":
    sys.exit(main())
