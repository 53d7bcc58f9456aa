"""Optimal exercise boundaries.

Two exponent families appear.  ``"beta"`` solves the characteristic equation
with the pre-extremum drift ``r - delta'`` and governs the insider problem
with ``j = 0``.  ``"gamma"`` uses the plain drift ``r - delta`` and governs
the uninformed benchmark and, through a Doob transform, the insider problem
with ``j = 1``.

Before the extremum time the value is ``C1(b, m) x**e1 + C2(b, m) x**e2``
with coefficients fixed by instantaneous stopping and smooth fit at the
boundary ``b``.  The boundary follows from the condition on the diagonal
``x = m``::

    dV0/dm (m, m) = gap,   gap = (alpha/m) (V1(m, m) - V0(m, m))

where ``V1`` is the value right after the extremum time.  The uninformed
benchmark has ``gap = 0`` (pure normal reflection); the insider problem is
*coupled* through ``V1``.  Setting the gap to zero for the insider problem
gives the pure-reflection variant, which is exposed for comparison.

After the extremum time the extremum is frozen and the process is the
plain geometric Brownian motion conditioned never to return to it.  With
``h = 1 - (m/x)**alpha`` and ``phi(x) = +-((x/m)**g2 - (x/m)**g1)`` the
value is ``V1 = R* phi / h`` where ``R*`` maximises ``R(b) = P(b) h(b) / phi(b)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import (ConvergenceError, CoverageError, DegenerateError, NoRootError,
                     ParameterError, RootError, SingularityError)
from .model import (Family, ModelParams, OptionSpec, Side, check_side, exponents,
                    exponents_gamma, h_function, payoff, payoff_dm, payoff_dx)

ODE_ATOL = 1e-10
ODE_RTOL = 1e-12
ENVELOPE_TOL = 1e-8
DIAG_EPS = 1e-10
FIXED_CALL_FLOOR = 1e-5   # smallest q/K3 the fixed-strike call construction reaches


# --------------------------------------------------------------------------- grids

@dataclass(frozen=True)
class GridSpec:
    """Log-spaced extremum grid.  ``points`` overrides ``per_decade`` when given."""

    lo: float
    hi: float
    points: Optional[int] = None
    per_decade: int = 512

    def values(self) -> np.ndarray:
        if not (0 < self.lo < self.hi):
            raise ParameterError(f"grid needs 0 < lo < hi, got {self.lo}, {self.hi}")
        n = self.points or max(2, int(round(self.per_decade * math.log10(self.hi / self.lo))) + 1)
        return np.geomspace(self.lo, self.hi, n)


def default_grid(spec: OptionSpec) -> GridSpec:
    """Three decades around the strike (or around the threshold for family 3)."""
    k = spec.strike
    if spec.family is Family.FIXED:
        if spec.side is Side.PUT:
            return GridSpec(k * (1 + 1e-3), k * 1e3, per_decade=512)
        return GridSpec(k * 1e-3, k * (1 - 1e-3), per_decade=512)
    return GridSpec(k * 10 ** -1.5, k * 10 ** 1.5, per_decade=512)


# ------------------------------------------------------------------ BoundaryCurve

@dataclass
class BoundaryCurve:
    """
    Tabulated exercise boundary ``m -> b(m)`` for one contract and regime.

    Parameters
    ----------
    side, family, regime
        Contract and regime the curve belongs to.
    grid, values : ndarray
        Extremum values (strictly increasing) and boundary values.  Rows
        on the degenerate side of ``domain_threshold`` carry the degenerate
        boundary (``s`` or ``0`` on the put side, ``q`` or ``inf`` on the call side).
    domain_threshold : float
        ``s_lower`` on the put side (boundary defined for ``s > s_lower``) and
        ``q_upper`` on the call side (defined for ``q < q_upper``).  ``0`` and
        ``inf`` mean no threshold.
    kind : str
        ``"tabulated"``, ``"ray"`` (``b = ratio * m``) or ``"constant"``.
    """

    side: Side
    family: Family
    regime: int
    grid: np.ndarray
    values: np.ndarray
    domain_threshold: float
    kind: str = "tabulated"
    ratio: Optional[float] = None
    constant: Optional[float] = None
    exponent_family: str = "beta"
    degenerate: str = "diagonal"       # or "zero" / "infinite"
    metadata: dict = field(default_factory=dict)
    _dense: Optional[Callable] = field(default=None, repr=False, compare=False)
    _slope: Optional[Callable] = field(default=None, repr=False, compare=False)
    _pchip: Optional[PchipInterpolator] = field(default=None, repr=False, compare=False)

    # -- evaluation
    def in_domain(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if self.side is Side.PUT:
            return m > self.domain_threshold
        return m < self.domain_threshold

    def degenerate_value(self, m):
        m = np.asarray(m, dtype=float)
        if self.degenerate == "diagonal":
            return m.copy()
        if self.degenerate == "zero":
            return np.zeros_like(m)
        return np.full_like(m, np.inf)

    def _regular(self, m: np.ndarray) -> np.ndarray:
        if self.kind == "ray":
            return self.ratio * m
        if self.kind == "constant":
            return np.full_like(m, self.constant)
        if self._dense is not None:
            return self._dense(m)
        lo, hi = self.grid[0], self.grid[-1]
        if np.any((m < lo * (1 - 1e-12)) | (m > hi * (1 + 1e-12))):
            raise CoverageError(f"extremum outside tabulated range [{lo}, {hi}]")
        if self._pchip is None:
            ok = self.in_domain(self.grid)
            self._pchip = PchipInterpolator(np.log(self.grid[ok]), np.log(self.values[ok]))
        return np.exp(self._pchip(np.log(m)))

    def __call__(self, m):
        m_arr = np.asarray(m, dtype=float)
        out = np.empty_like(m_arr)
        dom = self.in_domain(m_arr)
        if np.any(dom):
            out[dom] = self._regular(m_arr[dom])
        if np.any(~dom):
            out[~dom] = self.degenerate_value(m_arr[~dom])
        return float(out) if out.ndim == 0 else out

    def slope(self, m):
        """``db/dm`` from the generating ODE when available, else from the interpolant."""
        m = np.asarray(m, dtype=float)
        if self.kind == "ray":
            return self.ratio + 0.0 * m
        if self.kind == "constant":
            return 0.0 * m
        if self._slope is not None:
            return self._slope(m)
        if self._pchip is None:
            self._regular(np.asarray([self.grid[-1]]))
        d = self._pchip.derivative()(np.log(m))
        return d * self(m) / m

    def coverage(self) -> tuple[float, float]:
        if self.kind in ("ray", "constant"):
            return 0.0, math.inf
        return float(self.metadata.get("coverage_lo", self.grid[0])), \
            float(self.metadata.get("coverage_hi", self.grid[-1]))

    # -- serialisation
    def rows(self):
        for m, b in zip(self.grid, self.values):
            yield float(m), float(b)

    def to_csv(self, path=None, extra: dict | None = None) -> str:
        cols = ["extremum", "boundary", "regime", "family", "side"]
        extra = extra or {}
        cols += list(extra)
        lines = [",".join(cols)]
        for i, (m, b) in enumerate(self.rows()):
            vals = [_fmt12(m), _fmt12(b), str(self.regime), str(int(self.family)), self.side.value]
            vals += [_fmt12(float(extra[c][i])) for c in extra]
            lines.append(",".join(vals))
        text = "\r\n".join(lines) + "\r\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self, params: ModelParams | None = None, extra: dict | None = None) -> dict:
        d = {
            "side": self.side.value, "family": int(self.family), "regime": self.regime,
            "kind": self.kind, "exponent_family": self.exponent_family,
            "domain_threshold": _json_float(self.domain_threshold),
            "ratio": self.ratio, "constant": self.constant, "degenerate": self.degenerate,
            "extremum": [float(v) for v in self.grid],
            "boundary": [_json_float(float(v)) for v in self.values],
            "metadata": _jsonable(self.metadata),
        }
        if params is not None:
            d["params"] = params.as_dict()
        if extra:
            d["columns"] = {k: [_json_float(float(x)) for x in v] for k, v in extra.items()}
        return d

    def to_json(self, path=None, params: ModelParams | None = None, extra: dict | None = None) -> str:
        text = dumps17(self.to_dict(params, extra))
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryCurve":
        thr = d["domain_threshold"]
        return cls(side=Side.parse(d["side"]), family=Family(d["family"]), regime=int(d["regime"]),
                   grid=np.asarray(d["extremum"], dtype=float),
                   values=np.asarray([_from_json_float(v) for v in d["boundary"]], dtype=float),
                   domain_threshold=_from_json_float(thr), kind=d.get("kind", "tabulated"),
                   ratio=d.get("ratio"), constant=d.get("constant"),
                   exponent_family=d.get("exponent_family", "beta"),
                   degenerate=d.get("degenerate", "diagonal"), metadata=d.get("metadata", {}))

    @classmethod
    def from_json(cls, text: str) -> "BoundaryCurve":
        return cls.from_dict(json.loads(text))


def _fmt12(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def _json_float(v):
    if v is None:
        return None
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _from_json_float(v):
    if isinstance(v, str):
        return float(v)
    return float(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_float(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


class _Encoder(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        return super().iterencode(_round17(o), _one_shot)


def _round17(o):
    if isinstance(o, float):
        if math.isinf(o) or math.isnan(o):
            return str(o)
        return float(f"{o:.17g}")
    if isinstance(o, dict):
        return {k: _round17(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_round17(v) for v in o]
    return o


def dumps17(obj) -> str:
    """JSON with 17 significant digits, sorted keys and a trailing newline."""
    return json.dumps(_round17(_jsonable(obj)), sort_keys=True, indent=1, allow_nan=False) + "\n"


# ------------------------------------------------------- j = 0 coefficient algebra

def _pay(spec: OptionSpec, b, m):
    return payoff(spec, b, m)


def coefficient_terms(spec: OptionSpec, e: tuple[float, float], b, m, pay=None):
    """
    Coefficients ``C_l`` and their partial derivatives in ``m`` and ``b``.

    ``pay`` overrides the payoff value; the fixed-strike solver passes the
    exact distance to the strike, which ``m - L`` loses near the strike.

    Returns three arrays of shape ``(2, ...)``: ``C``, ``dC/dm``, ``dC/db``.
    """
    e1, e2 = e
    P = _pay(spec, b, m) if pay is None else pay
    Px = payoff_dx(spec)
    Pm = payoff_dm(spec)
    b = np.asarray(b, dtype=float)
    be1 = b ** e1
    be2 = b ** e2
    c1 = (e2 * P - b * Px) / ((e2 - e1) * be1)
    c2 = (e1 * P - b * Px) / ((e1 - e2) * be2)
    dm1 = e2 * Pm / ((e2 - e1) * be1)
    dm2 = e1 * Pm / ((e1 - e2) * be2)
    db1 = (e2 - 1.0) * Px / ((e2 - e1) * be1) - e1 * c1 / b
    db2 = (e1 - 1.0) * Px / ((e1 - e2) * be2) - e2 * c2 / b
    return np.array([c1, c2]), np.array([dm1, dm2]), np.array([db1, db2])


def diagonal_value_j0(spec: OptionSpec, e, b, m) -> float:
    c, _, _ = coefficient_terms(spec, e, b, m)
    return c[0] * m ** e[0] + c[1] * m ** e[1]


# ----------------------------------------------------------------- j = 1 problem

@dataclass(frozen=True)
class J1Solution:
    """
    Solution of the post-extremum problem at a frozen extremum ``m``.

    ``interior`` is False when stopping at once is optimal on the whole
    wedge next to the diagonal (boundary equals ``m``), and ``never`` when no
    stopping ever pays (family 3 with a non-positive payoff).
    """

    m: float
    boundary: float
    ratio: float            # R* = max_b P h / phi
    diagonal_value: float   # V1(m, m)
    interior: bool
    never: bool = False
    residual: float = 0.0   # regularity residual of the smooth-fit coefficients


def _phi_h(params: ModelParams, side: Side, b, m):
    g1, g2 = exponents_gamma(params)
    u = np.log(np.asarray(b, dtype=float) / m)
    sgn = side.sign
    phi = sgn * (np.exp(g2 * u) - np.exp(g1 * u))
    h = -np.expm1(-params.alpha * u)
    return phi, h, u


def _phi_over_h(params: ModelParams, side: Side, x, m):
    """Stable ``phi(x)/h(x)`` including the diagonal limit ``sign (g2-g1)/alpha``."""
    g1, g2 = exponents_gamma(params)
    x = np.asarray(x, dtype=float)
    u = np.log(x / m)
    a = params.alpha
    with np.errstate(invalid="ignore", divide="ignore"):
        num = side.sign * np.exp(g1 * u) * np.expm1((g2 - g1) * u)
        den = -np.expm1(-a * u)
        out = num / den
    lim = side.sign * (g2 - g1) / a
    small = np.abs(u) < 1e-9
    out = np.where(small, lim * (1.0 + 0.5 * (g1 + g2 + a) * u), out)
    return float(out) if out.ndim == 0 else out


def _ratio_objective(spec, params, b, m):
    P = _pay(spec, b, m)
    phi, h, _ = _phi_h(params, spec.side, b, m)
    with np.errstate(invalid="ignore", divide="ignore"):
        R = np.where(P > 0, P * h / phi, -np.inf)
    return R


def _dlogR(spec, params, b, m):
    # b * d/db log R = b P_x / P + alpha z / h - b phi'/phi
    g1, g2 = exponents_gamma(params)
    P = _pay(spec, b, m)
    u = math.log(b / m)
    z = math.exp(-params.alpha * u)
    h = -math.expm1(-params.alpha * u)
    sgn = spec.side.sign
    phi = sgn * (math.exp(g2 * u) - math.exp(g1 * u))
    bphi = sgn * (g2 * math.exp(g2 * u) - g1 * math.exp(g1 * u))
    return b * payoff_dx(spec) / P + params.alpha * z / h - bphi / phi


def solve_j1(spec: OptionSpec, params: ModelParams, m: float, n_probe: int = 1200) -> J1Solution:
    """Solve the post-extremum stopping problem at frozen extremum ``m``."""
    check_side(spec, params)
    side = spec.side
    if spec.family is Family.FIXED:
        pm = float(payoff(spec, m, m))
        if pm > 0:
            return J1Solution(m, m, math.nan, pm, interior=False)
        return J1Solution(m, 0.0 if side is Side.PUT else math.inf, 0.0, 0.0,
                          interior=False, never=True)
    # log-distance probes from the diagonal, dense near it
    d = np.geomspace(1e-9, 30.0, n_probe)
    u = -d if side is Side.PUT else d
    bs = m * np.exp(u)
    R = _ratio_objective(spec, params, bs, m)
    if not np.any(np.isfinite(R)):
        raise NoRootError(f"payoff never positive at m={m}")
    k = int(np.nanargmax(R))
    diag_limit = float(payoff(spec, m, m))   # R at the diagonal times V1 factor gives P(m, m)
    if k == 0:
        # R increases toward the diagonal: immediate stopping is optimal
        return J1Solution(m, m, math.nan, max(diag_limit, 0.0), interior=False)
    lo, hi = bs[k - 1], bs[min(k + 1, n_probe - 1)]
    f = lambda b: _dlogR(spec, params, b, m)
    try:
        b_star = brentq(f, min(lo, hi), max(lo, hi), xtol=1e-15 * m, rtol=1e-15, maxiter=200)
    except ValueError:
        b_star = float(bs[k])
    R_star = float(_ratio_objective(spec, params, b_star, m))
    v_diag = R_star * side.sign * (exponents_gamma(params)[1] - exponents_gamma(params)[0]) / params.alpha
    res = regularity_residual(spec, params, b_star, m)
    return J1Solution(m, float(b_star), R_star, float(v_diag), interior=True, residual=res)


class DiagonalJ1:
    """
    ``V1(m, m)`` as a function of the frozen extremum.

    Family 2 is homogeneous (``V1 = m v(1)``) and family 3 is explicit.  For
    family 1 the homogeneity in the strike gives ``V1 = L g(m/L)`` and ``g``
    is tabulated once on a log grid and interpolated by a cubic spline in
    log-log coordinates; outside the table the exact solver is called.
    """

    LOG_RANGE = (-8.0, 8.0)
    PER_DECADE = 128

    def __init__(self, spec: OptionSpec, params: ModelParams):
        self.spec, self.params = spec, params
        self._unit = None
        self._spline = None

    def exact(self, m: float) -> float:
        return solve_j1(self.spec, self.params, float(m)).diagonal_value

    def _build(self):
        from scipy.interpolate import CubicSpline
        lo, hi = self.LOG_RANGE
        n = int((hi - lo) * self.PER_DECADE) + 1
        u = np.linspace(lo, hi, n) * math.log(10.0)
        unit = OptionSpec(self.spec.family, self.spec.side, 1.0)
        v = np.array([solve_j1(unit, self.params, math.exp(t)).diagonal_value for t in u])
        self._spline = CubicSpline(u, np.log(v))
        self._u_range = (u[0], u[-1])

    def __call__(self, m: float) -> float:
        f = self.spec.family
        if f is Family.FIXED:
            return max(float(payoff(self.spec, m, m)), 0.0)
        if f is Family.FLOATING:
            if self._unit is None:
                self._unit = self.exact(1.0)
            return self._unit * m
        L = self.spec.strike
        if self._spline is None:
            self._build()
        t = math.log(m / L)
        if not (self._u_range[0] <= t <= self._u_range[1]):
            return self.exact(m)
        return L * math.exp(float(self._spline(t)))


_DIAG_CACHE: dict = {}


def diagonal_j1(spec: OptionSpec, params: ModelParams) -> DiagonalJ1:
    """Cached :class:`DiagonalJ1` for a contract (strike-normalised for family 1)."""
    key = (spec.family, spec.side, params.r, params.delta, params.sigma)
    d = _DIAG_CACHE.get(key)
    if d is None:
        d = DiagonalJ1(OptionSpec(spec.family, spec.side, 1.0), params)
        _DIAG_CACHE[key] = d
    if spec.strike == 1.0:
        return d
    return _ScaledDiagonal(d, spec)


class _ScaledDiagonal:
    def __init__(self, unit: DiagonalJ1, spec: OptionSpec):
        self.unit, self.spec = unit, spec

    def exact(self, m):
        return solve_j1(self.spec, self.unit.params, float(m)).diagonal_value

    def __call__(self, m):
        if self.spec.family is Family.FIXED:
            return max(float(payoff(self.spec, m, m)), 0.0)
        if self.spec.family is Family.FLOATING:
            return self.unit(1.0) * m
        L = self.spec.strike
        return L * self.unit(m / L)


def coefficients_j1_basis(spec: OptionSpec, params: ModelParams, b: float, m: float):
    """Smooth-fit coefficients ``(C1, C2)`` on ``W1 = x**g2/h``, ``W2 = x**g1/h``."""
    g1, g2 = exponents_gamma(params)
    a = params.alpha
    z = (m / b) ** a
    h = 1.0 - z
    hp = a * z / b
    W1 = b ** g2 / h
    W2 = b ** g1 / h
    W1p = W1 * (g2 / b - hp / h)
    W2p = W2 * (g1 / b - hp / h)
    P = float(payoff(spec, b, m))
    Px = payoff_dx(spec)
    det = W1 * W2p - W2 * W1p
    if det == 0.0:
        raise DegenerateError("vanishing Wronskian")
    c1 = (P * W2p - W2 * Px) / det
    c2 = (W1 * Px - P * W1p) / det
    return c1, c2


def regularity_residual(spec: OptionSpec, params: ModelParams, b: float, m: float) -> float:
    """
    Finiteness defect on the diagonal, ``(C1 m**g2 + C2 m**g1) / (|C1| m**g2 + |C2| m**g1)``.

    The smooth-fit combination ``C1 W1 + C2 W2`` stays bounded at ``x = m``
    only when this vanishes; it replaces the continuity equation at the
    diagonal, which cannot be imposed on functions that blow up there.
    """
    g1, g2 = exponents_gamma(params)
    c1, c2 = coefficients_j1_basis(spec, params, b, m)
    t1, t2 = c1 * m ** g2, c2 * m ** g1
    return float((t1 + t2) / (abs(t1) + abs(t2)))


def abar_j1(spec: OptionSpec, params: ModelParams, m: float, j: int = 1) -> float:
    """
    Root of ``H(x, m, j) = 0`` bounding the stopping region.

    Put side: maximal sign-change root in ``(0, m)`` (upper bound for the
    boundary).  Call side: minimal root in ``(m, inf)`` (lower bound).
    Returns ``m`` when ``H < 0`` on the whole probed wedge.
    """
    d = np.geomspace(1e-10, 40.0, 4000)
    u = -d if spec.side is Side.PUT else d
    xs = m * np.exp(u)
    H = h_function(spec, params, xs, m, j)
    sc = np.nonzero(np.diff(np.sign(H)) != 0)[0]
    if len(sc) == 0:
        if np.all(H < 0):
            return m
        return 0.0 if spec.side is Side.PUT else math.inf
    i = sc[0]   # closest to the diagonal: maximal (put) / minimal (call)
    f = lambda x: float(h_function(spec, params, x, m, j))
    return float(brentq(f, min(xs[i], xs[i + 1]), max(xs[i], xs[i + 1]), xtol=1e-14 * m))


def abar_j0(spec: OptionSpec, params: ModelParams, m: float) -> float:
    """Closed-form root of the affine ``H(., m, 0)``: ``r L1/delta'``, ``r s/(L2 delta')`` or ``m``."""
    k, r, dp = spec.strike, params.r, params.delta_prime
    if spec.family is Family.STANDARD:
        return r * k / dp
    if spec.family is Family.FLOATING:
        return r * m / (k * dp)
    return float(m)


def boundary_j1(spec: OptionSpec, params: ModelParams, extremum: float) -> float:
    """
    Exercise boundary after the extremum time at frozen extremum ``m``.

    Families 1-2: maximiser of ``R`` (put) over ``(0, m)`` or ``(m, inf)`` (call).
    Family 3: ``m`` when the payoff is positive (stop at once), otherwise
    ``0`` (put) or ``inf`` (call), meaning never stop.

    Raises
    ------
    NoRootError
        Stopping at once is optimal (no interior root); the extremum lies
        beyond the existence threshold.
    """
    sol = solve_j1(spec, params, extremum)
    if spec.family is not Family.FIXED and not sol.interior:
        raise NoRootError(f"no interior root at extremum {extremum}")
    return sol.boundary


# ----------------------------------------------------------- boundary equations

def _gap(params: ModelParams, m, v1, v0):
    return params.alpha / m * (v1 - v0)


def boundary_ode_rhs(spec: OptionSpec, params: ModelParams, exponent_family: str,
                     extremum: float, boundary: float, regime: int = 0,
                     diagonal_j1: float | None = None, pay: float | None = None) -> float:
    """
    Slope ``db/dm`` of the exercise boundary before the extremum time.

    With ``diagonal_j1=None`` the pure reflection condition is used;
    otherwise ``diagonal_j1`` is ``V1(m, m)`` and the regime-gap term
    ``(alpha/m)(V1 - V0)`` is included.
    """
    if regime != 0:
        raise ParameterError("boundary ODE applies to regime 0")
    e = exponents(params, exponent_family)
    m, b = float(extremum), float(boundary)
    if spec.family is Family.FIXED and m == spec.strike:
        raise SingularityError("fixed-strike boundary equation is singular at the strike")
    c, dm, db = coefficient_terms(spec, e, b, m, pay)
    me = np.array([m ** e[0], m ** e[1]])
    den = float(db @ me)
    if den == 0.0 or not math.isfinite(den):
        raise DegenerateError(f"denominator vanishes at m={m}, b={b}")
    num = -float(dm @ me)
    if diagonal_j1 is not None:
        num += _gap(params, m, diagonal_j1, float(c @ me))
    return num / den


def fixed_strike_rhs_explicit(params: ModelParams, exponent_family: str, strike: float,
                              s: float, a: float) -> float:
    """Rational form of the pure-reflection fixed-strike equation (put side)."""
    e1, e2 = exponents(params, exponent_family)
    if s == strike:
        raise SingularityError("singular at s = L3")
    p1 = (s / a) ** e1
    p2 = (s / a) ** e2
    den = e1 * e2 * (p1 - p2)
    if den == 0.0:
        raise DegenerateError("denominator vanishes")
    return a / (s - strike) * (e2 * p1 - e1 * p2) / den


def power_equation_residual(spec: OptionSpec, params: ModelParams, exponent_family: str, lam):
    """``LHS - RHS`` of the floating-strike power equation, scaled by the RHS denominator."""
    e1, e2 = exponents(params, exponent_family)
    L = spec.strike
    lam = np.asarray(lam, dtype=float)
    lhs = lam ** (e1 - e2)
    num = (e1 - 1.0) * (e2 * (1.0 - L * lam) + L * lam)
    den = (e2 - 1.0) * (e1 * (1.0 - L * lam) + L * lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        return lhs - num / den


def root_power_equation(spec: OptionSpec, params: ModelParams, regime: int = 0,
                        exponent_family: str = "beta", probes: int = 10_000) -> float:
    """
    Root of the floating-strike power equation (pure normal reflection).

    Put side: ``lambda`` in (0, 1) with boundary ``lambda * s``.  Call side:
    ``nu`` in (1, inf) with boundary ``nu * q``; the bracket is scanned in
    ``1/nu``.

    Raises
    ------
    RootError
        No sign change in the bracket.
    """
    if spec.family is not Family.FLOATING:
        raise ParameterError("power equation applies to family 2")
    check_side(spec, params)
    f = lambda v: float(power_equation_residual(spec, params, exponent_family, v))
    t = np.linspace(0.0, 1.0, probes + 2)[1:-1]
    pts = t if spec.side is Side.PUT else 1.0 / t
    vals = power_equation_residual(spec, params, exponent_family, pts)
    ok = np.isfinite(vals)
    sgn = np.sign(vals[ok])
    idx = np.nonzero(np.diff(sgn) != 0)[0]
    # discard sign flips produced by a pole of the RHS
    good = []
    pts_ok = pts[ok]
    for i in idx:
        lo, hi = sorted((pts_ok[i], pts_ok[i + 1]))
        r0 = brentq(f, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=300) if f(lo) * f(hi) < 0 else None
        if r0 is not None and abs(f(r0)) < 1e-8:
            good.append(r0)
    if not good:
        raise RootError("no admissible root of the power equation")
    return good[0] if spec.side is Side.PUT else good[-1]


def power_equation_sign_changes(spec: OptionSpec, params: ModelParams, exponent_family: str,
                                probes: int = 10_000, eps: float = 1e-6) -> int:
    """Number of genuine sign changes of the power equation over ``probes`` points."""
    t = np.linspace(eps, 1.0 - eps, probes)
    pts = t if spec.side is Side.PUT else 1.0 / t
    f = lambda v: float(power_equation_residual(spec, params, exponent_family, v))
    vals = power_equation_residual(spec, params, exponent_family, pts)
    n = 0
    for i in np.nonzero(np.diff(np.sign(vals)) != 0)[0]:
        lo, hi = sorted((pts[i], pts[i + 1]))
        r0 = brentq(f, lo, hi, xtol=1e-16, maxiter=300)
        if abs(f(r0)) < 1e-8:
            n += 1
    return n


def ray_residual(spec: OptionSpec, params: ModelParams, exponent_family: str, lam: float,
                 diagonal_j1: float | None = None, unit_payoff: bool = False) -> float:
    """
    Reflection defect for a ray boundary ``b = lam * m`` at ``m = 1``.

    ``unit_payoff`` replaces the payoff by the far-from-strike limit of the
    fixed strike: ``m`` on the put side (``s >> L3``) and the constant ``K3``
    on the call side (``q << K3``), both scaled to 1 at ``m = 1``.
    ``diagonal_j1`` is ``V1(1, 1)``; ``None`` means pure reflection.
    """
    e = exponents(params, exponent_family)
    if unit_payoff:
        c, dm, db = coefficient_terms(OptionSpec(Family.FIXED, spec.side, 1.0), e, lam, 1.0, pay=1.0)
        if spec.side is Side.CALL:
            dm = 0.0 * dm
    else:
        c, dm, db = coefficient_terms(spec, e, lam, 1.0)
    val = float(dm.sum() + lam * db.sum())
    if diagonal_j1 is not None:
        val -= params.alpha * (diagonal_j1 - float(c.sum()))
    return val


def ray_ratio(spec: OptionSpec, params: ModelParams, exponent_family: str = "beta",
              coupled: bool = True, unit_payoff: bool = False, probes: int = 4000) -> float:
    """
    Ratio of a ray-shaped boundary before the extremum time.

    For family 2 this is the exercise ratio; with ``coupled=False`` it is the
    root of the power equation.  With ``unit_payoff`` it is the large-extremum
    limit used to anchor the fixed-strike construction.
    """
    v1 = None
    if coupled:
        if unit_payoff:
            v1 = 1.0
        else:
            v1 = solve_j1(spec, params, 1.0).diagonal_value
    f = lambda lam: ray_residual(spec, params, exponent_family, lam, v1, unit_payoff)
    t = np.geomspace(1e-6, 1.0 - 1e-9, probes)
    pts = t if spec.side is Side.PUT else 1.0 / t
    if spec.side is Side.CALL:
        pts = pts[::-1]
    if not unit_payoff:
        pay = payoff(spec, pts, 1.0)
        pts = pts[pay > 0]
    with np.errstate(all="ignore"):
        vals = np.array([f(p) for p in pts])
    ok = np.isfinite(vals)
    pts, vals = pts[ok], vals[ok]
    idx = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    roots = []
    for i in idx:
        lo, hi = sorted((pts[i], pts[i + 1]))
        r0 = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
        if abs(f(r0)) < 1e-6 * (1 + abs(f(lo)) + abs(f(hi))):
            roots.append(r0)
    if not roots:
        raise RootError("no ray solution")
    # closest to the diagonal: maximal on the put side, minimal on the call side
    return max(roots) if spec.side is Side.PUT else min(roots)


# ----------------------------------------------------------- closed forms

def boundary_standard_j0(spec: OptionSpec, params: ModelParams, exponent_family: str = "beta") -> float:
    """
    ``beta2 L1/(beta2 - 1)`` (put) or ``beta1 K1/(beta1 - 1)`` (call).

    This is the exact solution of the standard-option equation under pure
    reflection and the large-distance limit of the coupled insider boundary.
    """
    if spec.family is not Family.STANDARD:
        raise ParameterError("closed form applies to family 1")
    check_side(spec, params)
    e1, e2 = exponents(params, exponent_family)
    if spec.side is Side.PUT:
        return e2 * spec.strike / (e2 - 1.0)
    return e1 * spec.strike / (e1 - 1.0)


# ----------------------------------------------------------- extremal envelope

@dataclass
class _Integration:
    sol: object
    t_end: float
    hit_diagonal: bool


class _Problem:
    """Boundary ODE in logarithmic variables, parameterised by contract and coupling."""

    def __init__(self, spec: OptionSpec, params: ModelParams, exponent_family: str, coupled: bool):
        self.spec, self.params, self.ef, self.coupled = spec, params, exponent_family, coupled
        self.e = exponents(params, exponent_family)
        self.fixed = spec.family is Family.FIXED
        self.L = spec.strike
        self.put = spec.side is Side.PUT
        self.diag = diagonal_j1(spec, params) if coupled else None

    # independent variable t: log m; log(m - L) for the fixed-strike put and
    # log(m / (L - m)) for the fixed-strike call, which resolves both ends of (0, L)
    def m_of_t(self, t):
        if not self.fixed:
            return math.exp(t)
        if self.put:
            return self.L + math.exp(t)
        return self.L / (1.0 + math.exp(-t))

    def t_of_m(self, m):
        m = np.asarray(m, dtype=float)
        if not self.fixed:
            return np.log(m)
        return np.log(m - self.L) if self.put else np.log(m) - np.log(self.L - m)

    def dm_dt(self, t):
        if not self.fixed:
            return math.exp(t)
        if self.put:
            return math.exp(t)
        return self.L / ((1.0 + math.exp(-t)) * (1.0 + math.exp(t)))

    def strike_gap(self, t):
        """Exact ``|m - L|``, the fixed-strike payoff on the diagonal."""
        return math.exp(t) if self.put else self.L / (1.0 + math.exp(t))

    def v1(self, m):
        if not self.coupled:
            return None
        return self.diag(m)

    def slope(self, m, b, pay=None):
        v1 = self.v1(m)
        if pay is not None and self.coupled:
            v1 = pay
        return boundary_ode_rhs(self.spec, self.params, self.ef, m, b, 0, v1, pay)

    def rhs(self, t, y):
        m = self.m_of_t(t)
        b = math.exp(y[0])
        # fixed strike: the payoff on the diagonal is exactly exp(t) > 0
        pay = self.strike_gap(t) if self.fixed else None
        return [self.slope(m, b, pay) * self.dm_dt(t) / b]

    def integrate(self, m0, b0, m_end, dense=True) -> _Integration:
        t0, t1 = float(self.t_of_m(m0)), float(self.t_of_m(m_end))

        # stop just short of the diagonal, where the equation is singular
        def diag(t, y):
            m = self.m_of_t(t)
            return (y[0] - math.log(m)) * (1.0 if self.put else -1.0) + DIAG_EPS
        diag.terminal = True
        # the fixed-strike call solution is strongly attracting near the diagonal (stiff)
        method = "LSODA" if (self.fixed and not self.put) else "DOP853"
        with np.errstate(all="ignore"):
            sol = solve_ivp(self.rhs, (t0, t1), [math.log(b0)], method=method,
                            rtol=ODE_RTOL, atol=ODE_ATOL, dense_output=dense, events=diag)
        if sol.status < 0:
            raise ConvergenceError(f"boundary ODE failed: {sol.message}")
        hit = sol.status == 1
        return _Integration(sol, float(sol.t[-1]), hit)


_UNIT_RAY: dict = {}


def _unit_ray(spec, params, ef, coupled):
    key = (spec.side, params.r, params.delta, params.sigma, ef, coupled)
    if key not in _UNIT_RAY:
        _UNIT_RAY[key] = ray_ratio(spec, params, ef, coupled, unit_payoff=True)
    return _UNIT_RAY[key]


def _anchor_start(spec: OptionSpec, params: ModelParams, ef: str, coupled: bool, m: float) -> float:
    """Starting boundary value at an anchor, on the stable side of the separatrix."""
    put = spec.side is Side.PUT
    if spec.family is Family.STANDARD:
        # the deviation from the asymptote vanishes faster than any anchor error
        # decays (the contraction rate is only |alpha|), so start on it
        return boundary_standard_j0(spec, params, ef)
    if spec.family is Family.FLOATING:
        lam = ray_ratio(spec, params, ef, coupled)
        return (0.9 * lam if put else 1.1 * lam) * m
    if put:
        # far above the strike the payoff is nearly s and the boundary nearly a ray
        return 0.9 * _unit_ray(spec, params, ef, coupled) * m
    # far below the strike the payoff is nearly constant, stopping at once is
    # nearly optimal and the minimal solution hugs the diagonal, b/q - 1 = O(q/K3)
    return m * (1.0 + 2.0 * m / spec.strike)


def solve_extremal_boundary(spec: OptionSpec, params: ModelParams, exponent_family: str = "beta",
                            grid: GridSpec | np.ndarray | None = None, coupled: bool | None = None,
                            regime: int = 0, tol: float = ENVELOPE_TOL, max_anchors: int = 80,
                            cover: float | None = None) -> BoundaryCurve:
    """
    Extremal solution of the boundary equation by anchor shooting.

    Anchors ``m_k = L (1 + 2**k)`` (put) or ``L / (1 + 2**k)`` (call) move
    away from the strike.  From each anchor the equation is integrated toward
    the grid starting on the stable side of the separatrix; successive
    solutions increase (put) or decrease (call) pointwise and the iteration
    stops once two successive curves differ by less than ``tol`` on the grid.

    Parameters
    ----------
    coupled : bool, optional
        Include the regime-gap term.  Defaults to True for the ``"beta"``
        family (the insider problem) and False for ``"gamma"``.
    cover : float, optional
        Extra extremum value the dense solution must reach (for simulation).

    Returns
    -------
    BoundaryCurve
        With ``metadata`` holding anchor count, final envelope gap, the
        history of gaps, monotonicity and crossing flags.
    """
    if regime != 0:
        raise ParameterError("extremal construction applies to regime 0")
    check_side(spec, params)
    if coupled is None:
        coupled = exponent_family == "beta"
    grid_v = grid.values() if isinstance(grid, GridSpec) else \
        (default_grid(spec).values() if grid is None else np.asarray(grid, dtype=float))
    prob = _Problem(spec, params, exponent_family, coupled)
    put = spec.side is Side.PUT
    L = spec.strike
    fixed = spec.family is Family.FIXED

    # portion of the grid where the boundary is defined
    if fixed:
        dom = grid_v > L if put else grid_v < L
    else:
        dom = np.ones_like(grid_v, dtype=bool)
    g = grid_v[dom]
    if len(g) == 0:
        raise ParameterError("grid lies entirely in the degenerate region")
    far = g[-1] if put else g[0]
    if cover is not None:
        far = max(far, cover) if put else min(far, cover)
    if fixed and not put and far < FIXED_CALL_FLOOR * L:
        raise CoverageError(f"fixed-strike call boundary is not constructed below q = {FIXED_CALL_FLOOR} K3")
    near = g[0] if put else g[-1]
    if fixed:
        # integrate to within a relative 1e-12 of the strike for the threshold limit
        near_end = L * (1 + 1e-12) if put else L * (1 - 1e-12)
    else:
        near_end = near

    k0 = 0
    while True:
        m_anchor = L * (1 + 2.0 ** k0) if put else L / (1 + 2.0 ** k0)
        # the fixed-strike call is stiff near q = 0, so its anchors start just inside the range
        reach = 1.0 if fixed and not put else 0.5
        if (put and m_anchor > 2 * far) or (not put and m_anchor < reach * far):
            break
        k0 += 1
    curves, gaps, ints = [], [], []
    crossing = False
    monotone = True
    for k in range(k0, k0 + max_anchors):
        m_anchor = L * (1 + 2.0 ** k) if put else L / (1 + 2.0 ** k)
        if fixed and not put and m_anchor < 0.1 * FIXED_CALL_FLOOR * L:
            raise ConvergenceError(f"fixed-strike call envelope not Cauchy above q = {m_anchor:.3g}; gaps {gaps[-3:]}")
        b0 = _anchor_start(spec, params, exponent_family, coupled, m_anchor)
        it = prob.integrate(m_anchor, b0, near_end)
        ints.append(it)
        vals = np.full_like(g, np.nan)
        tg = prob.t_of_m(g)
        if it.sol.t[-1] < it.sol.t[0]:
            valid = tg >= it.sol.t[-1] - 1e-14
        else:
            valid = tg <= it.sol.t[-1] + 1e-14
        if np.any(valid):
            vals[valid] = np.exp(it.sol.sol(tg[valid])[0])
        if curves:
            prev = curves[-1]
            both = np.isfinite(prev) & np.isfinite(vals)
            diff = vals[both] - prev[both]
            gap = float(np.max(np.abs(diff) / (1.0 + np.abs(vals[both])))) if diff.size else math.inf
            if np.count_nonzero(np.isfinite(prev) != np.isfinite(vals)) > 1:
                gap = math.inf
            noise = tol * (1.0 + np.abs(vals[both]))
            # put envelope increases, call envelope decreases
            if put and np.any(diff < -noise):
                monotone = False
            if (not put) and np.any(diff > noise):
                monotone = False
            if np.any(diff > noise) and np.any(diff < -noise):
                crossing = True
            gaps.append(gap)
            curves.append(vals)
            if gap < tol:
                break
        else:
            curves.append(vals)
    else:
        raise ConvergenceError(f"envelope not Cauchy after {max_anchors} anchors; gaps {gaps[-3:]}")

    final = ints[-1]
    values_dom = curves[-1]
    # threshold: the extremal curve reaching the diagonal before the grid end
    threshold = (0.0 if put else math.inf)
    if fixed:
        threshold = L
    if final.hit_diagonal:
        threshold = prob.m_of_t(final.t_end)
    full = np.empty_like(grid_v)
    degenerate = "diagonal"
    if fixed:
        degenerate = "zero" if put else "infinite"
    curve = BoundaryCurve(side=spec.side, family=spec.family, regime=0, grid=grid_v, values=full,
                          domain_threshold=threshold, exponent_family=exponent_family,
                          degenerate=degenerate)
    full[:] = curve.degenerate_value(grid_v)
    idx_dom = np.nonzero(dom)[0]
    ok = np.isfinite(values_dom)
    full[idx_dom[ok]] = values_dom[ok]
    sol = final.sol

    def dense(m):
        m = np.asarray(m, dtype=float)
        t = prob.t_of_m(m)
        lo_t, hi_t = sorted((sol.t[0], sol.t[-1]))
        if np.any((t < lo_t - 1e-12) | (t > hi_t + 1e-12)):
            raise CoverageError(f"extremum outside the solved range")
        return np.exp(sol.sol(t)[0])

    def slope(m):
        m = np.atleast_1d(np.asarray(m, dtype=float))
        out = np.array([prob.slope(mm, float(dense(mm))) for mm in m])
        return out

    curve._dense = dense
    curve._slope = slope
    m_lo, m_hi = sorted((prob.m_of_t(sol.t[0]), prob.m_of_t(sol.t[-1])))
    curve.metadata = {
        "method": "anchor shooting", "coupled": coupled, "anchors": len(curves),
        "first_anchor_index": k0, "envelope_gap": gaps[-1] if gaps else math.nan,
        "gap_history": gaps, "monotone_envelope": monotone, "crossing_detected": crossing,
        "ode_rtol": ODE_RTOL, "ode_atol": ODE_ATOL, "tolerance": tol,
        "coverage_lo": m_lo, "coverage_hi": m_hi, "existence_threshold": threshold,
    }
    return curve


# ----------------------------------------------------------- public builders

def ray_curve(spec: OptionSpec, params: ModelParams, ratio: float, grid: np.ndarray,
              regime: int, exponent_family: str, meta: dict | None = None) -> BoundaryCurve:
    grid = np.asarray(grid, dtype=float)
    return BoundaryCurve(side=spec.side, family=spec.family, regime=regime, grid=grid,
                         values=ratio * grid, domain_threshold=0.0 if spec.side is Side.PUT else math.inf,
                         kind="ray", ratio=ratio, exponent_family=exponent_family,
                         metadata=meta or {})


def boundary_j1_curve(spec: OptionSpec, params: ModelParams, grid: GridSpec | np.ndarray | None = None,
                      threshold_tol: float = 1e-10) -> BoundaryCurve:
    """Tabulate the post-extremum boundary on an extremum grid."""
    check_side(spec, params)
    grid_v = grid.values() if isinstance(grid, GridSpec) else \
        (default_grid(spec).values() if grid is None else np.asarray(grid, dtype=float))
    put = spec.side is Side.PUT
    if spec.family is Family.FIXED:
        L = spec.strike
        vals = np.where(grid_v > L, grid_v, 0.0) if put else np.where(grid_v < L, grid_v, math.inf)
        # stop-at-once region is the "regular" domain; beyond the strike never stop
        return BoundaryCurve(side=spec.side, family=spec.family, regime=1, grid=grid_v, values=vals,
                             domain_threshold=L, kind="tabulated", exponent_family="gamma",
                             degenerate="zero" if put else "infinite",
                             metadata={"rule": "stop at once when the payoff is positive, never otherwise"},
                             _dense=lambda m: np.asarray(m, dtype=float))
    sols = [solve_j1(spec, params, float(m)) for m in grid_v]
    vals = np.array([s.boundary for s in sols])
    interior = np.array([s.interior for s in sols])
    threshold = 0.0 if put else math.inf
    if not np.all(interior):
        # existence edge by bisection between the last immediate-stop point and the first interior point
        idx = np.nonzero(interior)[0]
        if len(idx) == 0:
            threshold = math.inf if put else 0.0
        else:
            i = idx[0] if put else idx[-1]
            j = i - 1 if put else i + 1
            if 0 <= j < len(grid_v):
                lo, hi = sorted((grid_v[j], grid_v[i]))
                f_in = lambda m: solve_j1(spec, params, m).interior
                while hi - lo > threshold_tol * hi:
                    mid = 0.5 * (lo + hi)
                    if f_in(mid) == (put):
                        hi = mid
                    else:
                        lo = mid
                threshold = 0.5 * (lo + hi)
    meta = {"max_regularity_residual": float(max(abs(s.residual) for s in sols)),
            "existence_threshold": threshold, "method": "ratio maximisation"}

    def dense(m):
        m = np.atleast_1d(np.asarray(m, dtype=float))
        return np.array([solve_j1(spec, params, float(mm)).boundary for mm in m])

    return BoundaryCurve(side=spec.side, family=spec.family, regime=1, grid=grid_v, values=vals,
                         domain_threshold=threshold, kind="tabulated", exponent_family="gamma",
                         metadata=meta, _dense=dense)


def insider_boundary(spec: OptionSpec, params: ModelParams, j: int,
                     grid: GridSpec | np.ndarray | None = None, coupled: bool = True,
                     cover: float | None = None) -> BoundaryCurve:
    """Insider exercise boundary for regime ``j`` (coupled construction by default)."""
    check_side(spec, params)
    grid_v = grid.values() if isinstance(grid, GridSpec) else \
        (default_grid(spec).values() if grid is None else np.asarray(grid, dtype=float))
    if j == 1:
        return boundary_j1_curve(spec, params, grid_v)
    if spec.family is Family.FLOATING:
        lam = ray_ratio(spec, params, "beta", coupled)
        meta = {"method": "ray", "coupled": coupled}
        if coupled:
            meta["diagonal_j1_unit"] = solve_j1(spec, params, 1.0).diagonal_value
        return ray_curve(spec, params, lam, grid_v, 0, "beta", meta)
    return solve_extremal_boundary(spec, params, "beta", grid_v, coupled=coupled, cover=cover)


def appendix_boundaries(spec: OptionSpec, params: ModelParams,
                        grid: GridSpec | np.ndarray | None = None):
    """
    Exercise boundary of the uninformed holder.

    Family 1 returns the scalar ``gamma2 L1/(gamma2-1)`` (put) or
    ``gamma1 K1/(gamma1-1)`` (call); family 2 a ray curve; family 3 the
    extremal solution of the pure-reflection equation with the gamma pair.
    """
    check_side(spec, params)
    if spec.family is Family.STANDARD:
        return boundary_standard_j0(spec, params, "gamma")
    grid_v = grid.values() if isinstance(grid, GridSpec) else \
        (default_grid(spec).values() if grid is None else np.asarray(grid, dtype=float))
    if spec.family is Family.FLOATING:
        lam = root_power_equation(spec, params, 0, "gamma")
        return ray_curve(spec, params, lam, grid_v, 0, "gamma", {"method": "power equation"})
    return solve_extremal_boundary(spec, params, "gamma", grid_v, coupled=False)


def appendix_bound(spec: OptionSpec, params: ModelParams, m, appendix=None):
    """Appendix boundary evaluated at extremum values ``m``."""
    ap = appendix_boundaries(spec, params) if appendix is None else appendix
    m = np.asarray(m, dtype=float)
    if isinstance(ap, (float, int)):
        return np.full_like(m, float(ap))
    return ap(m)


def exercise_bounds(spec: OptionSpec, params: ModelParams, j: int, m, appendix=None) -> dict:
    """Columns ``abar`` (H-root), ``appendix`` and the diagonal, for ordering checks."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if j == 0:
        hb = np.array([abar_j0(spec, params, mm) for mm in m])
    else:
        hb = np.array([abar_j1(spec, params, mm, 1) for mm in m])
    return {"abar": hb, "appendix": appendix_bound(spec, params, m, appendix), "diagonal": m}
