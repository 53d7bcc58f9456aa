"""Value functions assembled from exercise boundaries.

Regime ``j = 0`` (extremum time still ahead) uses the power sum
``C1 x**e1 + C2 x**e2`` with the beta pair; regime ``j = 1`` uses
``V1 = R* phi(x)/h(x)``.  The uninformed benchmark uses the gamma pair with
pure reflection.  Every value is computed in closed form from the boundary
at the queried extremum; the boundary itself comes from
:mod:`perpetual_insider.boundaries`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import boundaries as bd
from .boundaries import BoundaryCurve, GridSpec, dumps17
from .errors import (CoverageError, DegenerateError, DomainError, MissingBoundaryError,
                     ParameterError)
from .model import (Family, ModelParams, OptionSpec, Side, StatePoint, asset_drift,
                    azema_supermartingale, check_regime, check_side, exponents,
                    exponents_gamma, h_function, payoff, payoff_dm, payoff_dx)

# relative tolerance under which a value counts as equal to the payoff
REGION_TOL = 1e-10


class Region(str, enum.Enum):
    CONTINUATION = "continuation"
    STOPPING = "stopping"
    NEVER = "degenerate_never_stop"


@dataclass(frozen=True)
class CoefficientPair:
    """
    Coefficients of the two fundamental solutions.

    ``basis`` is ``"power"`` (``x**e1``, ``x**e2``) for ``j = 0`` and the
    benchmark, or ``"doob"`` (``x**g2/h``, ``x**g1/h``) for ``j = 1``.
    """

    c1: float
    c2: float
    basis: str = "power"
    exponents: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.c1) and math.isfinite(self.c2)):
            raise DegenerateError(f"non-finite coefficients ({self.c1}, {self.c2})")


@dataclass(frozen=True)
class ValueResult:
    """Price at one state with its region tag and the first ``x`` derivative."""

    value: float
    region: Region
    regime: int
    gradient_x: Optional[float] = None
    boundary: Optional[float] = None

    def as_dict(self) -> dict:
        return {"value": self.value, "region": self.region.value, "regime": self.regime,
                "gradient_x": self.gradient_x, "boundary": self.boundary}


# ------------------------------------------------------------------ boundary set

@dataclass
class BoundarySet:
    """
    Boundaries needed to price one contract, built lazily.

    ``coupled=False`` swaps the insider ``j = 0`` boundary for the
    pure-reflection variant (no regime-gap term).
    """

    spec: OptionSpec
    params: ModelParams
    grid: Optional[np.ndarray] = None
    coupled: bool = True
    cover: Optional[float] = None
    _j0: Optional[BoundaryCurve] = field(default=None, repr=False)
    _j1: Optional[BoundaryCurve] = field(default=None, repr=False)
    _app: object = field(default=None, repr=False)
    _edge: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        check_side(self.spec, self.params)
        if self.grid is None:
            self.grid = bd.default_grid(self.spec).values()
        elif isinstance(self.grid, GridSpec):
            self.grid = self.grid.values()
        else:
            self.grid = np.asarray(self.grid, dtype=float)

    @property
    def j0(self) -> BoundaryCurve:
        if self._j0 is None:
            self._j0 = bd.insider_boundary(self.spec, self.params, 0, self.grid,
                                           coupled=self.coupled, cover=self.cover)
        return self._j0

    @property
    def j1(self) -> BoundaryCurve:
        if self._j1 is None:
            self._j1 = bd.insider_boundary(self.spec, self.params, 1, self.grid)
        return self._j1

    @property
    def appendix(self):
        if self._app is None:
            self._app = bd.appendix_boundaries(self.spec, self.params, self.grid)
        return self._app

    def curve(self, j: int) -> BoundaryCurve:
        return self.j0 if check_regime(j) == 0 else self.j1

    def edge_value(self, which: str = "insider") -> float:
        """Diagonal value at the fixed strike, approached from the live side."""
        if which not in self._edge:
            self._edge[which] = _fixed_strike_edge(self, which)
        return self._edge[which]


def build_boundaries(spec: OptionSpec, params: ModelParams, grid=None, coupled: bool = True,
                     cover: float | None = None) -> BoundarySet:
    return BoundarySet(spec, params, grid, coupled, cover)


def _boundary_at(curve: BoundaryCurve, m: float) -> float:
    try:
        return float(curve(m))
    except CoverageError:
        raise
    except (ValueError, IndexError) as exc:
        raise MissingBoundaryError(f"no boundary at extremum {m}: {exc}") from exc


# ------------------------------------------------------------------ coefficients

def coefficients_j0(spec: OptionSpec, params: ModelParams, boundary: float, extremum: float,
                    exponent_family: str = "beta") -> CoefficientPair:
    """Instantaneous-stopping and smooth-fit coefficients of ``x**e1`` and ``x**e2``."""
    b, m = float(boundary), float(extremum)
    if spec.side is Side.PUT and not (0 < b <= m):
        raise DomainError(f"put boundary must lie in (0, s], got a={b}, s={m}")
    if spec.side is Side.CALL and not (b >= m > 0):
        raise DomainError(f"call boundary must lie in [q, inf), got b={b}, q={m}")
    e = exponents(params, exponent_family)
    if e[0] == e[1]:
        raise DegenerateError("coincident exponents")
    c, _, _ = bd.coefficient_terms(spec, e, b, m)
    return CoefficientPair(float(c[0]), float(c[1]), "power", tuple(e))


def coefficients_j1(spec: OptionSpec, params: ModelParams, boundary: float,
                    extremum: float) -> CoefficientPair:
    """Smooth-fit coefficients on ``W1 = x**g2/h`` and ``W2 = x**g1/h``."""
    c1, c2 = bd.coefficients_j1_basis(spec, params, float(boundary), float(extremum))
    return CoefficientPair(float(c1), float(c2), "doob", tuple(exponents_gamma(params)))


def _power_sum(c: CoefficientPair, x: float, k: int = 0) -> float:
    e1, e2 = c.exponents
    out = 0.0
    for cl, e in ((c.c1, e1), (c.c2, e2)):
        f = 1.0
        for i in range(k):
            f *= e - i
        out += cl * f * x ** (e - k)
    return out


# ---------------------------------------------------------- j = 1 shape function

def _series_ratio(params: ModelParams, side: Side, n: int = 24) -> np.ndarray:
    """Taylor coefficients in ``u = log(x/m)`` of ``phi/h`` around the diagonal."""
    g1, g2 = exponents_gamma(params)
    a = params.alpha
    k = np.arange(1, n + 2)
    fact = np.array([math.factorial(int(i)) for i in k], dtype=float)
    num = side.sign * (g2 ** k - g1 ** k) / fact     # phi / u
    den = -((-a) ** k) / fact                         # h / u
    out = np.zeros(n)
    for i in range(n):
        out[i] = (num[i] - np.dot(out[:i], den[i:0:-1])) / den[0]
    return out


@lru_cache(maxsize=64)
def _series_cached(r, delta, sigma, side):
    return _series_ratio(ModelParams(r, delta, sigma), Side(side))


def shape_j1(params: ModelParams, side: Side, x: float, m: float, k: int = 0) -> float:
    """
    ``f = phi/h`` and its ``x`` derivatives (``k`` = 0, 1, 2).

    A Taylor series in ``log(x/m)`` is used within 0.05 of the diagonal,
    where the direct quotient loses digits.
    """
    u = math.log(x / m)
    if abs(u) < 0.05:
        c = _series_cached(params.r, params.delta, params.sigma, side.value)
        n = len(c)
        F = np.polynomial.polynomial.polyval(u, c)
        F1 = np.polynomial.polynomial.polyval(u, c[1:] * np.arange(1, n))
        F2 = np.polynomial.polynomial.polyval(u, c[2:] * np.arange(2, n) * np.arange(1, n - 1))
    else:
        g1, g2 = exponents_gamma(params)
        a = params.alpha
        s = side.sign
        p0 = s * (math.exp(g2 * u) - math.exp(g1 * u))
        p1 = s * (g2 * math.exp(g2 * u) - g1 * math.exp(g1 * u))
        p2 = s * (g2 * g2 * math.exp(g2 * u) - g1 * g1 * math.exp(g1 * u))
        h0 = -math.expm1(-a * u)
        h1 = a * math.exp(-a * u)
        h2 = -a * a * math.exp(-a * u)
        F = p0 / h0
        F1 = (p1 - F * h1) / h0
        F2 = (p2 - 2 * F1 * h1 - F * h2) / h0
    if k == 0:
        return float(F)
    if k == 1:
        return float(F1 / x)
    return float((F2 - F1) / (x * x))


@lru_cache(maxsize=4096)
def _j1_solution(spec: OptionSpec, params: ModelParams, m: float) -> bd.J1Solution:
    return bd.solve_j1(spec, params, m)


# ---------------------------------------------------------------- fixed strike

def _fixed_strike_edge(bs: BoundarySet, which: str) -> float:
    """
    ``lim V0(m, m)`` as the extremum tends to the strike from the live side.

    The boundary tends to 0 (put) or infinity (call) there while the
    coefficient of the bounded solution stays finite; the limit is read off
    the extremal solution one part in 1e12 from the strike.
    """
    spec, params = bs.spec, bs.params
    L = spec.strike
    put = spec.side is Side.PUT
    m = L * (1.0 + 1e-12) if put else L * (1.0 - 1e-12)
    # exact payoff at the representable m (s - L3 or K3 - q)
    d = m - L if put else L - m
    if which == "insider":
        curve, ef = bs.j0, "beta"
    else:
        curve, ef = bs.appendix, "gamma"
    b = float(curve._dense(np.asarray(m))) if curve._dense is not None else float(curve(m))
    e = exponents(params, ef)
    c, _, _ = bd.coefficient_terms(spec, e, b, m, pay=d)
    return float(c[0] * m ** e[0] + c[1] * m ** e[1])


def _fixed_strike_dead(bs: BoundarySet, x: float, m: float, which: str, k: int = 0) -> float:
    """Value and ``x`` derivatives when the fixed-strike payoff is still non-positive."""
    params, L = bs.params, bs.spec.strike
    put = bs.spec.side is Side.PUT
    edge = bs.edge_value(which)
    if which == "insider":
        e = exponents(params, "beta")[0 if put else 1]
        scale = (L / m) ** params.alpha
    else:
        e = exponents_gamma(params)[0 if put else 1]
        scale = 1.0
    f = 1.0
    for i in range(k):
        f *= e - i
    return edge * scale * f * (x / L) ** e / x ** k


# ---------------------------------------------------------------------- values

def _state(spec: OptionSpec, p, extremum=None) -> tuple[float, float]:
    if not isinstance(p, StatePoint):
        p = StatePoint(float(p), float(extremum))
    p.check(spec.side)
    return float(p.x), float(p.extremum)


def _stops(spec: OptionSpec, x: float, b: float) -> bool:
    return x <= b if spec.side is Side.PUT else x >= b


def _value_parts(spec, params, bs: BoundarySet, x, m, j, which="insider", k=0):
    """Returns ``(value_or_derivative, region, boundary)``."""
    put = spec.side is Side.PUT
    fixed = spec.family is Family.FIXED
    L = spec.strike
    if which == "appendix":
        return _appendix_parts(spec, params, bs, x, m, k)
    if j == 1:
        if fixed:
            pm = float(payoff(spec, x, m))
            if pm > 0:
                return (pm if k == 0 else 0.0), Region.STOPPING, m
            return 0.0, Region.NEVER, (0.0 if put else math.inf)
        sol = _j1_solution(spec, params, m)
        b = sol.boundary
        if not sol.interior or _stops(spec, x, b):
            return _payoff_k(spec, x, m, k), Region.STOPPING, b
        return sol.ratio * shape_j1(params, spec.side, x, m, k), Region.CONTINUATION, b
    curve = bs.j0
    if fixed and ((put and m <= L) or (not put and m >= L)):
        return _fixed_strike_dead(bs, x, m, "insider", k), Region.CONTINUATION, \
            (0.0 if put else math.inf)
    b = _boundary_at(curve, m)
    if _stops(spec, x, b):
        return _payoff_k(spec, x, m, k), Region.STOPPING, b
    c = coefficients_j0(spec, params, b, m)
    return _power_sum(c, x, k), Region.CONTINUATION, b


def _payoff_k(spec, x, m, k):
    if k == 0:
        return float(payoff(spec, x, m))
    if k == 1:
        return float(payoff_dx(spec))
    return 0.0


def _appendix_parts(spec, params, bs, x, m, k):
    put = spec.side is Side.PUT
    L = spec.strike
    if spec.family is Family.STANDARD:
        g = float(bs.appendix)
        if _stops(spec, x, g):
            return _payoff_k(spec, x, m, k), Region.STOPPING, g
        g1, g2 = exponents_gamma(params)
        e = g2 if put else g1
        f = 1.0
        for i in range(k):
            f *= e - i
        # -(g/g2)(x/g)**g2 on the put side, (h/g1)(x/h)**g1 on the call side
        v = -(g / e) * (x / g) ** e if put else (g / e) * (x / g) ** e
        return f * v / x ** k, Region.CONTINUATION, g
    if spec.family is Family.FIXED and ((put and m <= L) or (not put and m >= L)):
        return _fixed_strike_dead(bs, x, m, "appendix", k), Region.CONTINUATION, \
            (0.0 if put else math.inf)
    b = _boundary_at(bs.appendix, m)
    if _stops(spec, x, b):
        return _payoff_k(spec, x, m, k), Region.STOPPING, b
    c = coefficients_j0(spec, params, b, m, "gamma")
    return _power_sum(c, x, k), Region.CONTINUATION, b


def _check_value(v: float, x, m):
    if not math.isfinite(v):
        raise DegenerateError(f"non-finite value at x={x}, m={m}")
    if v < -1e-12 * max(1.0, abs(x), abs(m)):
        raise DegenerateError(f"negative value {v} at x={x}, m={m}: inconsistent boundary")
    return v


def value(spec: OptionSpec, params: ModelParams, p, j: int, boundaries: BoundarySet | None = None,
          extremum: float | None = None) -> ValueResult:
    """
    Insider value at a state in regime ``j``.

    Parameters
    ----------
    p : StatePoint or float
        State, or the asset price with ``extremum`` given separately.
    boundaries : BoundarySet, optional
        Built on demand with the default grid when omitted.

    Returns
    -------
    ValueResult
        ``region`` is ``stopping`` where the payoff is paid at once,
        ``degenerate_never_stop`` for the fixed strike after the extremum
        time with a non-positive payoff.
    """
    j = check_regime(j)
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    v, region, b = _value_parts(spec, params, bs, x, m, j)
    g, _, _ = _value_parts(spec, params, bs, x, m, j, k=1)
    return ValueResult(_check_value(float(v), x, m), region, j, float(g), float(b))


def value_dx(spec: OptionSpec, params: ModelParams, p, j: int, boundaries=None, extremum=None) -> float:
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    return float(_value_parts(spec, params, bs, x, m, check_regime(j), k=1)[0])


def value_dxx(spec: OptionSpec, params: ModelParams, p, j: int, boundaries=None, extremum=None) -> float:
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    return float(_value_parts(spec, params, bs, x, m, check_regime(j), k=2)[0])


def classify_region(spec: OptionSpec, params: ModelParams, p, j: int, boundaries=None,
                    extremum=None) -> Region:
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    return _value_parts(spec, params, bs, x, m, check_regime(j))[1]


def value_appendix(spec: OptionSpec, params: ModelParams, p, boundaries=None,
                   extremum=None) -> ValueResult:
    """Value for a holder who does not know the extremum time (gamma exponents)."""
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    v, region, b = _appendix_parts(spec, params, bs, x, m, 0)
    g, _, _ = _appendix_parts(spec, params, bs, x, m, 1)
    return ValueResult(_check_value(float(v), x, m), region, 0, float(g), float(b))


def insider_value(spec: OptionSpec, params: ModelParams, p, boundaries=None, extremum=None) -> float:
    """
    Value before knowing whether the extremum has passed.

    Mixes the two regimes with the conditional probability ``Z = (m/x)**alpha``
    that the extremum time is still ahead: ``Z V0 + (1 - Z) V1``.
    """
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    z = float(azema_supermartingale(params, x, m, spec.side))
    v0 = value(spec, params, StatePoint(x, m), 0, bs).value
    if z >= 1.0:
        return v0
    v1 = value(spec, params, StatePoint(x, m), 1, bs).value
    return z * v0 + (1.0 - z) * v1


def diagonal_values(spec: OptionSpec, params: ModelParams, m: float, boundaries=None) -> tuple[float, float]:
    """``(V0(m, m), V1(m, m))``."""
    bs = boundaries or build_boundaries(spec, params)
    v0 = _value_parts(spec, params, bs, m, m, 0)[0]
    v1 = _value_parts(spec, params, bs, m, m, 1)[0]
    return float(v0), float(v1)


# ------------------------------------------------------------------ diagnostics

def normal_reflection_residual(spec: OptionSpec, params: ModelParams, extremum: float,
                               boundaries=None, gap: bool = True) -> float:
    """
    ``dV0/dm (m, m) - (alpha/m) (V1(m, m) - V0(m, m))`` at the diagonal.

    The ``m`` derivative includes the boundary's own dependence on ``m``
    through the slope of the boundary equation.  ``gap=False`` drops the
    regime-gap term, giving the classical pure-reflection residual.
    """
    bs = boundaries or build_boundaries(spec, params)
    m = float(extremum)
    put = spec.side is Side.PUT
    L = spec.strike
    a = params.alpha
    v0, v1 = diagonal_values(spec, params, m, bs)
    if spec.family is Family.FIXED and ((put and m <= L) or (not put and m >= L)):
        dv0 = -a / m * v0
    else:
        curve = bs.j0
        b = _boundary_at(curve, m)
        if _stops(spec, m, b):
            raise DomainError(f"extremum {m} lies beyond the existence threshold")
        e = exponents(params, "beta")
        _, dm, db = bd.coefficient_terms(spec, e, b, m)
        slope = float(np.asarray(curve.slope(np.asarray([m])))[0])
        me = np.array([m ** e[0], m ** e[1]])
        dv0 = float((dm + db * slope) @ me)
    term = a / m * (v1 - v0) if gap else 0.0
    return dv0 - term


def generator_residual(spec: OptionSpec, params: ModelParams, p, j: int, boundaries=None,
                       extremum=None, which: str = "insider") -> tuple[float, float]:
    """
    ``(L - r) V`` at an interior point and the scale it should be compared to.

    The drift is ``r - delta'`` for ``j = 0``, the conditioned drift for
    ``j = 1`` and ``r - delta`` for the benchmark.
    """
    x, m = _state(spec, p, extremum)
    bs = boundaries or build_boundaries(spec, params)
    j = check_regime(j)
    if which == "appendix":
        parts = [_appendix_parts(spec, params, bs, x, m, k)[0] for k in range(3)]
        mu = params.r - params.delta
    else:
        parts = [_value_parts(spec, params, bs, x, m, j, k=k)[0] for k in range(3)]
        z = float(azema_supermartingale(params, x, m, spec.side))
        mu = float(asset_drift(params, z, j))
    v, v1, v2 = parts
    s2 = params.sigma ** 2
    terms = (0.5 * s2 * x * x * v2, mu * x * v1, params.r * v)
    res = terms[0] + terms[1] - terms[2]
    return float(res), float(max(abs(t) for t in terms))


def smooth_fit_residuals(spec: OptionSpec, params: ModelParams, extremum: float, j: int,
                         boundaries=None) -> tuple[float, float]:
    """
    Value and slope mismatch at the exercise boundary, from the continuation side.

    Returns ``(V(b) - P(b), V_x(b) - P_x)`` using the continuation formula
    evaluated exactly on the boundary.
    """
    bs = boundaries or build_boundaries(spec, params)
    m = float(extremum)
    j = check_regime(j)
    if j == 0:
        b = _boundary_at(bs.j0, m)
        c = coefficients_j0(spec, params, b, m)
        v, d = _power_sum(c, b), _power_sum(c, b, 1)
    else:
        sol = _j1_solution(spec, params, m)
        if not sol.interior:
            raise DomainError(f"no interior boundary at extremum {m}")
        b = sol.boundary
        v = sol.ratio * shape_j1(params, spec.side, b, m)
        d = sol.ratio * shape_j1(params, spec.side, b, m, 1)
    return float(v - payoff(spec, b, m)), float(d - payoff_dx(spec))


def stopping_drift(spec: OptionSpec, params: ModelParams, x: float, m: float, j: int) -> float:
    """``H`` at a point, negative wherever stopping is optimal."""
    return float(h_function(spec, params, x, m, check_regime(j)))


# ------------------------------------------------------------------ surfaces

def wedge_grid(spec: OptionSpec, extrema, n_x: int = 64, depth: float = 4.0) -> list[tuple[float, float]]:
    """
    State grid inside the wedge: for each extremum ``m``, ``n_x`` prices
    log-spaced between ``m e**-depth`` and ``m`` (put) or ``m`` and ``m e**depth`` (call).
    """
    pts = []
    put = spec.side is Side.PUT
    for m in np.asarray(extrema, dtype=float):
        xs = m * np.exp(np.linspace(-depth, 0.0, n_x)) if put else m * np.exp(np.linspace(0.0, depth, n_x))
        pts.extend((float(x), float(m)) for x in xs)
    return pts


def value_surface(spec: OptionSpec, params: ModelParams, j: int, points, boundaries=None,
                  which: str = "insider") -> list[dict]:
    """Rows ``{x, extremum, j, value, region}`` for plotting."""
    bs = boundaries or build_boundaries(spec, params)
    rows = []
    for x, m in points:
        if which == "appendix":
            r = value_appendix(spec, params, StatePoint(x, m), bs)
        else:
            r = value(spec, params, StatePoint(x, m), j, bs)
        rows.append({"x": x, "extremum": m, "j": j, "value": r.value, "region": r.region.value})
    return rows


def surface_to_csv(rows: list[dict], path=None) -> str:
    lines = ["x,extremum,j,value,region"]
    for r in rows:
        lines.append(f"{r['x']:.12g},{r['extremum']:.12g},{r['j']},{r['value']:.12g},{r['region']}")
    text = "\r\n".join(lines) + "\r\n"
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def surface_to_json(rows: list[dict], spec: OptionSpec, params: ModelParams, path=None,
                    meta: dict | None = None) -> str:
    doc = {"params": params.as_dict(), "spec": spec.as_dict(), "rows": rows, "metadata": meta or {}}
    text = dumps17(doc)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
