"""Market parameters, contracts, payoffs and the regime-dependent drift.

The asset follows a geometric Brownian motion with drift ``r - delta`` and
volatility ``sigma`` under the pricing measure.  The put side tracks the
running maximum ``S`` and the time ``theta`` at which the global maximum is
attained, which is finite when ``alpha < 0``.  The call side tracks the
running minimum ``Q`` and the time ``eta`` of the global minimum, finite when
``alpha > 0``.  Conventions used throughout the package:

* ``m`` (or ``extremum``) denotes ``s`` on the put side and ``q`` on the
  call side;
* ``z = (m / x) ** alpha`` is the conditional probability that the extremum
  time still lies in the future;
* ``j = 0`` before the extremum time and ``j = 1`` after it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DomainError, ParameterError, SingularityError

ArrayLike = Union[float, np.ndarray]


class Side(str, enum.Enum):
    """Which running extremum the contract depends on."""

    PUT = "put"
    CALL = "call"

    @classmethod
    def parse(cls, value: "Side | str") -> "Side":
        if isinstance(value, Side):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {"put": cls.PUT, "put_side": cls.PUT, "max": cls.PUT,
                   "call": cls.CALL, "call_side": cls.CALL, "min": cls.CALL}
        try:
            return aliases[key]
        except KeyError:
            raise ParameterError(f"unknown side {value!r}") from None

    @property
    def sign(self) -> int:
        """+1 on the put side, -1 on the call side."""
        return 1 if self is Side.PUT else -1


class Family(enum.IntEnum):
    """Contract family: standard, floating-strike lookback, fixed-strike lookback."""

    STANDARD = 1
    FLOATING = 2
    FIXED = 3

    @classmethod
    def parse(cls, value: "Family | int | str") -> "Family":
        if isinstance(value, Family):
            return value
        names = {"standard": 1, "floating": 2, "floating_lookback": 2,
                 "fixed": 3, "fixed_lookback": 3}
        if isinstance(value, str) and value.lower() in names:
            return cls(names[value.lower()])
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ParameterError(f"unknown family {value!r}") from None


def check_regime(j: int) -> int:
    """Validate a regime flag and return it as an ``int``."""
    if j not in (0, 1):
        raise ParameterError(f"regime flag must be 0 or 1, got {j!r}")
    return int(j)


@dataclass(frozen=True)
class ModelParams:
    """
    Black-Scholes market with dividend yield.

    Parameters
    ----------
    r : float
        Riskless rate per year.
    delta : float
        Dividend rate per year.
    sigma : float
        Volatility per square-root year.

    Attributes
    ----------
    alpha : float
        ``2 (r - delta) / sigma**2 - 1``.  Negative values make the time of
        the global maximum finite (put side), positive values the time of the
        global minimum (call side).
    delta_prime : float
        ``2 r - delta - sigma**2``, the dividend rate felt before the extremum
        time.  Must be positive.
    """

    r: float
    delta: float
    sigma: float
    alpha: float = field(init=False)
    delta_prime: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("r", "delta", "sigma"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0.0:
                raise ParameterError(f"{name} must be a positive finite number, got {v!r}")
            object.__setattr__(self, name, v)
        s2 = self.sigma * self.sigma
        alpha = 2.0 * (self.r - self.delta) / s2 - 1.0
        dprime = 2.0 * self.r - self.delta - s2
        if dprime <= 0.0:
            raise ParameterError(
                f"delta_prime = 2r - delta - sigma^2 = {dprime:.6g} must be positive")
        if alpha == 0.0:
            raise ParameterError("alpha = 0: neither extremum time is finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "delta_prime", dprime)

    @property
    def side(self) -> Side:
        """The side whose extremum time is finite for these parameters."""
        return Side.PUT if self.alpha < 0 else Side.CALL

    @property
    def beta(self) -> tuple[float, float]:
        return exponents_beta(self)

    @property
    def gamma(self) -> tuple[float, float]:
        return exponents_gamma(self)

    def as_dict(self) -> dict:
        return {"r": self.r, "delta": self.delta, "sigma": self.sigma,
                "alpha": self.alpha, "delta_prime": self.delta_prime,
                "side": self.side.value}


def build_params(r: float, delta: float, sigma: float) -> ModelParams:
    """Validate and build a :class:`ModelParams` record."""
    return ModelParams(r, delta, sigma)


@dataclass(frozen=True)
class OptionSpec:
    """
    Perpetual contract.

    Parameters
    ----------
    family : Family
        1 standard, 2 floating-strike lookback, 3 fixed-strike lookback.
    side : Side
        ``put`` for payoffs ``L1 - x``, ``s - L2 x``, ``s - L3``;
        ``call`` for ``x - K1``, ``K2 x - q``, ``K3 - q``.
    strike : float
        ``L_i`` or ``K_i``.
    """

    family: Family
    side: Side
    strike: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "side", Side.parse(self.side))
        k = float(self.strike)
        if not math.isfinite(k) or k <= 0.0:
            raise ParameterError(f"strike must be positive, got {self.strike!r}")
        object.__setattr__(self, "strike", k)

    def as_dict(self) -> dict:
        return {"family": int(self.family), "side": self.side.value, "strike": self.strike}


@dataclass(frozen=True)
class StatePoint:
    """Asset price ``x`` and running extremum (``s`` on the put side, ``q`` on the call side)."""

    x: float
    extremum: float

    def check(self, side: Side) -> "StatePoint":
        side = Side.parse(side)
        if not (self.x > 0 and self.extremum > 0):
            raise DomainError(f"state must be positive, got {self}")
        if side is Side.PUT and self.x > self.extremum:
            raise DomainError(f"put side needs x <= s, got x={self.x}, s={self.extremum}")
        if side is Side.CALL and self.x < self.extremum:
            raise DomainError(f"call side needs q <= x, got x={self.x}, q={self.extremum}")
        return self


def check_side(spec_or_side: "OptionSpec | Side | str", params: ModelParams) -> Side:
    """Raise unless the side is admissible for ``params`` (put needs alpha<0, call alpha>0)."""
    side = spec_or_side.side if isinstance(spec_or_side, OptionSpec) else Side.parse(spec_or_side)
    if side is not params.side:
        raise ParameterError(
            f"{side.value} side requires alpha {'< 0' if side is Side.PUT else '> 0'}, "
            f"got alpha={params.alpha:.6g}")
    return side


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def _unpack(p, m):
    if isinstance(p, StatePoint):
        return p.x, p.extremum
    if m is None:
        raise TypeError("extremum value required")
    return p, m


def payoff(spec: OptionSpec, p: "StatePoint | ArrayLike", m: ArrayLike | None = None) -> ArrayLike:
    """Payoff ``G_i(x, s)`` or ``F_i(x, q)``; may be negative."""
    x, m = _unpack(p, m)
    k = spec.strike
    f = spec.family
    if spec.side is Side.PUT:
        if f is Family.STANDARD:
            return k - x
        if f is Family.FLOATING:
            return m - k * x
        return m - k + 0.0 * x
    if f is Family.STANDARD:
        return x - k
    if f is Family.FLOATING:
        return k * x - m
    return k - m + 0.0 * x


def payoff_dx(spec: OptionSpec, p: "StatePoint | ArrayLike | None" = None,
              m: ArrayLike | None = None) -> float:
    """Derivative of the payoff in ``x`` (a constant for every family)."""
    k = spec.strike
    slopes = {Family.STANDARD: 1.0, Family.FLOATING: k, Family.FIXED: 0.0}
    return -slopes[spec.family] if spec.side is Side.PUT else slopes[spec.family]


def payoff_dm(spec: OptionSpec) -> float:
    """Derivative of the payoff in the extremum."""
    if spec.family is Family.STANDARD:
        return 0.0
    return 1.0 if spec.side is Side.PUT else -1.0


def azema_supermartingale(params: ModelParams, p: "StatePoint | ArrayLike",
                          m: ArrayLike | None = None, side: "Side | str | None" = None) -> ArrayLike:
    """
    Conditional probability that the extremum time is still ahead.

    ``(s/x)**alpha`` on the put side when ``alpha < 0`` and ``(q/x)**alpha``
    on the call side when ``alpha > 0``; 1 when the sign of alpha does not
    match the side (the corresponding extremum time is then infinite).
    """
    x, m = _unpack(p, m)
    side = params.side if side is None else Side.parse(side)
    if side is not params.side:
        return _scalar(np.ones(np.broadcast(x, m).shape))
    return _scalar((m / np.asarray(x, dtype=float)) ** params.alpha)


def drift_adjustment(params: ModelParams, z: ArrayLike, j: int,
                     side: "Side | str | None" = None) -> ArrayLike:
    """
    Shift ``Psi(z, j)`` of the driving Brownian motion in the enlarged filtration.

    ``alpha*sigma*z/(1-z)`` after the extremum time and ``-alpha*sigma`` before
    it.  The asset drift is ``r - delta + sigma*Psi``, see :func:`asset_drift`.
    """
    j = check_regime(j)
    if side is not None and Side.parse(side) is not params.side:
        raise ParameterError("side does not match the sign of alpha")
    a_s = params.alpha * params.sigma
    z = np.asarray(z, dtype=float)
    if j == 0:
        return _scalar(-a_s + 0.0 * z)
    if np.any(z == 1.0):
        raise SingularityError("drift adjustment diverges at z = 1 (x on the diagonal, j = 1)")
    return _scalar(a_s * z / (1.0 - z))


def asset_drift(params: ModelParams, z: ArrayLike, j: int) -> ArrayLike:
    """Drift rate of ``X`` given the regime: ``r - delta + sigma * Psi(z, j)``.

    Equals ``r - delta'`` for ``j = 0``.
    """
    return params.r - params.delta + params.sigma * drift_adjustment(params, z, j)


def h_function(spec: OptionSpec, params: ModelParams, p: "StatePoint | ArrayLike",
               m: ArrayLike | None = None, j: int = 0) -> ArrayLike:
    """
    Rate of change of the discounted payoff, ``(L - r) P`` with the regime drift.

    ``H = dP/dx * mu_j(x, m) * x - r * P``.  Stopping can only be optimal where
    ``H < 0``.
    """
    x, m = _unpack(p, m)
    j = check_regime(j)
    z = azema_supermartingale(params, x, m, spec.side)
    mu = asset_drift(params, z, j)
    return payoff_dx(spec) * mu * x - params.r * payoff(spec, x, m)


def _quadratic_roots(params: ModelParams, drift: float) -> tuple[float, float]:
    # roots of (sigma^2/2) b (b-1) + drift b - r = 0, larger first
    s2 = params.sigma ** 2
    a = 0.5 - drift / s2
    b1 = a + math.sqrt(a * a + 2.0 * params.r / s2)
    b2 = -2.0 * params.r / s2 / b1
    return b1, b2


def exponents_beta(params: ModelParams) -> tuple[float, float]:
    """Roots ``beta2 < 0 < 1 < beta1`` of the characteristic equation with drift ``r - delta'``."""
    return _quadratic_roots(params, params.r - params.delta_prime)


def exponents_gamma(params: ModelParams) -> tuple[float, float]:
    """Roots ``gamma2 < 0 < 1 < gamma1`` of the characteristic equation with drift ``r - delta``."""
    return _quadratic_roots(params, params.r - params.delta)


def exponents(params: ModelParams, family: str = "beta") -> tuple[float, float]:
    """Exponent pair by name: ``"beta"`` (before the extremum time) or ``"gamma"``."""
    if family == "beta":
        return exponents_beta(params)
    if family == "gamma":
        return exponents_gamma(params)
    raise ParameterError(f"exponent family must be 'beta' or 'gamma', got {family!r}")


def characteristic(params: ModelParams, b: ArrayLike, drift: float) -> ArrayLike:
    """Left-hand side of the characteristic quadratic, for residual checks."""
    return 0.5 * params.sigma ** 2 * b * (b - 1.0) + drift * b - params.r


def extremum_time_law(params: ModelParams, x: float, m: ArrayLike) -> ArrayLike:
    """``P(sup X >= m)`` on the put side or ``P(inf X <= m)`` on the call side, started at ``x``."""
    return np.minimum(1.0, (np.asarray(m, dtype=float) / x) ** params.alpha)


REFERENCE_PUT = dict(r=0.08, delta=0.10, sigma=0.20)
REFERENCE_CALL = dict(r=0.10, delta=0.05, sigma=0.30)
