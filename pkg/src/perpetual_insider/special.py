"""Gauss hypergeometric series and the fundamental solutions after the extremum time.

After the extremum time the asset drift is ``r - delta + alpha sigma^2 z/(1-z)``
with ``z = (m/x)**alpha``, so the pricing equation
``(sigma^2/2) x^2 w'' + mu(x) x w' - r w = 0`` has a regular singular point on
the diagonal ``x = m``.  Its fundamental solutions are written as

    W_k(x, m) = x**gamma_{3-k} * (1 - z)**e * 2F1(chi_{k,2}, chi_{k,1}; kappa_k; z)

where the prefactor exponent ``e`` is chosen among the indicial exponents at
``z = 1`` by an explicit residual test (see :func:`fundamental_params`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sps
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, DomainError, SingularityError, StepSizeError
from .model import ModelParams, Side, check_side, exponents_beta, exponents_gamma

MAX_TERMS = 10_000
SERIES_RTOL = 1e-15


def _near_int(v: float, tol: float = 1e-9) -> bool:
    return abs(v - round(v)) <= tol * max(1.0, abs(v))


def _is_nonpositive_int(c: float) -> bool:
    return c <= 0.5 and _near_int(c)


def _series(a: float, b: float, c: float, z: float, max_terms: int = MAX_TERMS):
    """Direct series for 2F1 and its first two z-derivatives, term-wise."""
    t = 1.0          # (a)_n (b)_n / ((c)_n n!)
    f, f1, f2 = 1.0, 0.0, 0.0
    comp = 0.0       # Kahan compensation for f
    for n in range(max_terms):
        t_next = t * (a + n) * (b + n) / ((c + n) * (n + 1))
        # derivative terms: d/dz z^(n+1) = (n+1) z^n, d2/dz2 = (n+1) n z^(n-1)
        zn = z ** n
        f1 += t_next * (n + 1) * zn
        if n >= 1:
            f2 += t_next * (n + 1) * n * z ** (n - 1)
        term = t_next * zn * z
        y = term - comp
        s = f + y
        comp = (s - f) - y
        f = s
        t = t_next
        scale = abs(f) + abs(f1) + abs(f2)
        if t_next == 0.0 or (n > 2 and abs(t_next) * (n + 1) * n * zn <= SERIES_RTOL * scale):
            return f, f1, f2
    raise ConvergenceError(f"2F1({a}, {b}; {c}; {z}) series did not converge in {max_terms} terms")


def hyp2f1(a: float, b: float, c: float, z: float) -> float:
    """
    Gauss hypergeometric function on ``0 <= z < 1``.

    The power series is summed directly for ``z <= 0.5``.  For larger ``z`` the
    linear transformation ``z -> 1 - z`` is used unless ``c - a - b`` is an
    integer, in which case the direct series is summed with up to
    ``MAX_TERMS`` terms.

    Raises
    ------
    DomainError
        ``c`` is a non-positive integer or ``z`` is outside ``[0, 1)``.
    ConvergenceError
        The series did not reach the tolerance.
    """
    return hyp2f1_derivs(a, b, c, z)[0]


def hyp2f1_derivs(a: float, b: float, c: float, z: float) -> tuple[float, float, float]:
    """Return ``(F, dF/dz, d2F/dz2)`` for the Gauss function."""
    if _is_nonpositive_int(c):
        raise DomainError(f"c = {c} is a non-positive integer")
    if not (0.0 <= z < 1.0):
        raise DomainError(f"z = {z} outside [0, 1)")
    if z == 0.0:
        return 1.0, a * b / c, a * (a + 1) * b * (b + 1) / (c * (c + 1))
    if z <= 0.5:
        return _series(a, b, c, z)
    s = c - a - b
    if _near_int(s) or _is_nonpositive_int(c - a) or _is_nonpositive_int(c - b):
        return _series(a, b, c, z)
    # Abramowitz-Stegun 15.3.6 applied to F and to the shifted functions
    f = _transformed(a, b, c, z)
    f1 = a * b / c * _transformed(a + 1, b + 1, c + 1, z)
    f2 = a * (a + 1) * b * (b + 1) / (c * (c + 1)) * _transformed(a + 2, b + 2, c + 2, z)
    return f, f1, f2


def _transformed(a: float, b: float, c: float, z: float) -> float:
    w = 1.0 - z
    s = c - a - b
    g = sps.gamma
    rg = sps.rgamma
    t1 = g(c) * g(s) * rg(c - a) * rg(c - b)
    t2 = g(c) * g(-s) * rg(a) * rg(b)
    out = 0.0
    if t1 != 0.0:
        out += t1 * _series(a, b, 1.0 - s, w)[0]
    if t2 != 0.0:
        out += t2 * w ** s * _series(c - a, c - b, 1.0 + s, w)[0]
    return out


def indicial_exponents(params: ModelParams, m: float = 1.0, eps: tuple = (1e-4, 5e-5, 2.5e-5)):
    """
    Indicial exponents of the post-extremum pricing equation at the diagonal.

    The limits ``p0 = lim (x-m) P(x)`` and ``q0 = lim (x-m)^2 Q(x)`` of the
    normalised coefficients of ``w'' + P w' + Q w = 0`` are estimated from
    three one-sided samples with Richardson extrapolation, and the roots of
    ``rho (rho - 1) + p0 rho + q0 = 0`` are returned (ascending).
    """
    a, sig, r = params.alpha, params.sigma, params.r
    sgn = -1.0 if params.alpha < 0 else 1.0   # wedge lies below m on the put side

    def coeffs(x):
        z = (m / x) ** a
        mu = params.r - params.delta + a * sig ** 2 * z / (1.0 - z)
        P = 2.0 * mu / (sig ** 2 * x)
        Q = -2.0 * r / (sig ** 2 * x ** 2)
        return (x - m) * P, (x - m) ** 2 * Q

    samples = np.array([coeffs(m * (1.0 + sgn * e)) for e in eps])
    h = np.asarray(eps)
    # quadratic extrapolation to h -> 0
    V = np.vander(h, 3)
    p0 = np.linalg.solve(V, samples[:, 0])[-1]
    q0 = np.linalg.solve(V, samples[:, 1])[-1]
    disc = math.sqrt(max((p0 - 1.0) ** 2 - 4.0 * q0, 0.0))
    roots = (((1.0 - p0) - disc) / 2.0, ((1.0 - p0) + disc) / 2.0)
    return tuple(float(np.round(x, 8)) if abs(x - round(x)) < 1e-6 else float(x) for x in roots)


@dataclass(frozen=True)
class FundamentalSolutionParams:
    """
    Data defining the two fundamental solutions after the extremum time.

    Attributes
    ----------
    chi : ndarray, shape (2, 2)
        ``chi[k-1, l-1] = 1 + (gamma_k - beta_l) / alpha``.
    kappa : ndarray, shape (2,)
        ``1 + (2/alpha) (gamma_k - 1/2 + (r-delta)/sigma^2)``.
    exponent : float
        Prefactor exponent ``e`` actually used.
    exponent_printed : float
        The alternative form ``1 - 2/sigma``; kept for the record.
    exponent_check : dict
        Relative ODE residuals of each candidate exponent.
    """

    params: ModelParams
    side: Side
    gamma: tuple[float, float]
    beta: tuple[float, float]
    chi: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    exponent: float
    exponent_printed: float
    indicial: tuple[float, float]
    exponent_check: dict = field(default_factory=dict, repr=False)

    def metadata(self) -> dict:
        return {"prefactor_exponent": self.exponent,
                "prefactor_exponent_printed": self.exponent_printed,
                "indicial_exponents": list(self.indicial),
                "exponent_residuals": {str(k): v for k, v in self.exponent_check.items()}}


def chi_kappa(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    g = exponents_gamma(params)
    b = exponents_beta(params)
    a = params.alpha
    chi = np.array([[1.0 + (g[k] - b[l]) / a for l in range(2)] for k in range(2)])
    kap = np.array([1.0 + (2.0 / a) * (g[k] - 0.5 + (params.r - params.delta) / params.sigma ** 2)
                    for k in range(2)])
    return chi, kap


def _w_eval(params, chi, kap, gam, e, k, x, m, order=2):
    """W_k and its first two x-derivatives for a given prefactor exponent."""
    a = params.alpha
    p = gam[2 - k]            # gamma_{3-k}
    z = (m / x) ** a
    if z == 1.0:
        raise SingularityError("fundamental solution is singular on the diagonal")
    F, F1, F2 = hyp2f1_derivs(chi[k - 1, 1], chi[k - 1, 0], kap[k - 1], z)
    zp = -a * z / x
    zpp = a * (a + 1.0) * z / x ** 2
    A = x ** p
    A1 = p * A / x
    A2 = p * (p - 1.0) * A / x ** 2
    u = 1.0 - z
    B = u ** e
    B1 = -e * u ** (e - 1.0) * zp
    B2 = e * (e - 1.0) * u ** (e - 2.0) * zp ** 2 - e * u ** (e - 1.0) * zpp
    C, C1, C2 = F, F1 * zp, F2 * zp ** 2 + F1 * zpp
    w = A * B * C
    w1 = A1 * B * C + A * B1 * C + A * B * C1
    w2 = (A2 * B * C + A * B2 * C + A * B * C2
          + 2.0 * (A1 * B1 * C + A1 * B * C1 + A * B1 * C1))
    return w, w1, w2


def ode_residual(params: ModelParams, m: float, x, w, w1, w2, j: int = 1):
    """``(sigma^2/2) x^2 w'' + mu_j x w' - r w`` with the regime drift."""
    x = np.asarray(x, dtype=float)
    if j == 1:
        z = (m / x) ** params.alpha
        mu = params.r - params.delta + params.alpha * params.sigma ** 2 * z / (1.0 - z)
    else:
        mu = params.r - params.delta_prime
    return 0.5 * params.sigma ** 2 * x ** 2 * w2 + mu * x * w1 - params.r * w


def _probe_points(side: Side, m: float) -> np.ndarray:
    fr = np.array([0.3, 0.6, 0.9, 0.99])
    return m * fr if side is Side.PUT else m / fr


def fundamental_params(params: ModelParams, side: Side | str | None = None) -> FundamentalSolutionParams:
    """
    Build the fundamental-solution data and select the prefactor exponent.

    Candidates are the printed form ``1 - 2/sigma`` and the two indicial
    exponents at the diagonal.  The first candidate (printed form first)
    whose functions solve the equation to ``1e-8`` relative residual on a
    probe grid is used; if none passes a :class:`ConvergenceError` is raised.
    """
    side = params.side if side is None else Side.parse(side)
    check_side(side, params)
    chi, kap = chi_kappa(params)
    gam = exponents_gamma(params)
    bet = exponents_beta(params)
    printed = 1.0 - 2.0 / params.sigma
    ind = indicial_exponents(params)
    checks = {}
    chosen = None
    for e in (printed,) + tuple(x for x in ind if x != 0.0) + tuple(x for x in ind if x == 0.0):
        worst = 0.0
        for k in (1, 2):
            for x in _probe_points(side, 1.0):
                w, w1, w2 = _w_eval(params, chi, kap, gam, e, k, x, 1.0)
                res = ode_residual(params, 1.0, x, w, w1, w2)
                scale = abs(params.r * w) + abs(0.5 * params.sigma ** 2 * x ** 2 * w2) + 1e-300
                worst = max(worst, abs(res) / scale)
        checks[e] = worst
        if worst < 1e-8 and chosen is None:
            chosen = e
    if chosen is None:
        raise ConvergenceError(f"no prefactor exponent passes the residual test: {checks}")
    return FundamentalSolutionParams(params, side, gam, bet, chi, kap, chosen, printed, ind, checks)


def fundamental_solution(fsp: FundamentalSolutionParams, k: int, x: float, m: float) -> float:
    """``W_k(x, m)`` for ``k`` in {1, 2}; ``x`` strictly inside the wedge."""
    _check_wedge(fsp.side, x, m)
    try:
        return _w_eval(fsp.params, fsp.chi, fsp.kappa, fsp.gamma, fsp.exponent, k, x, m)[0]
    except ConvergenceError:
        return _w_ode(fsp, k, x, m)[0]


def fundamental_solution_dx(fsp: FundamentalSolutionParams, k: int, x: float, m: float) -> float:
    """``dW_k/dx`` by term-wise differentiation of the series."""
    _check_wedge(fsp.side, x, m)
    try:
        return _w_eval(fsp.params, fsp.chi, fsp.kappa, fsp.gamma, fsp.exponent, k, x, m)[1]
    except ConvergenceError:
        return _w_ode(fsp, k, x, m)[1]


def fundamental_solution_dxx(fsp: FundamentalSolutionParams, k: int, x: float, m: float) -> float:
    """``d2W_k/dx2``."""
    _check_wedge(fsp.side, x, m)
    return _w_eval(fsp.params, fsp.chi, fsp.kappa, fsp.gamma, fsp.exponent, k, x, m)[2]


def _check_wedge(side: Side, x: float, m: float) -> None:
    if x == m:
        raise SingularityError("x on the diagonal")
    if x <= 0 or m <= 0 or (side is Side.PUT and x > m) or (side is Side.CALL and x < m):
        raise DomainError(f"(x={x}, m={m}) outside the {side.value} wedge")


def _w_ode(fsp, k, x, m):
    # fallback: integrate from a point where the series is comfortable
    x0 = m * (0.5 if fsp.side is Side.PUT else 2.0)
    w0, w10, _ = _w_eval(fsp.params, fsp.chi, fsp.kappa, fsp.gamma, fsp.exponent, k, x0, m)
    out = ode_integrate_w(fsp.params, fsp.side, m, np.array([x0, x]), (w0, w10))
    return out[1, 1], out[2, 1]


def ode_integrate_w(params: ModelParams, side: Side | str, extremum: float, x_grid,
                    init: tuple[float, float], j: int = 1, rtol: float = 1e-12,
                    atol: float = 1e-14, min_step: float = 1e-14) -> np.ndarray:
    """
    Integrate the pricing equation along ``x_grid`` from ``init`` at ``x_grid[0]``.

    Uses ``u = log x`` as the independent variable and an 8th-order
    Dormand-Prince scheme.  Returns an array ``(x, w, w')`` of shape ``(3, n)``.

    Raises
    ------
    StepSizeError
        The integrator could not proceed, typically because the grid comes
        too close to the diagonal where the drift diverges.
    """
    side = Side.parse(side)
    xs = np.asarray(x_grid, dtype=float)
    if np.any(xs <= 0):
        raise DomainError("grid must be positive")
    if j == 1:
        for x in xs:
            _check_wedge(side, x, extremum)
    s2 = params.sigma ** 2
    a = params.alpha

    def mu(x):
        if j == 0:
            return params.r - params.delta_prime
        z = (extremum / x) ** a
        return params.r - params.delta + a * s2 * z / (1.0 - z)

    # state (w, x w'): d/du w = x w', d/du (x w') = x w' + x^2 w''
    def rhs(u, y):
        x = math.exp(u)
        w, v = y
        x2w2 = (params.r * w - mu(x) * v) / (0.5 * s2)
        return [v, v + x2w2]

    u = np.log(xs)
    y0 = [init[0], xs[0] * init[1]]
    if len(u) == 1:
        return np.array([xs, [init[0]], [init[1]]])
    sol = solve_ivp(rhs, (u[0], u[-1]), y0, method="DOP853", t_eval=u,
                    rtol=rtol, atol=atol)
    if sol.status != 0 or sol.y.shape[1] != len(u):
        raise StepSizeError(f"ODE integration failed: {sol.message}")
    return np.array([xs, sol.y[0], sol.y[1] / xs])
