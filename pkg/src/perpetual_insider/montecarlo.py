"""Monte Carlo verification of the value functions.

Two families of simulators live here.

*Reference simulation* (:func:`simulate_reference`,
:func:`evaluate_insider_rule`) samples the asset on a fixed grid with exact
lognormal increments, reads the extremum time off each path as the last
grid index attaining the global extremum and applies the two-regime rule.
It stores whole paths and is meant for small diagnostic runs.

*Path decomposition* (:func:`estimate_value` with ``j=0``) streams paths
through a numba kernel.  In log coordinates mirrored so that the relevant
extremum is a maximum, the asset is a Brownian motion with negative drift
``-c``.  Its overall maximum sits an ``Exp(|alpha|)`` distance above the
current one (given that it lies ahead), the path up to it is a Brownian
motion with drift ``+c`` stopped on reaching it, and the distance below it
afterwards is the norm of a three-dimensional Brownian motion with drift
``c`` along one axis, started at the origin.  Steps adapt to the distance from the
nearest barrier and barrier crossings between steps are detected with
Brownian-bridge probabilities, so boundaries are monitored continuously.

*Conditioned Euler* (:func:`simulate_conditioned_j1`) integrates the
post-extremum SDE with its singular drift on nested grids driven by the
same Brownian increments.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import boundaries as bd
from . import valuation as val
from .boundaries import FIXED_CALL_FLOOR, BoundaryCurve, dumps17
from .errors import ConfigError, CoverageError, StepError
from .model import (Family, ModelParams, OptionSpec, Side, StatePoint, check_regime,
                    check_side, payoff)
from .rng import normal_pair, path_key, uniform

NEVER = -700.0          # mirrored log boundary meaning "never stop"
PSI_CAP = 1e3           # cap on |Psi| in units of sigma
CAP_BUDGET = 1e-3       # tolerated fraction of capped steps


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation settings.

    Parameters
    ----------
    horizon : float
        Truncation horizon in years; payoffs after it count as zero.
    dt : float
        Grid step in years (the smallest step of the adaptive kernel).
    n_paths : int
        Number of paths (antithetic pairs count as two paths).
    seed : int
        64-bit seed of the counter-based generator.
    antithetic : bool
        Pair each path with its reflection; pairs are averaged before
        the standard error is computed.
    step_factor, dt_max : float
        Adaptive stepping: ``dt_k = clip(step_factor d**2 / sigma**2, dt, dt_max)``
        with ``d`` the log-distance to the nearest barrier.
    """

    horizon: float = 50.0
    dt: float = 1e-3
    n_paths: int = 200_000
    seed: int = 0
    antithetic: bool = False
    step_factor: float = 0.05
    dt_max: float = 0.5

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if not (0 < self.dt < self.horizon):
            raise ConfigError(f"need 0 < dt < horizon, got dt={self.dt}")
        if int(self.n_paths) < 100:
            raise ConfigError(f"n_paths must be at least 100, got {self.n_paths}")
        if self.antithetic and int(self.n_paths) % 2:
            raise ConfigError("antithetic sampling needs an even number of paths")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError("seed must fit in 64 bits")
        if not (self.step_factor > 0 and self.dt_max >= self.dt):
            raise ConfigError("invalid adaptive step settings")

    def truncation_factor(self, r: float) -> float:
        return math.exp(-r * self.horizon)

    def as_dict(self) -> dict:
        return {"horizon": self.horizon, "dt": self.dt, "n_paths": int(self.n_paths),
                "seed": int(self.seed), "antithetic": self.antithetic,
                "step_factor": self.step_factor, "dt_max": self.dt_max}


@dataclass
class PathEnsemble:
    """Stored paths on a fixed grid (diagnostic mode)."""

    times: np.ndarray
    x: np.ndarray               # (n_paths, n_steps + 1)
    extremum: np.ndarray        # running extremum, seeded with the initial value
    theta_index: np.ndarray     # last index attaining the overall extremum
    side: Side
    params: ModelParams
    cfg: SimConfig
    regime: int = 0
    extremum0: float = math.nan
    stats: dict = field(default_factory=dict)

    def recompute_extremum(self) -> np.ndarray:
        acc = np.maximum.accumulate if self.side is Side.PUT else np.minimum.accumulate
        seed = np.full((self.x.shape[0], 1), self.extremum0)
        return acc(np.concatenate([seed, self.x], axis=1), axis=1)[:, 1:]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.times, self.x, self.extremum, self.theta_index):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean of discounted payoffs with its standard error."""

    mean: float
    stderr: float
    n: int
    bias_note: float
    regime: int = 0
    extra: dict = field(default_factory=dict)

    def z_score(self, reference: float) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.mean == reference else math.copysign(math.inf, self.mean - reference)
        return (self.mean - reference) / self.stderr


def _summarise(samples: np.ndarray, pairs: bool = False) -> tuple[float, float, int]:
    s = np.asarray(samples, dtype=float)
    if pairs:
        s = 0.5 * (s[0::2] + s[1::2])
    n = s.size
    mean = math.fsum(s) / n
    var = math.fsum((s - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return mean, math.sqrt(var / n), n


# ------------------------------------------------------------ reference paths

@njit(cache=True)
def _reference_kernel(lx0, drift, vol, n_steps, seed, path0, anti, out):
    for p in range(out.shape[0]):
        key = path_key(seed, path0 + p)
        y = lx0
        out[p, 0] = y
        for k in range(0, n_steps, 2):
            z1, z2 = normal_pair(key, k)
            if anti:
                z1, z2 = -z1, -z2
            y += drift + vol * z1
            out[p, k + 1] = y
            if k + 2 <= n_steps:
                y += drift + vol * z2
                out[p, k + 2] = y


def simulate_reference(params: ModelParams, x0: float, extremum0: float, cfg: SimConfig,
                       side: Side | str | None = None) -> PathEnsemble:
    """
    Simulate the asset under the pricing measure on a fixed grid.

    Log increments are exact; the running extremum includes ``extremum0``
    and the extremum time index is the last grid index attaining the
    overall extremum (0 if the path never reaches ``extremum0``).
    """
    side = params.side if side is None else Side.parse(side)
    check_side(side, params)
    StatePoint(x0, extremum0).check(side)
    n_steps = int(round(cfg.horizon / cfg.dt))
    if n_steps * cfg.n_paths > 5e8:
        raise ConfigError("reference simulation stores whole paths; reduce n_paths or refine dt")
    nu = params.r - params.delta - 0.5 * params.sigma ** 2
    logx = np.empty((int(cfg.n_paths), n_steps + 1))
    if cfg.antithetic:
        half = int(cfg.n_paths) // 2
        a = np.empty((half, n_steps + 1))
        b = np.empty((half, n_steps + 1))
        _reference_kernel(math.log(x0), nu * cfg.dt, params.sigma * math.sqrt(cfg.dt), n_steps,
                          np.uint64(cfg.seed), np.uint64(0), False, a)
        _reference_kernel(math.log(x0), nu * cfg.dt, params.sigma * math.sqrt(cfg.dt), n_steps,
                          np.uint64(cfg.seed), np.uint64(0), True, b)
        logx[0::2], logx[1::2] = a, b
    else:
        _reference_kernel(math.log(x0), nu * cfg.dt, params.sigma * math.sqrt(cfg.dt), n_steps,
                          np.uint64(cfg.seed), np.uint64(0), False, logx)
    x = np.exp(logx)
    acc = np.maximum.accumulate if side is Side.PUT else np.minimum.accumulate
    ext = acc(np.concatenate([np.full((x.shape[0], 1), extremum0), x[:, 1:]], axis=1), axis=1)
    ext[:, 0] = extremum0
    final = ext[:, -1]
    hit = x == final[:, None]
    reached = hit.any(axis=1)
    last = x.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
    theta = np.where(reached, last, 0)
    times = np.arange(n_steps + 1) * cfg.dt
    return PathEnsemble(times, x, ext, theta.astype(np.int64), side, params, cfg,
                        extremum0=extremum0)


def evaluate_insider_rule(ensemble: PathEnsemble, spec: OptionSpec, boundary_j0: BoundaryCurve,
                          boundary_j1: BoundaryCurve, params: ModelParams,
                          perturb: float = 1.0) -> MCEstimate:
    """
    Apply the two-regime exercise rule along stored paths.

    Before the extremum time index the ``j = 0`` boundary at the running
    extremum applies, from it on the ``j = 1`` boundary at the (frozen)
    extremum.  ``perturb`` scales the ``j = 0`` boundary.
    """
    x, ext, th = ensemble.x, ensemble.extremum, ensemble.theta_index
    put = spec.side is Side.PUT
    n, m = x.shape
    lo, hi = boundary_j0.coverage()
    used = ext[np.arange(m)[None, :] < th[:, None]]
    if used.size and (used.min() < lo * (1 - 1e-12) or used.max() > hi * (1 + 1e-12)):
        raise CoverageError(f"extremum range [{used.min()}, {used.max()}] outside the j=0 boundary")
    uniq, inv = np.unique(ext, return_inverse=True)
    inv = inv.reshape(ext.shape)
    b0 = np.asarray(boundary_j0(uniq), dtype=float)[inv] * perturb
    final = ext[np.arange(n), -1]
    b1_vals = {}
    for v in np.unique(final):
        b1_vals[v] = float(boundary_j1(np.asarray([v]))[0])
    b1 = np.array([b1_vals[v] for v in final])
    regime1 = np.arange(m)[None, :] >= th[:, None]
    bnd = np.where(regime1, b1[:, None], b0)
    stop = (x <= bnd) if put else (x >= bnd)
    if spec.family is Family.FIXED:
        # after the extremum time, stop where the payoff is positive and never otherwise
        pos = payoff(spec, x, ext) > 0
        stop = np.where(regime1, pos, stop)
    any_stop = stop.any(axis=1)
    idx = np.argmax(stop, axis=1)
    rows = np.arange(n)
    pay = np.where(any_stop, payoff(spec, x[rows, idx], ext[rows, idx]), 0.0)
    disc = np.exp(-params.r * ensemble.times[idx])
    samples = np.where(any_stop, disc * pay, 0.0)
    mean, se, npaths = _summarise(samples, ensemble.cfg.antithetic)
    bound = _payoff_bound(spec, ensemble)
    return MCEstimate(mean, se, npaths, ensemble.cfg.truncation_factor(params.r) * bound, 0,
                      {"stopped_fraction": float(any_stop.mean()), "method": "reference grid"})


def _payoff_bound(spec, ensemble):
    pay = payoff(spec, ensemble.x, ensemble.extremum)
    return float(np.max(np.abs(pay)))


# ----------------------------------------------------------- numba utilities

@njit(cache=True)
def _payoff_nb(fam, put, k, x, m):
    if put:
        if fam == 1:
            return k - x
        if fam == 2:
            return m - k * x
        return m - k
    if fam == 1:
        return x - k
    if fam == 2:
        return k * x - m
    return k - m


@njit(cache=True)
def _interp(l, l0, h, vals):
    """Linear interpolation on a uniform table; returns (value, out_of_range)."""
    t = (l - l0) / h
    n = vals.shape[0]
    if t <= 0.0:
        return vals[0], t < -1e-9
    if t >= n - 1:
        return vals[n - 1], t > n - 1 + 1e-9
    i = int(t)
    w = t - i
    a, b = vals[i], vals[i + 1]
    if a <= NEVER or b <= NEVER:
        return min(a, b), False
    return a + w * (b - a), False


@njit(cache=True)
def _adapt(d, sig2, fac, dt_min, dt_max, left):
    dt = fac * d * d / sig2
    if dt < dt_min:
        dt = dt_min
    if dt > dt_max:
        dt = dt_max
    if dt > left:
        dt = left
    return dt


# ------------------------------------------------- path decomposition kernel

@njit(cache=True)
def _decomposition_kernel(y0, l0, c, sigma, r, abs_alpha, horizon, dt_min, dt_max, fac,
                          pre_h, pre_vals, post_h, post_vals, fam, put, strike,
                          seed, anti_pairs, out, diag):
    """
    Discounted payoff per path for the regime-0 problem.

    Coordinates are mirrored logs: ``y = +-log x`` so that the extremum is a
    running maximum ``l`` and stopping means ``y <= boundary``.  Tables give
    the mirrored log boundary on uniform grids starting at ``l0``.
    """
    sig2 = sigma * sigma
    sgn = 1.0 if put else -1.0
    n = out.shape[0]
    for p in range(n):
        if anti_pairs:
            key = path_key(seed, p // 2)
            flip = -1.0 if p % 2 == 1 else 1.0
        else:
            key = path_key(seed, p)
            flip = 1.0
        ctr = 0
        u = uniform(key, ctr)
        ctr += 1
        if flip < 0:
            u = 1.0 - u
        ell = l0 - math.log(u) / abs_alpha      # overall maximum
        t = 0.0
        y = y0
        smax = l0
        done = False
        value = 0.0
        b, miss = _interp(smax, l0, pre_h, pre_vals)
        if y <= b:
            out[p] = _payoff_nb(fam, put, strike, math.exp(sgn * y), math.exp(sgn * smax))
            continue
        reached = False
        while t < horizon:
            b, miss = _interp(smax, l0, pre_h, pre_vals)
            if miss:
                diag[0] += 1
            d = min(y - b, ell - y)
            dt = _adapt(d, sig2, fac, dt_min, dt_max, horizon - t)
            z1, z2 = normal_pair(key, ctr)
            ctr += 2
            u1 = uniform(key, ctr)
            u2 = uniform(key, ctr + 1)
            ctr += 2
            if flip < 0:
                z1 = -z1
                u1 = 1.0 - u1
                u2 = 1.0 - u2
            yn = y + c * dt + sigma * math.sqrt(dt) * z1
            diag[1] += 1
            # maximum of the bridge between y and yn
            mx = 0.5 * (y + yn + math.sqrt((yn - y) ** 2 - 2.0 * sig2 * dt * math.log(u1)))
            t += dt
            if mx >= ell:
                reached = True
                break
            # crossing of the exercise boundary inside the step
            if yn <= b:
                hit = True
            else:
                hit = u2 < math.exp(-2.0 * (y - b) * (yn - b) / (sig2 * dt))
            if hit:
                value = math.exp(-r * t) * _payoff_nb(fam, put, strike, math.exp(sgn * b),
                                                      math.exp(sgn * smax))
                done = True
                break
            if mx > smax:
                smax = mx
            y = yn
        if done or not reached:
            if not done and not reached:
                diag[2] += 1
            out[p] = value
            continue
        # after the overall maximum: frozen extremum, distance is a drifted 3-d norm
        m_val = math.exp(sgn * ell)
        if fam == 3:
            pay = _payoff_nb(fam, put, strike, m_val, m_val)
            out[p] = math.exp(-r * t) * pay if pay > 0.0 else 0.0
            continue
        b1, miss = _interp(ell, l0, post_h, post_vals)
        if miss:
            diag[0] += 1
        level = ell - b1
        if level <= 1e-12:
            out[p] = math.exp(-r * t) * _payoff_nb(fam, put, strike, m_val, m_val)
            continue
        v1 = 0.0
        v2 = 0.0
        v3 = 0.0
        dist = 0.0
        while t < horizon:
            dt = _adapt(level - dist, sig2, fac, dt_min, dt_max, horizon - t)
            z1, z2 = normal_pair(key, ctr)
            z3, z4 = normal_pair(key, ctr + 2)
            u1 = uniform(key, ctr + 4)
            ctr += 5
            if flip < 0:
                z1, z2, z3 = -z1, -z2, -z3
                u1 = 1.0 - u1
            sq = sigma * math.sqrt(dt)
            v1 += c * dt + sq * z1
            v2 += sq * z2
            v3 += sq * z3
            diag[1] += 1
            dn = math.sqrt(v1 * v1 + v2 * v2 + v3 * v3)
            t += dt
            if dn >= level:
                hit = True
            else:
                hit = u1 < math.exp(-2.0 * (level - dist) * (level - dn) / (sig2 * dt))
            if hit:
                value = math.exp(-r * t) * _payoff_nb(fam, put, strike, math.exp(sgn * b1), m_val)
                break
            dist = dn
        else:
            diag[2] += 1
        out[p] = value


# ------------------------------------------------------ conditioned Euler kernel

@njit(cache=True)
def _euler_j1_kernel(y0, ell, put, sigma, r, delta, alpha, horizon, dt_fine, factors,
                     bnd, fam, strike, cap, seed, anti_pairs, out, counts):
    """
    Euler scheme for ``log X`` after the extremum time at several step sizes.

    ``factors[i]`` fine steps make one step of scheme ``i``; all schemes
    share the fine Brownian increments.  ``counts[i] = (steps, capped,
    reflected, near_diagonal_paths)``.
    """
    sgn = 1.0 if put else -1.0
    nu = r - delta - 0.5 * sigma * sigma
    nl = factors.shape[0]
    n_fine = int(round(horizon / dt_fine))
    ys = np.empty(nl)
    acc = np.empty(nl)
    alive = np.empty(nl, dtype=np.bool_)
    near = np.empty(nl, dtype=np.bool_)
    m_val = math.exp(sgn * ell)
    for p in range(out.shape[0]):
        if anti_pairs:
            key = path_key(seed, p // 2)
            flip = -1.0 if p % 2 == 1 else 1.0
        else:
            key = path_key(seed, p)
            flip = 1.0
        for i in range(nl):
            ys[i] = y0
            acc[i] = 0.0
            alive[i] = True
            near[i] = False
            out[p, i] = 0.0
        n_alive = nl
        k = 0
        while k < n_fine and n_alive > 0:
            z1, z2 = normal_pair(key, k)
            for zz in range(2):
                if k >= n_fine:
                    break
                z = z1 if zz == 0 else z2
                dw = flip * z * math.sqrt(dt_fine)
                k += 1
                for i in range(nl):
                    if not alive[i]:
                        continue
                    acc[i] += dw
                    if k % factors[i] != 0:
                        continue
                    h = factors[i] * dt_fine
                    y = ys[i]
                    # z = (m/x)**alpha in mirrored coordinates
                    zeta = math.exp(-abs(alpha) * (ell - y))
                    psi = alpha * sigma * zeta / (1.0 - zeta) if zeta < 1.0 else -sgn * math.inf
                    if abs(psi) > cap * sigma or not math.isfinite(psi):
                        psi = math.copysign(cap * sigma, psi)
                        counts[i, 1] += 1
                    drift = sgn * (nu + sigma * psi)
                    yn = y + drift * h + sgn * sigma * acc[i]
                    acc[i] = 0.0
                    counts[i, 0] += 1
                    if yn >= ell:
                        yn = 2.0 * ell - yn
                        counts[i, 2] += 1
                    if ell - yn < 1e-4:
                        near[i] = True
                    ys[i] = yn
                    if yn <= bnd:
                        x = math.exp(sgn * yn)
                        out[p, i] = math.exp(-r * k * dt_fine) * _payoff_nb(fam, put, strike, x, m_val)
                        alive[i] = False
                        n_alive -= 1
        for i in range(nl):
            if near[i]:
                counts[i, 3] += 1


# ------------------------------------------------------------- public drivers

def _mirrored_table(values_log, sgn):
    v = sgn * np.asarray(values_log, dtype=float)
    v[~np.isfinite(v)] = NEVER
    return np.maximum(v, NEVER)


def decomposition_tables(spec: OptionSpec, params: ModelParams, extremum0: float, span: float,
                         boundaries: val.BoundarySet, pre_h: float = 2e-3, post_h: float = 1e-2,
                         perturb: float = 1.0):
    """Boundary tables in mirrored log coordinates over ``[l0, l0 + span]``."""
    put = spec.side is Side.PUT
    sgn = 1.0 if put else -1.0
    l0 = sgn * math.log(extremum0)
    lp = l0 + np.arange(int(math.ceil(span / pre_h)) + 1) * pre_h
    mp = np.exp(sgn * lp)
    curve = boundaries.j0
    if spec.family is Family.FIXED:
        lo, hi = curve.coverage()
        live = (mp > spec.strike) if put else (mp < spec.strike)
        b = np.zeros_like(mp) if put else np.full_like(mp, np.inf)
        mm = np.clip(mp[live], lo, hi)
        if np.any(live):
            b[live] = curve(mm)
        if not put:
            # below the constructed range the call boundary hugs the diagonal, b/q - 1 ~ kappa q
            deep = live & (mp < lo)
            kappa = (float(curve(lo)) / lo - 1.0) / lo
            b[deep] = mp[deep] * (1.0 + kappa * mp[deep])
    else:
        b = np.asarray(curve(mp), dtype=float)
    b = b * perturb
    if put:
        b = np.minimum(b, mp)
    else:
        b = np.maximum(b, mp)
    with np.errstate(divide="ignore"):
        pre = _mirrored_table(np.log(b), sgn)
    lq = l0 + np.arange(int(math.ceil(span / post_h)) + 1) * post_h
    mq = np.exp(sgn * lq)
    if spec.family is Family.FIXED:
        post = lq.copy()
    else:
        post = np.array([sgn * math.log(val._j1_solution(spec, params, float(m)).boundary) for m in mq])
    return l0, pre, post


def _span(params: ModelParams, cfg: SimConfig) -> float:
    a = abs(params.alpha)
    c = abs(params.r - params.delta - 0.5 * params.sigma ** 2)
    # overall maximum beyond 25/|alpha|, or a move of 6 sigma over the horizon, is never needed
    return min(25.0 / a, c * cfg.horizon + 6.0 * params.sigma * math.sqrt(cfg.horizon)) + 0.5


def estimate_j0(spec: OptionSpec, params: ModelParams, x0: float, extremum0: float, cfg: SimConfig,
                boundaries: val.BoundarySet | None = None, perturb: float = 1.0,
                return_samples: bool = False):
    """Regime-0 value by path decomposition (conditioned on the extremum time lying ahead)."""
    check_side(spec, params)
    StatePoint(x0, extremum0).check(spec.side)
    put = spec.side is Side.PUT
    sgn = 1.0 if put else -1.0
    span = _span(params, cfg)
    cover = extremum0 * math.exp(sgn * span) * (1.01 if put else 0.99)
    if spec.family is Family.FIXED and not put:
        cover = max(cover, 1.01 * FIXED_CALL_FLOOR * spec.strike)
    if boundaries is None:
        boundaries = val.build_boundaries(spec, params, cover=cover)
    elif spec.family is not Family.FLOATING:
        lo, hi = boundaries.j0.coverage()
        if (put and hi < cover) or (not put and lo > cover):
            boundaries = val.build_boundaries(spec, params, boundaries.grid, boundaries.coupled, cover)
    l0, pre, post = decomposition_tables(spec, params, extremum0, span, boundaries, perturb=perturb)
    c = abs(params.r - params.delta - 0.5 * params.sigma ** 2)
    out = np.empty(int(cfg.n_paths))
    diag = np.zeros(3, dtype=np.int64)
    _decomposition_kernel(sgn * math.log(x0), l0, c, params.sigma, params.r, abs(params.alpha),
                          cfg.horizon, cfg.dt, cfg.dt_max, cfg.step_factor, 2e-3, pre, 1e-2, post,
                          int(spec.family), put, spec.strike, np.uint64(cfg.seed), cfg.antithetic,
                          out, diag)
    if diag[0] > 0:
        raise CoverageError(f"{diag[0]} boundary look-ups beyond the tabulated extremum range")
    mean, se, n = _summarise(out, cfg.antithetic)
    bound = _table_payoff_bound(spec, l0, pre, post, sgn)
    # paths still running at the horizon were paid 0; each could have collected at most ``bound``
    truncated = int(diag[2]) / len(out)
    est = MCEstimate(mean, se, n, truncated * cfg.truncation_factor(params.r) * bound, 0,
                     {"method": "path decomposition", "steps": int(diag[1]),
                      "truncated_fraction": truncated, "perturb": perturb})
    return (est, out) if return_samples else est


def _table_payoff_bound(spec, l0, pre, post, sgn):
    """Largest payoff collectable on the tabulated boundaries (or on the diagonal)."""
    best = 0.0
    for table, h in ((pre, 2e-3), (post, 1e-2)):
        m = np.exp(sgn * (l0 + np.arange(len(table)) * h))
        live = table > NEVER
        x = np.where(live, np.exp(sgn * table), m)
        best = max(best, float(np.max(np.abs(payoff(spec, x, m)))))
    return best


@dataclass
class ConditionedRun:
    """Result of :func:`simulate_conditioned_j1` for each step size."""

    dts: tuple
    estimates: list
    samples: np.ndarray
    counts: np.ndarray
    near_fraction: np.ndarray


def simulate_conditioned_j1(spec: OptionSpec, params: ModelParams, x0: float, extremum_frozen: float,
                            cfg: SimConfig, dts=None, boundary: float | None = None) -> ConditionedRun:
    """
    Euler-Maruyama on ``log X`` with the post-extremum drift.

    The extremum is frozen.  ``dts`` (default ``[cfg.dt]``) must be integer
    multiples of the smallest one; every scheme uses the same Brownian path.
    Stopping is checked on the scheme's own grid and pays the payoff at
    the simulated price.

    Raises
    ------
    StepError
        When more than 0.1% of the steps of a scheme needed the drift cap or
        a reflection at the diagonal.
    """
    check_side(spec, params)
    x0, m = float(x0), float(extremum_frozen)
    StatePoint(x0, m).check(spec.side)
    if x0 == m:
        raise ConfigError("the post-extremum process cannot start on the diagonal")
    put = spec.side is Side.PUT
    sgn = 1.0 if put else -1.0
    dts = sorted([cfg.dt] if dts is None else [float(d) for d in dts], reverse=True)
    fine = dts[-1]
    factors = np.array([int(round(d / fine)) for d in dts], dtype=np.int64)
    if np.any(np.abs(factors * fine - np.array(dts)) > 1e-9 * np.array(dts)):
        raise ConfigError("step sizes must be integer multiples of the smallest")
    if spec.family is Family.FIXED:
        raise ConfigError("the fixed strike has no post-extremum continuation region")
    if boundary is None:
        sol = val._j1_solution(spec, params, m)
        boundary = sol.boundary
    bnd = sgn * math.log(boundary)
    out = np.zeros((int(cfg.n_paths), len(dts)))
    counts = np.zeros((len(dts), 4), dtype=np.int64)
    _euler_j1_kernel(sgn * math.log(x0), sgn * math.log(m), put, params.sigma, params.r,
                     params.delta, params.alpha, cfg.horizon, fine, factors, bnd,
                     int(spec.family), spec.strike, PSI_CAP, np.uint64(cfg.seed), cfg.antithetic,
                     out, counts)
    frac = (counts[:, 1] + counts[:, 2]) / np.maximum(counts[:, 0], 1)
    for d, f in zip(dts, frac):
        if f > CAP_BUDGET:
            raise StepError(f"dt={d}: {f:.2%} of steps capped or reflected; refine the step")
    ests = []
    bound = abs(float(payoff(spec, boundary, m)))
    for i, d in enumerate(dts):
        mean, se, n = _summarise(out[:, i], cfg.antithetic)
        ests.append(MCEstimate(mean, se, n, cfg.truncation_factor(params.r) * bound, 1,
                               {"method": "conditioned euler", "dt": d,
                                "capped": int(counts[i, 1]), "reflected": int(counts[i, 2]),
                                "steps": int(counts[i, 0])}))
    near = counts[:, 3] / out.shape[0]
    return ConditionedRun(tuple(dts), ests, out, counts, near)


def refinement_trend(run: ConditionedRun, closed_form: float, z: float = 3.0) -> dict:
    """
    Check that refining ``dt`` moves the estimate toward ``closed_form``.

    Successive schemes share their Brownian paths, so each change is judged
    against the standard error of the paired difference.  A step counts as
    monotone when it reduces the error or is indistinguishable from zero.
    """
    pairs = run.estimates[0].n != run.samples.shape[0]
    steps = []
    for i in range(1, len(run.dts)):
        d_mean, d_se, _ = _summarise(run.samples[:, i] - run.samples[:, i - 1], pairs)
        err_prev = abs(run.estimates[i - 1].mean - closed_form)
        err_next = abs(run.estimates[i].mean - closed_form)
        flat = abs(d_mean) <= z * d_se
        steps.append({"from_dt": run.dts[i - 1], "to_dt": run.dts[i], "change": d_mean,
                      "change_stderr": d_se, "toward": err_next <= err_prev, "flat": flat})
    return {"steps": steps, "monotone": all(st["toward"] or st["flat"] for st in steps)}


def estimate_value(spec: OptionSpec, params: ModelParams, x0: float, extremum0: float, j: int,
                   cfg: SimConfig, boundaries: val.BoundarySet | None = None,
                   perturb: float = 1.0) -> MCEstimate:
    """Route regime 0 to the path decomposition and regime 1 to the conditioned Euler scheme."""
    j = check_regime(j)
    if j == 0:
        return estimate_j0(spec, params, x0, extremum0, cfg, boundaries, perturb)
    if spec.family is Family.FIXED:
        # after the extremum the fixed strike stops at once or never
        v = val.value(spec, params, StatePoint(x0, extremum0), 1).value
        return MCEstimate(float(v), 0.0, int(cfg.n_paths), 0.0, 1, {"method": "degenerate rule"})
    b = None
    if perturb != 1.0:
        b = val._j1_solution(spec, params, float(extremum0)).boundary * perturb
    run = simulate_conditioned_j1(spec, params, x0, extremum0, cfg, boundary=b)
    return run.estimates[0]


def verification_report(spec: OptionSpec, params: ModelParams, x0: float, extremum0: float, j: int,
                        cfg: SimConfig, closed_form: float, est: MCEstimate) -> dict:
    return {
        "params": params.as_dict(), "spec": spec.as_dict(), "regime": j,
        "x": x0, "extremum": extremum0,
        "closed_form": closed_form, "mc_mean": est.mean, "mc_stderr": est.stderr,
        "z_score": est.z_score(closed_form), "n": est.n, "dt": cfg.dt,
        "horizon": cfg.horizon, "seed": int(cfg.seed), "antithetic": cfg.antithetic,
        "truncation_bound": est.bias_note, "method": est.extra.get("method"),
    }


def report_json(report: dict) -> str:
    return dumps17(report)
