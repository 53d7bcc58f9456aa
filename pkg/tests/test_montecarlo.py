import math

import numpy as np
import pytest
from scipy.stats import norm

from perpetual_insider import montecarlo as mc
from perpetual_insider import rng
from perpetual_insider.errors import ConfigError
from perpetual_insider.model import OptionSpec, StatePoint
from perpetual_insider.valuation import value

from conftest import boundary_set


def closed_form(family, side, x, m, j=0):
    bs = boundary_set(family, side)
    return value(bs.spec, bs.params, StatePoint(x, m), j, bs).value


# ------------------------------------------------------------ generator

def test_uniforms_open_interval_and_reproducible():
    u = rng.uniforms(7, 3, 100_000)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 5e-3
    np.testing.assert_array_equal(u, rng.uniforms(7, 3, 100_000))
    assert not np.array_equal(u[:10], rng.uniforms(8, 3, 10))
    assert not np.array_equal(u[:10], rng.uniforms(7, 4, 10))


def test_normals_moments():
    z = np.concatenate([rng.normals(11, p, 2_000) for p in range(50)])
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.02
    assert abs(np.mean(z ** 4) - 3.0) < 0.1


def test_draws_depend_only_on_counter():
    # a prefix of a longer stream equals the shorter stream
    np.testing.assert_array_equal(rng.normals(5, 9, 7), rng.normals(5, 9, 20)[:7])


# ------------------------------------------------------------ reference paths

@pytest.fixture(scope="module")
def put_paths(put_params):
    cfg = mc.SimConfig(horizon=1.0, dt=1e-3, n_paths=4000, seed=3)
    return mc.simulate_reference(put_params, 1.0, 1.0, cfg)


def test_discounted_price_is_martingale(put_paths, put_params):
    p = put_params
    xt = put_paths.x[:, -1] * math.exp(-(p.r - p.delta) * put_paths.times[-1])
    se = xt.std(ddof=1) / math.sqrt(xt.size)
    assert abs(xt.mean() - 1.0) < 4 * se


def test_running_maximum_law(put_paths, put_params):
    p, T = put_params, put_paths.times[-1]
    mu = p.r - p.delta - 0.5 * p.sigma ** 2
    level = 0.15
    # discrete monitoring shifts the barrier by 0.5826 sigma sqrt(dt)
    a = level + 0.5826 * p.sigma * math.sqrt(put_paths.cfg.dt)
    sd = p.sigma * math.sqrt(T)
    prob = norm.cdf((-a + mu * T) / sd) + math.exp(2 * mu * a / p.sigma ** 2) * norm.cdf((-a - mu * T) / sd)
    hit = (np.log(put_paths.extremum[:, -1]) >= level).mean()
    assert abs(hit - prob) < 4 * math.sqrt(prob * (1 - prob) / put_paths.x.shape[0])


def test_extremum_bookkeeping(put_paths):
    np.testing.assert_array_equal(put_paths.extremum, put_paths.recompute_extremum())
    rows = np.arange(put_paths.x.shape[0])
    reached = put_paths.theta_index > 0
    np.testing.assert_array_equal(put_paths.x[rows, put_paths.theta_index][reached],
                                  put_paths.extremum[reached, -1])


def test_reference_paths_deterministic(put_params, put_paths):
    again = mc.simulate_reference(put_params, 1.0, 1.0, put_paths.cfg)
    assert again.digest() == put_paths.digest()
    other = mc.simulate_reference(put_params, 1.0, 1.0,
                                  mc.SimConfig(horizon=1.0, dt=1e-3, n_paths=4000, seed=4))
    assert other.digest() != put_paths.digest()


def test_stored_path_rule_roughly_agrees(put_params):
    bs = boundary_set(2, "put")
    cfg = mc.SimConfig(horizon=20.0, dt=5e-3, n_paths=3000, seed=9)
    paths = mc.simulate_reference(put_params, 1.0, 1.0, cfg)
    est = mc.evaluate_insider_rule(paths, bs.spec, bs.j0, bs.j1, put_params)
    # discrete monitoring and the short horizon both bias downward
    assert est.mean < closed_form(2, "put", 1.0, 1.0) + 3 * est.stderr
    assert est.mean > 0.85 * closed_form(2, "put", 1.0, 1.0)


# ------------------------------------------------------------ regime-0 oracle

@pytest.mark.parametrize("family,side,m", [(1, "put", 1.0), (2, "call", 1.0), (3, "put", 1.2)])
def test_j0_agreement_small_sample(family, side, m):
    bs = boundary_set(family, side)
    est = mc.estimate_value(bs.spec, bs.params, m, m, 0, mc.SimConfig(n_paths=20_000, seed=5))
    assert abs(est.z_score(closed_form(family, side, m, m))) < 4
    assert est.bias_note < est.stderr


def test_immediate_stop_is_exact(put_params):
    bs = boundary_set(1, "put")
    est = mc.estimate_value(bs.spec, put_params, 0.3, 1.0, 0, mc.SimConfig(n_paths=1000, seed=1))
    assert est.mean == pytest.approx(0.7, abs=1e-15) and est.stderr == 0.0


def test_antithetic_reduces_variance(put_params):
    bs = boundary_set(1, "put")
    plain = mc.estimate_value(bs.spec, put_params, 1.0, 1.0, 0, mc.SimConfig(n_paths=20_000, seed=2))
    anti = mc.estimate_value(bs.spec, put_params, 1.0, 1.0, 0,
                             mc.SimConfig(n_paths=20_000, seed=2, antithetic=True))
    assert anti.stderr < plain.stderr


def test_short_horizon_biases_down(call_params):
    bs = boundary_set(2, "call")
    short = mc.estimate_value(bs.spec, call_params, 1.0, 1.0, 0,
                              mc.SimConfig(horizon=2.0, n_paths=20_000, seed=4))
    long = mc.estimate_value(bs.spec, call_params, 1.0, 1.0, 0,
                             mc.SimConfig(horizon=50.0, n_paths=20_000, seed=4))
    assert short.mean < long.mean
    assert short.bias_note > long.bias_note


def test_perturbed_rule_not_better(put_params):
    bs = boundary_set(1, "put")
    cfg = mc.SimConfig(n_paths=20_000, seed=6)
    base = mc.estimate_value(bs.spec, put_params, 1.0, 1.0, 0, cfg, bs)
    for f in (0.9, 1.1):
        pert = mc.estimate_value(bs.spec, put_params, 1.0, 1.0, 0, cfg, bs, perturb=f)
        assert pert.mean <= base.mean + 2 * base.stderr


def test_estimates_reproducible(call_params):
    bs = boundary_set(3, "call")
    cfg = mc.SimConfig(n_paths=5_000, seed=12)
    a = mc.estimate_value(bs.spec, call_params, 0.8, 0.8, 0, cfg, bs)
    b = mc.estimate_value(bs.spec, call_params, 0.8, 0.8, 0, cfg, bs)
    assert a.mean == b.mean and a.stderr == b.stderr


# ------------------------------------------------------------ regime-1 oracle

def test_j1_agreement_and_trend(put_params):
    bs = boundary_set(2, "put")
    x0, m = 0.9, 1.3
    run = mc.simulate_conditioned_j1(bs.spec, put_params, x0, m, mc.SimConfig(n_paths=5_000, seed=2),
                                     dts=[1e-2, 5e-3])
    cf = closed_form(2, "put", x0, m, 1)
    assert abs(run.estimates[-1].z_score(cf)) < 4
    trend = mc.refinement_trend(run, cf)
    assert len(trend["steps"]) == 1
    assert trend["steps"][0]["from_dt"] == 1e-2 and trend["steps"][0]["to_dt"] == 5e-3


def test_j1_fixed_strike_is_degenerate(put_params):
    bs = boundary_set(3, "put")
    est = mc.estimate_value(bs.spec, put_params, 0.5, 1.4, 1, mc.SimConfig(n_paths=1000))
    assert est.mean == pytest.approx(0.4) and est.stderr == 0.0
    with pytest.raises(ConfigError):
        mc.simulate_conditioned_j1(bs.spec, put_params, 0.5, 1.4, mc.SimConfig(n_paths=1000))


def test_j1_input_checks(put_params):
    spec = OptionSpec(1, "put", 1.0)
    cfg = mc.SimConfig(n_paths=1000)
    with pytest.raises(ConfigError):
        mc.simulate_conditioned_j1(spec, put_params, 1.0, 1.0, cfg)
    with pytest.raises(ConfigError):
        mc.simulate_conditioned_j1(spec, put_params, 0.5, 1.0, cfg, dts=[1e-2, 3e-3])


@pytest.mark.parametrize("kwargs", [dict(horizon=0.0), dict(dt=2.0, horizon=1.0), dict(n_paths=10),
                                    dict(n_paths=1001, antithetic=True), dict(seed=-1)])
def test_sim_config_validation(kwargs):
    with pytest.raises(ConfigError):
        mc.SimConfig(**kwargs)


def test_report_json_stable(put_params):
    bs = boundary_set(1, "put")
    cfg = mc.SimConfig(n_paths=2000, seed=1)
    est = mc.estimate_value(bs.spec, put_params, 1.0, 1.0, 0, cfg, bs)
    rep = mc.verification_report(bs.spec, put_params, 1.0, 1.0, 0, cfg, 0.1, est)
    assert mc.report_json(rep) == mc.report_json(dict(rep))
    assert rep["z_score"] == pytest.approx((est.mean - 0.1) / est.stderr)
