import json
import math

import numpy as np
import pytest

from perpetual_insider import boundaries as bd
from perpetual_insider.errors import CoverageError, ParameterError
from perpetual_insider.model import OptionSpec, exponents

from conftest import boundary_set, params_for

SQ5 = math.sqrt(5.0)


def ext_grid(family, side, n=12):
    if family == 3:
        return np.geomspace(1.01, 20.0, n) if side == "put" else np.geomspace(0.01, 0.99, n)
    return np.geomspace(0.05, 20.0, n)


# ------------------------------------------------------------ closed forms

def test_standard_closed_form_reference_put(put_params):
    spec = OptionSpec(1, "put", 1.0)
    # beta2 = -1 - sqrt5
    assert bd.boundary_standard_j0(spec, put_params) == pytest.approx((1 + SQ5) / (2 + SQ5), rel=1e-14)
    assert bd.boundary_standard_j0(spec, put_params) == pytest.approx(0.76393, abs=1e-5)
    # uninformed holder: gamma2 = 1 - sqrt5
    assert bd.appendix_boundaries(spec, put_params) == pytest.approx((SQ5 - 1) / SQ5, rel=1e-14)
    assert bd.appendix_boundaries(spec, put_params) == pytest.approx(0.55279, abs=1e-5)


def test_standard_closed_form_reference_call(call_params):
    spec = OptionSpec(1, "call", 1.0)
    b1, _ = exponents(call_params, "beta")
    assert bd.boundary_standard_j0(spec, call_params) == pytest.approx(b1 / (b1 - 1), rel=1e-14)
    assert bd.boundary_standard_j0(spec, call_params) > 1.0


@pytest.mark.parametrize("side", ["put", "call"])
def test_closed_form_scales_with_strike(side):
    p = params_for(side)
    a1 = bd.boundary_standard_j0(OptionSpec(1, side, 1.0), p)
    a3 = bd.boundary_standard_j0(OptionSpec(1, side, 3.0), p)
    assert a3 == pytest.approx(3 * a1, rel=1e-14)


def test_closed_form_rejects_other_families(put_params):
    with pytest.raises(ParameterError):
        bd.boundary_standard_j0(OptionSpec(2, "put", 1.0), put_params)


def test_abar_j0_values(put_params):
    assert bd.abar_j0(OptionSpec(1, "put", 1.0), put_params, 7.0) == pytest.approx(4.0)
    assert bd.abar_j0(OptionSpec(2, "put", 1.0), put_params, 0.5) == pytest.approx(2.0)
    assert bd.abar_j0(OptionSpec(3, "put", 1.0), put_params, 1.5) == 1.5


# ------------------------------------------------------------ power equation

@pytest.mark.parametrize("side", ["put", "call"])
@pytest.mark.parametrize("fam", ["beta", "gamma"])
def test_power_equation_root(side, fam):
    p = params_for(side)
    spec = OptionSpec(2, side, 1.0)
    root = bd.root_power_equation(spec, p, 0, fam)
    if side == "put":
        assert 0 < root < 1
    else:
        assert root > 1
    assert abs(bd.power_equation_residual(spec, p, fam, root)) < 1e-12
    assert bd.power_equation_sign_changes(spec, p, fam) == 1


@pytest.mark.parametrize("side", ["put", "call"])
def test_coupled_ray_residual(side):
    p = params_for(side)
    spec = OptionSpec(2, side, 1.0)
    lam = bd.ray_ratio(spec, p, "beta", coupled=True)
    v1 = bd.solve_j1(spec, p, 1.0).diagonal_value
    assert abs(bd.ray_residual(spec, p, "beta", lam, v1)) < 1e-9
    pure = bd.root_power_equation(spec, p)
    assert bd.ray_ratio(spec, p, "beta", coupled=False) == pytest.approx(pure, rel=1e-10)


# ------------------------------------------------------------ extremal construction

@pytest.mark.parametrize("side", ["put", "call"])
def test_fixed_strike_envelope(side):
    cv = boundary_set(3, side).j0
    md = cv.metadata
    assert md["envelope_gap"] < 1e-8
    assert md["monotone_envelope"] and not md["crossing_detected"]
    g = cv.grid[cv.in_domain(cv.grid)]
    b = cv(g)
    assert np.all(b < g) if side == "put" else np.all(b > g)
    assert np.all(np.isfinite(b)) and np.all(b > 0)


@pytest.mark.parametrize("side", ["put", "call"])
def test_fixed_strike_slope_matches_interpolant(side):
    cv = boundary_set(3, side).j0
    ms = ext_grid(3, side, 8)[1:-1]
    for m in ms:
        h = 1e-6 * m
        fd = (cv(m + h) - cv(m - h)) / (2 * h)
        assert float(cv.slope(np.array([m]))[0]) == pytest.approx(fd, rel=1e-5)


def test_fixed_strike_put_far_slope_below_one():
    cv = boundary_set(3, "put").j0
    g = cv.grid[cv.grid > 1.5]
    assert np.all(cv.slope(g) < 1.0)


def test_fixed_strike_call_slope_above_one():
    cv = boundary_set(3, "call").j0
    g = cv.grid[cv.in_domain(cv.grid)]
    assert np.all(cv.slope(g) > 1.0)


@pytest.mark.xfail(strict=True, reason="a'(s) > 1 just above the strike, where a(s) rises from 0")
def test_fixed_strike_put_slope_below_one_everywhere():
    cv = boundary_set(3, "put").j0
    g = cv.grid[cv.in_domain(cv.grid)]
    assert np.all(cv.slope(g) < 1.0)


@pytest.mark.parametrize("side", ["put", "call"])
@pytest.mark.parametrize("coupled", [False, True])
def test_extremal_solver_recovers_floating_ray(side, coupled):
    p = params_for(side)
    spec = OptionSpec(2, side, 1.0)
    cv = bd.solve_extremal_boundary(spec, p, "beta", bd.GridSpec(0.1, 10.0, points=60), coupled=coupled)
    lam = bd.ray_ratio(spec, p, "beta", coupled=coupled)
    np.testing.assert_allclose(cv(cv.grid) / cv.grid, lam, rtol=1e-6)


def test_fixed_strike_homogeneous_in_strike(put_params):
    a1 = boundary_set(3, "put", 1.0).j0
    a2 = boundary_set(3, "put", 2.0).j0
    for s in (1.2, 2.0, 6.0):
        assert a2(2 * s) == pytest.approx(2 * a1(s), rel=1e-6)


def test_fixed_strike_dead_region_put():
    cv = boundary_set(3, "put").j0
    assert cv.domain_threshold == pytest.approx(1.0)
    assert cv(0.8) == 0.0


def test_standard_coupled_curve_tends_to_closed_form(put_params, call_params):
    cv = boundary_set(1, "put").j0
    a = bd.boundary_standard_j0(OptionSpec(1, "put", 1.0), put_params)
    assert cv(30.0) == pytest.approx(a, rel=1e-3)
    assert np.all(np.diff(cv(np.geomspace(0.5, 30, 50))) > 0)
    cc = boundary_set(1, "call").j0
    b = bd.boundary_standard_j0(OptionSpec(1, "call", 1.0), call_params)
    assert cc(0.04) == pytest.approx(b, rel=1e-3)


# ------------------------------------------------------------ post-extremum regime

@pytest.mark.parametrize("side", ["put", "call"])
@pytest.mark.parametrize("family", [1, 2])
def test_j1_boundary_regular(side, family):
    p = params_for(side)
    spec = OptionSpec(family, side, 1.0)
    for m in (0.7, 1.0, 2.0):
        sol = bd.solve_j1(spec, p, m)
        assert sol.interior
        assert abs(sol.residual) < 1e-9
        assert (sol.boundary < m) if side == "put" else (sol.boundary > m)


def test_j1_fixed_strike_rule(put_params, call_params):
    put = OptionSpec(3, "put", 1.0)
    assert bd.boundary_j1(put, put_params, 1.4) == 1.4
    assert bd.boundary_j1(put, put_params, 0.9) == 0.0
    sol = bd.solve_j1(put, put_params, 0.9)
    assert sol.never and sol.diagonal_value == 0.0
    call = OptionSpec(3, "call", 1.0)
    assert bd.boundary_j1(call, call_params, 0.6) == 0.6
    assert math.isinf(bd.boundary_j1(call, call_params, 1.1))


@pytest.mark.parametrize("side", ["put", "call"])
@pytest.mark.parametrize("family", [1, 2, 3])
@pytest.mark.parametrize("j", [0, 1])
def test_boundaries_respect_h_root(side, family, j):
    bs = boundary_set(family, side)
    ms = ext_grid(family, side)
    b = bs.curve(j)(ms)
    hb = bd.exercise_bounds(bs.spec, bs.params, j, ms)["abar"]
    if side == "put":
        assert np.all(b <= hb * (1 + 1e-12))
    else:
        assert np.all(b >= hb * (1 - 1e-12))


@pytest.mark.parametrize("side", ["put", "call"])
@pytest.mark.parametrize("family", [1, 2])
def test_j1_boundary_beyond_uninformed(side, family):
    bs = boundary_set(family, side)
    ms = ext_grid(family, side)
    b = bs.j1(ms)
    ap = bd.appendix_bound(bs.spec, bs.params, ms, bs.appendix)
    assert np.all(b <= ap) if side == "put" else np.all(b >= ap)


@pytest.mark.parametrize("side", ["put", "call"])
def test_fixed_strike_j0_beyond_uninformed(side):
    bs = boundary_set(3, side)
    g = bs.j0.grid[bs.j0.in_domain(bs.j0.grid)]
    b = bs.j0(g)
    ap = bd.appendix_bound(bs.spec, bs.params, g, bs.appendix)
    assert np.all(b < ap) if side == "put" else np.all(b >= ap * (1 - 1e-9))


@pytest.mark.xfail(strict=True, reason="the coupled regime-0 boundary is not beyond the uninformed one")
@pytest.mark.parametrize("family,side", [(1, "put"), (2, "put"), (1, "call"), (2, "call")])
def test_j0_boundary_beyond_uninformed(family, side):
    bs = boundary_set(family, side)
    ms = ext_grid(family, side)
    ms = ms[bs.j0.in_domain(ms)]
    b = bs.j0(ms)
    ap = bd.appendix_bound(bs.spec, bs.params, ms, bs.appendix)
    assert np.all(b <= ap) if side == "put" else np.all(b >= ap)


# ------------------------------------------------------------ serialisation

def test_curve_json_round_trip(put_params):
    cv = boundary_set(3, "put").j0
    text = cv.to_json(params=put_params)
    back = bd.BoundaryCurve.from_json(text)
    np.testing.assert_array_equal(back.grid, cv.grid)
    np.testing.assert_array_equal(back.values, cv.values)
    assert back.domain_threshold == cv.domain_threshold
    doc = json.loads(text)
    assert doc["params"]["alpha"] == put_params.alpha


def test_curve_json_infinite_values(call_params):
    cv = bd.boundary_j1_curve(OptionSpec(3, "call", 1.0), call_params, bd.GridSpec(0.5, 2.0, points=5))
    back = bd.BoundaryCurve.from_json(cv.to_json())
    assert np.isinf(back.values[-1])
    np.testing.assert_array_equal(back.values, cv.values)


def test_curve_csv_layout():
    cv = bd.ray_curve(OptionSpec(2, "put", 1.0), params_for("put"), 0.5, np.array([1.0, 2.0]), 0, "beta")
    text = cv.to_csv(extra={"ratio": [0.5, 0.5]})
    lines = text.split("\r\n")
    assert lines[0] == "extremum,boundary,regime,family,side,ratio"
    assert lines[2] == "2,1,0,2,put,0.5"


def test_coverage_error():
    cv = bd.BoundaryCurve(side=bd.Side.PUT, family=bd.Family.FIXED, regime=0,
                          grid=np.array([1.0, 2.0, 3.0]), values=np.array([0.5, 1.0, 1.5]),
                          domain_threshold=0.5)
    assert cv(1.5) == pytest.approx(0.75)
    with pytest.raises(CoverageError):
        cv(5.0)


def test_grid_spec_validation():
    with pytest.raises(ParameterError):
        bd.GridSpec(2.0, 1.0).values()
    assert len(bd.GridSpec(1.0, 10.0, per_decade=4).values()) == 5


def test_dumps17_deterministic():
    a = bd.dumps17({"b": [0.1 + 0.2, math.inf], "a": 1})
    b = bd.dumps17({"a": 1, "b": [0.1 + 0.2, math.inf]})
    assert a == b and a.endswith("\n")
    assert json.loads(a)["b"] == [0.30000000000000004, "inf"]
