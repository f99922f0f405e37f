import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bayes_o2o.bounds import (BoundInputs, EpisodeRecord, bound_curve, bound_eval, check_regret_bound,
                              coverage_coefficient, curve_to_csv, estimate_info_ratio, point_mass,
                              regret_bound_experiment, suboptimality_bound)
from bayes_o2o.linear_mdp import (GaussianPosterior, make_tabular_linear, optimal_policy, random_tabular_mdp,
                                  state_action_occupancy)
from bayes_o2o.rng import make_rng


# ------------------------------------------------------------------ bound

def test_bound_zero_online_steps():
    assert bound_eval(BoundInputs(N=100, T=0, d=3, H=4)) == 0.0


def test_bound_without_offline_data_is_pure_online_form():
    inp = BoundInputs(N=0, T=400, d=2, H=3, c=0.5)
    assert bound_eval(inp) == pytest.approx(0.5 * math.sqrt(8 * 27 * inp.iota) * math.sqrt(400), rel=1e-14)


def test_bound_strictly_decreasing_in_offline_data():
    vals = [bound_eval(BoundInputs(N=n, T=50, d=2, H=2, iota_horizon=50)) for n in (0, 1, 10, 100, 1e4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_iota_clamps_small_horizons():
    for T in (0, 1, 2):
        assert BoundInputs(N=1, T=T, d=1, H=1).iota == pytest.approx(math.log(4 * 2 / 0.05))


def test_suboptimality_plug_in():
    inp = BoundInputs(N=100, T=1, d=1, H=1, C_dagger=1, c=1)
    # c sqrt(C d^3 H^3 iota / N) with everything but iota equal to one
    assert suboptimality_bound(inp) / math.sqrt(inp.iota) == pytest.approx(0.1, rel=1e-14)


def test_suboptimality_quartering():
    a = suboptimality_bound(BoundInputs(N=50, T=10, d=3, H=2, C_dagger=2, iota_horizon=10))
    b = suboptimality_bound(BoundInputs(N=200, T=10, d=3, H=2, C_dagger=2, iota_horizon=10))
    assert b == pytest.approx(a / 2, rel=1e-14)


def test_suboptimality_needs_offline_data():
    with pytest.raises(ValueError):
        suboptimality_bound(BoundInputs(N=0, T=1, d=1, H=1))


def test_single_step_bound_below_twice_suboptimality():
    for N in np.unique(np.geomspace(1, 1e8, 200).round()):
        inp = BoundInputs(N=N, T=1, d=3, H=4, C_dagger=2.5)
        assert bound_eval(inp) <= 2 * suboptimality_bound(inp)
        assert bound_eval(inp) <= inp.scale / (2 * math.sqrt(N / 2.5)) * (1 + 1e-12)


@pytest.mark.parametrize("kwargs", [dict(N=-1), dict(T=-1), dict(d=0), dict(H=0), dict(C_dagger=0.5),
                                    dict(c=0), dict(delta=1.0)])
def test_bound_inputs_validate(kwargs):
    base = dict(N=1, T=1, d=1, H=1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        BoundInputs(**base)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e7), st.floats(0, 1e7), st.integers(1, 20), st.integers(1, 30), st.floats(1, 50))
def test_bound_dominated_by_pure_online_form(N, T, d, H, C):
    inp = BoundInputs(N, T, d, H, C_dagger=C)
    assert bound_eval(inp) <= inp.scale * math.sqrt(T) * (1 + 1e-12)
    assert bound_eval(inp) >= 0


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e6), st.lists(st.integers(0, 10**6), min_size=3, max_size=30, unique=True))
def test_curve_concave_increasing_in_T(N, Ts):
    Ts = sorted(Ts)
    rows = bound_curve([N], Ts, d=2, H=3)
    b = np.array([r.bound for r in rows])
    assert np.all(np.diff(b) >= -1e-9 * b.max())
    # slopes between successive points do not increase
    slopes = np.diff(b) / np.diff(Ts)
    assert np.all(np.diff(slopes) <= 1e-9 * (1 + np.abs(slopes[:-1])))


def test_curve_single_point():
    rows = bound_curve([10], [5], d=1, H=1)
    assert len(rows) == 1
    assert rows[0].bound == bound_eval(BoundInputs(10, 5, 1, 1))


def test_curve_decreasing_in_N():
    rows = bound_curve(np.geomspace(1, 1e6, 30), [1000], d=4, H=5)
    b = [r.bound for r in rows]
    assert all(x > y for x, y in zip(b, b[1:]))


def test_curve_uses_one_iota_and_orders_rows():
    rows = bound_curve([0, 10], [1, 100], d=2, H=2)
    assert [(r.N, r.T) for r in rows] == [(0, 1), (0, 100), (10, 1), (10, 100)]
    scale = BoundInputs(0, 100, 2, 2).scale
    assert rows[0].bound == pytest.approx(scale * 1.0)


def test_curve_csv_and_empty_grid():
    text = curve_to_csv(bound_curve([1], [2, 3], d=1, H=1))
    lines = text.splitlines()
    assert lines[0] == "N,T,bound" and len(lines) == 3
    with pytest.raises(ValueError):
        bound_curve([], [1], d=1, H=1)


# --------------------------------------------------------------- coverage

def two_by_two():
    # H = 1, start in state 0, only (0, 1) pays
    P = np.full((2, 2, 2), 0.5)
    R = np.array([[0.0, 1.0], [0.0, 0.0]])
    return make_tabular_linear(2, 2, 1, P, R)


def test_coverage_uniform_behaviour_two_by_two():
    mdp = two_by_two()
    res = coverage_coefficient(mdp, np.full((1, 2, 2), 0.25), point_mass(mdp), 1)
    assert res.value == pytest.approx(4.0, rel=1e-12)


def test_coverage_of_optimal_visitation_is_one():
    mdp = random_tabular_mdp(3, 2, 3, make_rng(0))
    occ = state_action_occupancy(mdp, optimal_policy(mdp))
    res = coverage_coefficient(mdp, occ, point_mass(mdp), 3)
    assert res.value == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(res.per_h, 1.0, rtol=1e-12)


def test_coverage_one_hot_equals_max_density_ratio():
    rng = make_rng(1)
    for _ in range(10):
        mdp = random_tabular_mdp(4, 3, 2, rng)
        rho = rng.random((2, 4, 3)) + 0.01
        rho /= rho.sum(axis=(1, 2), keepdims=True)
        occ = state_action_occupancy(mdp, optimal_policy(mdp))
        oracle = max((occ[h] / rho[h]).max() for h in range(2))
        res = coverage_coefficient(mdp, rho, point_mass(mdp), 1)
        assert res.value == pytest.approx(oracle, rel=1e-10)


def test_coverage_off_support_is_infinite():
    mdp = two_by_two()
    rho = np.zeros((1, 2, 2))
    rho[0, 0, 0] = 1.0
    assert coverage_coefficient(mdp, rho, point_mass(mdp), 1).value == math.inf


def test_coverage_validates_behaviour():
    mdp = two_by_two()
    with pytest.raises(ValueError):
        coverage_coefficient(mdp, np.zeros((1, 2, 2)), point_mass(mdp), 1)
    with pytest.raises(ValueError):
        coverage_coefficient(mdp, np.full((2, 2, 2), 0.25), point_mass(mdp), 1)


# ------------------------------------------------------ information ratio

def one_dim_posterior(precision):
    return GaussianPosterior(np.zeros((1, 1)), np.full((1, 1, 1), float(precision)), 1.0,
                             np.zeros((1, 1)), np.zeros((1, 1, 1)))


def test_point_mass_ratio_is_zero():
    mdp = random_tabular_mdp(2, 2, 2, make_rng(2))
    post = GaussianPosterior.for_mdp(mdp)
    est = estimate_info_ratio(mdp.features, post, 500, 0.05, make_rng(3), scale=0.0)
    assert est.gamma_hat == 0.0 and est.violation_rate == 0.0


@pytest.mark.parametrize("precision", [1.0, 5.0, 40.0])
def test_one_dim_ratio_matches_gaussian_quantile(precision):
    delta = 0.05
    est = estimate_info_ratio(np.ones((1, 1, 1)), one_dim_posterior(precision), 100_000, delta, make_rng(4))
    sd = 1 / math.sqrt(precision)
    info = 0.5 * math.log1p(1 / precision)
    # |Q - EQ| <= Gamma/2 sqrt(I) with probability 1 - delta/2
    oracle = 2 * stats.norm.ppf(1 - delta / 4) * sd / math.sqrt(info)
    assert est.gamma_hat == pytest.approx(oracle, rel=0.1)
    assert est.violation_rate <= delta / 2


def test_doubling_data_shrinks_ratio_times_information_like_std():
    n, lam = 20.0, 1.0
    product = []
    for prec in (lam + n, lam + 2 * n):
        est = estimate_info_ratio(np.ones((1, 1, 1)), one_dim_posterior(prec), 100_000, 0.05, make_rng(5))
        product.append(est.gamma_hat * math.sqrt(0.5 * math.log1p(1 / prec)))
    assert product[1] / product[0] == pytest.approx(math.sqrt((lam + n) / (lam + 2 * n)), rel=0.05)


def test_joint_event_needs_larger_ratio():
    mdp = random_tabular_mdp(3, 2, 2, make_rng(6))
    post = GaussianPosterior.for_mdp(mdp)
    joint = estimate_info_ratio(mdp.features, post, 4000, 0.05, make_rng(7), joint=True)
    marginal = estimate_info_ratio(mdp.features, post, 4000, 0.05, make_rng(7), joint=False)
    assert joint.gamma_hat > marginal.gamma_hat > 0


def test_info_ratio_validates():
    post = one_dim_posterior(1.0)
    with pytest.raises(ValueError):
        estimate_info_ratio(np.ones((1, 1, 1)), post, 10, 0.0, make_rng(0))
    with pytest.raises(ValueError):
        estimate_info_ratio(np.ones((1, 1, 1)), post, 0, 0.05, make_rng(0))


# ------------------------------------------------------ per-episode check

def test_huge_ratio_gives_positive_slack():
    rng = make_rng(8)
    recs = [EpisodeRecord(float(rng.random() * 3), rng.random(3) * 0.1 + 1e-3, 1e9, 0.05, 3) for _ in range(50)]
    report = check_regret_bound(recs)
    assert np.all(report.slacks > 0) and report.violation_fraction == 0.0


def test_zero_information_environment_has_both_sides_zero():
    mdp = make_tabular_linear(2, 1, 2, np.eye(2)[:, None, :], np.zeros((2, 1)))
    post = GaussianPosterior.for_mdp(mdp)
    gamma = estimate_info_ratio(mdp.features, post, 100, 0.05, make_rng(9), scale=0.0).gamma_hat
    rec = EpisodeRecord(0.0, np.zeros(mdp.H), gamma, 0.05, mdp.H)
    report = check_regret_bound([rec])
    # only the fixed failure-probability allowance remains on the bound side
    assert report.regrets[0] == 0.0
    assert report.bounds[0] - 2 * 0.05 * mdp.H ** 2 == 0.0


def test_report_jsonl_records():
    report = check_regret_bound([EpisodeRecord(0.5, np.array([0.01, 0.04]), 2.0, 0.1, 2),
                                 EpisodeRecord(0.0, np.array([0.0, 0.0]), 2.0, 0.1, 2)])
    rows = [json.loads(line) for line in report.to_jsonl().splitlines()]
    assert [r["episode"] for r in rows] == [1, 2]
    assert rows[0]["bound"] == pytest.approx(2.0 * (0.1 + 0.2) + 2 * 0.1 * 4)
    assert rows[0]["slack"] == pytest.approx(rows[0]["bound"] - 0.5)
    assert check_regret_bound([]).to_jsonl() == ""


def test_short_thompson_run_respects_bound():
    mdp = random_tabular_mdp(3, 2, 2, make_rng(10))
    run = regret_bound_experiment(mdp, 25, make_rng(11), n_replays=60, info_samples=500)
    assert len(run.online) == len(run.offline) == 25
    report = check_regret_bound(run.online)
    assert report.violation_fraction <= 0.05
    assert all(r.regret >= 0 for r in run.online)
