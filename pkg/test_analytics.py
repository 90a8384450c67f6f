import math

import numpy as np
import pytest
from scipy import integrate

from analytics import (CurveTable, PhiRegime, depletion_before_arrival, prob_two_up, prob_up,
                       prob_up_parts, prob_up_profile, recurrence_report, survival_by_n_star,
                       tau_curves)
from conftest import random_params
from event_oracle import estimate_first_cycle, simulate_events
from model_core import BookState, ParameterError, validate_params
from spectral_engine import (BoundaryState, Side, exp_killed_depletion, exp_window_occupancy, spectrum_for,
                             u_joint)


@pytest.mark.parametrize("x", [1, 3, 5])
@pytest.mark.parametrize("spread", [1, 2, 4])
def test_prob_up_balanced_book_is_half(small_params, x, spread):
    spec = spectrum_for(small_params)
    assert prob_up(spec, small_params, BookState(x, x, spread)) == pytest.approx(0.5, abs=1e-10)


def test_prob_up_profile_decreases_with_ask(small_params):
    spec = spectrum_for(small_params)
    profile = prob_up_profile(spec, small_params, bid=3)
    assert list(profile.columns) == ["bid", "ask", "spread", "prob_up"]
    assert len(profile) == small_params.n_star
    assert np.all(np.diff(profile["prob_up"].to_numpy()) < 0)
    assert profile.loc[2, "prob_up"] == pytest.approx(0.5, abs=1e-10)


def test_prob_up_parts_partition(small_params):
    spec = spectrum_for(small_params)
    parts = prob_up_parts(spec, small_params, BookState(2, 4, 3))
    total = parts["up_depletion"] + parts["down_depletion"] + 2 * parts["up_arrival"]
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("state", [BookState(4, 5, 1), BookState(2, 3, 2), BookState(5, 5, 3)])
def test_prob_two_up_bounded_by_prob_up(small_params, state):
    spec = spectrum_for(small_params)
    two = prob_two_up(spec, small_params, state)
    assert 0.0 < two < prob_up(spec, small_params, state)


def test_prob_two_up_against_oracle(small_params):
    spec = spectrum_for(small_params)
    state = BookState(4, 5, 1)
    n = 10000
    both_up = 0
    for run in range(n):
        path = simulate_events(small_params, state, math.inf, seed=5, run_index=run, max_changes=2).path
        both_up += int(path.mid[1] == 2)
    p = prob_two_up(spec, small_params, state)
    assert abs(both_up / n - p) <= 4 * math.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("bid, ask", [(1, 4), (2, 5), (5, 3)])
@pytest.mark.parametrize("spread", [1, 2, 4])
def test_prob_up_of_mirrored_book_is_complement(small_params, bid, ask, spread):
    spec = spectrum_for(small_params)
    up = prob_up(spec, small_params, BookState(bid, ask, spread))
    mirrored = prob_up(spec, small_params, BookState(ask, bid, spread))
    assert up + mirrored == pytest.approx(1.0, abs=1e-10)


def test_prob_two_up_wide_spread_against_oracle(small_params):
    spec = spectrum_for(small_params)
    state = BookState(2, 4, 2)
    n = 10000
    both_up = both_down = 0
    for run in range(n):
        path = simulate_events(small_params, state, math.inf, seed=23, run_index=run, max_changes=2).path
        both_up += int(path.mid[1] == 2)
        both_down += int(path.mid[1] == -2)
    p_up = prob_two_up(spec, small_params, state)
    # two moves down from a book are two moves up from its mirror image
    p_down = prob_two_up(spec, small_params, state.swapped())
    assert abs(both_up / n - p_up) <= 4 * math.sqrt(p_up * (1 - p_up) / n)
    assert abs(both_down / n - p_down) <= 4 * math.sqrt(p_down * (1 - p_down) / n)


@pytest.mark.parametrize("state", [BookState(2, 4, 1), BookState(3, 1, 3)])
def test_prob_two_up_with_point_mass_reset(state):
    params = validate_params({"lambda": 12, "mu": 8, "theta": 5, "alpha": 13, "n_star": 5,
                              "reset_dist": [0, 0, 1, 0, 0]})
    spec = spectrum_for(params)
    n, size = params.n_star, 3
    start = (state.bid, state.ask)
    if state.wide:
        rate = 2 * params.alpha
        expected = sum(
            exp_killed_depletion(spec, params, rate, start, BoundaryState(Side.ASK, j))
            * prob_up(spec, params, BookState(j, size, 2))
            + exp_window_occupancy(spec, params, rate, start, Side.ASK, j)
            * prob_up(spec, params, BookState(size, j, state.spread - 1))
            for j in range(1, n + 1))
    else:
        expected = sum(u_joint(spec, params, math.inf, start, BoundaryState(Side.ASK, j))
                       * prob_up(spec, params, BookState(j, size, 2))
                       for j in range(1, n + 1))
    assert prob_two_up(spec, params, state) == pytest.approx(expected, abs=1e-10)


def test_prob_two_up_favours_thin_ask(small_params):
    spec = spectrum_for(small_params)
    n = small_params.n_star
    thin_ask = prob_two_up(spec, small_params, BookState(n, 1, 1))
    thin_bid = prob_two_up(spec, small_params, BookState(1, n, 1))
    assert thin_ask > thin_bid


def test_prob_up_against_oracle(small_params):
    spec = spectrum_for(small_params)
    state = BookState(2, 4, 2)
    estimate = estimate_first_cycle(small_params, state, 20000, seed=17)
    p = prob_up(spec, small_params, state)
    assert abs(estimate.up_frequency() - p) <= 4 * math.sqrt(p * (1 - p) / estimate.n_runs)


def test_tau_curves(small_params):
    spec = spectrum_for(small_params)
    grid = np.linspace(0.0, 2.0, 2001)
    curves = tau_curves(spec, small_params, BookState(4, 5, 1), grid)
    assert curves.survival[0] == pytest.approx(1.0)
    assert np.all(np.diff(curves.survival) <= 1e-12)
    assert np.all(curves.density >= 0)
    mass = integrate.trapezoid(curves.density, grid)
    assert mass == pytest.approx(1.0 - curves.survival[-1], abs=1e-4)
    frame = curves.to_frame()
    assert list(frame.columns) == ["t", "survival", "density"]


def test_wide_spread_survival_below_arrival_race(small_params):
    spec = spectrum_for(small_params)
    grid = np.linspace(0.0, 1.0, 101)
    curves = tau_curves(spec, small_params, BookState(3, 4, 2), grid)
    assert np.all(curves.survival <= np.exp(-2 * small_params.alpha * grid) + 1e-12)


def test_wide_spread_shortens_durations(small_params):
    spec = spectrum_for(small_params)
    grid = [0.05, 0.2, 0.5]
    narrow = tau_curves(spec, small_params, BookState(3, 3, 1), grid).survival
    wide = tau_curves(spec, small_params, BookState(3, 3, 2), grid).survival
    assert np.all(wide < narrow)


def test_curve_table_needs_increasing_grid():
    with pytest.raises(ParameterError):
        CurveTable(grid=np.array([0.0, 0.2, 0.1]), survival=np.ones(3), density=np.zeros(3))


def test_survival_by_n_star(small_params):
    frame = survival_by_n_star(small_params, [5, 10, 20], BookState(4, 5, 1), [0.0, 0.1, 0.5])
    assert list(frame.columns) == ["t", "survival_n5", "survival_n10", "survival_n20"]
    assert np.allclose(frame.iloc[0, 1:], 1.0)
    # larger caps can only delay depletion
    assert np.all(frame["survival_n20"] >= frame["survival_n5"] - 1e-12)


def test_depletion_before_arrival_unit_race(unit_params):
    spec = spectrum_for(unit_params)
    assert depletion_before_arrival(spec, unit_params, (1, 1)) == pytest.approx(0.5)


def test_recurrence_report_unit_rates(unit_params):
    report = recurrence_report(spectrum_for(unit_params), unit_params, j_max=10)
    assert report.p_one == pytest.approx(0.5)
    assert report.p_nstar == pytest.approx(0.5)
    assert report.regime is PhiRegime.CRITICAL
    assert report.condition_ok
    assert not report.p_one_lt_half
    assert report.phi == pytest.approx(np.ones(10))


@pytest.mark.parametrize("seed", range(10))
def test_recurrence_bounds(seed):
    params = random_params(seed)
    report = recurrence_report(spectrum_for(params), params)
    assert params.recurrence_ok
    assert report.p_one < 0.5 + 1e-12
    assert report.p_nstar <= report.p_one + 1e-12
    assert len(report.phi) == 50
    payload = report.to_dict()
    assert payload["regime"] == report.regime.value


def test_recurrence_strict_when_alpha_exceeds_death_rate():
    params = validate_params({"lambda": 317, "mu": 325, "theta": 0, "alpha": 650, "n_star": 10})
    report = recurrence_report(spectrum_for(params), params)
    assert report.p_one_lt_half
    assert report.p_one <= 325 / (325 + 650) + 1e-12


def test_recurrence_rejects_short_phi(unit_params):
    with pytest.raises(ParameterError):
        recurrence_report(spectrum_for(unit_params), unit_params, j_max=1)
