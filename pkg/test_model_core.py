import logging

import numpy as np
import pytest

from model_core import (BadResetDistribution, BookState, ConfigError, NonPositiveRate,
                        NStarTooSmall, ParameterError, StartOnBoundary, build_generator,
                        initial_state, load_config, parse_state, validate_params)

BASE = {"lambda": 2.0, "mu": 1.5, "theta": 0.5, "alpha": 3.0, "n_star": 4}


def test_validate_params_uniform_reset():
    params = validate_params(BASE)
    assert params.upsilon == pytest.approx(2.0)
    assert params.chi == pytest.approx(1.0)
    assert params.reset_dist == pytest.approx((0.25, 0.25, 0.25, 0.25))
    assert params.reset_cdf[-1] == 1.0
    assert params.recurrence_ok


def test_validate_params_reset_from_string_and_sequence():
    from_string = validate_params({**BASE, "reset_dist": "0.1,0.2,0.3,0.4"})
    from_list = validate_params({**BASE, "reset_dist": [0.1, 0.2, 0.3, 0.4]})
    assert from_string.reset_dist == pytest.approx(from_list.reset_dist)


def test_reset_weights_renormalised_within_tolerance():
    params = validate_params({**BASE, "reset_dist": [0.25, 0.25, 0.25, 0.25 + 5e-10]})
    assert sum(params.reset_dist) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("reset", ["0.5,0.5", [0.3, 0.3, 0.3, 0.3], [-0.1, 0.4, 0.4, 0.3], "a,b,c,d"])
def test_bad_reset_distribution(reset):
    with pytest.raises(BadResetDistribution):
        validate_params({**BASE, "reset_dist": reset})


@pytest.mark.parametrize("key,value", [("lambda", 0), ("alpha", 0), ("mu", -1), ("theta", "x"),
                                       ("lambda", float("inf"))])
def test_bad_rates(key, value):
    with pytest.raises(NonPositiveRate):
        validate_params({**BASE, key: value})


def test_zero_death_rate_rejected():
    with pytest.raises(NonPositiveRate):
        validate_params({**BASE, "mu": 0, "theta": 0})


@pytest.mark.parametrize("n_star", [0, -3, 2.5, "many"])
def test_bad_n_star(n_star):
    with pytest.raises(NStarTooSmall):
        validate_params({**BASE, "n_star": n_star})


def test_parameter_errors_are_value_errors():
    with pytest.raises(ValueError):
        validate_params({**BASE, "lambda": -1})


def test_non_recurrent_params_are_flagged(caplog):
    with caplog.at_level(logging.WARNING, logger="model_core"):
        params = validate_params({**BASE, "alpha": 1.0})
    assert not params.recurrence_ok
    assert "recurrence" in caplog.text


def test_with_n_star_keeps_rates():
    params = validate_params({**BASE, "reset_dist": "0.1,0.2,0.3,0.4"}).with_n_star(6)
    assert params.n_star == 6
    assert params.lam == 2.0
    assert params.reset_dist == pytest.approx([1 / 6] * 6)


def test_generator_rows():
    params = validate_params(BASE)
    gen = build_generator(params)
    q = gen.matrix
    assert q.shape == (5, 5)
    assert np.all(q[0] == 0)
    assert np.allclose(q.sum(axis=1), 0.0)
    assert q[4, 3] == pytest.approx(2.0)
    assert gen.birth_rate(4) == 0.0
    assert gen.birth_rate(2) == 2.0
    assert gen.death_rate(0) == 0.0
    assert gen.death_rate(1) == pytest.approx(2.0)


def test_book_state_check():
    assert BookState(1, 4, 1).check(4).wide is False
    with pytest.raises(StartOnBoundary):
        BookState(0, 2, 1).check(4)
    with pytest.raises(StartOnBoundary):
        BookState(2, 5, 1).check(4)
    with pytest.raises(ParameterError):
        BookState(2, 2, 0).check(4)
    assert BookState(1, 3, 2).swapped() == BookState(3, 1, 2)


def test_parse_state():
    assert parse_state("3,4,2") == BookState(3, 4, 2)
    with pytest.raises(ConfigError):
        parse_state("3;4;2")


def test_load_config(tmp_path):
    path = tmp_path / "model.cfg"
    path.write_text("# book\nlambda=2\nmu=1.5\ntheta=0.5\nalpha=3\nn_star=4\n"
                    "reset_dist=0.1,0.2,0.3,0.4\nx0_bid=2\nx0_ask=3\nspread0=1\n")
    params, state = load_config(str(path))
    assert params.n_star == 4
    assert params.reset_dist == pytest.approx((0.1, 0.2, 0.3, 0.4))
    assert state == BookState(2, 3, 1)


def test_load_config_default_start_clipped(tmp_path):
    path = tmp_path / "model.cfg"
    path.write_text("lambda=1\nmu=1\ntheta=0\nalpha=1\nn_star=3\n")
    _, state = load_config(str(path))
    assert state == BookState(3, 3, 4)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.cfg"))

    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("lambda=1\nmu=1\ntheta=0\nalpha=1\nn_star=3\nsigma=2\n")
    with pytest.raises(ConfigError, match="sigma"):
        load_config(str(unknown))

    outside = tmp_path / "outside.cfg"
    outside.write_text("lambda=1\nmu=1\ntheta=0\nalpha=1\nn_star=3\nx0_bid=7\n")
    with pytest.raises(ConfigError):
        load_config(str(outside))


def test_initial_state_defaults():
    params = validate_params({**BASE, "n_star": 10})
    assert initial_state(params) == BookState(5, 5, 4)
