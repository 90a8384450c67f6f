"""
model_core.py - Model parameters, book state and the level-I queue generator

This module holds everything the rest of the library agrees on:
1. The error hierarchy raised by every module
2. ModelParams (rates, queue cap N*, reset distribution f) and its validation
3. BookState (bid size, ask size, spread)
4. The birth-death generator of a single level-I queue
5. Loading of flat key=value model config files
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values

logger = logging.getLogger(__name__)

RESET_SUM_TOLERANCE = 1e-9

CONFIG_KEYS = ("lambda", "mu", "theta", "alpha", "n_star", "reset_dist",
               "x0_bid", "x0_ask", "spread0")

# Starting book used in the research runs: queues (5, 5) and a spread of 4 ticks
DEFAULT_START = (5, 5, 4)


# ------------------------------- Errors -------------------------------

class LobModelError(Exception):
    """Base class for every error raised by the library"""


class ParameterError(LobModelError, ValueError):
    """Invalid model parameters, config files or command-line values"""


class NonPositiveRate(ParameterError):
    pass


class BadResetDistribution(ParameterError):
    pass


class NStarTooSmall(ParameterError):
    pass


class ConfigError(ParameterError):
    pass


class StartOnBoundary(LobModelError, ValueError):
    """A queue-size pair that is not in the interior lattice {1..N*}^2"""


class NumericalError(LobModelError, ArithmeticError):
    pass


class EigenSolverFailure(NumericalError):
    pass


class NumericalInconsistency(NumericalError):
    pass


class BisectionNoConvergence(NumericalError):
    pass


# ------------------------------- Domain types -------------------------------

@dataclass(frozen=True)
class ModelParams:
    """
    Order-flow rates of the one-level book.

    lam: limit-order arrival rate per side, mu: market-order rate,
    theta: cancellation rate, alpha: in-spread arrival rate per side
    (all in events/sec), n_star: queue cap, reset_dist: f(1..n_star).
    """
    lam: float
    mu: float
    theta: float
    alpha: float
    n_star: int
    reset_dist: Tuple[float, ...]

    @property
    def upsilon(self) -> float:
        return self.mu + self.theta

    @property
    def chi(self) -> float:
        return self.lam / self.upsilon

    @property
    def recurrence_ok(self) -> bool:
        return self.alpha >= self.upsilon

    @property
    def reset_cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.reset_dist)
        cdf[-1] = 1.0
        return cdf

    def with_n_star(self, n_star: int) -> "ModelParams":
        """Same rates with a new cap and a uniform reset distribution"""
        return validate_params({
            "lambda": self.lam, "mu": self.mu, "theta": self.theta,
            "alpha": self.alpha, "n_star": n_star, "reset_dist": "uniform",
        })

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam, "mu": self.mu, "theta": self.theta,
            "alpha": self.alpha, "upsilon": self.upsilon, "n_star": self.n_star,
            "reset_dist": list(self.reset_dist), "recurrence_ok": self.recurrence_ok,
        }


@dataclass(frozen=True)
class BookState:
    """Level-I snapshot: bid queue size, ask queue size, spread in ticks"""
    bid: int
    ask: int
    spread: int

    @property
    def wide(self) -> bool:
        return self.spread > 1

    def swapped(self) -> "BookState":
        return BookState(self.ask, self.bid, self.spread)

    def check(self, n_star: int) -> "BookState":
        if not (1 <= self.bid <= n_star and 1 <= self.ask <= n_star):
            raise StartOnBoundary(
                f"queue sizes ({self.bid}, {self.ask}) must lie in 1..{n_star}")
        if self.spread < 1:
            raise ParameterError(f"spread must be >= 1, got {self.spread}")
        return self


@dataclass(frozen=True)
class QueueGenerator:
    """Rate matrix of one level-I queue over the states 0..N*"""
    matrix: np.ndarray

    @property
    def n_star(self) -> int:
        return self.matrix.shape[0] - 1

    def birth_rate(self, size: int) -> float:
        if size >= self.n_star:
            return 0.0
        return float(self.matrix[size, size + 1])

    def death_rate(self, size: int) -> float:
        if size <= 0:
            return 0.0
        return float(self.matrix[size, size - 1])


# ------------------------------- Validation -------------------------------

def _rate(raw: Mapping[str, Any], key: str, strictly_positive: bool) -> float:
    if key not in raw or raw[key] is None or raw[key] == "":
        raise NonPositiveRate(f"missing rate '{key}'")
    try:
        value = float(raw[key])
    except (TypeError, ValueError):
        raise NonPositiveRate(f"rate '{key}' is not a number: {raw[key]!r}")
    if not math.isfinite(value):
        raise NonPositiveRate(f"rate '{key}' must be finite, got {value}")
    if value < 0 or (strictly_positive and value == 0):
        bound = "> 0" if strictly_positive else ">= 0"
        raise NonPositiveRate(f"rate '{key}' must be {bound}, got {value}")
    return value


def _reset_weights(spec: Union[str, Sequence[float], None], n_star: int) -> Tuple[float, ...]:
    if spec is None or (isinstance(spec, str) and spec.strip().lower() in ("", "uniform")):
        return tuple([1.0 / n_star] * n_star)

    if isinstance(spec, str):
        try:
            weights = [float(w) for w in spec.split(",") if w.strip() != ""]
        except ValueError:
            raise BadResetDistribution(f"cannot parse reset_dist {spec!r}")
    else:
        weights = [float(w) for w in spec]

    if len(weights) != n_star:
        raise BadResetDistribution(
            f"reset_dist needs {n_star} weights for sizes 1..{n_star}, got {len(weights)}")
    if any(not math.isfinite(w) or w < 0 for w in weights):
        raise BadResetDistribution(f"reset_dist weights must be finite and >= 0: {weights}")
    total = math.fsum(weights)
    if abs(total - 1.0) > RESET_SUM_TOLERANCE:
        raise BadResetDistribution(f"reset_dist sums to {total!r}, expected 1")
    return tuple(w / total for w in weights)


def validate_params(raw: Mapping[str, Any]) -> ModelParams:
    """
    Build ModelParams from a loose parameter bundle.

    Keys: lambda, mu, theta, alpha, n_star, reset_dist ("uniform", a
    comma-separated string or a sequence of weights). Reset weights summing
    to 1 within 1e-9 are renormalised, anything else is rejected.
    """
    lam = _rate(raw, "lambda", strictly_positive=True)
    mu = _rate(raw, "mu", strictly_positive=False)
    theta = _rate(raw, "theta", strictly_positive=False)
    alpha = _rate(raw, "alpha", strictly_positive=True)
    if mu + theta <= 0:
        raise NonPositiveRate("mu + theta must be > 0")

    try:
        n_star_value = float(raw.get("n_star", 0))
    except (TypeError, ValueError):
        raise NStarTooSmall(f"n_star is not an integer: {raw.get('n_star')!r}")
    if not n_star_value.is_integer() or n_star_value < 1:
        raise NStarTooSmall(f"n_star must be a positive integer, got {raw.get('n_star')!r}")
    n_star = int(n_star_value)

    params = ModelParams(
        lam=lam, mu=mu, theta=theta, alpha=alpha, n_star=n_star,
        reset_dist=_reset_weights(raw.get("reset_dist"), n_star),
    )
    if not params.recurrence_ok:
        logger.warning(
            f"alpha={alpha} < mu+theta={params.upsilon}: spread recurrence is not guaranteed")
    return params


# ------------------------------- Queue generator -------------------------------

def build_generator(params: ModelParams) -> QueueGenerator:
    """
    Birth-death generator of one level-I queue on {0..N*}.

    Births at rate lambda below the cap, deaths at rate mu+theta above 0.
    Row 0 is left at zero: depletion is an absorption, the price moves and
    the queue is replaced by a fresh one drawn from f.
    """
    n = params.n_star
    q = np.zeros((n + 1, n + 1))
    for j in range(1, n + 1):
        q[j, j - 1] = params.upsilon
        if j < n:
            q[j, j + 1] = params.lam
        q[j, j] = -q[j].sum()
    return QueueGenerator(matrix=q)


# ------------------------------- Config files -------------------------------

def parse_state(text: str) -> BookState:
    """Parse 'bid,ask,spread'"""
    try:
        bid, ask, spread = (int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"state must look like 'bid,ask,spread', got {text!r}")
    return BookState(bid, ask, spread)


def load_config(path: str) -> Tuple[ModelParams, BookState]:
    """Read a key=value model config file and return (params, initial state)"""
    if not path or not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")

    try:
        values = dotenv_values(path)
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}")

    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")

    params = validate_params(values)
    return params, initial_state(params, values)


def initial_state(params: ModelParams, values: Optional[Mapping[str, Any]] = None) -> BookState:
    values = values or {}
    defaults = dict(zip(("x0_bid", "x0_ask", "spread0"), DEFAULT_START))
    fields = {}
    for key, default in defaults.items():
        raw = values.get(key)
        if raw is None or raw == "":
            fields[key] = min(default, params.n_star) if key != "spread0" else default
            continue
        try:
            fields[key] = int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"'{key}' must be an integer, got {raw!r}")

    state = BookState(fields["x0_bid"], fields["x0_ask"], fields["spread0"])
    try:
        return state.check(params.n_star)
    except StartOnBoundary as e:
        raise ConfigError(str(e))
