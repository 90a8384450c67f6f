"""
conftest.py - Shared fixtures for the model tests

KilledChain rebuilds the two-queue chain directly from the queue rates, with
no spectral machinery, so closed-form laws can be checked against matrix
exponentials and resolvents.
"""

import numpy as np
import pytest
from scipy import linalg

from model_core import ModelParams, validate_params


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size Monte Carlo checks (run with -m slow)")


class KilledChain:
    """Both level-I queues until the first depletion; exits in ask-first order"""

    def __init__(self, params: ModelParams):
        n = params.n_star
        self.n = n
        size = n * n
        self.q = np.zeros((size, size))
        self.exits = np.zeros((size, 2 * n))
        for b in range(1, n + 1):
            for a in range(1, n + 1):
                k = self.index(b, a)
                if b < n:
                    self.q[k, self.index(b + 1, a)] = params.lam
                if a < n:
                    self.q[k, self.index(b, a + 1)] = params.lam
                if b > 1:
                    self.q[k, self.index(b - 1, a)] = params.upsilon
                else:
                    self.exits[k, n + a - 1] = params.upsilon
                if a > 1:
                    self.q[k, self.index(b, a - 1)] = params.upsilon
                else:
                    self.exits[k, b - 1] = params.upsilon
                self.q[k, k] = -(self.q[k].sum() + self.exits[k].sum())

    def index(self, bid: int, ask: int) -> int:
        return (bid - 1) * self.n + (ask - 1)

    def survival(self, t: float, start, at) -> float:
        return float(linalg.expm(self.q * t)[self.index(*start), self.index(*at)])

    def depletion_by(self, t: float, start) -> np.ndarray:
        """P[depletion <= t, exit] for every exit"""
        size = len(self.q)
        full = np.zeros((size + 2 * self.n, size + 2 * self.n))
        full[:size, :size] = self.q
        full[:size, size:] = self.exits
        return linalg.expm(full * t)[self.index(*start), size:]

    def absorbed(self, start) -> np.ndarray:
        row = linalg.solve(-self.q.T, np.eye(len(self.q))[self.index(*start)])
        return row @ self.exits

    def resolvent_row(self, rate: float, start) -> np.ndarray:
        """Row of (rate I - Q)^-1 at start"""
        return linalg.solve((rate * np.eye(len(self.q)) - self.q).T, np.eye(len(self.q))[self.index(*start)])

    def killed(self, rate: float, start) -> np.ndarray:
        return self.resolvent_row(rate, start) @ self.exits

    def window_occupancy(self, rate: float, start, survivor_is_ask: bool, j: int) -> float:
        row = self.resolvent_row(rate, start)
        points = [self.index(b, a) for b in range(1, self.n + 1) for a in range(1, self.n + 1)
                  if (a if survivor_is_ask else b) == j]
        return 0.5 * rate * float(row[points].sum())


@pytest.fixture
def unit_params():
    """N* = 1 with unit rates: every law is an exponential race"""
    return validate_params({"lambda": 1, "mu": 1, "theta": 0, "alpha": 1, "n_star": 1})


@pytest.fixture
def small_params():
    """lambda 12, mu+theta 13, N* 5"""
    return validate_params({"lambda": 12, "mu": 8, "theta": 5, "alpha": 13, "n_star": 5})


def random_params(seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    upsilon = rng.uniform(1.0, 20.0)
    mu = rng.uniform(0.0, upsilon)
    n_star = int(1 + seed % 10)
    weights = rng.uniform(0.1, 1.0, size=n_star)
    return validate_params({
        "lambda": upsilon * rng.uniform(0.5, 2.0),
        "mu": mu,
        "theta": upsilon - mu,
        "alpha": upsilon * rng.uniform(1.0, 3.0),
        "n_star": n_star,
        "reset_dist": list(weights / weights.sum()),
    })
