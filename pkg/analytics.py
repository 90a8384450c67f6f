"""
analytics.py - Headline quantities built from the spectral laws

- duration curves (survival and density of the time to the next price change)
- probability of a price increase p(bid, ask, spread)
- probability of two consecutive increases
- recurrence diagnostics behind the spread-stability condition alpha >= mu+theta

Convention: a price increase is an ask depletion or an in-spread arrival
on the bid side.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from model_core import BookState, ModelParams, ParameterError
from spectral_engine import (BoundaryState, Side, Spectrum, boundary_states,
                             checked_probability, exp_killed_depletion,
                             exp_window_occupancy, spectrum_for, tau_cdf,
                             tau_density, u_joint)

logger = logging.getLogger(__name__)

CRITICAL_TOLERANCE = 1e-12
DEFAULT_J_MAX = 50


# ------------------------------- Curves -------------------------------

@dataclass
class CurveTable:
    """Survival and density of the next price-change time on a time grid"""
    grid: np.ndarray
    survival: np.ndarray
    density: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.grid) and np.any(np.diff(self.grid) <= 0):
            raise ParameterError("time grid must be strictly increasing")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.grid, "survival": self.survival, "density": self.density})

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def tau_curves(spec: Spectrum, params: ModelParams, state: BookState,
               grid: Sequence[float]) -> CurveTable:
    grid = np.asarray(grid, dtype=float)
    if len(grid) == 0 or grid[0] < 0:
        raise ParameterError("time grid must be non-empty and start at t >= 0")
    state.check(params.n_star)

    survival = np.array([1.0 - tau_cdf(spec, params, t, state) for t in grid])
    # the density is only defined for t > 0; at t = 0 report the right limit
    density = np.array([tau_density(spec, params, t if t > 0 else 1e-300, state) for t in grid])
    return CurveTable(grid=grid, survival=survival, density=density, metadata={
        "bid": state.bid, "ask": state.ask, "spread": state.spread, "quantity": "tau",
    })


def survival_by_n_star(params: ModelParams, n_stars: Sequence[int], state: BookState,
                       grid: Sequence[float]) -> pd.DataFrame:
    """Survival of the next price-change time for several queue caps at one state"""
    frame = pd.DataFrame({"t": np.asarray(grid, dtype=float)})
    for n_star in n_stars:
        capped = params.with_n_star(n_star)
        curves = tau_curves(spectrum_for(capped), capped, state, grid)
        frame[f"survival_n{n_star}"] = curves.survival
    return frame


# ------------------------------- Price increase -------------------------------

def _ask_exits(n_star: int) -> List[BoundaryState]:
    return [b for b in boundary_states(n_star) if b.side is Side.ASK]


def prob_up_parts(spec: Spectrum, params: ModelParams, state: BookState) -> Dict[str, float]:
    """
    Pieces of p(bid, ask, spread) for a wide spread:
    up_depletion (ask empties before the in-spread arrival), down_depletion,
    up_arrival (= half of P[arrival first]).
    """
    start = (state.bid, state.ask)
    rate = 2.0 * params.alpha
    exits = boundary_states(params.n_star)
    killed = {b: exp_killed_depletion(spec, params, rate, start, b) for b in exits}
    up_depletion = sum(v for b, v in killed.items() if b.side is Side.ASK)
    down_depletion = sum(v for b, v in killed.items() if b.side is Side.BID)
    arrival_first = checked_probability(1.0 - up_depletion - down_depletion, "P[arrival first]")
    return {
        "up_depletion": up_depletion,
        "down_depletion": down_depletion,
        "up_arrival": 0.5 * arrival_first,
    }


def prob_up(spec: Spectrum, params: ModelParams, state: BookState) -> float:
    """Probability that the next mid-price move is up"""
    state.check(params.n_star)
    if not state.wide:
        raw = sum(u_joint(spec, params, math.inf, (state.bid, state.ask), b)
                  for b in _ask_exits(params.n_star))
        return checked_probability(raw, "prob_up")
    parts = prob_up_parts(spec, params, state)
    return checked_probability(parts["up_depletion"] + parts["up_arrival"], "prob_up")


def prob_up_profile(spec: Spectrum, params: ModelParams, bid: int, spread: int = 1) -> pd.DataFrame:
    """p(bid, ask, spread) against every ask size for a fixed bid size"""
    rows = []
    for ask in range(1, params.n_star + 1):
        rows.append({"bid": bid, "ask": ask, "spread": spread,
                     "prob_up": prob_up(spec, params, BookState(bid, ask, spread))})
    return pd.DataFrame(rows)


def prob_two_up(spec: Spectrum, params: ModelParams, state: BookState) -> float:
    """
    Probability that the next two mid-price moves are both up.

    First move by ask depletion with bid survivor j: the ask is redrawn
    (i ~ f) and the spread widens, so the second move is up with p(j, i, wide).
    First move by a bid-side in-spread arrival with ask j: the bid is redrawn
    and the spread narrows to max(z-1, 1), second move up with p(i, j, z-1).
    """
    state.check(params.n_star)
    n = params.n_star
    start = (state.bid, state.ask)
    f = params.reset_dist

    # p(j, i, 2) for every (j, i); p does not depend on the spread once it exceeds 1
    p_wide = np.array([[prob_up(spec, params, BookState(j, i, 2)) for i in range(1, n + 1)]
                       for j in range(1, n + 1)])

    if not state.wide:
        first = np.array([u_joint(spec, params, math.inf, start, BoundaryState(Side.ASK, j))
                          for j in range(1, n + 1)])
        raw = float(first @ p_wide @ np.asarray(f))
        return checked_probability(raw, "prob_two_up")

    rate = 2.0 * params.alpha
    first_depletion = np.array([exp_killed_depletion(spec, params, rate, start, BoundaryState(Side.ASK, j))
                                for j in range(1, n + 1)])
    first_arrival = np.array([exp_window_occupancy(spec, params, rate, start, Side.ASK, j)
                              for j in range(1, n + 1)])
    narrowed = max(state.spread - 1, 1)
    p_after_arrival = np.array([[prob_up(spec, params, BookState(i, j, narrowed)) for j in range(1, n + 1)]
                                for i in range(1, n + 1)])

    raw = float(first_depletion @ p_wide @ np.asarray(f)) + float(np.asarray(f) @ p_after_arrival @ first_arrival)
    return checked_probability(raw, "prob_two_up")


# ------------------------------- Recurrence -------------------------------

class PhiRegime(Enum):
    GEOMETRIC = "geometric"        # p1(1-pN) < 1/4
    CRITICAL = "critical"          # p1(1-pN) = 1/4
    OSCILLATORY = "oscillatory"    # p1(1-pN) > 1/4


@dataclass
class RecurrenceReport:
    p_one: float
    p_nstar: float
    phi: np.ndarray
    regime: PhiRegime
    condition_ok: bool
    p_one_lt_half: bool
    theta_angle: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p_one": self.p_one,
            "p_nstar": self.p_nstar,
            "phi": [float(v) for v in self.phi],
            "regime": self.regime.value,
            "theta": None if math.isnan(self.theta_angle) else self.theta_angle,
            "condition_ok": self.condition_ok,
            "p_one_lt_half": self.p_one_lt_half,
        }


def depletion_before_arrival(spec: Spectrum, params: ModelParams, start) -> float:
    """P[depletion < L] with L ~ Exp(2 alpha)"""
    rate = 2.0 * params.alpha
    raw = sum(exp_killed_depletion(spec, params, rate, start, b) for b in boundary_states(params.n_star))
    return checked_probability(raw, "P[depletion first]")


def recurrence_report(spec: Spectrum, params: ModelParams, j_max: int = DEFAULT_J_MAX) -> RecurrenceReport:
    """
    Super-harmonic test function phi(j) of the spread chain.

    p_one / p_nstar are the chances that a queue pair starting at (1, 1) /
    (N*, N*) depletes before an in-spread arrival, i.e. that the spread
    widens rather than narrows.
    """
    if j_max < 2:
        raise ParameterError(f"j_max must be >= 2, got {j_max}")
    n = params.n_star
    p1 = depletion_before_arrival(spec, params, (1, 1))
    pn = depletion_before_arrival(spec, params, (n, n))
    product = p1 * (1.0 - pn)
    j = np.arange(1, j_max + 1, dtype=float)
    theta_angle = float("nan")

    with np.errstate(over="ignore"):
        if abs(product - 0.25) <= CRITICAL_TOLERANCE:
            regime = PhiRegime.CRITICAL
            phi = np.power(1.0 / (2.0 * p1), j)
        elif product < 0.25:
            regime = PhiRegime.GEOMETRIC
            phi = np.power((1.0 + math.sqrt(1.0 - 4.0 * product)) / (2.0 * p1), j)
        else:
            regime = PhiRegime.OSCILLATORY
            theta_angle = math.atan(math.sqrt(4.0 * product - 1.0))
            phi = np.power((1.0 - pn) / p1, j / 2.0) * np.cos(j * theta_angle)

    if not params.recurrence_ok:
        logger.warning(f"recurrence condition fails: alpha={params.alpha} < mu+theta={params.upsilon}")
    if pn > p1 + 1e-12:
        logger.warning(f"p_nstar={pn!r} exceeds p_one={p1!r}")

    return RecurrenceReport(
        p_one=p1, p_nstar=pn, phi=phi, regime=regime,
        condition_ok=params.recurrence_ok, p_one_lt_half=p1 < 0.5 - CRITICAL_TOLERANCE,
        theta_angle=theta_angle,
    )
