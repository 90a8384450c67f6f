"""
fast_simulator.py - Exact price-path simulation, one price change at a time

Instead of replaying every order, each cycle between two price changes is
drawn directly from its closed-form law:
1. the outcome category (which side moved, why, and the surviving queue)
   by inverse transform over the category masses
2. the cycle duration from that category's conditional CDF by bracketed
   Newton-bisection
3. the next book state (the side that moved is redrawn from f)

Every per-state law is a mixture sum_k c_k (1 - exp(-t R_k)) / R_k, with
R_k the spectral decay rates, shifted by 2*alpha when the spread is wide.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from model_core import (BisectionNoConvergence, BookState, ModelParams,
                        NumericalInconsistency, ParameterError)
from rng_streams import UniformStream
from spectral_engine import (Side, Spectrum, all_exit_weights,
                             occupancy_weights, spectrum_for)

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-8
CDF_TOLERANCE = 1e-10
TAIL_TOLERANCE = 1e-12
MAX_DOUBLINGS = 200
MAX_ITERATIONS = 200
MAX_PLANS = 4096


# ------------------------------- Outcomes -------------------------------

class OutcomeKind(Enum):
    ASK_DEPLETED = "ask_depleted"      # value: surviving bid size
    BID_DEPLETED = "bid_depleted"      # value: surviving ask size
    IN_SPREAD_BID = "in_spread_bid"    # value: ask size at the arrival
    IN_SPREAD_ASK = "in_spread_ask"    # value: bid size at the arrival


KIND_ORDER = (OutcomeKind.ASK_DEPLETED, OutcomeKind.BID_DEPLETED,
              OutcomeKind.IN_SPREAD_BID, OutcomeKind.IN_SPREAD_ASK)


@dataclass(frozen=True)
class OutcomeCategory:
    kind: OutcomeKind
    value: int

    @property
    def move(self) -> int:
        """Mid-price change in half-ticks"""
        return 1 if self.kind in (OutcomeKind.ASK_DEPLETED, OutcomeKind.IN_SPREAD_BID) else -1

    @property
    def label(self) -> str:
        return f"{self.kind.value}:{self.value}"


def category_at(index: int, n_star: int) -> OutcomeCategory:
    return OutcomeCategory(KIND_ORDER[index // n_star], index % n_star + 1)


def next_state(state: BookState, category: OutcomeCategory, reset_size: int) -> BookState:
    """Book after a price change; reset_size is the fresh queue drawn from f"""
    kind, value = category.kind, category.value
    if kind is OutcomeKind.ASK_DEPLETED:
        return BookState(value, reset_size, state.spread + 1)
    if kind is OutcomeKind.BID_DEPLETED:
        return BookState(reset_size, value, state.spread + 1)
    if state.spread < 2:
        raise ParameterError("in-spread arrival with a one-tick spread")
    if kind is OutcomeKind.IN_SPREAD_BID:
        return BookState(reset_size, value, state.spread - 1)
    return BookState(value, reset_size, state.spread - 1)


# ------------------------------- Paths -------------------------------

@dataclass
class PathRecord:
    """Price-change epochs of one simulated path; mid in half-ticks from 0"""
    initial: BookState
    horizon: float
    epochs: np.ndarray
    mid: np.ndarray
    spreads: np.ndarray
    bids: np.ndarray
    asks: np.ndarray

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def states(self) -> List[BookState]:
        return [BookState(int(b), int(a), int(z)) for b, a, z in zip(self.bids, self.asks, self.spreads)]

    def changes_until(self, t: float) -> int:
        """N_t: number of price changes in [0, t]"""
        return int(np.searchsorted(self.epochs, t, side="right"))

    def mid_at(self, t: float) -> int:
        n = self.changes_until(t)
        return int(self.mid[n - 1]) if n else 0

    def final_mid(self) -> int:
        return int(self.mid[-1]) if len(self.mid) else 0

    def check(self, n_star: int) -> "PathRecord":
        """Raise NumericalInconsistency if the path breaks a model invariant"""
        mids = np.concatenate(([0], self.mid))
        spreads = np.concatenate(([self.initial.spread], self.spreads))
        if len(self.epochs) and (np.any(np.diff(self.epochs) <= 0) or self.epochs[0] <= 0
                                 or self.epochs[-1] > self.horizon):
            raise NumericalInconsistency("epochs must be strictly increasing inside (0, horizon]")
        if np.any(np.abs(np.diff(mids)) != 1):
            raise NumericalInconsistency("mid-price must move one half-tick per change")
        if np.any(np.abs(np.diff(spreads)) != 1) or np.any(spreads < 1):
            raise NumericalInconsistency("spread must move one tick per change and stay >= 1")
        for sizes in (self.bids, self.asks):
            if len(sizes) and (sizes.min() < 1 or sizes.max() > n_star):
                raise NumericalInconsistency(f"queue sizes must stay in 1..{n_star}")
        return self

    def to_frame(self) -> pd.DataFrame:
        """One row per epoch, the initial book first at epoch 0"""
        return pd.DataFrame({
            "epoch_s": np.concatenate(([0.0], self.epochs)),
            "mid_half_ticks": np.concatenate(([0], self.mid)).astype(np.int64),
            "spread": np.concatenate(([self.initial.spread], self.spreads)).astype(np.int64),
            "bid": np.concatenate(([self.initial.bid], self.bids)).astype(np.int64),
            "ask": np.concatenate(([self.initial.ask], self.asks)).astype(np.int64),
        })

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


class PathBuilder:
    """Accumulates price changes and freezes them into a PathRecord"""

    def __init__(self, initial: BookState, horizon: float):
        self.initial = initial
        self.horizon = horizon
        self.time = 0.0
        self.mid = 0
        self.state = initial
        self._epochs: List[float] = []
        self._mid: List[int] = []
        self._spreads: List[int] = []
        self._bids: List[int] = []
        self._asks: List[int] = []

    def __len__(self) -> int:
        return len(self._epochs)

    def record(self, time: float, move: int, state: BookState) -> None:
        self.time = time
        self.mid += move
        self.state = state
        self._epochs.append(time)
        self._mid.append(self.mid)
        self._spreads.append(state.spread)
        self._bids.append(state.bid)
        self._asks.append(state.ask)

    def build(self, horizon: Optional[float] = None) -> PathRecord:
        return PathRecord(
            initial=self.initial,
            horizon=self.horizon if horizon is None else horizon,
            epochs=np.asarray(self._epochs, dtype=float),
            mid=np.asarray(self._mid, dtype=np.int64),
            spreads=np.asarray(self._spreads, dtype=np.int64),
            bids=np.asarray(self._bids, dtype=np.int64),
            asks=np.asarray(self._asks, dtype=np.int64),
        )


# ------------------------------- Cycle plans -------------------------------

@dataclass(frozen=True, eq=False)
class CyclePlan:
    """
    Closed-form law of one price-change cycle from (bid, ask) in one spread
    regime: P[tau <= t, category c] = sum_k coeffs[c, k] (1 - exp(-t rates_k)) / rates_k.
    """
    bid: int
    ask: int
    wide: bool
    n_star: int
    rates: np.ndarray
    coeffs: np.ndarray
    masses: np.ndarray
    cum: np.ndarray
    noise: np.ndarray
    reset_cdf: np.ndarray
    _brackets: Dict[int, float] = field(default_factory=dict, repr=False)

    def category(self, index: int) -> OutcomeCategory:
        return category_at(index, self.n_star)

    def cdf(self, index: int, t: float) -> float:
        return float(np.dot(self.coeffs[index], -np.expm1(-t * self.rates) / self.rates))

    def density(self, index: int, t: float) -> float:
        return float(np.dot(self.coeffs[index], np.exp(-t * self.rates)))

    def total_cdf(self, t: float) -> float:
        return float(np.sum(self.coeffs @ (-np.expm1(-t * self.rates) / self.rates)))

    def bracket(self, index: int) -> float:
        """Time by which the category's CDF reaches its mass up to 1e-12"""
        t_hi = self._brackets.get(index)
        if t_hi is None:
            mass = self.masses[index]
            t_hi = 10.0 / self.rates.min()
            for _ in range(MAX_DOUBLINGS):
                if self.cdf(index, t_hi) >= (1.0 - TAIL_TOLERANCE) * mass - self.noise[index]:
                    break
                t_hi *= 2.0
            else:
                raise BisectionNoConvergence(f"no upper bracket for category {self.category(index).label}")
            self._brackets.setdefault(index, t_hi)
        return t_hi


def plan_cycle(spec: Spectrum, params: ModelParams, state: BookState) -> CyclePlan:
    """Category masses and conditional time laws of the next cycle from state"""
    state.check(params.n_star)
    n = params.n_star
    start = (state.bid, state.ask)
    decay = spec.decay_rates(params)
    depletion = all_exit_weights(spec, params, start)

    if state.wide:
        rates = decay + 2.0 * params.alpha
        # half of the 2*alpha arrival intensity goes to each side
        in_spread_bid = params.alpha * occupancy_weights(spec, params, start, Side.ASK)
        in_spread_ask = params.alpha * occupancy_weights(spec, params, start, Side.BID)
        coeffs = np.vstack([depletion, in_spread_bid, in_spread_ask])
    else:
        rates = decay
        coeffs = np.vstack([depletion, np.zeros((2 * n, len(decay)))])

    scaled = coeffs / rates
    masses = scaled.sum(axis=1)
    noise = 8.0 * np.finfo(float).eps * np.abs(scaled).sum(axis=1)
    if np.any(masses < -MASS_TOLERANCE):
        raise NumericalInconsistency(f"negative category mass {masses.min()!r} at {state}")
    masses = np.clip(masses, 0.0, None)
    total = masses.sum()
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise NumericalInconsistency(f"category masses sum to {total!r} at {state}")

    cum = np.cumsum(masses) / total
    last = int(np.flatnonzero(masses > 0)[-1])
    cum[last:] = 1.0

    return CyclePlan(bid=state.bid, ask=state.ask, wide=state.wide, n_star=n,
                     rates=rates, coeffs=coeffs, masses=masses, cum=cum,
                     noise=noise, reset_cdf=params.reset_cdf)


class PlanCache:
    """
    CyclePlans keyed by (params, bid, ask, regime), least recently used
    evicted past max_plans. A parameter set needs at most 2 N*^2 plans.
    """

    def __init__(self, max_plans: int = MAX_PLANS):
        self.max_plans = max_plans
        self._plans: "OrderedDict[Tuple, CyclePlan]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._plans)

    def get(self, spec: Spectrum, params: ModelParams, state: BookState) -> CyclePlan:
        key = (params, state.bid, state.ask, state.wide)
        plan = self._plans.get(key)
        if plan is not None:
            self._plans.move_to_end(key)
            return plan
        plan = self._plans.setdefault(key, plan_cycle(spec, params, state))
        while len(self._plans) > self.max_plans:
            self._plans.popitem(last=False)
        logger.debug(f"cycle plan cached for {key[1:]} ({len(self._plans)} plans)")
        return plan


PLANS = PlanCache()


# ------------------------------- Sampling -------------------------------

def sample_cycle_time(plan: CyclePlan, index: int, u: float) -> float:
    """Solve P[tau <= t, category] = u * mass for t"""
    mass = plan.masses[index]
    tolerance = max(CDF_TOLERANCE * mass, plan.noise[index])
    lo, hi = 0.0, plan.bracket(index)
    target = u * mass
    top = plan.cdf(index, hi)
    if target >= top:
        return hi

    t = 0.5 * (lo + hi)
    previous_error = math.inf
    for _ in range(MAX_ITERATIONS):
        error = plan.cdf(index, t) - target
        if abs(error) <= tolerance:
            return t
        if error > 0:
            hi = t
        else:
            lo = t
        if hi - lo <= 4.0 * np.finfo(float).eps * hi:
            return 0.5 * (lo + hi)

        step = math.nan
        slope = plan.density(index, t)
        # Newton only while it keeps halving the error, bisection otherwise
        if slope > 0 and abs(error) < 0.5 * previous_error:
            step = t - error / slope
        previous_error = abs(error)
        t = step if lo < step < hi else 0.5 * (lo + hi)

    raise BisectionNoConvergence(
        f"cycle time for {plan.category(index).label} did not converge (target {target!r})")


def draw_reset(reset_cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(reset_cdf, u, side="right")) + 1, len(reset_cdf))


def sample_price_change(plan: CyclePlan, state: BookState,
                        rng_stream: UniformStream) -> Tuple[float, OutcomeCategory, BookState, int]:
    """
    Draw (tau, outcome, next state, move) for one cycle. Consumes exactly
    three uniforms: category, time, reset size.
    """
    if plan.wide != state.wide or (plan.bid, plan.ask) != (state.bid, state.ask):
        raise ParameterError(f"cycle plan for ({plan.bid}, {plan.ask}, wide={plan.wide}) used at {state}")
    u_category = rng_stream.uniform()
    u_time = rng_stream.uniform()
    u_reset = rng_stream.uniform()

    index = int(np.searchsorted(plan.cum, u_category, side="right"))
    outcome = plan.category(index)
    tau = sample_cycle_time(plan, index, u_time)
    following = next_state(state, outcome, draw_reset(plan.reset_cdf, u_reset))
    return tau, outcome, following, outcome.move


def simulate_path(spec: Spectrum, params: ModelParams, initial: BookState, horizon: float,
                  seed: int, path_index: int = 0, max_changes: Optional[int] = None,
                  stream_keys: Optional[Sequence[int]] = None) -> PathRecord:
    """
    Price path on [0, horizon]. The cycle that would end past the horizon is
    dropped. With max_changes the path stops after that many changes and its
    horizon is the last epoch.
    """
    if not horizon > 0:
        raise ParameterError(f"horizon must be > 0, got {horizon}")
    initial.check(params.n_star)
    stream = UniformStream(seed, *(stream_keys if stream_keys is not None else (path_index,)))
    builder = PathBuilder(initial, horizon)

    while max_changes is None or len(builder) < max_changes:
        plan = PLANS.get(spec, params, builder.state)
        tau, _, following, move = sample_price_change(plan, builder.state, stream)
        arrival = builder.time + tau
        if arrival > horizon:
            break
        builder.record(arrival, move, following)

    if max_changes is not None and math.isinf(horizon):
        return builder.build(horizon=builder.time)
    return builder.build()


# ------------------------------- Parallel paths -------------------------------

def _simulate_task(task) -> PathRecord:
    params, initial, horizon, seed, keys = task
    return simulate_path(spectrum_for(params), params, initial, horizon, seed, stream_keys=keys)


def simulate_paths(params: ModelParams, initial: BookState, horizon: float, seed: int,
                   n_paths: int, workers: int = 1) -> List[PathRecord]:
    """n_paths independent paths, path i on substream (seed, i), returned in path order"""
    tasks = [(params, initial, horizon, seed, (i,)) for i in range(n_paths)]
    return run_tasks(_simulate_task, tasks, workers)


def run_tasks(function, tasks: list, workers: int = 1) -> list:
    """Map function over tasks in order, optionally on a process pool"""
    if workers <= 1 or len(tasks) <= 1:
        return [function(task) for task in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with Pool(processes=workers) as pool:
        return pool.map(function, tasks, chunksize=chunk)
