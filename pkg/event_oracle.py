"""
event_oracle.py - Brute-force order-flow simulator

Replays every individual event of the level-I book: limit orders, market
orders, cancellations and in-spread limit orders, each driven by its own
exponential clock. All clocks are redrawn after every event, which is exact
for exponential clocks. Slow, but it shares nothing with the spectral code,
so it is the reference the closed-form laws and fast_simulator are checked
against.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from fast_simulator import (OutcomeCategory, OutcomeKind, PathBuilder,
                            PathRecord, draw_reset, run_tasks)
from model_core import BookState, ModelParams, ParameterError, build_generator
from rng_streams import UniformStream

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["time_s", "side", "kind", "bid", "ask", "spread", "mid_half_ticks"]

# clock order inside OrderFlow.clocks()
BID_LIMIT, BID_DEATH, ASK_LIMIT, ASK_DEATH, BID_IN_SPREAD, ASK_IN_SPREAD = range(6)


@dataclass(frozen=True)
class OrderEvent:
    time: float
    side: str
    kind: str                                   # limit, market, cancel, in_spread
    state: BookState                            # book after the event (and any reset)
    mid: int
    outcome: Optional[OutcomeCategory] = None   # set when the event moved the price


class OrderFlow:
    """Event-by-event evolution of one book from an initial state"""

    def __init__(self, params: ModelParams, initial: BookState, stream: UniformStream):
        self.params = params
        self.queue = build_generator(params)
        self.stream = stream
        self.state = initial.check(params.n_star)
        self.time = 0.0
        self.mid = 0
        self.events = 0
        self._market_share = params.mu / params.upsilon

    def clocks(self) -> np.ndarray:
        bid, ask = self.state.bid, self.state.ask
        in_spread = self.params.alpha if self.state.wide else 0.0
        return np.array([
            self.queue.birth_rate(bid), self.queue.death_rate(bid),
            self.queue.birth_rate(ask), self.queue.death_rate(ask),
            in_spread, in_spread,
        ])

    def step(self, horizon: float = math.inf) -> Optional[OrderEvent]:
        """Advance one event; None (and no state change) if it falls past the horizon"""
        rates = self.clocks()
        total = rates.sum()
        when = self.time + self.stream.exponential(total)
        pick = self.stream.uniform() * total
        if when > horizon:
            return None

        cum = np.cumsum(rates)
        clock = min(int(np.searchsorted(cum, pick, side="right")), len(rates) - 1)
        while rates[clock] == 0.0:
            clock -= 1
        self.time = when
        self.events += 1

        bid, ask, spread = self.state.bid, self.state.ask, self.state.spread
        outcome = None
        kind = "limit"
        if clock in (BID_DEATH, ASK_DEATH):
            # market vs cancel read off the same uniform, for the event log only
            offset = (pick - (cum[clock] - rates[clock])) / rates[clock]
            kind = "market" if offset < self._market_share else "cancel"

        if clock == BID_LIMIT:
            bid += 1
        elif clock == ASK_LIMIT:
            ask += 1
        elif clock == BID_DEATH:
            bid -= 1
            if bid == 0:
                outcome = OutcomeCategory(OutcomeKind.BID_DEPLETED, ask)
                bid, spread = self._reset(), spread + 1
        elif clock == ASK_DEATH:
            ask -= 1
            if ask == 0:
                outcome = OutcomeCategory(OutcomeKind.ASK_DEPLETED, bid)
                ask, spread = self._reset(), spread + 1
        elif clock == BID_IN_SPREAD:
            kind = "in_spread"
            outcome = OutcomeCategory(OutcomeKind.IN_SPREAD_BID, ask)
            bid, spread = self._reset(), spread - 1
        else:
            kind = "in_spread"
            outcome = OutcomeCategory(OutcomeKind.IN_SPREAD_ASK, bid)
            ask, spread = self._reset(), spread - 1

        if outcome is not None:
            self.mid += outcome.move
        self.state = BookState(bid, ask, spread)
        side = "bid" if clock in (BID_LIMIT, BID_DEATH, BID_IN_SPREAD) else "ask"
        return OrderEvent(self.time, side, kind, self.state, self.mid, outcome)

    def _reset(self) -> int:
        return draw_reset(self.params.reset_cdf, self.stream.uniform())


# ------------------------------- Full runs -------------------------------

@dataclass
class EventTrace:
    path: PathRecord
    n_events: int
    events: Optional[List[Tuple]] = None

    def events_frame(self) -> pd.DataFrame:
        if self.events is None:
            raise ParameterError("event log was not recorded for this run")
        return pd.DataFrame(self.events, columns=EVENT_COLUMNS)

    def to_csv(self, path: str) -> None:
        self.events_frame().to_csv(path, index=False, float_format="%.17g")


def simulate_events(params: ModelParams, initial: BookState, horizon: float, seed: int,
                    run_index: int = 0, record_events: bool = False,
                    max_changes: Optional[int] = None,
                    stream_keys: Optional[Sequence[int]] = None) -> EventTrace:
    """Replay every order event on [0, horizon] from substream (seed, run_index)"""
    if not horizon > 0:
        raise ParameterError(f"horizon must be > 0, got {horizon}")
    keys = stream_keys if stream_keys is not None else (run_index,)
    flow = OrderFlow(params, initial, UniformStream(seed, *keys))
    builder = PathBuilder(initial, horizon)
    log: Optional[List[Tuple]] = [] if record_events else None

    while max_changes is None or len(builder) < max_changes:
        event = flow.step(horizon)
        if event is None:
            break
        if log is not None:
            log.append((event.time, event.side, event.kind, event.state.bid,
                        event.state.ask, event.state.spread, event.mid))
        if event.outcome is not None:
            builder.record(event.time, event.outcome.move, event.state)

    logger.debug(f"oracle run {run_index}: {flow.events} events, {len(builder)} price changes")
    if max_changes is not None and math.isinf(horizon):
        path = builder.build(horizon=builder.time)
    else:
        path = builder.build()
    return EventTrace(path=path, n_events=flow.events, events=log)


# ------------------------------- First cycles -------------------------------

def first_cycle(params: ModelParams, initial: BookState,
                stream: UniformStream) -> Tuple[float, OutcomeCategory, BookState]:
    flow = OrderFlow(params, initial, stream)
    while True:
        event = flow.step()
        if event.outcome is not None:
            return event.time, event.outcome, event.state


@dataclass
class FirstCycleEstimate:
    """Empirical joint law of (tau_1, outcome, next state) over independent runs"""
    taus: np.ndarray
    categories: Dict[OutcomeCategory, int] = field(default_factory=dict)
    next_states: Dict[BookState, int] = field(default_factory=dict)

    @property
    def n_runs(self) -> int:
        return len(self.taus)

    def frequency(self, category: OutcomeCategory) -> float:
        return self.categories.get(category, 0) / self.n_runs

    def stderr(self, category: OutcomeCategory) -> float:
        p = self.frequency(category)
        return math.sqrt(p * (1.0 - p) / self.n_runs)

    def state_frequency(self, state: BookState) -> float:
        return self.next_states.get(state, 0) / self.n_runs

    def up_frequency(self) -> float:
        return sum(n for c, n in self.categories.items() if c.move > 0) / self.n_runs

    def mean_tau(self) -> float:
        return float(np.mean(self.taus))

    def tau_stderr(self) -> float:
        return float(np.std(self.taus, ddof=1) / math.sqrt(self.n_runs))

    def ecdf(self, t: float) -> float:
        return int(np.searchsorted(self.taus, t, side="right")) / self.n_runs

    def ks_distance(self, cdf: Callable[[float], float]) -> float:
        """sup_t |ECDF(t) - cdf(t)|"""
        return float(stats.kstest(self.taus, np.vectorize(cdf)).statistic)

    def category_frame(self) -> pd.DataFrame:
        rows = [{"category": c.label, "count": n, "frequency": self.frequency(c), "stderr": self.stderr(c)}
                for c, n in sorted(self.categories.items(), key=lambda item: item[0].label)]
        return pd.DataFrame(rows, columns=["category", "count", "frequency", "stderr"])


def _first_cycle_chunk(task):
    params, initial, seed, first, last = task
    return [first_cycle(params, initial, UniformStream(seed, run)) for run in range(first, last)]


def estimate_first_cycle(params: ModelParams, initial: BookState, n_runs: int, seed: int,
                         workers: int = 1, chunk_size: int = 5000) -> FirstCycleEstimate:
    """n_runs first cycles, run i on substream (seed, i)"""
    if n_runs < 1:
        raise ParameterError(f"n_runs must be >= 1, got {n_runs}")
    initial.check(params.n_star)
    tasks = [(params, initial, seed, first, min(first + chunk_size, n_runs))
             for first in range(0, n_runs, chunk_size)]
    cycles = [cycle for chunk in run_tasks(_first_cycle_chunk, tasks, workers) for cycle in chunk]

    logger.info(f"oracle first cycles: {n_runs} runs from {initial}")
    return FirstCycleEstimate(
        taus=np.sort(np.array([tau for tau, _, _ in cycles])),
        categories=dict(Counter(category for _, category, _ in cycles)),
        next_states=dict(Counter(state for _, _, state in cycles)),
    )
