"""
diffusion_lab.py - Monte Carlo studies of the long-run price behaviour

- run_study: many paths per horizon, summarised as drift and variance rates,
  mean duration between price changes, spread occupancy and gaussianity
- occupancy: time-weighted spread histogram of one path
- fclt_check: variance-rate stability and drift symmetry across two horizons
- lln_check: running average of the price-change epochs T_n / n

Mid-prices are in half-ticks, so drift_rate and var_rate are per second in
half-tick units.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from event_oracle import simulate_events
from fast_simulator import PathRecord, run_tasks, simulate_path
from model_core import BookState, ModelParams, ParameterError
from spectral_engine import spectrum_for

logger = logging.getLogger(__name__)

SPREAD_BINS = ("1", "2", "3", "4+")
DEFAULT_N_PATHS = 1000
Z_95 = 1.96
SKEW_LIMIT = 0.2
KURTOSIS_LIMIT = 0.5
PATHS_PER_TASK = 25


class Engine(Enum):
    FAST = "fast"
    ORACLE = "oracle"


@dataclass(frozen=True)
class McStudyConfig:
    params: ModelParams
    initial: BookState
    horizons: Sequence[float]
    n_paths: int = DEFAULT_N_PATHS
    seed: int = 0
    engine: Engine = Engine.FAST

    def __post_init__(self):
        object.__setattr__(self, "engine", Engine(self.engine))
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        if self.n_paths < 2:
            raise ParameterError(f"n_paths must be >= 2, got {self.n_paths}")
        if not self.horizons or any(not (math.isfinite(h) and h > 0) for h in self.horizons):
            raise ParameterError(f"horizons must be finite and > 0: {self.horizons}")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ParameterError(f"horizons must be increasing: {self.horizons}")
        self.initial.check(self.params.n_star)


# ------------------------------- Occupancy -------------------------------

def occupancy_vector(path: PathRecord) -> np.ndarray:
    """Fraction of [0, horizon] spent at spread 1, 2, 3 and 4+"""
    if not path.horizon > 0:
        raise ParameterError("occupancy needs a path with a positive horizon")
    bounds = np.concatenate(([0.0], path.epochs, [path.horizon]))
    spreads = np.concatenate(([path.initial.spread], path.spreads))
    weights = np.diff(bounds) / path.horizon
    bins = np.minimum(spreads, len(SPREAD_BINS)) - 1
    return np.bincount(bins, weights=weights, minlength=len(SPREAD_BINS))


def occupancy(path: PathRecord) -> Dict[str, float]:
    return dict(zip(SPREAD_BINS, (float(w) for w in occupancy_vector(path))))


# ------------------------------- Study -------------------------------

@dataclass
class HorizonStats:
    horizon: float
    n_paths: int
    drift_rate: float
    drift_stderr: float
    var_rate: float
    var_stderr: float
    mean_duration: float
    duration_stderr: float
    paths_without_changes: int
    occupancy: Dict[str, float]
    occupancy_stderr: Dict[str, float]
    skewness: float
    skewness_stderr: float
    excess_kurtosis: float
    kurtosis_stderr: float
    ks_distance: float
    samples: np.ndarray = field(repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "horizon_s": self.horizon,
            "n_paths": self.n_paths,
            "drift_rate": self.drift_rate,
            "drift_stderr": self.drift_stderr,
            "var_rate": self.var_rate,
            "var_stderr": self.var_stderr,
            "mean_duration": _json_float(self.mean_duration),
            "duration_stderr": _json_float(self.duration_stderr),
            "paths_without_changes": self.paths_without_changes,
            "occupancy": self.occupancy,
            "occupancy_stderr": self.occupancy_stderr,
            "gaussianity": {
                "skewness": _json_float(self.skewness),
                "skewness_stderr": self.skewness_stderr,
                "excess_kurtosis": _json_float(self.excess_kurtosis),
                "kurtosis_stderr": self.kurtosis_stderr,
                "ks_distance": _json_float(self.ks_distance),
            },
        }

    def flat_row(self) -> Dict[str, Any]:
        row = {k: v for k, v in self.to_dict().items() if not isinstance(v, dict)}
        row.update({f"occupancy_{b}": self.occupancy[b] for b in SPREAD_BINS})
        row.update({f"occupancy_{b}_stderr": self.occupancy_stderr[b] for b in SPREAD_BINS})
        row.update({"skewness": self.skewness, "excess_kurtosis": self.excess_kurtosis,
                    "ks_distance": self.ks_distance})
        return row


def _json_float(value: float) -> Optional[float]:
    return None if math.isnan(value) else value


def horizon_stats(horizon: float, finals: np.ndarray, changes: np.ndarray,
                  occupancies: np.ndarray) -> HorizonStats:
    """Summary of one horizon from per-path final mids, change counts and occupancies"""
    n = len(finals)
    s = finals.astype(float)
    mean = float(np.mean(s))
    var = float(np.var(s, ddof=1))
    m4 = float(np.mean((s - mean) ** 4))

    moved = changes > 0
    skipped = int(n - moved.sum())
    if skipped:
        logger.warning(f"horizon {horizon}: {skipped} of {n} paths had no price change, "
                       f"excluded from mean_duration")
    durations = horizon / changes[moved]
    mean_duration = float(np.mean(durations)) if len(durations) else float("nan")
    duration_stderr = (float(np.std(durations, ddof=1) / math.sqrt(len(durations)))
                       if len(durations) > 1 else float("nan"))

    if var > 0:
        skewness = float(stats.skew(s, bias=False))
        kurtosis = float(stats.kurtosis(s, fisher=True, bias=False))
        ks = float(stats.kstest(s, "norm", args=(mean, math.sqrt(var))).statistic)
    else:
        skewness = kurtosis = ks = float("nan")

    occ_mean = occupancies.mean(axis=0)
    occ_se = occupancies.std(axis=0, ddof=1) / math.sqrt(n)
    return HorizonStats(
        horizon=horizon,
        n_paths=n,
        drift_rate=mean / horizon,
        drift_stderr=math.sqrt(var / n) / horizon,
        var_rate=var / horizon,
        var_stderr=math.sqrt(max(m4 - var * var, 0.0) / n) / horizon,
        mean_duration=mean_duration,
        duration_stderr=duration_stderr,
        paths_without_changes=skipped,
        occupancy=dict(zip(SPREAD_BINS, (float(v) for v in occ_mean))),
        occupancy_stderr=dict(zip(SPREAD_BINS, (float(v) for v in occ_se))),
        skewness=skewness,
        skewness_stderr=math.sqrt(6.0 / n),
        excess_kurtosis=kurtosis,
        kurtosis_stderr=math.sqrt(24.0 / n),
        ks_distance=ks,
        samples=finals,
    )


@dataclass
class McSummary:
    config: McStudyConfig
    horizons: List[HorizonStats]
    fclt: Optional["FcltReport"] = None
    warnings: List[str] = field(default_factory=list)
    warning_counts: Dict[str, int] = field(default_factory=dict)

    def at(self, horizon: float) -> HorizonStats:
        for h in self.horizons:
            if h.horizon == horizon:
                return h
        raise ParameterError(f"no horizon {horizon} in this study")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.config.params.to_dict(),
            "initial": {"bid": self.config.initial.bid, "ask": self.config.initial.ask,
                        "spread": self.config.initial.spread},
            "n_paths": self.config.n_paths,
            "seed": self.config.seed,
            "engine": self.config.engine.value,
            "horizons": [h.to_dict() for h in self.horizons],
            "fclt": self.fclt.to_dict() if self.fclt else None,
            "warnings": list(self.warnings),
            "warning_counts": dict(self.warning_counts),
        }

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([h.flat_row() for h in self.horizons])

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def density_frame(self, bins: int = 50) -> pd.DataFrame:
        """Histogram of the mid at each horizon next to the fitted normal density"""
        frames = []
        for h in self.horizons:
            s = h.samples.astype(float)
            counts, edges = np.histogram(s, bins=bins, density=True)
            centres = 0.5 * (edges[:-1] + edges[1:])
            scale = float(np.std(s, ddof=1))
            normal = (stats.norm.pdf(centres, loc=float(np.mean(s)), scale=scale)
                      if scale > 0 else np.full(len(centres), np.nan))
            frames.append(pd.DataFrame({
                "horizon_s": h.horizon, "bin_left": edges[:-1], "bin_right": edges[1:],
                "mid_half_ticks": centres, "empirical_density": counts, "normal_density": normal,
            }))
        return pd.concat(frames, ignore_index=True)


def _simulate(engine: Engine, params: ModelParams, initial: BookState, horizon: float,
              seed: int, keys) -> PathRecord:
    if engine is Engine.FAST:
        return simulate_path(spectrum_for(params), params, initial, horizon, seed, stream_keys=keys)
    return simulate_events(params, initial, horizon, seed, stream_keys=keys).path


def _study_chunk(task):
    engine, params, initial, horizon, seed, h_index, first, last = task
    rows = []
    for p_index in range(first, last):
        path = _simulate(engine, params, initial, horizon, seed, (h_index, p_index))
        rows.append((path.final_mid(), len(path), occupancy_vector(path)))
    return rows


def run_study(config: McStudyConfig, workers: int = 1) -> McSummary:
    """n_paths paths per horizon; path p of horizon h uses substream (seed, h, p)"""
    results = []
    for h_index, horizon in enumerate(config.horizons):
        logger.info(f"study horizon {horizon}s: {config.n_paths} paths ({config.engine.value} engine)")
        tasks = [(config.engine, config.params, config.initial, horizon, config.seed, h_index,
                  first, min(first + PATHS_PER_TASK, config.n_paths))
                 for first in range(0, config.n_paths, PATHS_PER_TASK)]
        rows = [row for chunk in run_tasks(_study_chunk, tasks, workers) for row in chunk]
        results.append(horizon_stats(
            horizon,
            np.array([r[0] for r in rows], dtype=np.int64),
            np.array([r[1] for r in rows], dtype=np.int64),
            np.vstack([r[2] for r in rows]),
        ))

    summary = McSummary(config=config, horizons=results)
    if len(results) >= 2:
        summary.fclt = fclt_check(results[0], results[-1])
    return summary


# ------------------------------- Diffusive checks -------------------------------

@dataclass
class FcltReport:
    short_horizon: float
    long_horizon: float
    var_ratio: float
    var_ratio_ci: tuple
    drift_difference: float
    drift_difference_ci: tuple
    skewness: float
    excess_kurtosis: float

    @property
    def ratio_contains_one(self) -> bool:
        return self.var_ratio_ci[0] <= 1.0 <= self.var_ratio_ci[1]

    @property
    def drift_contains_zero(self) -> bool:
        return self.drift_difference_ci[0] <= 0.0 <= self.drift_difference_ci[1]

    @property
    def gaussian(self) -> bool:
        return abs(self.skewness) <= SKEW_LIMIT and abs(self.excess_kurtosis) <= KURTOSIS_LIMIT

    def to_dict(self) -> Dict[str, Any]:
        return {
            "short_horizon_s": self.short_horizon,
            "long_horizon_s": self.long_horizon,
            "var_ratio": _json_float(self.var_ratio),
            "var_ratio_ci": [_json_float(v) for v in self.var_ratio_ci],
            "ratio_contains_one": self.ratio_contains_one,
            "drift_difference": self.drift_difference,
            "drift_difference_ci": list(self.drift_difference_ci),
            "drift_contains_zero": self.drift_contains_zero,
            "skewness": _json_float(self.skewness),
            "excess_kurtosis": _json_float(self.excess_kurtosis),
            "gaussian": self.gaussian,
        }


def fclt_check(short: HorizonStats, long: HorizonStats) -> FcltReport:
    """
    var_rate(t) / var_rate(c t) with a delta-method 95% interval, the drift
    difference with its interval, and moment gaussianity at the long horizon.
    """
    if long.horizon < 2.0 * short.horizon:
        logger.warning(f"horizons {short.horizon} and {long.horizon} are less than a factor 2 apart")
    if short.var_rate > 0 and long.var_rate > 0:
        ratio = short.var_rate / long.var_rate
        ratio_se = ratio * math.hypot(short.var_stderr / short.var_rate, long.var_stderr / long.var_rate)
    else:
        logger.warning(f"variance is zero at horizon {short.horizon} or {long.horizon}; no variance ratio")
        ratio = ratio_se = math.nan
    drift = short.drift_rate - long.drift_rate
    drift_se = math.hypot(short.drift_stderr, long.drift_stderr)
    return FcltReport(
        short_horizon=short.horizon,
        long_horizon=long.horizon,
        var_ratio=ratio,
        var_ratio_ci=(ratio - Z_95 * ratio_se, ratio + Z_95 * ratio_se),
        drift_difference=drift,
        drift_difference_ci=(drift - Z_95 * drift_se, drift + Z_95 * drift_se),
        skewness=long.skewness,
        excess_kurtosis=long.excess_kurtosis,
    )


@dataclass
class LlnTrace:
    epochs: np.ndarray
    running: np.ndarray
    stabilization: float

    @property
    def limit(self) -> float:
        return float(self.running[-1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"n": np.arange(1, len(self.epochs) + 1), "epoch_s": self.epochs,
                             "running_mean_s": self.running})

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def lln_check(params: ModelParams, initial: BookState, n_changes: int, seed: int,
              engine: Engine = Engine.FAST) -> LlnTrace:
    """Running T_n / n over one long path; stabilization = last-decile range / mean"""
    if n_changes < 100:
        raise ParameterError(f"n_changes must be >= 100, got {n_changes}")
    if Engine(engine) is Engine.FAST:
        path = simulate_path(spectrum_for(params), params, initial, math.inf, seed,
                             max_changes=n_changes, stream_keys=(0,))
    else:
        path = simulate_events(params, initial, math.inf, seed, max_changes=n_changes,
                               stream_keys=(0,)).path

    running = path.epochs / np.arange(1, len(path) + 1)
    tail = running[int(0.9 * len(running)):]
    stabilization = float((tail.max() - tail.min()) / tail.mean())
    logger.info(f"T_n/n after {len(path)} changes: {running[-1]:.6g}s (last-decile spread {stabilization:.3g})")
    return LlnTrace(epochs=path.epochs, running=running, stabilization=stabilization)
