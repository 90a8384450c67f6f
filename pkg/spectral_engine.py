"""
spectral_engine.py - Closed-form laws of the killed two-queue chain

Both level-I queues evolve as independent copies of the birth-death
generator until one of them hits 0 (depletion). Conjugating the killed
generator by chi^((b+a)/2) gives the symmetric operator

    sqrt(lambda*upsilon) * Delta - (2(lambda+upsilon) - 4 sqrt(lambda*upsilon)) * I

so one dense eigen-decomposition of Delta yields every law needed
downstream: joint depletion law, survival kernel, duration CDF/density and
the exponential-window functionals used when the spread is wider than 1.

Coordinates are always (bid, ask).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from scipy import linalg

from model_core import (BookState, EigenSolverFailure, ModelParams,
                        NumericalInconsistency, ParameterError, StartOnBoundary)

logger = logging.getLogger(__name__)

PROBABILITY_SLACK = 1e-8
CLAMP_LOG_THRESHOLD = 1e-12
RESIDUAL_TOLERANCE = 1e-8


class Side(Enum):
    BID = "bid"
    ASK = "ask"

    @property
    def other(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


# ------------------------------- Lattice -------------------------------

@dataclass(frozen=True)
class LatticeIndex:
    """Flattening of the interior lattice {1..N*}^2: k = (bid-1)*N* + (ask-1)"""
    n_star: int

    def __len__(self) -> int:
        return self.n_star * self.n_star

    def flat(self, bid: int, ask: int) -> int:
        if not (1 <= bid <= self.n_star and 1 <= ask <= self.n_star):
            raise StartOnBoundary(f"({bid}, {ask}) is not in 1..{self.n_star}")
        return (bid - 1) * self.n_star + (ask - 1)

    def point(self, k: int) -> Tuple[int, int]:
        if not 0 <= k < len(self):
            raise IndexError(f"flat index {k} outside 0..{len(self) - 1}")
        return k // self.n_star + 1, k % self.n_star + 1

    @property
    def bids(self) -> np.ndarray:
        return np.repeat(np.arange(1, self.n_star + 1), self.n_star)

    @property
    def asks(self) -> np.ndarray:
        return np.tile(np.arange(1, self.n_star + 1), self.n_star)


@dataclass(frozen=True)
class BoundaryState:
    """Exit point of the two-queue chain: which side emptied, size of the other"""
    side: Side
    survivor: int

    def neighbour(self) -> Tuple[int, int]:
        """Interior point one step away from the exit, (bid, ask)"""
        if self.side is Side.BID:
            return 1, self.survivor
        return self.survivor, 1

    def swapped(self) -> "BoundaryState":
        return BoundaryState(self.side.other, self.survivor)


def boundary_states(n_star: int) -> List[BoundaryState]:
    """All 2N* exits, ask depletions first"""
    return ([BoundaryState(Side.ASK, w) for w in range(1, n_star + 1)]
            + [BoundaryState(Side.BID, w) for w in range(1, n_star + 1)])


@dataclass(frozen=True, eq=False)
class Spectrum:
    xi: np.ndarray
    basis: np.ndarray
    lattice: LatticeIndex
    chi: float

    def decay_rates(self, params: ModelParams) -> np.ndarray:
        """r_k = 2(lambda+upsilon) - (4 + xi_k) sqrt(lambda*upsilon)"""
        return 2.0 * (params.lam + params.upsilon) - (4.0 + self.xi) * math.sqrt(params.lam * params.upsilon)

    def row(self, bid: int, ask: int) -> np.ndarray:
        """(f_1(bid, ask), ..., f_K(bid, ask))"""
        return self.basis[self.lattice.flat(bid, ask)]


# ------------------------------- Operator and decomposition -------------------------------

def build_delta(params: ModelParams) -> np.ndarray:
    """
    Symmetric finite-difference operator on the interior lattice.

    Lattice neighbours get 1, the diagonal is -4 plus sqrt(lambda/upsilon)
    for each coordinate sitting at the cap. Neighbours on the depletion
    boundary are dropped.
    """
    n = params.n_star
    lattice = LatticeIndex(n)
    size = len(lattice)
    delta = np.zeros((size, size))
    cap = math.sqrt(params.chi)

    for k in range(size):
        bid, ask = lattice.point(k)
        delta[k, k] = -4.0 + cap * ((bid == n) + (ask == n))
        for nb_bid, nb_ask in ((bid + 1, ask), (bid - 1, ask), (bid, ask + 1), (bid, ask - 1)):
            if 1 <= nb_bid <= n and 1 <= nb_ask <= n:
                delta[k, lattice.flat(nb_bid, nb_ask)] = 1.0
    return delta


def orthonormality_residual(basis: np.ndarray) -> float:
    return float(np.abs(basis.T @ basis - np.eye(basis.shape[1])).max())


def decompose(delta: np.ndarray, chi: float = None) -> Spectrum:
    """
    Full eigen-decomposition of Delta, eigenvalues ascending, each
    eigenvector's first nonzero component made positive.

    chi defaults to the value encoded in the (N*, N*) corner of Delta,
    whose diagonal is -4 + 2 sqrt(chi).
    """
    delta = np.asarray(delta, dtype=float)
    size = delta.shape[0]
    n_star = int(round(math.sqrt(size)))
    if delta.shape != (size, size) or n_star * n_star != size:
        raise ParameterError(f"Delta must be square of size N*^2, got shape {delta.shape}")
    if np.abs(delta - delta.T).max() > RESIDUAL_TOLERANCE:
        raise ParameterError("Delta must be symmetric")
    if chi is None:
        chi = ((delta[-1, -1] + 4.0) / 2.0) ** 2

    try:
        xi, basis = linalg.eigh(delta)
    except (linalg.LinAlgError, ValueError) as e:
        raise EigenSolverFailure(f"symmetric eigensolver failed: {e}")
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(basis))):
        raise EigenSolverFailure("symmetric eigensolver returned non-finite values")
    residual = orthonormality_residual(basis)
    if residual > RESIDUAL_TOLERANCE:
        raise EigenSolverFailure(f"eigenvectors are not orthonormal (residual {residual:.3g})")

    order = np.argsort(xi, kind="stable")
    xi, basis = xi[order], basis[:, order]
    scale = np.abs(basis).max(axis=0)
    for k in range(size):
        nonzero = np.flatnonzero(np.abs(basis[:, k]) > 1e-12 * scale[k])
        if basis[nonzero[0], k] < 0:
            basis[:, k] = -basis[:, k]

    return Spectrum(xi=xi, basis=basis, lattice=LatticeIndex(n_star), chi=float(chi))


@lru_cache(maxsize=32)
def spectrum_for(params: ModelParams) -> Spectrum:
    """Decomposition of Delta for params, computed once per process"""
    if params.n_star > 60:
        logger.warning(f"N*={params.n_star}: dense eigensolver on {params.n_star ** 2} rows, expect it to be slow")
    spec = decompose(build_delta(params), params.chi)
    logger.debug(f"decomposed Delta for N*={params.n_star}, chi={params.chi:.6g}")
    return spec


# ------------------------------- Helpers -------------------------------

def checked_probability(raw: float, what: str = "probability") -> float:
    """Clamp a computed probability to [0, 1] after checking it is only rounding noise"""
    if not math.isfinite(raw) or raw < -PROBABILITY_SLACK or raw > 1.0 + PROBABILITY_SLACK:
        raise NumericalInconsistency(f"{what} evaluated to {raw!r}, outside [0, 1]")
    clamped = min(1.0, max(0.0, raw))
    if abs(clamped - raw) > CLAMP_LOG_THRESHOLD:
        logger.warning(f"{what} clamped from {raw!r} to {clamped!r}")
    return clamped


def _start_row(spec: Spectrum, start: Tuple[int, int]) -> np.ndarray:
    bid, ask = start
    if not (1 <= bid <= spec.lattice.n_star and 1 <= ask <= spec.lattice.n_star):
        raise StartOnBoundary(f"start ({bid}, {ask}) is not an interior point of 1..{spec.lattice.n_star}")
    return spec.row(bid, ask)


def exit_weights(spec: Spectrum, params: ModelParams, start: Tuple[int, int],
                 target: BoundaryState) -> np.ndarray:
    """
    Coefficients W_k with u_target(t, start) = sum_k W_k (1 - exp(-t r_k)) / r_k.

    W_k = sqrt(lambda*upsilon) chi^((a1+a2-x-y)/2) f_k(start) f_k(exit neighbour);
    the chi power is evaluated in log space.
    """
    f_start = _start_row(spec, start)
    neighbour = target.neighbour()
    exponent = 0.5 * (target.survivor - start[0] - start[1]) * math.log(params.chi)
    prefactor = math.sqrt(params.lam * params.upsilon) * math.exp(exponent)
    return prefactor * f_start * spec.row(*neighbour)


def all_exit_weights(spec: Spectrum, params: ModelParams, start: Tuple[int, int]) -> np.ndarray:
    """Rows of exit_weights for every exit, in boundary_states order"""
    return np.vstack([exit_weights(spec, params, start, target)
                      for target in boundary_states(spec.lattice.n_star)])


def occupancy_weights(spec: Spectrum, params: ModelParams, start: Tuple[int, int],
                      survivor_side: Side) -> np.ndarray:
    """
    Row j-1 holds V_k with P[t < depletion, survivor_side queue = j at t]
    = sum_k V_k exp(-t r_k).
    """
    f_start = _start_row(spec, start)
    lattice = spec.lattice
    coordinate = lattice.asks if survivor_side is Side.ASK else lattice.bids
    log_chi = math.log(params.chi)
    shift = np.exp(0.5 * (lattice.bids + lattice.asks - start[0] - start[1]) * log_chi)
    weighted = spec.basis * shift[:, None]

    rows = np.zeros((lattice.n_star, len(lattice)))
    for j in range(1, lattice.n_star + 1):
        rows[j - 1] = weighted[coordinate == j].sum(axis=0)
    return rows * f_start


# ------------------------------- Laws -------------------------------

def u_joint(spec: Spectrum, params: ModelParams, t: float, start: Tuple[int, int],
            target: BoundaryState) -> float:
    """P[depletion <= t, exit = target] from start; t may be math.inf"""
    weights = exit_weights(spec, params, start, target)
    rates = spec.decay_rates(params)
    if math.isinf(t):
        raw = float(np.sum(weights / rates))
    else:
        if t < 0:
            raise ParameterError(f"t must be >= 0, got {t}")
        raw = float(np.sum(weights * -np.expm1(-t * rates) / rates))
    return checked_probability(raw, "u_joint")


def survival_kernel(spec: Spectrum, params: ModelParams, t: float, start: Tuple[int, int],
                    at: Tuple[int, int]) -> float:
    """P[t < depletion, queues = at at time t] from start"""
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    f_start = _start_row(spec, start)
    f_at = _start_row(spec, at)
    exponent = 0.5 * (at[0] + at[1] - start[0] - start[1]) * math.log(params.chi)
    raw = math.exp(exponent) * float(np.sum(np.exp(-t * spec.decay_rates(params)) * f_start * f_at))
    return checked_probability(raw, "survival_kernel")


def _depletion_cdf(spec: Spectrum, params: ModelParams, t: float, start: Tuple[int, int]) -> Tuple[float, float]:
    """(P[depletion <= t], its density) from start"""
    total = all_exit_weights(spec, params, start).sum(axis=0)
    rates = spec.decay_rates(params)
    if math.isinf(t):
        return float(np.sum(total / rates)), 0.0
    cdf = float(np.sum(total * -np.expm1(-t * rates) / rates))
    density = float(np.sum(total * np.exp(-t * rates)))
    return cdf, density


def tau_cdf(spec: Spectrum, params: ModelParams, t: float, state: BookState) -> float:
    """Distribution of the time to the next price change from state"""
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    narrow, _ = _depletion_cdf(spec, params, t, (state.bid, state.ask))
    narrow = checked_probability(narrow, "tau_cdf")
    if not state.wide:
        return narrow
    if math.isinf(t):
        return 1.0
    survive_arrival = math.exp(-2.0 * params.alpha * t)
    return checked_probability((1.0 - survive_arrival) + narrow * survive_arrival, "tau_cdf")


def tau_density(spec: Spectrum, params: ModelParams, t: float, state: BookState) -> float:
    """Derivative of tau_cdf in t (1/sec)"""
    if t <= 0:
        raise ParameterError(f"tau_density needs t > 0, got {t}")
    narrow_cdf, narrow_density = _depletion_cdf(spec, params, t, (state.bid, state.ask))
    if state.wide:
        survive_arrival = math.exp(-2.0 * params.alpha * t)
        value = (2.0 * params.alpha * survive_arrival * (1.0 - narrow_cdf)
                 + narrow_density * survive_arrival)
    else:
        value = narrow_density
    if value < -PROBABILITY_SLACK:
        raise NumericalInconsistency(f"tau_density evaluated to {value!r} at t={t}")
    return max(0.0, value)


def exp_killed_depletion(spec: Spectrum, params: ModelParams, rate: float,
                         start: Tuple[int, int], target: BoundaryState) -> float:
    """P[depletion < L, exit = target] for an independent L ~ Exp(rate)"""
    if not rate > 0:
        raise ParameterError(f"killing rate must be > 0, got {rate}")
    weights = exit_weights(spec, params, start, target)
    raw = float(np.sum(weights / (rate + spec.decay_rates(params))))
    return checked_probability(raw, "exp_killed_depletion")


def exp_window_occupancy(spec: Spectrum, params: ModelParams, rate: float,
                         start: Tuple[int, int], survivor_side: Side, j: int) -> float:
    """
    P[L < depletion, the arrival at L lands opposite survivor_side,
    survivor_side queue = j at L] for L ~ Exp(rate) split evenly between
    the two sides.
    """
    if not rate > 0:
        raise ParameterError(f"killing rate must be > 0, got {rate}")
    if not 1 <= j <= spec.lattice.n_star:
        raise ParameterError(f"j must lie in 1..{spec.lattice.n_star}, got {j}")
    weights = occupancy_weights(spec, params, start, survivor_side)[j - 1]
    raw = 0.5 * rate * float(np.sum(weights / (rate + spec.decay_rates(params))))
    return checked_probability(raw, "exp_window_occupancy")
