"""
scenarios.py - Named parameter presets

Intensities estimated for three stocks (batches of 100 shares per second),
each with the two in-spread regimes alpha = upsilon + 1 and alpha = 2 upsilon.
N* = 10, uniform reset distribution, start from queues (5, 5) and a spread
of 4 ticks. Only mu + theta enters the model, so the whole death rate is
booked as market orders.

Reference values attached to each preset are Monte Carlo targets over
[0, 300s]: spread occupancy (1, 2, 3, 4+ ticks) and the mean
time between price changes.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

from model_core import DEFAULT_START, BookState, ModelParams, ParameterError, validate_params


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    params: ModelParams
    initial: BookState
    occupancy_target: Optional[Dict[str, float]] = None
    mean_duration_target: Optional[float] = None


def _stock(name: str, description: str, lam: float, upsilon: float, alpha: float,
           occupancy: List[float], mean_duration: float) -> Scenario:
    params = validate_params({"lambda": lam, "mu": upsilon, "theta": 0.0, "alpha": alpha,
                              "n_star": 10, "reset_dist": "uniform"})
    return Scenario(
        name=name,
        description=description,
        params=params,
        initial=BookState(*DEFAULT_START),
        occupancy_target=dict(zip(("1", "2", "3", "4+"), occupancy)),
        mean_duration_target=mean_duration,
    )


SCENARIOS: Dict[str, Scenario] = {s.name: s for s in [
    _stock("citigroup", "Citigroup, alpha = upsilon + 1", 2204, 2331, 2332,
           [0.97248, 0.02716, 0.00035, 0.00001], 0.0039),
    _stock("citigroup-2u", "Citigroup, alpha = 2 upsilon", 2204, 2331, 4662,
           [0.98627, 0.01365, 0.00007, 0.00001], 0.0039),
    _stock("ge", "General Electric, alpha = upsilon + 1", 317, 325, 326,
           [0.906891, 0.088491, 0.004135, 0.000564], 0.0086),
    _stock("ge-2u", "General Electric, alpha = 2 upsilon", 317, 325, 650,
           [0.95327, 0.045697, 0.000956, 0.000077], 0.0084),
    _stock("gm", "General Motors, alpha = upsilon + 1", 102, 104, 105,
           [0.86881, 0.12084, 0.008868, 0.001482], 0.0193),
    _stock("gm-2u", "General Motors, alpha = 2 upsilon", 102, 104, 208,
           [0.94383, 0.054443, 0.001579, 0.000148], 0.0188),
    Scenario(
        name="survival",
        description="Small book for duration curves: lambda 12, mu+theta 13, start (4, 5), spread 1",
        params=validate_params({"lambda": 12, "mu": 13, "theta": 0.0, "alpha": 13,
                                "n_star": 5, "reset_dist": "uniform"}),
        initial=BookState(4, 5, 1),
    ),
]}


def list_scenarios() -> List[str]:
    return sorted(SCENARIOS)


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ParameterError(f"unknown scenario {name!r}; choose from {', '.join(list_scenarios())}")
