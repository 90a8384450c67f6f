#!/usr/bin/env python3
"""
run_lob.py - Command-line runner for the one-level order book model

Subcommands:
  spectrum    eigenvalues of Delta (+ symmetry / orthonormality residuals)
  tau-dist    survival and density of the time to the next price change
  prob-up     probability that the next mid-price move is up
  prob-upup   probability that the next two moves are both up
  simulate    one price path (fast engine or full order-flow oracle)
  mc-study    Monte Carlo summary over many paths and horizons
  occupancy   time-weighted spread histogram over many paths
  recurrence  spread recurrence diagnostics
  lln         running average of price-change epochs

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 1 other model error.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from analytics import (prob_two_up, prob_up, prob_up_profile, recurrence_report,
                       survival_by_n_star, tau_curves)
from diffusion_lab import (DEFAULT_N_PATHS, SPREAD_BINS, Engine, McStudyConfig,
                           lln_check, run_study)
from event_oracle import simulate_events
from fast_simulator import simulate_path
from lob_logger import remove_run_logger, setup_run_logger
from model_core import (BookState, ConfigError, LobModelError, NumericalError,
                        ParameterError, StartOnBoundary, load_config, parse_state)
from scenarios import get_scenario, list_scenarios
from spectral_engine import build_delta, decompose, orthonormality_residual, spectrum_for

logger = logging.getLogger("run_lob")

EXIT_OK = 0
EXIT_MODEL_ERROR = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

FLOAT_FORMAT = "%.17g"


def setup_logging(verbose: bool = False):
    """Configure logging for the runner; stdout is kept for results"""
    log_path = "logs"

    # Ensure log directory exists
    if not os.path.exists(log_path):
        os.makedirs(log_path)

    log_file = os.path.join(log_path, "run_lob.log")
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stderr)
        ]
    )
    return logger


def parse_arguments(argv: Optional[List[str]] = None):
    """Parse command line arguments"""
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group(required=True)
    source.add_argument('--config', type=str,
                        help='Model config file (key=value: lambda, mu, theta, alpha, n_star, reset_dist, ...)')
    source.add_argument('--scenario', type=str,
                        help=f'Named parameter preset ({", ".join(list_scenarios())})')
    common.add_argument('--out', type=str, default='-',
                        help='Output file (default: stdout)')
    common.add_argument('--state', type=str, action='append',
                        help='Book state as bid,ask,spread (repeatable where several states make sense)')
    common.add_argument('--seed', type=int,
                        help='Random seed (mandatory for simulate, mc-study, occupancy, lln)')
    common.add_argument('--workers', type=int,
                        help='Worker processes for path-level parallelism (default: $LOB_WORKERS or 1)')
    common.add_argument('--verbose', action='store_true',
                        help='Debug logging')

    parser = argparse.ArgumentParser(description='One-level limit order book model with variable spread')
    commands = parser.add_subparsers(dest='command', required=True)

    spectrum = commands.add_parser('spectrum', parents=[common], help='Eigenvalues of Delta')
    spectrum.add_argument('--diagnostics-out', type=str,
                          help='Write symmetry/orthonormality residuals as JSON')

    tau = commands.add_parser('tau-dist', parents=[common], help='Duration until the next price change')
    tau.add_argument('--t-grid', type=str, required=True,
                     help='Time grid start:stop:step in seconds')
    tau.add_argument('--n-stars', type=str,
                     help='Comma list of queue caps: survival for each instead of one curve')

    up = commands.add_parser('prob-up', parents=[common], help='Probability of a price increase')
    up.add_argument('--profile-bid', type=int,
                    help='Tabulate against every ask size for this bid size')

    commands.add_parser('prob-upup', parents=[common], help='Probability of two consecutive increases')

    simulate = commands.add_parser('simulate', parents=[common], help='Simulate one price path')
    simulate.add_argument('--horizon', type=float, required=True, help='Horizon in seconds')
    simulate.add_argument('--engine', type=str, default='fast', choices=['fast', 'oracle'])
    simulate.add_argument('--events-out', type=str,
                          help='Oracle engine only: write the full event log as CSV')

    for name, text in (('mc-study', 'Monte Carlo summary'), ('occupancy', 'Spread occupancy')):
        study = commands.add_parser(name, parents=[common], help=text)
        study.add_argument('--horizon', type=str, default='300',
                           help='Comma list of horizons in seconds (default: 300)')
        study.add_argument('--n-paths', type=int, default=DEFAULT_N_PATHS,
                           help=f'Paths per horizon (default: {DEFAULT_N_PATHS})')
        study.add_argument('--engine', type=str, default='fast', choices=['fast', 'oracle'])
        if name == 'mc-study':
            study.add_argument('--csv-out', type=str, help='Flat per-horizon CSV')
            study.add_argument('--density-out', type=str,
                               help='Histogram and fitted normal density of the mid, as CSV')

    recurrence = commands.add_parser('recurrence', parents=[common], help='Spread recurrence diagnostics')
    recurrence.add_argument('--j-max', type=int, default=50, help='Length of phi (default: 50)')

    lln = commands.add_parser('lln', parents=[common], help='Running T_n / n')
    lln.add_argument('--n-changes', type=int, default=100000, help='Price changes (default: 100000)')
    lln.add_argument('--engine', type=str, default='fast', choices=['fast', 'oracle'])

    return parser.parse_args(argv)


# ------------------------------- Input helpers -------------------------------

def parse_t_grid(text: str) -> np.ndarray:
    """'start:stop:step' -> start, start+step, ..., stop"""
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise ConfigError(f"t-grid must look like start:stop:step, got {text!r}")
    if step <= 0 or stop < start or start < 0:
        raise ConfigError(f"t-grid needs 0 <= start <= stop and step > 0, got {text!r}")
    count = int(round((stop - start) / step))
    return start + step * np.arange(count + 1)


def parse_list(text: str, cast=float) -> list:
    try:
        return [cast(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list, got {text!r}")


def load_model(args):
    if args.config:
        params, initial = load_config(args.config)
    else:
        scenario = get_scenario(args.scenario)
        params, initial = scenario.params, scenario.initial
    states = [parse_state(s).check(params.n_star) for s in (args.state or [])]
    return params, initial, states


def single_state(args, initial: BookState, states: List[BookState]) -> BookState:
    if len(states) > 1:
        raise ConfigError(f"'{args.command}' takes a single --state")
    return states[0] if states else initial


def require_seed(args) -> int:
    if args.seed is None:
        raise ConfigError(f"'{args.command}' needs --seed")
    return args.seed


def resolve_workers(args) -> int:
    """--workers, else $LOB_WORKERS, else 1"""
    if args.workers is None:
        raw = os.getenv("LOB_WORKERS", "1")
        try:
            args.workers = int(raw)
        except ValueError:
            raise ConfigError(f"LOB_WORKERS must be an integer, got {raw!r}")
    if args.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {args.workers}")
    return args.workers


def write_frame(frame: pd.DataFrame, out: str) -> None:
    if out == '-':
        frame.to_csv(sys.stdout, index=False, float_format=FLOAT_FORMAT)
    else:
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT)


def write_json(payload: dict, out: str) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out == '-':
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


# ------------------------------- Commands -------------------------------

def cmd_spectrum(args, params, initial, states):
    delta = build_delta(params)
    spec = decompose(delta, params.chi)
    diagnostics = {
        "n_star": params.n_star,
        "symmetry_residual": float(np.abs(delta - delta.T).max()),
        "orthonormality_residual": orthonormality_residual(spec.basis),
        "max_eigenvalue": float(spec.xi.max()),
    }
    logger.info(f"Delta diagnostics: {diagnostics}")
    write_frame(pd.DataFrame({"k": np.arange(1, len(spec.xi) + 1), "xi": spec.xi,
                              "decay_rate": spec.decay_rates(params)}), args.out)
    if args.diagnostics_out:
        write_json(diagnostics, args.diagnostics_out)


def cmd_tau_dist(args, params, initial, states):
    state = single_state(args, initial, states)
    grid = parse_t_grid(args.t_grid)
    if args.n_stars:
        write_frame(survival_by_n_star(params, parse_list(args.n_stars, int), state, grid), args.out)
        return
    write_frame(tau_curves(spectrum_for(params), params, state, grid).to_frame(), args.out)


def cmd_prob_up(args, params, initial, states):
    spec = spectrum_for(params)
    if args.profile_bid is not None:
        spread = single_state(args, initial, states).spread if states else 1
        write_frame(prob_up_profile(spec, params, args.profile_bid, spread), args.out)
        return
    rows = [{"bid": s.bid, "ask": s.ask, "spread": s.spread, "prob_up": prob_up(spec, params, s)}
            for s in (states or [initial])]
    write_frame(pd.DataFrame(rows), args.out)


def cmd_prob_upup(args, params, initial, states):
    spec = spectrum_for(params)
    rows = [{"bid": s.bid, "ask": s.ask, "spread": s.spread, "prob_two_up": prob_two_up(spec, params, s)}
            for s in (states or [initial])]
    write_frame(pd.DataFrame(rows), args.out)


def cmd_simulate(args, params, initial, states):
    seed = require_seed(args)
    state = single_state(args, initial, states)
    if args.engine == 'oracle':
        trace = simulate_events(params, state, args.horizon, seed, record_events=bool(args.events_out))
        path = trace.path
        if args.events_out:
            trace.to_csv(args.events_out)
    else:
        if args.events_out:
            raise ConfigError("--events-out needs --engine oracle")
        path = simulate_path(spectrum_for(params), params, state, args.horizon, seed)
    logger.info(f"simulated {len(path)} price changes over {args.horizon}s")
    write_frame(path.to_frame(), args.out)


def study_config(args, params, initial, states) -> McStudyConfig:
    return McStudyConfig(params=params, initial=single_state(args, initial, states),
                         horizons=parse_list(args.horizon), n_paths=args.n_paths,
                         seed=require_seed(args), engine=Engine(args.engine))


def cmd_mc_study(args, params, initial, states, run_log):
    summary = run_study(study_config(args, params, initial, states), workers=args.workers)
    summary.warnings = run_log.warnings()
    summary.warning_counts = run_log.get_category_distribution()
    write_json(summary.to_dict(), args.out)
    if args.csv_out:
        summary.to_csv(args.csv_out)
    if args.density_out:
        summary.density_frame().to_csv(args.density_out, index=False, float_format=FLOAT_FORMAT)


def cmd_occupancy(args, params, initial, states):
    summary = run_study(study_config(args, params, initial, states), workers=args.workers)
    rows = [{"horizon_s": h.horizon, "spread_bin": b, "occupancy": h.occupancy[b],
             "stderr": h.occupancy_stderr[b]}
            for h in summary.horizons for b in SPREAD_BINS]
    write_frame(pd.DataFrame(rows), args.out)


def cmd_recurrence(args, params, initial, states):
    report = recurrence_report(spectrum_for(params), params, args.j_max)
    write_json(report.to_dict(), args.out)


def cmd_lln(args, params, initial, states):
    state = single_state(args, initial, states)
    trace = lln_check(params, state, args.n_changes, require_seed(args), Engine(args.engine))
    write_frame(trace.to_frame(), args.out)


COMMANDS = {
    'spectrum': cmd_spectrum,
    'tau-dist': cmd_tau_dist,
    'prob-up': cmd_prob_up,
    'prob-upup': cmd_prob_upup,
    'simulate': cmd_simulate,
    'occupancy': cmd_occupancy,
    'recurrence': cmd_recurrence,
    'lln': cmd_lln,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function"""
    load_dotenv()
    args = parse_arguments(argv)
    setup_logging(args.verbose)
    run_log = setup_run_logger()

    try:
        resolve_workers(args)
        params, initial, states = load_model(args)
        if args.command == 'mc-study':
            cmd_mc_study(args, params, initial, states, run_log)
        else:
            COMMANDS[args.command](args, params, initial, states)
        return EXIT_OK
    except (ParameterError, StartOnBoundary) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except LobModelError as e:
        logger.error(f"Model error: {e}")
        return EXIT_MODEL_ERROR
    finally:
        remove_run_logger(run_log)


if __name__ == "__main__":
    sys.exit(main())
