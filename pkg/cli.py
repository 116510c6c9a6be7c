"""Command-line harness: scenario-gen, select, sweep, horizon-sweep, bounds."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import COMBINATION_CAP, DEFAULT_EPSILON_SAMPLE, EXHAUSTIVE_MAX_N, LOG_LEVEL, configure_logging
from errors import ConfigError, InfoSelectError
from experiments import candidate_pool, run_sweep
from feature_selectors import run_method
from info_matrix import ProblemInstance, build_problem, problem_from_document
from bounds_analysis import build_bound_report
from models import METHODS, ControlInput, ExperimentConfig, ScenarioConfig
from scenario import generate_scenario, load_scenario, save_scenario, triangulable_count
from storage import load_json, save_json

logger = logging.getLogger(__name__)


def _load_problem(args) -> ProblemInstance:
    if args.problem:
        problem = problem_from_document(load_json(args.problem))
    else:
        problem = build_problem(load_scenario(args.scenario))
    if args.candidates is not None:
        problem = candidate_pool(problem, args.candidates)
    return problem


def _load_experiment(path: str) -> ExperimentConfig:
    cfg = ExperimentConfig.model_validate(load_json(path))
    if cfg.scenario is not None and not Path(cfg.scenario).is_absolute():
        beside = Path(path).parent / cfg.scenario
        if not Path(cfg.scenario).exists() and beside.exists():
            cfg = cfg.model_copy(update={"scenario": str(beside)})
    return cfg


def _parse_frames_list(text: str) -> List[int]:
    """'1,2,5' or '1-25' (inclusive) or a mix of both."""
    frames: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            frames.extend(range(int(lo), int(hi) + 1))
        elif part:
            frames.append(int(part))
    return frames


def cmd_scenario_gen(args) -> int:
    controls = None
    if args.controls:
        controls = [ControlInput.model_validate(c) for c in load_json(args.controls)]
    cfg = ScenarioConfig(
        num_landmarks=args.landmarks,
        T=args.frames,
        speed=args.speed,
        steering=args.steering,
        controls=controls,
        heading_noise=args.heading_noise,
    )
    scenario = generate_scenario(args.seed, cfg)
    save_scenario(scenario, args.out)
    print(f"🛰️  Scenario {args.out}: {len(scenario.landmarks)} landmarks, "
          f"{triangulable_count(scenario)} triangulable, {len(scenario.poses)} poses")
    return 0


def cmd_select(args) -> int:
    problem = _load_problem(args)
    result = run_method(problem, args.method, args.kappa, epsilon=args.epsilon, seed=args.seed, cap=args.cap)
    save_json(args.out, result)
    print(f"✅ {args.method}: {len(result.selected)} features, f={result.objective:.6g}, {result.elapsed_s:.4f}s")
    return 0


def _run_experiment(cfg: ExperimentConfig) -> int:
    outcome = run_sweep(cfg)
    print(f"📊 {len(outcome.records)} rows written to {cfg.output}")
    if not outcome.ok:
        print(f"❌ {len(outcome.failures)} cells failed")
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_experiment(args.config)
    updates = {}
    if args.carry_over:
        updates["carry_over"] = True
    if args.output:
        updates["output"] = args.output
    if args.time_scope:
        updates["time_scope"] = args.time_scope
    if args.frames_list:
        updates["frames_list"] = _parse_frames_list(args.frames_list)
    if updates:
        cfg = ExperimentConfig.model_validate({**cfg.model_dump(), **updates})
    return _run_experiment(cfg)


def cmd_horizon_sweep(args) -> int:
    if not args.frames_list:
        cfg = _load_experiment(args.config)
        if cfg.frames_list is None:
            raise ConfigError("horizon-sweep needs --frames-list or 'frames_list' in the config")
    return cmd_sweep(args)


def cmd_bounds(args) -> int:
    problem = _load_problem(args)
    report = build_bound_report(
        problem,
        args.kappa,
        epsilon_sample=args.epsilon,
        cap_N=args.exhaustive_max,
        alpha_max_assumed=args.alpha_max,
    )
    save_json(args.out, report)
    print(f"📐 alpha_bar={report.alpha_bar:.6g} gamma_lower={report.gamma_lower:.6g} "
          f"greedy_factor={report.greedy_factor}")
    return 0


def _add_problem_source(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", help="scenario JSON document")
    source.add_argument("--problem", help="problem instance JSON document")
    parser.add_argument("--candidates", type=int, help="restrict to the K lowest-id informative landmarks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infoselect", description="Task-aware visual feature selection")
    parser.add_argument("--log-level", default=LOG_LEVEL)
    parser.add_argument("--log-file", default=None, help="rotating log file (default from INFOSELECT_LOG_FILE)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("scenario-gen", help="generate a synthetic scenario")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--landmarks", type=int, default=150)
    gen.add_argument("--frames", type=int, default=13, help="horizon T")
    gen.add_argument("--speed", type=float, default=1.0)
    gen.add_argument("--steering", type=float, default=0.0)
    gen.add_argument("--heading-noise", type=float, default=0.0)
    gen.add_argument("--controls", help="JSON list of {u, delta}")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_scenario_gen)

    sel = sub.add_parser("select", help="run one selector")
    _add_problem_source(sel)
    sel.add_argument("--method", choices=METHODS, required=True)
    sel.add_argument("--kappa", type=int, required=True)
    sel.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON_SAMPLE)
    sel.add_argument("--seed", type=int, default=0)
    sel.add_argument("--cap", type=int, default=COMBINATION_CAP, help="exhaustive-search subset cap")
    sel.add_argument("--out", required=True)
    sel.set_defaults(func=cmd_select)

    for name, func, help_text in (
        ("sweep", cmd_sweep, "selector sweep over kappa"),
        ("horizon-sweep", cmd_horizon_sweep, "selector sweep over horizons"),
    ):
        sw = sub.add_parser(name, help=help_text)
        sw.add_argument("--config", required=True)
        sw.add_argument("--carry-over", action="store_true")
        sw.add_argument("--frames-list", help="horizons, e.g. '1-25' or '1,5,10'")
        sw.add_argument("--time-scope", choices=("select", "total"))
        sw.add_argument("--output")
        sw.set_defaults(func=func)

    bnd = sub.add_parser("bounds", help="curvature, submodularity ratio and guarantee factors")
    _add_problem_source(bnd)
    bnd.add_argument("--kappa", type=int, required=True)
    bnd.add_argument("--exhaustive-max", type=int, default=EXHAUSTIVE_MAX_N)
    bnd.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON_SAMPLE)
    bnd.add_argument("--alpha-max", type=float, help="assumed alpha_max when N is above the exhaustive limit")
    bnd.add_argument("--out", required=True)
    bnd.set_defaults(func=cmd_bounds)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_file is not None:
        configure_logging(args.log_level, args.log_file)
    else:
        configure_logging(args.log_level)

    try:
        return args.func(args)
    except ValidationError as exc:
        logger.error(f"Invalid input: {exc}")
        return 2
    except InfoSelectError as exc:
        logger.error(f"{exc.message} ({exc.detail()})")
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"Unexpected failure: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
