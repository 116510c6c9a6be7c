"""Selector sweeps over kappa, repeats, frames and horizons, written as CSV."""

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import INFOSELECT_THREADS
from errors import InfoSelectError
from feature_selectors import run_method
from info_matrix import (
    ProblemInstance,
    build_problem,
    condition_on,
    is_informative,
    objective_value,
    restrict,
    scaled_mse,
)
from models import METHODS, SEEDED_METHODS, ExperimentConfig, Scenario, SweepRecord
from scenario import advance_scenario, generate_scenario, load_scenario, with_horizon

logger = logging.getLogger(__name__)

CSV_HEADER = ["instance", "method", "kappa", "repeat", "seed", "objective", "scaled_mse", "elapsed_s"]


@dataclass(frozen=True, eq=False)
class SweepInstance:
    name: str
    problem: ProblemInstance
    build_s: float


@dataclass
class SweepOutcome:
    records: List[SweepRecord]
    failures: List[Tuple[str, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


def candidate_pool(problem: ProblemInstance, K: int) -> ProblemInstance:
    """The K lowest-id landmarks with a nonzero increment."""
    pool = [inc.id for inc in problem.increments if is_informative(inc)][:K]
    if not pool:
        pool = problem.ids[:K]
    return restrict(problem, pool)


def _base_scenario(cfg: ExperimentConfig) -> Scenario:
    if cfg.scenario is not None:
        return load_scenario(cfg.scenario)
    return generate_scenario(cfg.seed, cfg.generate)


def _build(name: str, scenario: Scenario, candidates: Optional[int]) -> SweepInstance:
    start = time.perf_counter()
    problem = build_problem(scenario)
    if candidates is not None:
        problem = candidate_pool(problem, candidates)
    return SweepInstance(name=name, problem=problem, build_s=time.perf_counter() - start)


def build_instances(cfg: ExperimentConfig, scenario: Optional[Scenario] = None) -> List[SweepInstance]:
    """Frames advanced one step at a time, or one instance per horizon in frames_list."""
    scenario = scenario or _base_scenario(cfg)
    if cfg.frames_list is not None:
        return [_build(f"T{T}", with_horizon(scenario, T), cfg.candidates) for T in cfg.frames_list]

    instances = []
    current = scenario
    for frame in range(cfg.num_frames):
        if frame > 0:
            current = advance_scenario(current, min(1, current.T))
        instances.append(_build(f"frame{frame}", current, cfg.candidates))
    return instances


def _seed_for(cfg: ExperimentConfig, method: str, repeat: int) -> Optional[int]:
    return cfg.seed + repeat if method in SEEDED_METHODS else None


def _carried(problem: ProblemInstance, previous: Sequence[int], kappa: int) -> List[int]:
    """Previously selected landmarks still visible at the current first frame."""
    visible = [
        lid for lid in previous
        if lid in problem.index and problem.visibility.get(lid, (False,))[0]
    ]
    return visible[:kappa]


def run_chain(
    instances: Sequence[SweepInstance],
    method: str,
    kappa: int,
    repeat: int,
    cfg: ExperimentConfig,
) -> List[SweepRecord]:
    """One (method, kappa, repeat) cell across every instance, in order."""
    seed = _seed_for(cfg, method, repeat)
    carry = cfg.carry_over and cfg.frames_list is None
    previous: List[int] = []
    records = []
    for instance in instances:
        problem = instance.problem
        carried = _carried(problem, previous, kappa) if carry else []
        budget = min(kappa, problem.N) - len(carried)

        elapsed = 0.0
        selected = list(carried)
        if budget > 0:
            sub = condition_on(problem, carried) if carried else problem
            result = run_method(sub, method, budget, epsilon=cfg.epsilon_sample, seed=seed if seed is not None else 0)
            selected += result.selected
            elapsed = result.elapsed_s
        if cfg.time_scope == "total":
            elapsed += instance.build_s

        records.append(SweepRecord(
            instance=instance.name,
            method=method,
            kappa=kappa,
            repeat=repeat,
            seed=seed,
            objective=objective_value(problem, selected),
            scaled_mse=scaled_mse(problem, selected),
            elapsed_s=elapsed,
        ))
        previous = selected
        if carried:
            logger.debug(f"{instance.name} {method} kappa={kappa}: carried {len(carried)}, selected {budget} new")
    return records


def aggregate_rows(records: Sequence[SweepRecord], repeats: int) -> List[SweepRecord]:
    """Mean and standard-deviation rows for seeded methods run more than once."""
    if repeats <= 1:
        return []
    groups: Dict[Tuple[str, str, int], List[SweepRecord]] = {}
    for record in records:
        if record.method in SEEDED_METHODS and isinstance(record.repeat, int):
            groups.setdefault((record.instance, record.method, record.kappa), []).append(record)

    rows = []
    for (instance, method, kappa), group in groups.items():
        if len(group) < 2:
            continue
        for label, reduce in (("mean", np.mean), ("std", lambda v: np.std(v, ddof=1))):
            rows.append(SweepRecord(
                instance=instance,
                method=method,
                kappa=kappa,
                repeat=label,
                seed=None,
                objective=float(reduce([r.objective for r in group])),
                scaled_mse=float(reduce([r.scaled_mse for r in group])),
                elapsed_s=float(reduce([r.elapsed_s for r in group])),
            ))
    return rows


def sort_records(records: Sequence[SweepRecord], instance_order: Sequence[str]) -> List[SweepRecord]:
    rank = {name: i for i, name in enumerate(instance_order)}
    repeat_rank = {"mean": 1, "std": 2}

    def key(record: SweepRecord):
        if isinstance(record.repeat, int):
            repeat_key = (0, record.repeat)
        else:
            repeat_key = (repeat_rank.get(record.repeat, 3), 0)
        return rank.get(record.instance, len(rank)), METHODS.index(record.method), record.kappa, repeat_key

    return sorted(records, key=key)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_sweep_csv(filename, records: Sequence[SweepRecord]) -> Path:
    """Write the sweep table atomically."""
    output_path = Path(filename)
    if output_path.parent != Path(""):
        output_path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = output_path.with_name(output_path.name + ".tmp")
    with open(temp_file, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow([_fmt(getattr(record, column)) for column in CSV_HEADER])
        handle.flush()
        os.fsync(handle.fileno())
    temp_file.replace(output_path)
    logger.info(f"Wrote {len(records)} rows to {output_path}")
    return output_path


def run_sweep(
    cfg: ExperimentConfig,
    scenario: Optional[Scenario] = None,
    max_workers: int = INFOSELECT_THREADS,
) -> SweepOutcome:
    """Run every cell on a worker pool, then sort and write the table.

    A failing cell is logged and skipped; the rows of the other cells are still
    written and the outcome lists the failures.
    """
    instances = build_instances(cfg, scenario)
    cells = [
        (method, kappa, repeat)
        for method in cfg.methods
        for kappa in cfg.kappas
        for repeat in range(cfg.repeats if method in SEEDED_METHODS else 1)
    ]
    logger.info(f"Sweep: {len(cells)} cells over {len(instances)} instances with {max_workers} workers")

    records: List[SweepRecord] = []
    failures: List[Tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as ex:
        futures = {ex.submit(run_chain, instances, method, kappa, repeat, cfg): (method, kappa, repeat)
                   for method, kappa, repeat in cells}
        for future in as_completed(futures):
            method, kappa, repeat = futures[future]
            label = f"{method}/kappa={kappa}/repeat={repeat}"
            try:
                records.extend(future.result())
            except InfoSelectError as exc:
                logger.error(f"Cell {label} failed: {exc.detail()}")
                failures.append((label, exc.message))
            except Exception as exc:
                logger.exception(f"Cell {label} failed: {exc}")
                failures.append((label, str(exc)))

    records.extend(aggregate_rows(records, cfg.repeats))
    ordered = sort_records(records, [instance.name for instance in instances])
    write_sweep_csv(cfg.output, ordered)
    if failures:
        logger.error(f"{len(failures)} of {len(cells)} cells failed; partial results written to {cfg.output}")
    return SweepOutcome(records=ordered, failures=failures)
