"""Feature selectors: greedy variants, the modular surrogate, baselines and the oracle.

Every selector returns a SelectionResult whose `objective` is the true f of the chosen
set. Exact ties go to the smallest landmark id: candidates are scanned in ascending id
order and a later candidate only wins with a strictly larger gain.
"""

import heapq
import itertools
import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import COMBINATION_CAP, DEFAULT_EPSILON_SAMPLE, GRID_COLS, GRID_ROWS
from errors import CapExceededError, ConfigError
from info_matrix import (
    ProblemInstance,
    apply_smw_update,
    compact_gain,
    leverage_scores,
    objective_value,
    trace_of_inverse,
)
from models import SelectionResult
from rng import SplitMix64

logger = logging.getLogger(__name__)


def _budget(problem: ProblemInstance, kappa: int) -> int:
    if kappa < 0:
        raise ConfigError(f"kappa must be >= 0, got {kappa}")
    return min(kappa, problem.N)


def gains_along(problem: ProblemInstance, order: Sequence[int]) -> List[float]:
    """Marginal gains f(S_k) - f(S_{k-1}) along a selection order."""
    gains = []
    M = problem.omega0.M.copy()
    previous = problem.trace_inv0
    for lid in order:
        M += problem.increment(lid).delta
        current = trace_of_inverse(M)
        gains.append(previous - current)
        previous = current
    return gains


def _result(
    problem: ProblemInstance,
    method: str,
    kappa: int,
    selected: List[int],
    elapsed: float,
    gains: Optional[List[float]] = None,
    seed: Optional[int] = None,
) -> SelectionResult:
    if gains is None:
        gains = gains_along(problem, selected)
    objective = objective_value(problem, selected)
    logger.info(f"{method}: kappa={kappa} selected={len(selected)} f={objective:.6g} in {elapsed:.4f}s")
    return SelectionResult(
        method=method,
        kappa=kappa,
        seed=seed,
        selected=selected,
        gains=[float(g) for g in gains],
        objective=objective,
        elapsed_s=elapsed,
    )


# ---------------------------------------------------------------------------
# Greedy family
# ---------------------------------------------------------------------------


def _greedy_by_full_objective(
    problem: ProblemInstance,
    k: int,
    candidates_for: Callable[[List[int]], List[int]],
) -> Tuple[List[int], List[float]]:
    """Greedy loop that scores candidates by re-factorizing Omega_S + Delta_l."""
    M = problem.omega0.M.copy()
    trace_current = problem.trace_inv0
    remaining = list(problem.ids)
    selected, gains = [], []

    for it in range(k):
        best_id, best_gain, best_trace = None, -math.inf, None
        for lid in sorted(candidates_for(remaining)):
            trace_candidate = trace_of_inverse(M + problem.increment(lid).delta)
            gain = trace_current - trace_candidate
            if gain > best_gain:
                best_id, best_gain, best_trace = lid, gain, trace_candidate
        M += problem.increment(best_id).delta
        trace_current = best_trace
        remaining.remove(best_id)
        selected.append(best_id)
        gains.append(best_gain)
        logger.debug(f"iteration {it}: picked {best_id} gain={best_gain:.6g}")
    return selected, gains


def simple_greedy(problem: ProblemInstance, kappa: int) -> SelectionResult:
    k = _budget(problem, kappa)
    start = time.perf_counter()
    selected, gains = _greedy_by_full_objective(problem, k, lambda remaining: remaining)
    elapsed = time.perf_counter() - start
    return _result(problem, "simple", kappa, selected, elapsed, gains)


def fast_lowrank_greedy(problem: ProblemInstance, kappa: int) -> SelectionResult:
    """Greedy with Omega_S^-1 maintained by SMW updates.

    Each candidate only touches the position columns its landmark is seen in, so a
    gain costs a small dense solve against the (P, P^2) sub-blocks on those columns.
    """
    k = _budget(problem, kappa)
    start = time.perf_counter()

    P = problem.omega0_inv.copy()
    remaining = list(problem.ids)
    selected, gains = [], []
    for it in range(k):
        P2 = P @ P
        best_id, best_gain = None, -math.inf
        for lid in remaining:
            inc = problem.increment(lid)
            if inc.rank == 0:
                gain = 0.0
            else:
                block = np.ix_(inc.cols, inc.cols)
                gain = compact_gain(P[block], P2[block], inc.G_compact)
            if gain > best_gain:
                best_id, best_gain = lid, gain
        P = apply_smw_update(P, problem.increment(best_id).G)
        remaining.remove(best_id)
        selected.append(best_id)
        gains.append(best_gain)
        logger.debug(f"iteration {it}: picked {best_id} gain={best_gain:.6g}")

    elapsed = time.perf_counter() - start
    return _result(problem, "lowrank", kappa, selected, elapsed, gains)


def sample_size(N: int, kappa: int, epsilon: float) -> int:
    """Unclamped r = ceil((N / kappa) ln(1 / epsilon)), at least 1."""
    return max(1, math.ceil((N / kappa) * math.log(1.0 / epsilon)))


def check_epsilon(epsilon: float, kappa: int) -> None:
    lower = math.exp(-kappa)
    if not (math.isfinite(epsilon) and lower * (1 - 1e-12) <= epsilon <= 1.0):
        raise ConfigError(
            f"epsilon must lie in [e^-kappa, 1] = [{lower:.6g}, 1], got {epsilon}",
            code="bad_epsilon",
        )


def randomized_greedy(
    problem: ProblemInstance,
    kappa: int,
    epsilon: float = DEFAULT_EPSILON_SAMPLE,
    seed: int = 0,
) -> SelectionResult:
    """Greedy over r uniformly sampled remaining candidates per iteration."""
    k = _budget(problem, kappa)
    if k == 0:
        return _result(problem, "randomized", kappa, [], 0.0, [], seed=seed)
    check_epsilon(epsilon, kappa)

    r = sample_size(problem.N, kappa, epsilon)
    rng = SplitMix64(seed)
    start = time.perf_counter()
    selected, gains = _greedy_by_full_objective(
        problem,
        k,
        lambda remaining: rng.sample(remaining, min(r, len(remaining))),
    )
    elapsed = time.perf_counter() - start
    return _result(problem, "randomized", kappa, selected, elapsed, gains, seed=seed)


def linearized_select(problem: ProblemInstance, kappa: int) -> SelectionResult:
    """Top-kappa leverage scores tr(Omega_0^-2 Delta_l)."""
    k = _budget(problem, kappa)
    start = time.perf_counter()
    scores = leverage_scores(problem)
    selected = heapq.nsmallest(k, scores, key=lambda lid: (-scores[lid], lid))
    elapsed = time.perf_counter() - start
    return _result(problem, "linearized", kappa, selected, elapsed)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def grid_cell(bearing: Sequence[float], half_fov_h: float, half_fov_v: float) -> Tuple[int, int]:
    """(row, col) of a camera-frame bearing in the GRID_ROWS x GRID_COLS angular grid."""
    x, y, z = bearing
    col = math.floor((math.atan2(x, z) + half_fov_h) / (2 * half_fov_h) * GRID_COLS)
    row = math.floor((math.atan2(y, z) + half_fov_v) / (2 * half_fov_v) * GRID_ROWS)
    return min(max(row, 0), GRID_ROWS - 1), min(max(col, 0), GRID_COLS - 1)


def _grid_order(problem: ProblemInstance, k: int, rng: SplitMix64) -> List[int]:
    if problem.half_fov_h is None or problem.half_fov_v is None:
        raise ConfigError("grid baseline needs first-frame projections in the problem", code="no_projections")

    cells: Dict[Tuple[int, int], List[int]] = {}
    for lid in problem.ids:
        if lid in problem.first_bearings:
            cell = grid_cell(problem.first_bearings[lid], problem.half_fov_h, problem.half_fov_v)
            cells.setdefault(cell, []).append(lid)
    queues = [
        sorted(cells[cell], key=lambda lid: (-problem.qualities.get(lid, 0.0), lid))
        for cell in sorted(cells)
    ]

    selected: List[int] = []
    depth = 0
    while len(selected) < k and any(depth < len(q) for q in queues):
        for queue in queues:
            if depth < len(queue) and len(selected) < k:
                selected.append(queue[depth])
        depth += 1

    # Landmarks the first frame cannot see fill the rest at random
    unseen = [lid for lid in problem.ids if lid not in problem.first_bearings]
    rng.shuffle(unseen)
    selected.extend(unseen[: k - len(selected)])
    return selected


def baseline_select(
    problem: ProblemInstance,
    kappa: int,
    kind: str,
    seed: int = 0,
) -> SelectionResult:
    k = _budget(problem, kappa)
    rng = SplitMix64(seed)
    start = time.perf_counter()
    if kind == "random":
        selected = rng.sample(problem.ids, k)
    elif kind == "quality":
        selected = sorted(problem.ids, key=lambda lid: (-problem.qualities.get(lid, 0.0), lid))[:k]
    elif kind == "grid":
        selected = _grid_order(problem, k, rng)
    else:
        raise ConfigError(f"unknown baseline '{kind}'", code="unknown_method")
    elapsed = time.perf_counter() - start
    return _result(problem, kind, kappa, selected, elapsed, seed=None if kind == "quality" else seed)


def exhaustive_optimal(problem: ProblemInstance, kappa: int, cap: int = COMBINATION_CAP) -> SelectionResult:
    """Best kappa-subset by enumeration; the lexicographically smallest wins ties."""
    k = _budget(problem, kappa)
    count = math.comb(problem.N, k)
    if count > cap:
        raise CapExceededError(
            f"C({problem.N}, {k}) = {count} subsets exceeds the cap of {cap}",
            subsets=count,
            cap=cap,
        )

    start = time.perf_counter()
    base = problem.omega0.M
    deltas = [inc.delta for inc in problem.increments]
    best_subset: Tuple[int, ...] = ()
    best_trace = math.inf
    for subset in itertools.combinations(range(problem.N), k):
        M = base + sum((deltas[i] for i in subset), np.zeros_like(base))
        trace = trace_of_inverse(M)
        if trace < best_trace:
            best_subset, best_trace = subset, trace
    elapsed = time.perf_counter() - start

    ids = problem.ids
    return _result(problem, "optimal", kappa, [ids[i] for i in best_subset], elapsed)


def run_method(
    problem: ProblemInstance,
    method: str,
    kappa: int,
    epsilon: float = DEFAULT_EPSILON_SAMPLE,
    seed: int = 0,
    cap: int = COMBINATION_CAP,
) -> SelectionResult:
    """Dispatch on the method tag used by the CLI and the sweeps."""
    if method == "simple":
        return simple_greedy(problem, kappa)
    if method == "lowrank":
        return fast_lowrank_greedy(problem, kappa)
    if method == "randomized":
        return randomized_greedy(problem, kappa, epsilon, seed)
    if method == "linearized":
        return linearized_select(problem, kappa)
    if method in ("random", "grid", "quality"):
        return baseline_select(problem, kappa, method, seed)
    if method == "optimal":
        return exhaustive_optimal(problem, kappa, cap)
    raise ConfigError(f"unknown method '{method}'", code="unknown_method")
