import dataclasses
import itertools
import math
import statistics

import numpy as np
import pytest
from scipy.stats import chisquare

from bounds_analysis import greedy_factor, spectral_bounds
from conftest import diagonal_problem, random_problem
from errors import CapExceededError, ConfigError
from experiments import candidate_pool
from feature_selectors import (
    GRID_COLS,
    GRID_ROWS,
    baseline_select,
    exhaustive_optimal,
    fast_lowrank_greedy,
    grid_cell,
    linearized_select,
    randomized_greedy,
    run_method,
    sample_size,
    simple_greedy,
)
from info_matrix import build_problem, leverage_scores, objective_value, problem_from_matrices
from models import METHODS, ScenarioConfig
from scenario import generate_scenario


def check_result(problem, result, kappa):
    assert len(result.selected) == min(kappa, problem.N)
    assert len(set(result.selected)) == len(result.selected)
    assert result.objective == pytest.approx(objective_value(problem, result.selected), rel=1e-8, abs=1e-12)
    assert all(g >= -1e-10 for g in result.gains)
    assert sum(result.gains) == pytest.approx(result.objective, rel=1e-8, abs=1e-12)


class TestSimpleGreedy:
    def test_zero_budget(self):
        result = simple_greedy(diagonal_problem(), 0)
        assert result.selected == [] and result.objective == 0.0

    def test_modular_diagonal(self):
        result = simple_greedy(diagonal_problem(), 2)
        assert result.selected == [3, 2]
        np.testing.assert_allclose(result.gains, [3 / 4, 2 / 3])
        assert result.objective == pytest.approx(3 / 4 + 2 / 3)

    def test_ties_go_to_smallest_id(self):
        problem = problem_from_matrices(np.eye(3), [np.diag([0, 1.0, 0]), np.diag([1.0, 0, 0])], ids=[5, 2])
        assert simple_greedy(problem, 1).selected == [2]

    def test_result_invariants(self, rng):
        problem = random_problem(rng, n=15, N=8)
        for kappa in (1, 4, 8, 12):
            check_result(problem, simple_greedy(problem, kappa), kappa)

    def test_negative_budget(self):
        with pytest.raises(ConfigError):
            simple_greedy(diagonal_problem(), -1)


class TestLowRankGreedy:
    def test_full_budget(self, rng):
        problem = random_problem(rng, n=12, N=5)
        result = fast_lowrank_greedy(problem, problem.N)
        assert sorted(result.selected) == problem.ids
        assert result.objective == pytest.approx(objective_value(problem, problem.ids))

    def test_matches_simple_greedy(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            problem = random_problem(rng, n=27, N=12, rank=3)
            fast = fast_lowrank_greedy(problem, 6)
            slow = simple_greedy(problem, 6)
            assert fast.selected == slow.selected
            assert fast.objective == pytest.approx(slow.objective, rel=1e-8)
            check_result(problem, fast, 6)

    def test_matches_simple_greedy_on_scenario(self, small_scenario):
        problem = build_problem(small_scenario)
        assert fast_lowrank_greedy(problem, 5).selected == simple_greedy(problem, 5).selected


class TestRandomizedGreedy:
    def test_sample_size_at_operating_point(self):
        assert sample_size(150, 10, 0.5) == 11

    def test_smallest_epsilon_reduces_to_simple_greedy(self, rng):
        problem = random_problem(rng, n=15, N=9)
        for kappa in (1, 3, 5):
            result = randomized_greedy(problem, kappa, math.exp(-kappa), seed=11)
            assert result.selected == simple_greedy(problem, kappa).selected

    def test_deterministic_for_seed(self, rng):
        problem = random_problem(rng, n=15, N=9)
        a = randomized_greedy(problem, 3, 0.5, seed=4)
        b = randomized_greedy(problem, 3, 0.5, seed=4)
        assert a.model_dump(exclude={"elapsed_s"}) == b.model_dump(exclude={"elapsed_s"})
        check_result(problem, a, 3)

    @pytest.mark.parametrize("epsilon", [1.5, 0.001, float("nan")])
    def test_rejects_epsilon_out_of_range(self, rng, epsilon):
        with pytest.raises(ConfigError):
            randomized_greedy(random_problem(rng), 3, epsilon)

    def test_single_uniform_draw(self):
        rng = np.random.default_rng(5)
        problem = random_problem(rng, n=6, N=5)
        trials = 10000
        counts = {lid: 0 for lid in problem.ids}
        for seed in range(trials):
            counts[randomized_greedy(problem, 1, 1.0, seed=seed).selected[0]] += 1
        p = 1 / problem.N
        sigma = math.sqrt(trials * p * (1 - p))
        # Per-cell band widened for five simultaneous cells; chi-square is the joint 3-sigma check
        for count in counts.values():
            assert abs(count - trials * p) <= 4 * sigma
        assert chisquare(list(counts.values())).pvalue > 0.0027


class TestLinearizedSelect:
    def test_identity_base_uses_traces(self):
        assert linearized_select(diagonal_problem(), 2).selected == [3, 2]

    def test_full_budget(self, rng):
        problem = random_problem(rng, n=10, N=6)
        assert sorted(linearized_select(problem, 6).selected) == problem.ids

    def test_maximizes_modular_surrogate(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            problem = random_problem(rng, n=10, N=8)
            scores = leverage_scores(problem)
            best = max(sum(scores[l] for l in subset) for subset in itertools.combinations(problem.ids, 3))
            chosen = linearized_select(problem, 3)
            assert sum(scores[l] for l in chosen.selected) == pytest.approx(best, rel=1e-12)
            check_result(problem, chosen, 3)


def grid_problem(cells, qualities=None, hfov_h=0.6, hfov_v=0.45):
    """One landmark per (row, col) entry, bearing at the cell centre."""
    N = len(cells)
    deltas = [np.diag(np.eye(N)[i]) for i in range(N)]
    problem = problem_from_matrices(np.eye(N), deltas)
    bearings = {}
    for lid, (row, col) in enumerate(cells):
        if row is None:
            continue
        ah = -hfov_h + (col + 0.5) * 2 * hfov_h / GRID_COLS
        av = -hfov_v + (row + 0.5) * 2 * hfov_v / GRID_ROWS
        v = np.array([math.tan(ah), math.tan(av), 1.0])
        bearings[lid] = tuple(v / np.linalg.norm(v))
    return dataclasses.replace(
        problem,
        first_bearings=bearings,
        half_fov_h=hfov_h,
        half_fov_v=hfov_v,
        qualities=qualities or {lid: 0.5 for lid in range(N)},
    )


class TestBaselines:
    def test_quality(self):
        problem = dataclasses.replace(diagonal_problem(), qualities={1: 0.9, 2: 0.1, 3: 0.5})
        assert baseline_select(problem, 2, "quality").selected == [1, 3]

    def test_random_full_budget(self, rng):
        problem = random_problem(rng, N=7)
        result = baseline_select(problem, 7, "random", seed=3)
        assert sorted(result.selected) == problem.ids

    def test_grid_cell_centres(self):
        problem = grid_problem([(0, 0)])
        assert grid_cell(problem.first_bearings[0], 0.6, 0.45) == (0, 0)
        problem = grid_problem([(11, 14)])
        assert grid_cell(problem.first_bearings[0], 0.6, 0.45) == (11, 14)

    def test_grid_one_per_cell(self):
        cells = [(0, 0), (0, 7), (3, 2), (5, 14), (11, 0), (11, 14)]
        problem = grid_problem(cells)
        result = baseline_select(problem, len(cells), "grid", seed=1)
        assert sorted(result.selected) == list(range(len(cells)))
        # Row-major cell order
        assert result.selected == [0, 1, 2, 3, 4, 5]

    def test_grid_round_robin_by_quality(self):
        cells = [(2, 2), (2, 2), (4, 4)]
        problem = grid_problem(cells, qualities={0: 0.2, 1: 0.8, 2: 0.1})
        assert baseline_select(problem, 2, "grid").selected == [1, 2]
        assert baseline_select(problem, 3, "grid").selected == [1, 2, 0]

    def test_grid_falls_back_to_random_for_unseen(self):
        cells = [(1, 1), (None, None), (None, None)]
        problem = grid_problem(cells)
        result = baseline_select(problem, 3, "grid", seed=2)
        assert result.selected[0] == 0
        assert sorted(result.selected[1:]) == [1, 2]

    def test_grid_needs_projections(self, rng):
        with pytest.raises(ConfigError):
            baseline_select(random_problem(rng), 2, "grid")


class TestExhaustive:
    def test_zero_budget(self):
        assert exhaustive_optimal(diagonal_problem(), 0).selected == []

    def test_modular_diagonal(self):
        assert exhaustive_optimal(diagonal_problem(), 2).selected == [2, 3]

    def test_cap(self, rng):
        with pytest.raises(CapExceededError):
            exhaustive_optimal(random_problem(rng, N=10), 5, cap=100)

    def test_dominates_every_selector(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            problem = random_problem(rng, n=12, N=7)
            best = exhaustive_optimal(problem, 3).objective
            for method in METHODS:
                if method == "grid":
                    continue
                assert run_method(problem, method, 3, seed=1).objective <= best + 1e-12


class TestGuarantees:
    def test_greedy_against_optimum_on_small_vin_instance(self):
        scenario = generate_scenario(4, ScenarioConfig(num_landmarks=40, T=5))
        problem = candidate_pool(build_problem(scenario), 10)
        bounds = spectral_bounds(problem)
        factor = greedy_factor(bounds.alpha_bar, bounds.gamma_lower)
        matches = 0
        for kappa in range(1, problem.N + 1):
            greedy = simple_greedy(problem, kappa).objective
            optimal = exhaustive_optimal(problem, kappa).objective
            assert greedy - factor * optimal >= -1e-9
            matches += greedy == pytest.approx(optimal, rel=1e-9)
        print(f"greedy matched the optimum for {matches}/{problem.N} budgets")

    def test_determinism_across_selectors(self, small_scenario):
        problem = build_problem(small_scenario)
        for method in METHODS:
            if method == "optimal":
                continue
            a = run_method(problem, method, 4, seed=9)
            b = run_method(problem, method, 4, seed=9)
            assert a.model_dump(exclude={"elapsed_s"}) == b.model_dump(exclude={"elapsed_s"})
            check_result(problem, a, 4)


@pytest.mark.slow
class TestRuntimeOrdering:
    def test_operating_point(self):
        problem = build_problem(generate_scenario(1, ScenarioConfig(num_landmarks=150, T=13)))

        def median_time(method, kappa):
            return statistics.median(run_method(problem, method, kappa, seed=r).elapsed_s for r in range(5))

        times = {m: median_time(m, 70) for m in ("linearized", "randomized", "lowrank", "simple")}
        print(f"median seconds at kappa=70: {times}")
        assert times["linearized"] < times["randomized"] < times["lowrank"] < times["simple"]

        linear = [median_time("linearized", k) for k in (10, 70, 140)]
        assert (max(linear) - min(linear)) / max(linear) < 0.25
