import csv

import numpy as np
import pytest

import experiments
from errors import NumericalError
from experiments import (
    CSV_HEADER,
    _carried,
    aggregate_rows,
    build_instances,
    candidate_pool,
    run_chain,
    run_sweep,
)
from feature_selectors import simple_greedy
from info_matrix import anchor_frame_mse, build_problem, objective_value
from models import ExperimentConfig, ScenarioConfig, SweepRecord
from scenario import generate_scenario, with_horizon


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return reader.fieldnames, list(reader)


def sweep_config(tmp_path, **overrides):
    params = dict(
        generate=ScenarioConfig(num_landmarks=15, T=4),
        methods=["simple", "linearized"],
        kappas=[1, 3, 5],
        output=str(tmp_path / "sweep.csv"),
        seed=3,
    )
    params.update(overrides)
    return ExperimentConfig(**params)


class TestCandidatePool:
    def test_keeps_informative_lowest_ids(self, small_scenario):
        problem = build_problem(small_scenario)
        pool = candidate_pool(problem, 4)
        assert pool.N <= 4
        assert all(pool.increment(lid).trace > 0 for lid in pool.ids)
        assert pool.ids == sorted(pool.ids)


class TestRunSweep:
    def test_rows_and_header(self, tmp_path):
        cfg = sweep_config(tmp_path)
        outcome = run_sweep(cfg, max_workers=2)
        assert outcome.ok
        header, rows = read_rows(cfg.output)
        assert header == CSV_HEADER
        assert len(rows) == 2 * 3
        assert [(r["method"], r["kappa"]) for r in rows] == [
            ("simple", "1"), ("simple", "3"), ("simple", "5"),
            ("linearized", "1"), ("linearized", "3"), ("linearized", "5"),
        ]

    def test_objective_grows_with_kappa(self, tmp_path):
        outcome = run_sweep(sweep_config(tmp_path), max_workers=1)
        for method in ("simple", "linearized"):
            objectives = [r.objective for r in outcome.records if r.method == method]
            assert objectives == sorted(objectives)

    def test_results_do_not_depend_on_worker_count(self, tmp_path):
        one = run_sweep(sweep_config(tmp_path, output=str(tmp_path / "a.csv")), max_workers=1)
        many = run_sweep(sweep_config(tmp_path, output=str(tmp_path / "b.csv")), max_workers=4)
        key = lambda r: (r.instance, r.method, r.kappa, r.repeat, r.objective, r.scaled_mse)  # noqa: E731
        assert [key(r) for r in one.records] == [key(r) for r in many.records]

    def test_repeats_add_mean_and_std_for_seeded_methods(self, tmp_path):
        cfg = sweep_config(tmp_path, methods=["simple", "randomized"], kappas=[2], repeats=3)
        outcome = run_sweep(cfg, max_workers=2)
        randomized = [r for r in outcome.records if r.method == "randomized"]
        assert [r.repeat for r in randomized] == [0, 1, 2, "mean", "std"]
        assert [r.seed for r in randomized[:3]] == [3, 4, 5]
        mean = randomized[3]
        assert mean.objective == pytest.approx(np.mean([r.objective for r in randomized[:3]]))
        simple = [r for r in outcome.records if r.method == "simple"]
        assert [r.repeat for r in simple] == [0]
        _, rows = read_rows(cfg.output)
        assert sum(1 for r in rows if r["repeat"] == "std") == 1

    def test_single_repeat_has_no_aggregate_rows(self, tmp_path):
        cfg = sweep_config(tmp_path, methods=["random"], kappas=[2])
        outcome = run_sweep(cfg, max_workers=1)
        assert [r.repeat for r in outcome.records] == [0]

    def test_failed_cell_still_writes_the_rest(self, tmp_path, monkeypatch):
        real = experiments.run_method

        def flaky(problem, method, kappa, **kwargs):
            if method == "linearized" and kappa == 3:
                raise NumericalError("information matrix is not positive definite")
            return real(problem, method, kappa, **kwargs)

        monkeypatch.setattr(experiments, "run_method", flaky)
        cfg = sweep_config(tmp_path)
        outcome = run_sweep(cfg, max_workers=2)
        assert not outcome.ok
        assert outcome.failures == [("linearized/kappa=3/repeat=0", "information matrix is not positive definite")]
        _, rows = read_rows(cfg.output)
        assert len(rows) == 5

    def test_total_time_scope_includes_build(self, tmp_path):
        select_only = run_sweep(sweep_config(tmp_path, kappas=[0]), max_workers=1)
        total = run_sweep(sweep_config(tmp_path, kappas=[0], time_scope="total"), max_workers=1)
        assert all(r.elapsed_s == 0.0 for r in select_only.records)
        assert all(r.elapsed_s > 0.0 for r in total.records)


class TestAggregateRows:
    def test_sample_standard_deviation(self):
        records = [
            SweepRecord(instance="frame0", method="random", kappa=2, repeat=i, seed=i,
                        objective=v, scaled_mse=1.0, elapsed_s=0.1)
            for i, v in enumerate([1.0, 2.0, 3.0])
        ]
        mean, std = aggregate_rows(records, 3)
        assert mean.repeat == "mean" and mean.objective == pytest.approx(2.0)
        assert std.repeat == "std" and std.objective == pytest.approx(1.0)
        assert std.scaled_mse == 0.0


class TestCarryOver:
    def test_keeps_only_landmarks_visible_in_first_frame(self):
        problem = build_problem(generate_scenario(7, ScenarioConfig(num_landmarks=40, T=5)))
        seen = [lid for lid in problem.ids if problem.visibility[lid][0]]
        unseen = [lid for lid in problem.ids if not problem.visibility[lid][0]]
        previous = unseen[:2] + seen[:3]
        assert _carried(problem, previous, 10) == seen[:3]
        assert _carried(problem, previous, 2) == seen[:2]
        assert _carried(problem, [10_000], 3) == []

    def test_chain_over_advancing_frames(self):
        cfg = ExperimentConfig(
            generate=ScenarioConfig(num_landmarks=20, T=5),
            methods=["simple"],
            kappas=[4],
            num_frames=3,
            carry_over=True,
            seed=2,
        )
        instances = build_instances(cfg)
        assert [i.name for i in instances] == ["frame0", "frame1", "frame2"]
        records = run_chain(instances, "simple", 4, 0, cfg)
        assert len(records) == 3
        first = instances[0].problem
        assert records[0].objective == pytest.approx(simple_greedy(first, 4).objective)
        for record, instance in zip(records, instances):
            assert 0.0 <= record.objective <= objective_value(instance.problem, instance.problem.ids) + 1e-9

    def test_carry_over_ignored_for_horizon_sweeps(self, small_scenario):
        cfg = ExperimentConfig(
            scenario="unused.json",
            methods=["simple"],
            kappas=[3],
            frames_list=[2, 4],
            carry_over=True,
        )
        instances = build_instances(cfg, small_scenario)
        assert [i.name for i in instances] == ["T2", "T4"]
        records = run_chain(instances, "simple", 3, 0, cfg)
        for record, instance in zip(records, instances):
            assert record.objective == pytest.approx(simple_greedy(instance.problem, 3).objective)


class TestHorizonSaturation:
    def test_anchor_uncertainty_stops_improving_once_landmarks_leave_view(self):
        # Landmarks close ahead; at 2 m/s they fall below the minimum depth by frame 10
        cfg = ScenarioConfig(
            num_landmarks=20,
            T=15,
            speed=2.0,
            forward_range=(1.0, 2.2),
            lateral_range=(-0.5, 0.5),
            height_range=(-0.2, 0.4),
        )
        scenario = generate_scenario(6, cfg)
        selected = simple_greedy(build_problem(with_horizon(scenario, 10)), 5).selected

        mse = {T: anchor_frame_mse(build_problem(with_horizon(scenario, T)), selected) for T in range(1, 16)}
        for T in range(1, 10):
            assert mse[T + 1] <= mse[T] * (1 + 1e-7)
        for T in range(11, 16):
            assert mse[T] == pytest.approx(mse[10], rel=1e-6)
