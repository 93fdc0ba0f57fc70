import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanbench.accounting import budget_of
from kanbench.bench import (
    DataConfig,
    OptConfig,
    TrialConfig,
    TrialRecord,
    best_of,
    cl_metrics,
    envelope_indices,
    load_datasets,
    match_budget_values,
    match_budgets,
    read_records,
    record_lines,
    run_continual,
    run_sweep,
    run_trial,
    upper_envelope,
)
from kanbench.bspline import SplineSpec
from kanbench.data import make_task_sequence
from kanbench.errors import ConfigError
from kanbench.layers import ArchSpec

FORMULA_DATA = DataConfig(kind="formula", formula="PRODUCT", train_samples=240,
                          test_samples=120, data_seed=0)
TINY_MLP = ArchSpec("mlp", (2, 6, 1))
TINY_KAN = ArchSpec("kan", (2, 3, 1), spline=SplineSpec(3, 2))


def brute_force_envelope(points, orientation):
    """O(n^2) domination scan, the independent oracle for envelope_indices."""
    sign = 1.0 if orientation == "max" else -1.0
    keep = []
    for i, (b, m) in enumerate(points):
        dominated = False
        for j, (b2, m2) in enumerate(points):
            if j == i:
                continue
            if (b2 <= b and sign * m2 > sign * m) or (b2 < b and sign * m2 >= sign * m) \
                    or (b2 == b and m2 == m and j < i):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    keep.sort(key=lambda i: (points[i][0], i))
    return keep


class TestRunTrial:
    def test_single_epoch_history(self):
        cfg = TrialConfig(TINY_MLP, OptConfig(epochs=1, batch_size=64), FORMULA_DATA, seed=1)
        rec = run_trial(cfg)
        assert rec.status == "OK"
        assert len(rec.history) == 1
        assert rec.best == rec.history[0]

    def test_best_semantics(self):
        assert best_of([0.5, 0.7, 0.6], "classify") == 0.7
        assert best_of([0.5, 0.7, 0.6], "regress") == 0.5
        assert best_of([], "classify") is None

    def test_best_is_extremum_of_history(self):
        cfg = TrialConfig(TINY_KAN, OptConfig(epochs=4, batch_size=64), FORMULA_DATA, seed=3)
        rec = run_trial(cfg)
        assert rec.best == min(rec.history)

    def test_deterministic_record(self):
        cfg = TrialConfig(TINY_MLP, OptConfig(epochs=2, batch_size=64), FORMULA_DATA, seed=5)
        a, b = run_trial(cfg), run_trial(cfg)
        da, db = a.to_dict(), b.to_dict()
        da.pop("wall_s"), db.pop("wall_s")
        assert da == db

    def test_divergence_recorded_not_raised(self):
        cfg = TrialConfig(TINY_MLP, OptConfig(lr=1e200, epochs=3, batch_size=64),
                          FORMULA_DATA, seed=0)
        rec = run_trial(cfg)
        assert rec.status == "DIVERGED"
        assert rec.best is None

    def test_budgets_match_accounting(self):
        cfg = TrialConfig(TINY_KAN, OptConfig(epochs=1, batch_size=64), FORMULA_DATA, seed=0)
        rec = run_trial(cfg)
        assert rec.params_paper == budget_of(TINY_KAN, "params").value
        assert rec.flops == budget_of(TINY_KAN, "flops").value

    def test_lbfgs_path_runs(self):
        cfg = TrialConfig(TINY_MLP, OptConfig(optimizer="lbfgs", epochs=2, batch_size=128),
                          FORMULA_DATA, seed=2)
        rec = run_trial(cfg)
        assert rec.status == "OK" and len(rec.history) == 2


class TestRunSweep:
    def grid(self, n=3, epochs=1):
        return [TrialConfig(TINY_MLP, OptConfig(epochs=epochs, batch_size=64),
                            FORMULA_DATA, seed=9, idx=i) for i in range(n)]

    def test_singleton_grid_equals_run_trial(self):
        grid = self.grid(1)
        rec_sweep = run_sweep(grid)[0].to_dict()
        rec_single = run_trial(grid[0]).to_dict()
        rec_sweep.pop("wall_s"), rec_single.pop("wall_s")
        assert rec_sweep == rec_single

    def test_fault_isolation(self):
        grid = self.grid(2)
        bad = TrialConfig(TINY_MLP, OptConfig(lr=1e200, epochs=2, batch_size=64),
                          FORMULA_DATA, seed=9, idx=2)
        records = run_sweep(grid + [bad])
        assert len(records) == 3
        assert [r.status for r in records] == ["OK", "OK", "DIVERGED"]

    def test_parallel_matches_sequential(self):
        grid = self.grid(3)
        seq = [r.to_dict() for r in run_sweep(grid, jobs=1)]
        par = [r.to_dict() for r in run_sweep(grid, jobs=2)]
        for a, b in zip(seq, par):
            a.pop("wall_s"), b.pop("wall_s")
        assert seq == par

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            run_sweep([])

    def test_records_serialize_round_trip(self, tmp_path):
        records = run_sweep(self.grid(2))
        path = tmp_path / "records.jsonl"
        path.write_text(record_lines(records))
        back = read_records(str(path))
        assert [r.to_dict() for r in back] == [r.to_dict() for r in records]


class TestEnvelope:
    def test_spec_example(self):
        pts = [(1, 0.5), (2, 0.4), (3, 0.7)]
        assert upper_envelope(pts, "max") == [(1, 0.5), (3, 0.7)]

    def test_single_point(self):
        assert upper_envelope([(4.0, 1.0)], "max") == [(4.0, 1.0)]

    def test_min_orientation_duality(self, rng):
        pts = [(float(b), float(m)) for b, m in rng.normal(size=(40, 2))]
        neg = [(b, -m) for b, m in pts]
        assert envelope_indices(pts, "min") == envelope_indices(neg, "max")

    def test_idempotent(self, rng):
        pts = [(float(b), float(m)) for b, m in rng.normal(size=(60, 2))]
        env = upper_envelope(pts, "max")
        assert upper_envelope(env, "max") == env

    def test_sorted_strictly_improving(self, rng):
        pts = [(float(b), float(m)) for b, m in rng.normal(size=(80, 2))]
        env = upper_envelope(pts, "max")
        budgets = [b for b, _ in env]
        metrics = [m for _, m in env]
        assert budgets == sorted(budgets)
        assert all(m2 > m1 for m1, m2 in zip(metrics, metrics[1:]))

    def test_matches_brute_force_on_random_sets(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 60))
            # duplicate-heavy coordinates to exercise tie handling
            pts = list(zip(rng.integers(0, 8, size=n).astype(float),
                           rng.integers(0, 8, size=n).astype(float)))
            for orientation in ("max", "min"):
                assert envelope_indices(pts, orientation) == brute_force_envelope(pts, orientation)

    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=40),
           st.sampled_from(["max", "min"]))
    @settings(max_examples=200, deadline=None)
    def test_matches_brute_force_property(self, pts, orientation):
        pts = [(float(b), float(m)) for b, m in pts]
        assert envelope_indices(pts, orientation) == brute_force_envelope(pts, orientation)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            envelope_indices([], "max")


class TestMatchBudgets:
    def test_identical_lists_pair_perfectly(self):
        res = match_budget_values([10.0, 20.0, 30.0], [10.0, 20.0, 30.0], 0.05)
        assert res.pairs == [(0, 0), (1, 1), (2, 2)]
        assert res.unmatched_a == [] and res.unmatched_b == []

    def test_within_tolerance(self):
        res = match_budget_values([100.0], [104.0], 0.05)
        assert res.pairs == [(0, 0)]

    def test_outside_tolerance(self):
        res = match_budget_values([100.0], [110.0], 0.05)
        assert res.pairs == [] and res.unmatched_a == [0] and res.unmatched_b == [0]

    def test_denominator_is_a_side(self):
        # |a-b|/a: asymmetric; 5/100 = 5% pairs at tol 5%, 5/105 = 4.76% needs less
        assert match_budget_values([100.0], [105.0], 0.05).pairs == [(0, 0)]
        assert match_budget_values([105.0], [100.0], 0.0477).pairs == [(0, 0)]
        assert match_budget_values([105.0], [100.0], 0.0476).pairs == []

    def test_record_interface(self):
        recs_a = [TrialRecord(0, {}, 0, 100.0, 90, 500.0, [1.0], 1.0, "OK", 0.0)]
        recs_b = [TrialRecord(1, {}, 0, 104.0, 95, 800.0, [2.0], 2.0, "OK", 0.0)]
        assert match_budgets(recs_a, recs_b, "params", 0.05).pairs == [(0, 0)]
        assert match_budgets(recs_a, recs_b, "flops", 0.05).pairs == []


class TestContinual:
    def tiny_tasks(self, digits_dir):
        data = DataConfig(kind="idx",
                          images=os.path.join(digits_dir, "train-images-idx3-ubyte"),
                          labels=os.path.join(digits_dir, "train-labels-idx1-ubyte"),
                          test_images=os.path.join(digits_dir, "t10k-images-idx3-ubyte"),
                          test_labels=os.path.join(digits_dir, "t10k-labels-idx1-ubyte"),
                          data_seed=0)
        train, test = load_datasets(data)
        return data, train, test

    def test_matrix_shape_lower_triangular(self, digits_dir):
        data, train, test = self.tiny_tasks(digits_dir)
        tasks = make_task_sequence(train, test, [[0, 1, 2], [3, 4, 5], [6, 7, 8, 9]])
        arch = ArchSpec("mlp", (784, 8, 10))
        cfg = TrialConfig(arch, OptConfig(epochs=1, batch_size=64), data, seed=4)
        matrix = run_continual(cfg, tasks)
        assert [len(row) for row in matrix] == [1, 2, 3]
        assert all(0.0 <= v <= 100.0 for row in matrix for v in row)

    def test_single_task_equals_plain_trial_metric(self, digits_dir):
        data, train, test = self.tiny_tasks(digits_dir)
        tasks = make_task_sequence(train, test, [list(range(10))])
        arch = ArchSpec("mlp", (784, 8, 10))
        cfg = TrialConfig(arch, OptConfig(epochs=2, batch_size=64), data, seed=4)
        matrix = run_continual(cfg, tasks)
        assert len(matrix) == 1 and len(matrix[0]) == 1
        rec = run_trial(cfg, (train, test))
        assert matrix[0][0] == pytest.approx(rec.history[-1], abs=1e-9)

    def test_deterministic(self, digits_dir):
        data, train, test = self.tiny_tasks(digits_dir)
        tasks = make_task_sequence(train, test, [[0, 1, 2], [3, 4, 5], [6, 7, 8, 9]])
        cfg = TrialConfig(ArchSpec("mlp", (784, 8, 10)), OptConfig(epochs=1, batch_size=64),
                          data, seed=4)
        assert run_continual(cfg, tasks) == run_continual(cfg, tasks)


class TestClMetrics:
    def test_no_forgetting_zero_bwt(self):
        matrix = [[80.0], [80.0, 70.0], [80.0, 70.0, 90.0]]
        acc, bwt = cl_metrics(matrix)
        assert bwt == 0.0
        assert acc == pytest.approx(80.0)

    def test_hand_example(self):
        matrix = [[90.0], [80.0, 85.0], [10.0, 20.0, 95.0]]
        acc, bwt = cl_metrics(matrix)
        assert acc == pytest.approx(41.666666, abs=1e-4)
        assert bwt == pytest.approx(-72.5)

    def test_single_task_no_bwt(self):
        acc, bwt = cl_metrics([[66.0]])
        assert acc == 66.0 and bwt is None

    def test_constant_rows(self):
        matrix = [[55.0], [55.0, 55.0], [55.0, 55.0, 55.0]]
        acc, bwt = cl_metrics(matrix)
        assert acc == 55.0 and bwt == 0.0

    def test_shape_validation(self):
        with pytest.raises(ConfigError):
            cl_metrics([[1.0, 2.0]])
