import gzip
import os

import numpy as np
import pytest

from kanbench.data import (
    CLASSIFY,
    Dataset,
    FormulaSpec,
    apply_stats,
    batch_iter,
    formula_eval,
    gen_formula_dataset,
    load_csv,
    load_idx,
    make_task_sequence,
    register_formula,
    save_csv,
    save_idx,
    split_class_incremental,
    standardize,
    subsample_stratified,
)
from kanbench.digits import make_digits, render_digit, write_digits_corpus
from kanbench.errors import ConfigError, FormatError, InputError
from kanbench.nncore import make_rng


class TestFormulas:
    def test_product_hand_value(self):
        assert formula_eval("PRODUCT", np.array([[2.0, 3.0]]))[0] == 6.0

    def test_exp_sin_sq_hand_value(self):
        assert formula_eval("EXP_SIN_SQ", np.array([[0.5, 0.0]]))[0] == pytest.approx(np.e, abs=1e-6)

    def test_unknown_formula_rejected(self):
        with pytest.raises(ConfigError):
            FormulaSpec("NOPE")

    def test_generation_deterministic(self):
        spec = FormulaSpec("SUM_SIN", 50, 20)
        a_train, a_test = gen_formula_dataset(spec, make_rng(5))
        b_train, b_test = gen_formula_dataset(spec, make_rng(5))
        assert np.array_equal(a_train.features, b_train.features)
        assert np.array_equal(a_test.targets, b_test.targets)

    def test_targets_reproduce_closed_form_exactly(self):
        for name in ("PRODUCT", "EXP_SIN_SQ", "SUM_SIN", "COMPOSED", "RATIONAL", "HIGHFREQ"):
            train, test = gen_formula_dataset(FormulaSpec(name, 100, 50), make_rng(1))
            for ds in (train, test):
                assert np.array_equal(ds.targets, formula_eval(name, ds.features))

    def test_train_test_independent(self):
        train, test = gen_formula_dataset(FormulaSpec("PRODUCT", 100, 100), make_rng(2))
        assert not np.array_equal(train.features, test.features)

    def test_registry_extension(self):
        register_formula("DOUBLE_X", 1, lambda x: 2 * x[:, 0])
        try:
            ds, _ = gen_formula_dataset(FormulaSpec("DOUBLE_X", 10, 10), make_rng(0))
            assert np.array_equal(ds.targets, 2 * ds.features[:, 0])
        finally:
            from kanbench.data import FORMULAS
            FORMULAS.pop("DOUBLE_X")


class TestCsv:
    def test_first_appearance_label_mapping(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("f0,f1,label\n1,2,a\n3,4,b\n5,6,a\n")
        ds = load_csv(str(p), "label")
        assert ds.num_classes == 2
        assert np.array_equal(ds.targets, [0, 1, 0])
        assert np.array_equal(ds.features, [[1, 2], [3, 4], [5, 6]])

    def test_bad_cell_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("f0,label\n1,a\nnope,b\n3,a\n")
        with pytest.raises(InputError, match=r"rows \[3\]"):
            load_csv(str(p), "label")

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("f0,f1\n1,2\n")
        with pytest.raises(ConfigError):
            load_csv(str(p), "label")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(InputError):
            load_csv(str(p), "label")

    def test_round_trip_exact(self, tmp_path, rng):
        feats = rng.normal(size=(12, 4))
        labels = rng.integers(0, 3, size=12)
        p = tmp_path / "rt.csv"
        save_csv(str(p), feats, labels)
        ds = load_csv(str(p), "label")
        assert np.array_equal(ds.features, feats)
        # labels remapped in first-appearance order; class sizes preserved as a multiset
        assert sorted(np.bincount(ds.targets)) == sorted(np.bincount(labels))


class TestIdx:
    def test_round_trip(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(10, 5, 4)).astype(np.uint8)
        labels = rng.integers(0, 3, size=10).astype(np.uint8)
        ip, lp = str(tmp_path / "im"), str(tmp_path / "lb")
        save_idx(images, labels, ip, lp)
        ds = load_idx(ip, lp)
        assert ds.features.shape == (10, 20)
        assert np.array_equal(ds.targets, labels)
        assert np.array_equal(ds.features, images.reshape(10, -1) / 255.0)

    def test_pixel_scaling_endpoint(self, tmp_path):
        images = np.full((1, 2, 2), 255, dtype=np.uint8)
        save_idx(images, np.zeros(1, np.uint8), str(tmp_path / "i"), str(tmp_path / "l"))
        ds = load_idx(str(tmp_path / "i"), str(tmp_path / "l"))
        assert np.all(ds.features == 1.0)

    def test_magic_mismatch(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8)
        labels = np.zeros(3, np.uint8)
        save_idx(images, labels, str(tmp_path / "i"), str(tmp_path / "l"))
        with pytest.raises(FormatError, match="magic"):
            load_idx(str(tmp_path / "l"), str(tmp_path / "l"))  # label magic where image expected

    def test_count_mismatch(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8)
        save_idx(images, np.zeros(3, np.uint8), str(tmp_path / "i"), str(tmp_path / "l"))
        save_idx(images[:2], np.zeros(2, np.uint8), str(tmp_path / "i2"), str(tmp_path / "l2"))
        with pytest.raises(FormatError, match="images vs"):
            load_idx(str(tmp_path / "i"), str(tmp_path / "l2"))

    def test_gzip_transparent(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(4, 3, 3)).astype(np.uint8)
        labels = rng.integers(0, 2, size=4).astype(np.uint8)
        ip, lp = str(tmp_path / "i"), str(tmp_path / "l")
        save_idx(images, labels, ip, lp)
        for p in (ip, lp):
            with open(p, "rb") as fh:
                data = fh.read()
            with gzip.open(p + ".gz", "wb") as fh:
                fh.write(data)
        plain = load_idx(ip, lp)
        zipped = load_idx(ip + ".gz", lp + ".gz")
        assert np.array_equal(plain.features, zipped.features)


class TestStandardize:
    def make(self, rng):
        feats = np.column_stack([rng.normal(3, 2, size=40), np.full(40, 7.0), rng.normal(size=40)])
        return Dataset(feats, rng.integers(0, 2, size=40), CLASSIFY, "toy", num_classes=2)

    def test_constant_feature_unchanged(self, rng):
        ds = self.make(rng)
        out, _ = standardize(ds)
        assert np.array_equal(out.features[:, 1], ds.features[:, 1])

    def test_train_mean_zero(self, rng):
        out, _ = standardize(self.make(rng))
        assert abs(out.features[:, 0].mean()) < 1e-10

    def test_second_standardization_uses_identity_stats(self, rng):
        out, _ = standardize(self.make(rng))
        _, (mean2, std2) = standardize(out)
        assert np.abs(mean2[[0, 2]]).max() < 1e-10
        assert np.abs(std2[[0, 2]] - 1).max() < 1e-12

    def test_stats_never_peek_at_test(self, rng):
        train = self.make(rng)
        _, stats = standardize(train)
        test = self.make(make_rng(99))
        mutated = Dataset(test.features + 100, test.targets, CLASSIFY, "t", num_classes=2)
        a = apply_stats(test, *stats)
        b = apply_stats(mutated, *stats)
        assert np.allclose(b.features - a.features, 100 / stats[1])


class TestSplits:
    def toy(self):
        feats = np.arange(8.0)[:, None]
        return Dataset(feats, np.array([0, 1, 2, 2, 1, 0, 2, 1]), CLASSIFY, "toy", num_classes=3)

    def test_partition(self):
        parts = split_class_incremental(self.toy(), [[0], [1, 2]])
        assert [p[0].n for p in parts] == [2, 6]
        assert sum(p[0].n for p in parts) == 8
        for ds, classes in parts:
            assert set(np.unique(ds.targets)) <= set(classes)

    def test_hand_partition_sizes(self):
        ds = Dataset(np.zeros((4, 1)), np.array([0, 1, 2, 2]), CLASSIFY, "t", num_classes=3)
        parts = split_class_incremental(ds, [[0], [1, 2]])
        assert [p[0].n for p in parts] == [1, 3]

    def test_single_group_identity(self):
        ds = self.toy()
        parts = split_class_incremental(ds, [[0, 1, 2]])
        assert parts[0][0].n == ds.n
        assert np.array_equal(parts[0][0].targets, ds.targets)

    def test_overlap_rejected(self):
        with pytest.raises(ConfigError):
            split_class_incremental(self.toy(), [[0, 1], [1, 2]])

    def test_missing_class_rejected(self):
        with pytest.raises(ConfigError):
            split_class_incremental(self.toy(), [[0], [5]])

    def test_global_labels_preserved(self):
        parts = split_class_incremental(self.toy(), [[2], [0, 1]])
        assert set(np.unique(parts[0][0].targets)) == {2}

    def test_task_sequence(self):
        train, test = self.toy(), self.toy()
        seq = make_task_sequence(train, test, [[0], [1], [2]])
        assert len(seq) == 3
        assert seq.tasks[2].classes == (2,)


class TestBatches:
    def make(self):
        return Dataset(np.arange(10.0)[:, None], np.arange(10) % 2, CLASSIFY, "b", num_classes=2)

    def test_partial_batch_kept(self):
        sizes = [len(y) for _, y in batch_iter(self.make(), 3, make_rng(0))]
        assert sizes == [3, 3, 3, 1]

    def test_same_seed_same_order(self):
        a = np.concatenate([x[:, 0] for x, _ in batch_iter(self.make(), 3, make_rng(4))])
        b = np.concatenate([x[:, 0] for x, _ in batch_iter(self.make(), 3, make_rng(4))])
        assert np.array_equal(a, b)

    def test_multiset_equality(self):
        xs = np.concatenate([x[:, 0] for x, _ in batch_iter(self.make(), 4, make_rng(7))])
        assert np.array_equal(np.sort(xs), np.arange(10.0))

    def test_batch_size_validated(self):
        with pytest.raises(InputError):
            list(batch_iter(self.make(), 0, make_rng(0)))


class TestSubsample:
    def test_stratified_proportions(self, rng):
        targets = np.repeat(np.arange(4), [40, 30, 20, 10])
        ds = Dataset(rng.normal(size=(100, 2)), targets, CLASSIFY, "s", num_classes=4)
        sub = subsample_stratified(ds, 50, make_rng(0))
        assert sub.n == 50
        counts = np.bincount(sub.targets, minlength=4)
        assert np.array_equal(counts, [20, 15, 10, 5])

    def test_subsample_noop_when_larger(self, rng):
        ds = Dataset(rng.normal(size=(10, 2)), rng.integers(0, 2, 10), CLASSIFY, "s", num_classes=2)
        assert subsample_stratified(ds, 50, make_rng(0)) is ds


class TestDigitsCorpus:
    def test_render_shape_and_range(self):
        img = render_digit(7, make_rng(0))
        assert img.shape == (28, 28) and img.dtype == np.uint8

    def test_corpus_deterministic(self):
        a, la = make_digits(40, make_rng(3))
        b, lb = make_digits(40, make_rng(3))
        assert np.array_equal(a, b) and np.array_equal(la, lb)

    def test_balanced_classes(self):
        _, labels = make_digits(100, make_rng(1))
        assert np.array_equal(np.bincount(labels, minlength=10), np.full(10, 10))

    def test_written_corpus_loads(self, digits_dir):
        train = load_idx(os.path.join(digits_dir, "train-images-idx3-ubyte"),
                         os.path.join(digits_dir, "train-labels-idx1-ubyte"))
        test = load_idx(os.path.join(digits_dir, "t10k-images-idx3-ubyte"),
                        os.path.join(digits_dir, "t10k-labels-idx1-ubyte"))
        assert train.n == 600 and test.n == 200
        assert train.dim == 784 and train.num_classes == 10
        assert 0.0 <= train.features.min() and train.features.max() <= 1.0

    def test_write_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        write_digits_corpus(str(a), 30, 10, seed=5)
        write_digits_corpus(str(b), 30, 10, seed=5)
        for name in os.listdir(a):
            assert (a / name).read_bytes() == (b / name).read_bytes()
