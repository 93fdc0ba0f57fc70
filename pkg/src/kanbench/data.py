"""Dataset ingestion and generation.

Carriers: closed-form formula regression sets, CSV tabular classification,
and IDX-format image classification (big-endian, MNIST file layout, plain or
gzipped). Also: standardization with train-only statistics, stratified
subsampling, class-incremental task splits, and seeded batch iteration.
Datasets are immutable after construction and safe to share across trials.
"""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, FormatError, InputError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

CLASSIFY = "classify"
REGRESS = "regress"


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64
    targets: np.ndarray   # (n,) int64 class indices or float64 values
    task_kind: str
    name: str
    num_classes: int = 0

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise InputError(f"features must be (n>=1, d), got {self.features.shape}")
        if self.targets.shape != (self.features.shape[0],):
            raise InputError("one target per row required")
        if not np.all(np.isfinite(self.features)):
            raise InputError("non-finite feature values")
        if self.task_kind == CLASSIFY:
            if self.num_classes < 1:
                raise InputError("classification needs num_classes >= 1")
            if self.targets.min() < 0 or self.targets.max() >= self.num_classes:
                raise InputError("class index out of range")
        elif self.task_kind != REGRESS:
            raise InputError(f"unknown task kind {self.task_kind!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        return replace(self, features=self.features[idx], targets=self.targets[idx],
                       name=name or self.name)


# ---------------------------------------------------------------------------
# symbolic formula targets

def _product(x):
    return x[:, 0] * x[:, 1]


def _exp_sin_sq(x):
    return np.exp(np.sin(np.pi * x[:, 0]) + x[:, 1] ** 2)


def _sum_sin(x):
    return np.sin(np.pi * x[:, 0]) + np.sin(np.pi * x[:, 1])


def _composed(x):
    a = np.sin(np.pi * (x[:, 0] ** 2 + x[:, 1] ** 2))
    b = np.sin(np.pi * (x[:, 2] ** 2 + x[:, 3] ** 2))
    return np.exp(0.5 * (a + b))


def _rational(x):
    return x[:, 0] / (1.0 + x[:, 1] ** 2)


def _highfreq(x):
    return np.sin(5.0 * np.pi * x[:, 0]) * x[:, 1]


FORMULAS: dict[str, tuple[int, callable]] = {
    "PRODUCT": (2, _product),
    "EXP_SIN_SQ": (2, _exp_sin_sq),
    "SUM_SIN": (2, _sum_sin),
    "COMPOSED": (4, _composed),
    "RATIONAL": (2, _rational),
    "HIGHFREQ": (2, _highfreq),
}


def register_formula(name: str, dim: int, fn) -> None:
    """Extend the registry (configs refer to formulas by name)."""
    FORMULAS[name] = (int(dim), fn)


@dataclass(frozen=True)
class FormulaSpec:
    formula_id: str
    n_train: int = 3000
    n_test: int = 1000
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.formula_id not in FORMULAS:
            raise ConfigError(f"unknown formula {self.formula_id!r}; have {sorted(FORMULAS)}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ConfigError(f"bad sampling domain [{self.lo}, {self.hi}]")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("sample counts must be >= 1")

    @property
    def dim(self) -> int:
        return FORMULAS[self.formula_id][0]


def formula_eval(formula_id: str, x: np.ndarray) -> np.ndarray:
    dim, fn = FORMULAS[formula_id]
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dim:
        raise InputError(f"{formula_id} expects (n, {dim}) inputs, got {x.shape}")
    return fn(x)


def gen_formula_dataset(spec: FormulaSpec, rng: np.random.Generator):
    """(train, test) datasets: uniform features over the box, exact targets,
    the two splits drawn independently from the stream."""
    def draw(n, tag):
        x = rng.uniform(spec.lo, spec.hi, size=(n, spec.dim))
        return Dataset(features=x, targets=formula_eval(spec.formula_id, x),
                       task_kind=REGRESS, name=f"{spec.formula_id}/{tag}")
    return draw(spec.n_train, "train"), draw(spec.n_test, "test")


# ---------------------------------------------------------------------------
# CSV carrier

def load_csv(path: str, label_column: str, feature_columns: list[str] | None = None) -> Dataset:
    """Tabular classification file: header row, numeric feature columns, label
    column mapped to contiguous class indices in first-appearance order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"empty file: {path}") from None
        if label_column not in header:
            raise ConfigError(f"label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        feat_names = feature_columns or [h for h in header if h != label_column]
        missing = [c for c in feat_names if c not in header]
        if missing:
            raise ConfigError(f"feature columns {missing} not in header")
        feat_idx = [header.index(c) for c in feat_names]

        rows, labels, bad_rows = [], [], []
        for rownum, row in enumerate(reader, start=2):  # 1-based, after header
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in feat_idx])
                labels.append(row[label_idx])
            except (ValueError, IndexError):
                bad_rows.append(rownum)
    if bad_rows:
        raise InputError(f"unparseable cells in {path} at rows {bad_rows}")
    if not rows:
        raise InputError(f"no data rows in {path}")

    class_map: dict[str, int] = {}
    for lab in labels:
        class_map.setdefault(lab, len(class_map))
    targets = np.array([class_map[lab] for lab in labels], dtype=np.int64)
    return Dataset(features=np.array(rows, dtype=np.float64), targets=targets,
                   task_kind=CLASSIFY, name=os.path.basename(path),
                   num_classes=len(class_map))


def save_csv(path: str, features: np.ndarray, labels, label_column: str = "label") -> None:
    features = np.asarray(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(features.shape[1])] + [label_column])
        for row, lab in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [lab])


# ---------------------------------------------------------------------------
# IDX carrier

def _open_maybe_gzip(path: str):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path: str, magic_expected: int, header_dims: int):
    with _open_maybe_gzip(path) as fh:
        head = fh.read(4 * (1 + header_dims))
        if len(head) < 4 * (1 + header_dims):
            raise FormatError(f"truncated IDX header in {path}")
        fields = struct.unpack(f">{1 + header_dims}i", head)
        if fields[0] != magic_expected:
            raise FormatError(f"bad IDX magic {fields[0]} in {path}, expected {magic_expected}")
        dims = fields[1:]
        payload = fh.read()
    expected = int(np.prod(dims))
    if len(payload) < expected:
        raise FormatError(f"IDX payload of {path} has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """MNIST-layout pair of IDX files; pixels scaled to [0,1] and flattened."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    n = images.shape[0]
    feats = images.reshape(n, -1).astype(np.float64) / 255.0
    targets = labels.astype(np.int64)
    return Dataset(features=feats, targets=targets, task_kind=CLASSIFY,
                   name=os.path.basename(images_path),
                   num_classes=int(targets.max()) + 1)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise InputError(f"need (n, r, c) images and (n,) labels, got {images.shape}/{labels.shape}")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4i", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2i", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------------------
# transforms

def standardize(ds: Dataset):
    """Per-feature (x - mean)/std on the training set; zero-variance features
    pass through unchanged. Returns (dataset, (mean, std)) so test splits can
    reuse the training statistics."""
    mean = ds.features.mean(axis=0)
    std = ds.features.std(axis=0)
    keep = std == 0.0
    mean = np.where(keep, 0.0, mean)
    std = np.where(keep, 1.0, std)
    return apply_stats(ds, mean, std), (mean, std)


def apply_stats(ds: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    return replace(ds, features=(ds.features - mean) / std)


def subsample_stratified(ds: Dataset, n: int, rng: np.random.Generator) -> Dataset:
    """Class-proportional subsample without replacement (classification only)."""
    if ds.task_kind != CLASSIFY:
        raise InputError("stratified subsampling needs class labels")
    if n >= ds.n:
        return ds
    picks = []
    classes, counts = np.unique(ds.targets, return_counts=True)
    quota = np.maximum(1, np.floor(n * counts / ds.n).astype(int))
    while quota.sum() > n:
        quota[np.argmax(quota)] -= 1
    short = n - quota.sum()
    for i in np.argsort(-counts)[:short]:
        quota[i] += 1
    for cls, q in zip(classes, quota):
        idx = np.flatnonzero(ds.targets == cls)
        picks.append(rng.choice(idx, size=min(q, idx.size), replace=False))
    idx = np.sort(np.concatenate(picks))
    return ds.take(idx, name=f"{ds.name}[{n}]")


def split_class_incremental(ds: Dataset, groups: list[list[int]]):
    """Partition rows by label group; global label indices are preserved so a
    single shared head covers every task. Returns [(dataset, classes), ...]."""
    if ds.task_kind != CLASSIFY:
        raise ConfigError("class-incremental split needs a classification dataset")
    seen: set[int] = set()
    for g in groups:
        overlap = seen & set(g)
        if overlap:
            raise ConfigError(f"overlapping class groups: {sorted(overlap)}")
        seen |= set(g)
    present = set(np.unique(ds.targets).tolist())
    missing = seen - present
    if missing:
        raise ConfigError(f"classes {sorted(missing)} not present in {ds.name}")
    out = []
    for g in groups:
        mask = np.isin(ds.targets, list(g))
        out.append((ds.take(np.flatnonzero(mask), name=f"{ds.name}/classes{sorted(g)}"),
                    tuple(sorted(g))))
    return out


@dataclass(frozen=True)
class Task:
    train: Dataset
    test: Dataset
    classes: tuple[int, ...]


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple[Task, ...]

    def __len__(self):
        return len(self.tasks)


def make_task_sequence(train: Dataset, test: Dataset, groups: list[list[int]]) -> TaskSequence:
    tr = split_class_incremental(train, groups)
    te = split_class_incremental(test, groups)
    return TaskSequence(tuple(Task(a, b, g) for (a, g), (b, _) in zip(tr, te)))


def batch_iter(ds: Dataset, batch_size: int, rng: np.random.Generator):
    """One epoch of (features, targets) batches after a seeded shuffle; the
    last partial batch is kept."""
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    order = rng.permutation(ds.n)
    for start in range(0, ds.n, batch_size):
        idx = order[start : start + batch_size]
        yield ds.features[idx], ds.targets[idx]
