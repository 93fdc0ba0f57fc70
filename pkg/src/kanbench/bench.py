"""Experiment engine: trials, sweeps, envelopes, budget matching, continual
learning.

A trial trains one architecture on one dataset, evaluates the test metric
after every epoch (accuracy in percent for classification, RMSE for
regression), and records the best value seen during training. Sweeps expand
a config grid; every trial draws an independent stream derived from (master
seed, trial index), so results do not depend on execution order.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .accounting import FlopsConvention, budget_of, params_introspect
from .data import (
    CLASSIFY,
    Dataset,
    FormulaSpec,
    TaskSequence,
    apply_stats,
    batch_iter,
    gen_formula_dataset,
    load_csv,
    load_idx,
    standardize,
    subsample_stratified,
)
from .errors import ConfigError, KanbenchError, NumericError
from .layers import ArchSpec, arch_to_dict, build_model, model_backward, model_forward, param_arrays
from .nncore import accuracy, cross_entropy, derive_rng, mse, rmse
from .optim import Adam, Lbfgs, flatten, write_back

STATUS_OK = "OK"
STATUS_DIVERGED = "DIVERGED"

EVAL_CHUNK = 1024


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class OptConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 20
    lbfgs_history: int = 10

    def __post_init__(self):
        if self.optimizer not in ("adam", "lbfgs"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class DataConfig:
    """Declarative dataset source; loading is deterministic given the config."""

    kind: str                          # formula | csv | idx
    formula: str | None = None
    train_samples: int = 3000
    test_samples: int = 1000
    lo: float = -1.0
    hi: float = 1.0
    path: str | None = None            # csv
    label_column: str | None = None
    test_fraction: float = 0.2
    images: str | None = None          # idx
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    subsample_train: int = 0           # 0 keeps everything
    subsample_test: int = 0
    standardize: bool = False
    data_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("formula", "csv", "idx"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "formula" and not self.formula:
            raise ConfigError("formula dataset needs a formula name")
        if self.kind == "csv" and (not self.path or not self.label_column):
            raise ConfigError("csv dataset needs path and label_column")
        if self.kind == "idx" and not all((self.images, self.labels, self.test_images, self.test_labels)):
            raise ConfigError("idx dataset needs images/labels/test_images/test_labels")


def load_datasets(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    """(train, test) pair for a data config."""
    rng = derive_rng(cfg.data_seed, 0xDA7A)
    if cfg.kind == "formula":
        spec = FormulaSpec(cfg.formula, cfg.train_samples, cfg.test_samples, cfg.lo, cfg.hi)
        train, test = gen_formula_dataset(spec, rng)
    elif cfg.kind == "csv":
        full = load_csv(cfg.path, cfg.label_column)
        n_test = max(1, int(round(full.n * cfg.test_fraction)))
        order = rng.permutation(full.n)
        test = full.take(np.sort(order[:n_test]), name=full.name + "/test")
        train = full.take(np.sort(order[n_test:]), name=full.name + "/train")
    else:
        train = load_idx(cfg.images, cfg.labels)
        test = load_idx(cfg.test_images, cfg.test_labels)
    if cfg.subsample_train and train.task_kind == CLASSIFY:
        train = subsample_stratified(train, cfg.subsample_train, rng)
    if cfg.subsample_test and test.task_kind == CLASSIFY:
        test = subsample_stratified(test, cfg.subsample_test, rng)
    if cfg.standardize:
        train, stats = standardize(train)
        test = apply_stats(test, *stats)
    return train, test


@dataclass(frozen=True)
class TrialConfig:
    arch: ArchSpec
    opt: OptConfig
    data: DataConfig
    seed: int = 0
    idx: int = 0
    flops_conv: FlopsConvention = FlopsConvention()


@dataclass
class TrialRecord:
    idx: int
    arch: dict
    seed: int
    params_paper: float
    params_exact: int
    flops: float
    history: list[float]
    best: float | None
    status: str
    wall_s: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(**d)


def record_lines(records) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def read_records(path: str) -> list[TrialRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TrialRecord.from_dict(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# training

def loss_and_grads(arch: ArchSpec, model, x: np.ndarray, y: np.ndarray, task_kind: str):
    out, caches = model_forward(arch, model, x)
    if task_kind == CLASSIFY:
        loss, dout = cross_entropy(out, y)
    else:
        loss, dout = mse(out, y[:, None])
    return loss, model_backward(arch, model, caches, dout)


def evaluate(arch: ArchSpec, model, ds: Dataset) -> float:
    """Test metric: accuracy in percent (classify) or RMSE (regress)."""
    outs = []
    for start in range(0, ds.n, EVAL_CHUNK):
        out, _ = model_forward(arch, model, ds.features[start : start + EVAL_CHUNK])
        outs.append(out)
    out = np.concatenate(outs)
    if ds.task_kind == CLASSIFY:
        return accuracy(out, ds.targets)
    return rmse(out, ds.targets[:, None])


def _train_epoch_adam(arch, model, opt, train, batch_size, rng):
    for xb, yb in batch_iter(train, batch_size, rng):
        _, grads = loss_and_grads(arch, model, xb, yb, train.task_kind)
        opt.step(param_arrays(grads))


def _train_epoch_lbfgs(arch, model, opt, train, batch_size, rng):
    params = param_arrays(model)
    for xb, yb in batch_iter(train, batch_size, rng):
        def oracle(vec):
            write_back(vec, params)
            loss, grads = loss_and_grads(arch, model, xb, yb, train.task_kind)
            return loss, flatten(param_arrays(grads))
        x_new, _ = opt.step(flatten(params), oracle)
        write_back(x_new, params)


def best_of(history: list[float], task_kind: str) -> float | None:
    if not history:
        return None
    return max(history) if task_kind == CLASSIFY else min(history)


def run_trial(cfg: TrialConfig, datasets: tuple[Dataset, Dataset] | None = None) -> TrialRecord:
    """Train, evaluate per epoch, and record. Numeric divergence yields a
    DIVERGED record with the partial history instead of an exception."""
    t0 = time.perf_counter()
    train, test = datasets if datasets is not None else load_datasets(cfg.data)
    rng = derive_rng(cfg.seed, cfg.idx)
    model = build_model(cfg.arch, rng)
    if cfg.opt.optimizer == "adam":
        opt = Adam(param_arrays(model), lr=cfg.opt.lr)
        epoch_fn = _train_epoch_adam
    else:
        opt = Lbfgs(history=cfg.opt.lbfgs_history)
        epoch_fn = _train_epoch_lbfgs
    history: list[float] = []
    status = STATUS_OK
    for _ in range(cfg.opt.epochs):
        try:
            # overflow during a diverging trial is data, not a warning
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                epoch_fn(cfg.arch, model, opt, train, cfg.opt.batch_size, rng)
                metric = evaluate(cfg.arch, model, test)
            if not np.isfinite(metric):
                raise NumericError("non-finite test metric")
        except NumericError:
            status = STATUS_DIVERGED
            break
        history.append(float(metric))
    return TrialRecord(
        idx=cfg.idx,
        arch=arch_to_dict(cfg.arch),
        seed=cfg.seed,
        params_paper=budget_of(cfg.arch, "params", params_mode="paper").value,
        params_exact=params_introspect(model),
        flops=budget_of(cfg.arch, "flops", cfg.flops_conv).value,
        history=history,
        best=best_of(history, train.task_kind),
        status=status,
        wall_s=time.perf_counter() - t0,
    )


def _run_trial_safe(cfg: TrialConfig) -> TrialRecord:
    try:
        return run_trial(cfg)
    except KanbenchError:
        return TrialRecord(idx=cfg.idx, arch=arch_to_dict(cfg.arch), seed=cfg.seed,
                           params_paper=budget_of(cfg.arch, "params").value,
                           params_exact=0, flops=budget_of(cfg.arch, "flops", cfg.flops_conv).value,
                           history=[], best=None, status=STATUS_DIVERGED, wall_s=0.0)


def run_sweep(grid: list[TrialConfig], jobs: int = 1, record_cb=None) -> list[TrialRecord]:
    """Run every trial in the grid; one record per config, failures isolated.

    Records are delivered (and written by the callback) in grid order so a
    rerun of the same grid is byte-identical regardless of parallelism.
    """
    if not grid:
        raise ConfigError("empty sweep grid")
    records: list[TrialRecord] = []
    if jobs <= 1:
        cache: dict[DataConfig, tuple[Dataset, Dataset]] = {}
        for cfg in grid:
            if cfg.data not in cache:
                cache[cfg.data] = load_datasets(cfg.data)
            try:
                rec = run_trial(cfg, cache[cfg.data])
            except KanbenchError:
                rec = _run_trial_safe(cfg)
            records.append(rec)
            if record_cb:
                record_cb(rec)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_trial_safe, cfg) for cfg in grid]
            for fut in futures:
                rec = fut.result()
                records.append(rec)
                if record_cb:
                    record_cb(rec)
    return records


# ---------------------------------------------------------------------------
# envelopes and budget matching

def envelope_indices(points, orientation: str = "max") -> list[int]:
    """Indices of the Pareto-optimal subset of (budget, metric) points.

    A point survives iff no other point has metric strictly better at a
    budget no larger (ties on both coordinates keep the first occurrence).
    Output is sorted by budget; metrics improve strictly along it.
    """
    if orientation not in ("max", "min"):
        raise ConfigError(f"orientation must be max or min, got {orientation!r}")
    if not len(points):
        raise ConfigError("empty point set")
    sign = 1.0 if orientation == "max" else -1.0
    order = sorted(range(len(points)), key=lambda i: (points[i][0], -sign * points[i][1], i))
    keep, best = [], -np.inf
    for i in order:
        m = sign * points[i][1]
        if m > best:
            keep.append(i)
            best = m
    return keep


def upper_envelope(points, orientation: str = "max"):
    """The Pareto-optimal (budget, metric) points themselves."""
    return [points[i] for i in envelope_indices(points, orientation)]


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]      # (index into a, index into b)
    unmatched_a: list[int]
    unmatched_b: list[int]


def match_budget_values(a: list[float], b: list[float], tol: float) -> MatchResult:
    """Pair each a-budget with the nearest b-budget within relative tol
    (denominator: a's budget). b entries may serve several a entries."""
    if tol <= 0:
        raise ConfigError("tol must be > 0")
    if not b:
        return MatchResult([], list(range(len(a))), [])
    pairs, unmatched_a, used_b = [], [], set()
    for i, ba in enumerate(a):
        j = min(range(len(b)), key=lambda j: (abs(b[j] - ba), j))
        gap_ok = (b[j] == 0) if ba == 0 else (abs(b[j] - ba) / abs(ba) <= tol)
        if gap_ok:
            pairs.append((i, j))
            used_b.add(j)
        else:
            unmatched_a.append(i)
    return MatchResult(pairs, unmatched_a, [j for j in range(len(b)) if j not in used_b])


def record_budget(rec: TrialRecord, kind: str) -> float:
    if kind == "params":
        return rec.params_paper
    if kind == "params_exact":
        return float(rec.params_exact)
    if kind == "flops":
        return rec.flops
    raise ConfigError(f"unknown budget kind {kind!r}")


def match_budgets(records_a, records_b, kind: str, tol: float) -> MatchResult:
    return match_budget_values([record_budget(r, kind) for r in records_a],
                               [record_budget(r, kind) for r in records_b], tol)


# ---------------------------------------------------------------------------
# continual learning

def run_continual(cfg: TrialConfig, tasks: TaskSequence) -> list[list[float]]:
    """Class-incremental protocol: train tasks in order (cfg.opt.epochs per
    task, fresh optimizer state each task, shared full-logit head, no replay);
    after each task evaluate accuracy (percent) on every seen task's test set.
    Returns the lower-triangular accuracy matrix."""
    rng = derive_rng(cfg.seed, cfg.idx)
    model = build_model(cfg.arch, rng)
    matrix: list[list[float]] = []
    for t, task in enumerate(tasks.tasks):
        if cfg.opt.optimizer == "adam":
            opt = Adam(param_arrays(model), lr=cfg.opt.lr)
            epoch_fn = _train_epoch_adam
        else:
            opt = Lbfgs(history=cfg.opt.lbfgs_history)
            epoch_fn = _train_epoch_lbfgs
        for _ in range(cfg.opt.epochs):
            epoch_fn(cfg.arch, model, opt, task.train, cfg.opt.batch_size, rng)
        matrix.append([evaluate(cfg.arch, model, tasks.tasks[i].test) for i in range(t + 1)])
    return matrix


def cl_metrics(matrix: list[list[float]]) -> tuple[float, float | None]:
    """(ACC, BWT): mean final-row accuracy, and mean final-minus-diagonal
    drop over non-final tasks (None when there is a single task)."""
    t = len(matrix)
    if t < 1 or any(len(row) != i + 1 for i, row in enumerate(matrix)):
        raise ConfigError("accuracy matrix must be lower-triangular with T >= 1 rows")
    acc = float(np.mean(matrix[-1]))
    if t == 1:
        return acc, None
    bwt = float(np.mean([matrix[-1][i] - matrix[i][i] for i in range(t - 1)]))
    return acc, bwt
