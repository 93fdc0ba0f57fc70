"""Command-line surface: params, flops, train, sweep, envelope, cl, gen-digits.

Configuration is a single JSON document; sweep blocks declare per-field value
lists expanded as a cartesian product. All randomness flows from one master
seed, so a published config reproduces its results exactly. Exit codes:
0 success (a DIVERGED trial is data, not failure), 2 usage/config errors,
3 empty result sets.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys

import numpy as np

from .accounting import FlopsConvention, flops_measured, layer_flop_counts, layer_param_counts
from .bench import (
    DataConfig,
    OptConfig,
    TrialConfig,
    cl_metrics,
    envelope_indices,
    load_datasets,
    read_records,
    run_continual,
    run_sweep,
    run_trial,
)
from .data import make_task_sequence
from .digits import write_digits_corpus
from .errors import ConfigError, KanbenchError
from .layers import ArchSpec, arch_from_dict, build_model
from .nncore import make_rng

DATA_DIR_ENV = "KANBENCH_DATA_DIR"

_CONFIG_KEYS = {"seed", "dataset", "arch", "optimizer", "sweep", "flops", "groups", "out"}
_PATH_FIELDS = ("path", "images", "labels", "test_images", "test_labels")


def _resolve_path(p: str | None) -> str | None:
    if p is None or os.path.isabs(p):
        return p
    root = os.environ.get(DATA_DIR_ENV)
    return os.path.join(root, p) if root else p


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def parse_dataset(d: dict) -> DataConfig:
    d = dict(d)
    for key in _PATH_FIELDS:
        if key in d:
            d[key] = _resolve_path(d[key])
    try:
        return DataConfig(**d)
    except TypeError as e:
        raise ConfigError(f"bad dataset block: {e}") from None


def parse_opt(d: dict) -> OptConfig:
    try:
        return OptConfig(**d)
    except TypeError as e:
        raise ConfigError(f"bad optimizer block: {e}") from None


def _trial_config(cfg: dict, seed: int, idx: int = 0) -> TrialConfig:
    if "dataset" not in cfg or "arch" not in cfg:
        raise ConfigError("config needs 'dataset' and 'arch' blocks")
    return TrialConfig(
        arch=arch_from_dict(cfg["arch"]),
        opt=parse_opt(cfg.get("optimizer", {})),
        data=parse_dataset(cfg["dataset"]),
        seed=seed,
        idx=idx,
        flops_conv=FlopsConvention.from_dict(cfg.get("flops", {})),
    )


def expand_sweep(cfg: dict, seed: int) -> list[TrialConfig]:
    """Cartesian product of the sweep block's per-field value lists."""
    sweep = cfg.get("sweep")
    if not sweep:
        raise ConfigError("sweep command needs a non-empty 'sweep' block")
    keys = sorted(sweep)
    value_lists = []
    for key in keys:
        vals = sweep[key]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep entry {key!r} must be a non-empty list")
        value_lists.append(vals)
    blocks = {"arch": dict(cfg.get("arch", {})), "optimizer": dict(cfg.get("optimizer", {})),
              "dataset": dict(cfg.get("dataset", {}))}
    grid = []
    for idx, combo in enumerate(itertools.product(*value_lists)):
        merged = {k: dict(v) for k, v in blocks.items()}
        for key, val in zip(keys, combo):
            section, _, field = key.partition(".")
            if section not in merged or not field:
                raise ConfigError(f"sweep key {key!r} must look like 'arch.grid'")
            merged[section][field] = val
        grid.append(_trial_config(
            {"arch": merged["arch"], "optimizer": merged["optimizer"],
             "dataset": merged["dataset"], "flops": cfg.get("flops", {})},
            seed, idx))
    return grid


# ---------------------------------------------------------------------------
# shared flag helpers

def _parse_widths(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in text.split(","))
    except ValueError:
        raise ConfigError(f"bad widths {text!r}; expected e.g. 784,16,10") from None
    if len(widths) < 2:
        raise ConfigError("need at least input and output widths, e.g. 784,10")
    return widths


def _arch_from_flags(args) -> ArchSpec:
    d = {
        "kind": args.kind,
        "widths": _parse_widths(args.widths),
        "activation": args.activation,
        "use_norm": args.norm,
        "nonlinear_first": args.nonlinear_first,
    }
    if args.kind != "mlp":
        lo, hi = (float(v) for v in args.range.split(","))
        d.update(grid=args.grid, order=args.order, range=[lo, hi])
    return arch_from_dict(d)


def _add_arch_flags(sub):
    sub.add_argument("--kind", required=True, choices=("kan", "mlp", "mlp_spline_pre", "mlp_spline_post"))
    sub.add_argument("--widths", required=True, help="comma-separated layer widths, e.g. 784,16,10")
    sub.add_argument("--grid", type=int, default=5, help="spline intervals G")
    sub.add_argument("--order", type=int, default=3, help="spline order K")
    sub.add_argument("--range", default="-1,1", help="spline range lo,hi")
    sub.add_argument("--activation", default="gelu", choices=("relu", "gelu", "silu"))
    sub.add_argument("--norm", action="store_true", help="layer norm after hidden linear layers")
    sub.add_argument("--nonlinear-first", action="store_true", dest="nonlinear_first")
    sub.add_argument("--json", action="store_true", help="machine-readable output")


def _emit(path: str | None, text: str):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands

def cmd_params(args) -> int:
    arch = _arch_from_flags(args)
    rows = layer_param_counts(arch)
    total_paper = sum(r["paper"] for r in rows)
    total_exact = sum(r["exact"] for r in rows)
    if args.json:
        print(json.dumps({"layers": rows, "total_paper": total_paper,
                          "total_exact": total_exact}, sort_keys=True))
        return 0
    print(f"{'layer':>5} {'d_in':>6} {'d_out':>6} {'paper':>12} {'exact':>12}")
    for r in rows:
        print(f"{r['layer']:>5} {r['d_in']:>6} {r['d_out']:>6} {r['paper']:>12.0f} {r['exact']:>12.0f}")
    print(f"total paper-mode params: {total_paper:.0f}")
    print(f"total exact params:      {total_exact:.0f}")
    return 0


def cmd_flops(args) -> int:
    arch = _arch_from_flags(args)
    conv = FlopsConvention.from_dict(json.loads(args.flops_table)) if args.flops_table else FlopsConvention()
    rows = layer_flop_counts(arch, conv)
    total = sum(r["flops"] for r in rows)
    model = build_model(arch, make_rng(0))
    measured = flops_measured(model, arch, conv, np.ones(arch.widths[0]))
    if args.json:
        print(json.dumps({"layers": rows, "total": total, "measured": measured},
                         sort_keys=True))
        return 0
    print(f"{'layer':>5} {'d_in':>6} {'d_out':>6} {'flops':>14}")
    for r in rows:
        print(f"{r['layer']:>5} {r['d_in']:>6} {r['d_out']:>6} {r['flops']:>14.1f}")
    print(f"total closed-form FLOPs: {total:.1f}")
    print(f"measured (diagnostic):   {measured:.1f}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    trial = _trial_config(cfg, seed)
    try:
        record = run_trial(trial)
    except OSError as e:
        raise ConfigError(f"dataset unavailable: {e}") from None
    line = json.dumps(record.to_dict(), sort_keys=True) + "\n"
    out = args.out or cfg.get("out")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(line)
    else:
        sys.stdout.write(line)
    print(f"status={record.status} best={record.best}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    grid = expand_sweep(cfg, seed)
    out = args.out or cfg.get("out")
    if not out:
        raise ConfigError("sweep needs --out or an 'out' config entry")
    done = 0
    with open(out, "w", encoding="utf-8") as fh:
        def sink(rec):
            nonlocal done
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            done += 1
            print(f"[{done}/{len(grid)}] idx={rec.idx} status={rec.status} best={rec.best}",
                  file=sys.stderr)
        try:
            run_sweep(grid, jobs=args.jobs, record_cb=sink)
        except OSError as e:
            raise ConfigError(f"dataset unavailable: {e}") from None
    return 0


def cmd_envelope(args) -> int:
    records = read_records(args.results)
    ok = [r for r in records if r.status == "OK" and r.best is not None]
    if not ok:
        print("no OK records in results file", file=sys.stderr)
        return 3
    def metric_of(r):
        return r.best if args.metric == "best" else r.history[-1]
    def budget_key(r):
        return {"params": r.params_paper, "params_exact": float(r.params_exact),
                "flops": r.flops}[args.budget]
    points = [(budget_key(r), metric_of(r)) for r in ok]
    lines = ["budget,metric,idx"]
    for i in envelope_indices(points, args.orientation):
        lines.append(f"{points[i][0]},{points[i][1]},{ok[i].idx}")
    _emit(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_cl(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    groups = cfg.get("groups")
    if not groups or len(groups) < 1:
        raise ConfigError("cl command needs a 'groups' list in the config")
    trial = _trial_config(cfg, seed)
    try:
        train, test = load_datasets(trial.data)
    except OSError as e:
        raise ConfigError(f"dataset unavailable: {e}") from None
    tasks = make_task_sequence(train, test, groups)
    matrix = run_continual(trial, tasks)
    acc, bwt = cl_metrics(matrix)
    payload = {"matrix": matrix, "acc": acc}
    if bwt is not None:
        payload["bwt"] = bwt
    _emit(args.out, json.dumps(payload, sort_keys=True) + "\n")
    return 0


def cmd_gen_digits(args) -> int:
    paths = write_digits_corpus(args.out, n_train=args.train, n_test=args.test, seed=args.seed)
    for key, path in sorted(paths.items()):
        print(f"{key}: {path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kanbench",
                                description="budget-matched KAN vs MLP comparison lab")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("params", help="parameter counts (paper and exact modes)")
    _add_arch_flags(sp)
    sp.set_defaults(fn=cmd_params)

    sp = sub.add_parser("flops", help="closed-form and measured FLOPs")
    _add_arch_flags(sp)
    sp.add_argument("--flops-table", help='JSON activation cost table, e.g. {"relu":0,"gelu":9,"silu":5}')
    sp.set_defaults(fn=cmd_flops)

    sp = sub.add_parser("train", help="run one trial from a config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sweep", help="run the config's sweep grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("envelope", help="Pareto envelope of a results file")
    sp.add_argument("--results", required=True)
    sp.add_argument("--metric", default="best", choices=("best", "final"))
    sp.add_argument("--budget", default="params", choices=("params", "params_exact", "flops"))
    sp.add_argument("--orientation", default="max", choices=("max", "min"))
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_envelope)

    sp = sub.add_parser("cl", help="class-incremental continual learning run")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(fn=cmd_cl)

    sp = sub.add_parser("gen-digits", help="write a synthetic digit corpus in MNIST IDX layout")
    sp.add_argument("--out", required=True)
    sp.add_argument("--train", type=int, default=12000)
    sp.add_argument("--test", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gen_digits)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except KanbenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
