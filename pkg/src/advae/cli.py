"""Command-line entry point: train, threshold, eval, ablate, sweep, probe.

Settings resolve as flags > ``--config`` file > per-dataset defaults. The
config file is flat ``key = value`` lines; ``#`` starts a comment.

Exit codes: 0 ok, 2 usage error, 3 data or missing-file error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import harness
from .data import DataError, Dataset, SplitSpec, find_benchmark, load_dataset, load_from_manifest, read_manifest, split
from .metrics import evaluate
from .model import DATASET_DEFAULTS, VARIANTS, Hyperparams, AdvaeModel, load_model, read_model_meta, save_model
from .nn import RngStream
from .score import anomaly_scores
from .threshold import fit_kde, solve_threshold, write_threshold_report
from .train import TrainConfig, TrainingDivergedError, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("advae")


class UsageError(ValueError):
    pass


HYPER_KEYS = {f.name for f in fields(Hyperparams)} | {"lambda"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} | {"iters"}
SPLIT_KEYS = {"train_fraction", "contamination_ratio", "pool_fraction", "reserve_pool"}
RUN_KEYS = {"dataset", "variant", "seed", "alpha", "score_seed", "out", "manifest", "data_dir", "label_column", "model"}
KNOWN_KEYS = HYPER_KEYS | TRAIN_KEYS | SPLIT_KEYS | RUN_KEYS


@dataclass
class RunConfig:
    dataset: str
    variant: str = "advae"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    alpha: float = 0.1
    score_seed: int = harness.DEFAULT_SCORE_SEED
    out: str = "out"
    manifest: str | None = None
    data_dir: str | None = None
    label_column: str = "-1"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if not 0.0 < self.alpha < 1.0:
            raise UsageError(f"alpha must lie in (0, 1), got {self.alpha}")


def read_config_file(path):
    """Flat ``key = value`` (or ``key: value``) lines into a dict of strings."""
    out = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":" if ":" in line else None
            if sep is None:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split(sep, 1))
            k = k.replace("-", "_")
            if k not in KNOWN_KEYS:
                raise UsageError(f"{path}:{n}: unknown key {k!r}")
            out[k] = v
    return out


def _coerce(kind, key, value):
    if isinstance(value, str) and value.lower() in ("none", "") and kind is not bool:
        return None
    try:
        if kind is bool:
            return str(value).lower() in ("1", "true", "yes", "on")
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {key}: {value!r}") from None


_INT_KEYS = {"latent_dim", "mc_samples", "hidden_width", "depth", "max_iters", "iters", "batch_size", "seed",
             "log_every", "score_seed"}


def _typed(key, value):
    if key in _INT_KEYS:
        return _coerce(int, key, value)
    if key == "reserve_pool":
        return _coerce(bool, key, value)
    if key in RUN_KEYS:
        return value
    return _coerce(float, key, value)


def resolve_settings(args) -> dict:
    """Merge the config file and flags; flags win."""
    settings = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        settings.update(read_config_file(args.config))
    for kv in getattr(args, "set", None) or []:
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in KNOWN_KEYS:
            raise UsageError(f"unknown key {k!r}")
        settings[k] = v.strip()
    for k in ("dataset", "variant", "seed", "alpha", "out", "manifest", "data_dir", "iters", "score_seed",
              "mc_samples", "batch_size"):
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return {k: _typed(k, v) for k, v in settings.items()}


def build_run_config(settings: dict, dataset_name: str) -> RunConfig:
    hyper_kw = {k: v for k, v in settings.items() if k in HYPER_KEYS and k != "lambda" and v is not None}
    if settings.get("lambda") is not None:
        hyper_kw["lam"] = settings["lambda"]
    if "latent_dim" in settings and settings["latent_dim"] is None:
        hyper_kw["latent_dim"] = None
    if "hidden_width" in settings and settings["hidden_width"] is None:
        hyper_kw["hidden_width"] = None
    try:
        hyper = Hyperparams.for_dataset(dataset_name, **hyper_kw)
        train_kw = {k: v for k, v in settings.items() if k in TRAIN_KEYS and k != "iters" and v is not None}
        if settings.get("iters") is not None:
            train_kw["max_iters"] = settings["iters"]
        train = TrainConfig(**train_kw)
        split_kw = {k: v for k, v in settings.items() if k in SPLIT_KEYS and v is not None}
        sp = SplitSpec(seed=train.seed, **split_kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return RunConfig(
        dataset=settings.get("dataset") or dataset_name,
        variant=settings.get("variant", "advae"),
        hyper=hyper, train=train, split=sp,
        alpha=settings.get("alpha", 0.1),
        score_seed=settings.get("score_seed", harness.DEFAULT_SCORE_SEED),
        out=settings.get("out", "out"),
        manifest=settings.get("manifest"),
        data_dir=settings.get("data_dir"),
        label_column=str(settings.get("label_column", "-1")),
    )


def resolve_dataset(ref, manifest=None, data_dir=None, label_column="-1") -> Dataset:
    """A file path, a manifest entry name, or a benchmark name found under the data directory."""
    if not ref:
        raise UsageError("no dataset given (use --dataset)")
    if os.path.isfile(ref):
        return load_dataset(ref, label_column)
    if manifest:
        if not os.path.exists(manifest):
            raise FileNotFoundError(f"manifest not found: {manifest}")
        entries = read_manifest(manifest)
        if ref in entries:
            return load_from_manifest(entries[ref])
    path = find_benchmark(ref, data_dir)
    if path is None:
        where = data_dir or os.environ.get("ADVAE_DATA_DIR", "data")
        raise FileNotFoundError(f"dataset {ref!r} not found as a file, manifest entry, or under {where!r}")
    ds = load_dataset(path, label_column)
    ds.name = ref
    return ds


def _dataset_name(ref):
    if os.path.isfile(ref):
        return os.path.splitext(os.path.basename(ref))[0]
    return ref


def _load_run(args):
    settings = resolve_settings(args)
    ref = settings.get("dataset")
    model_meta = None
    if getattr(args, "model", None):
        if not os.path.exists(args.model):
            raise FileNotFoundError(f"model file not found: {args.model}")
        model_meta = read_model_meta(args.model)
        ref = ref or model_meta.get("dataset")
        if "seed" not in settings and "seed" in model_meta:
            settings["seed"] = int(model_meta["seed"])
        for k, v in (model_meta.get("split") or {}).items():
            settings.setdefault(k, v)
    if not ref:
        raise UsageError("no dataset given (use --dataset)")
    cfg = build_run_config(settings, _dataset_name(ref))
    ds = resolve_dataset(ref, cfg.manifest, cfg.data_dir, cfg.label_column)
    return cfg, ds, model_meta


def _split_meta(spec: SplitSpec):
    return {"train_fraction": spec.train_fraction, "contamination_ratio": spec.contamination_ratio,
            "pool_fraction": spec.pool_fraction, "reserve_pool": spec.reserve_pool}


def _sidecar(out, command, argv, t0):
    """Timestamps live only here so every other output is reproducible."""
    with open(os.path.join(out, "run.log"), "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {command} {' '.join(argv)} ({time.time() - t0:.1f}s)\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg, ds, _ = _load_run(args)
    out = harness.ensure_dir(cfg.out)
    sp = split(ds, cfg.split)
    model = AdvaeModel.create(ds.n_features, cfg.hyper, cfg.variant, RngStream(cfg.train.seed, (7,)))
    _, trace = fit(model, sp.x_train, cfg.train)
    meta = {"dataset": cfg.dataset, "seed": cfg.train.seed, "split": _split_meta(cfg.split),
            "train": {k: getattr(cfg.train, k) for k in ("max_iters", "batch_size", "lr")}}
    save_model(model, os.path.join(out, "model.bin"), meta)
    trace.to_csv(os.path.join(out, "trace.csv"))
    print(f"trained {cfg.variant} on {ds.name} ({sp.x_train.shape[0]} rows, {cfg.train.max_iters} iters) -> {out}")


def _model_and_split(args):
    if not getattr(args, "model", None):
        raise UsageError("--model is required")
    cfg, ds, _ = _load_run(args)
    model = load_model(args.model)
    if model.input_dim != ds.n_features:
        raise DataError(f"model expects {model.input_dim} features, dataset has {ds.n_features}")
    return cfg, ds, model, split(ds, cfg.split)


def cmd_threshold(args):
    cfg, ds, model, sp = _model_and_split(args)
    out = harness.ensure_dir(cfg.out)
    s = anomaly_scores(model, sp.x_train, RngStream(cfg.score_seed), cfg.hyper.mc_samples)
    kde = fit_kde(s)
    dec = solve_threshold(kde, cfg.alpha)
    write_threshold_report(os.path.join(out, "threshold.csv"), kde, dec, s)
    print(f"s_alpha={dec.threshold!r} (alpha={cfg.alpha}, m={kde.m}, h={kde.h:.4g})")


def cmd_eval(args):
    """Evaluate one or more model files on the test side of their split."""
    models = args.model if isinstance(args.model, list) else [args.model]
    if not models or models == [None]:
        raise UsageError("--model is required")
    results, out = [], None
    for path in models:
        sub = argparse.Namespace(**{**vars(args), "model": path})
        cfg, ds, model, sp = _model_and_split(sub)
        out = harness.ensure_dir(cfg.out)
        report, s_tr, s_te, kde, dec = harness.score_and_evaluate(
            model, sp, cfg.alpha, cfg.score_seed, cfg.hyper.mc_samples, ds.name, cfg.train.seed)
        results.append(harness.RunResult(ds.name, model.variant, cfg.train.seed, model, report, sp, s_tr, s_te,
                                         kde.h, float(np.mean(s_tr >= dec.threshold))))
        if not 0 < sp.test.labels.sum() < sp.test.labels.size:
            print("note: test side has a single class; AP and AUC omitted", file=sys.stderr)
    with open(os.path.join(out, "scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "row_id", "score", "label"])
        for r in results:
            for i, s in enumerate(r.test_scores):
                w.writerow([r.variant, r.seed, int(r.split.test_index[i]), repr(float(s)), int(r.split.test.labels[i])])
    harness.write_metric_rows(os.path.join(out, "metrics.csv"), results)
    harness.write_summary(os.path.join(out, "summary.md"), results)
    for r in results:
        m = r.report
        print(f"{r.variant} seed {r.seed}: AP {m.ap:.4f} AUC {m.auc:.4f} recall {m.recall:.4f} F1 {m.f1:.4f}")


def _seed_list(args, cfg):
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"bad --seeds {args.seeds!r}") from None
    return [cfg.train.seed]


def _run_kw(cfg):
    return dict(train_config=cfg.train, split_spec=cfg.split, alpha=cfg.alpha, score_seed=cfg.score_seed,
                n_samples=cfg.hyper.mc_samples)


def cmd_ablate(args):
    cfg, ds, _ = _load_run(args)
    out = harness.ensure_dir(cfg.out)
    seeds = _seed_list(args, cfg)
    results = harness.run_ablation(ds, cfg.hyper, seeds, VARIANTS, **_run_kw(cfg))
    harness.write_metric_rows(os.path.join(out, "metrics.csv"), results)
    harness.write_summary(os.path.join(out, "summary.md"), results)
    print(harness.summary_markdown(results, (("ap", "auc"),)))
    failed = [r for r in results if r.report is None]
    for r in failed:
        print(f"failed: {r.variant} seed {r.seed}: {r.error}", file=sys.stderr)
    return EXIT_DIVERGED if len(failed) == len(results) else EXIT_OK


def cmd_sweep(args):
    cfg, ds, _ = _load_run(args)
    if args.parameter not in harness.SWEEP_PARAMETERS:
        raise UsageError(f"unknown sweep parameter {args.parameter!r}; expected one of {harness.SWEEP_PARAMETERS}")
    values = [v.strip() for v in (args.values or "").split(",") if v.strip()]
    if not values:
        raise UsageError("--values must list at least one value")
    try:
        values = [int(v) if args.parameter in ("width", "depth") else float(v) for v in values]
    except ValueError:
        raise UsageError(f"bad --values {args.values!r}") from None
    out = harness.ensure_dir(cfg.out)
    sweep = harness.run_sweep(ds, args.parameter, values, cfg.hyper, _seed_list(args, cfg), cfg.variant,
                              **_run_kw(cfg))
    harness.write_sweep_rows(os.path.join(out, "sweep.csv"), args.parameter, sweep)
    for v, r in sweep:
        ap = f"{r.report.ap:.4f}" if r.report else "failed"
        print(f"{args.parameter}={v} seed {r.seed}: AP {ap}")


def cmd_probe(args):
    cfg, ds, model, sp = _model_and_split(args)
    out = harness.ensure_dir(cfg.out)
    x = harness.probe_sample(sp, args.rows, cfg.train.seed)
    dist = harness.run_probe(model, x, cfg.score_seed, n_samples=cfg.hyper.mc_samples)
    harness.write_probe_rows(os.path.join(out, "probe.csv"), dist)
    for k, v in dist.items():
        print(f"{k}: {v:.6g}")


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="advae", description="Self-adversarial VAE anomaly detection on tabular data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=False, multi_model=False):
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--dataset", help="CSV/.mat path, manifest entry or benchmark name")
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--out")
        sp.add_argument("--manifest")
        sp.add_argument("--data-dir", dest="data_dir")
        sp.add_argument("--iters", type=int, help="training iterations")
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--mc-samples", dest="mc_samples", type=int, help="latent draws per score")
        sp.add_argument("--score-seed", dest="score_seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        if multi_model:
            sp.add_argument("--model", action="append", help="model file (repeatable)")
        elif model:
            sp.add_argument("--model", help="model file written by train")

    common(sub.add_parser("train", help="train a model and write model.bin + trace.csv"))
    common(sub.add_parser("threshold", help="KDE threshold on training scores"), model=True)
    common(sub.add_parser("eval", help="AP/AUC/recall/F1 on the test side"), multi_model=True)
    a = sub.add_parser("ablate", help="all five variants under shared seeds")
    common(a)
    a.add_argument("--seeds", help="comma-separated seeds")
    s = sub.add_parser("sweep", help="retrain across values of one parameter")
    common(s)
    s.add_argument("--parameter", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", help="comma-separated seeds")
    pr = sub.add_parser("probe", help="latent-noise sensitivity of the generator")
    common(pr, model=True)
    pr.add_argument("--rows", type=int, default=200)
    return p


COMMANDS = {"train": cmd_train, "threshold": cmd_threshold, "eval": cmd_eval, "ablate": cmd_ablate,
            "sweep": cmd_sweep, "probe": cmd_probe}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.time()
    try:
        code = COMMANDS[args.command](args) or EXIT_OK
    except UsageError as exc:
        print(f"advae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError) as exc:
        print(f"advae: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"advae: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    out = getattr(args, "out", None)
    if out and os.path.isdir(out):
        _sidecar(out, args.command, argv, t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
