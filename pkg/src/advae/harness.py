"""Train/evaluate runs, ablations, sweeps, the latent probe and report files."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import Dataset, Split, SplitSpec, split
from .metrics import EvalReport, evaluate
from .model import VARIANTS, AdvaeModel, Hyperparams
from .nn import RngStream
from .score import NOISE_KINDS, anomaly_scores, latent_probe
from .threshold import fit_kde, flagged_fraction, solve_threshold
from .train import TrainConfig, TrainingDivergedError, fit

log = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("lambda", "gamma", "m_z", "m_x", "width", "depth", "contamination")
DEFAULT_SCORE_SEED = 20240


@dataclass
class RunResult:
    dataset: str
    variant: str
    seed: int
    model: AdvaeModel | None
    report: EvalReport | None
    split: Split | None = None
    train_scores: np.ndarray | None = None
    test_scores: np.ndarray | None = None
    kde_h: float = math.nan
    train_flagged: float = math.nan
    trace: object = None
    error: str = ""


def score_and_evaluate(model, sp: Split, alpha=0.1, score_seed=DEFAULT_SCORE_SEED, n_samples=None,
                       dataset="", seed=0):
    """Score train and test sides, pick the KDE threshold on train, evaluate on test."""
    rng = RngStream(score_seed)
    s_train = anomaly_scores(model, sp.x_train, rng, n_samples)
    s_test = anomaly_scores(model, sp.x_test, rng, n_samples)
    kde = fit_kde(s_train)
    decision = solve_threshold(kde, alpha)
    report = evaluate(s_test, sp.test.labels, decision.threshold, dataset=dataset, variant=model.variant,
                      seed=seed, score_seed=score_seed, alpha=alpha)
    return report, s_train, s_test, kde, decision


def run_single(dataset: Dataset, variant="advae", hyper: Hyperparams | None = None, seed=0,
               train_config: TrainConfig | None = None, split_spec: SplitSpec | None = None,
               alpha=0.1, score_seed=DEFAULT_SCORE_SEED, n_samples=None) -> RunResult:
    """One seeded run. The seed fixes the split, the initial weights and the batch stream."""
    hyper = hyper or Hyperparams.for_dataset(dataset.name)
    cfg = replace(train_config or TrainConfig(), seed=seed)
    spec = replace(split_spec or SplitSpec(), seed=seed)
    sp = split(dataset, spec)
    model = AdvaeModel.create(dataset.n_features, hyper, variant, RngStream(seed, (7,)))
    _, trace = fit(model, sp.x_train, cfg)
    report, s_tr, s_te, kde, dec = score_and_evaluate(model, sp, alpha, score_seed, n_samples, dataset.name, seed)
    return RunResult(dataset.name, variant, seed, model, report, sp, s_tr, s_te, kde.h,
                     flagged_fraction(s_tr, dec), trace)


def _safe_run(dataset, variant, hyper, seed, **kw) -> RunResult:
    try:
        return run_single(dataset, variant, hyper, seed, **kw)
    except (TrainingDivergedError, FloatingPointError, ValueError) as exc:
        log.error("%s/%s seed %d failed: %s", dataset.name, variant, seed, exc)
        return RunResult(dataset.name, variant, seed, None, None, error=str(exc))


def run_ablation(dataset: Dataset, hyper: Hyperparams | None = None, seeds=(0, 1, 2), variants=VARIANTS, **kw):
    """Every variant under the same seeds; failures are recorded and the rest continue."""
    return [_safe_run(dataset, v, hyper, s, **kw) for v in variants for s in seeds]


def _apply_sweep_value(parameter, value, hyper: Hyperparams, spec: SplitSpec):
    if parameter == "lambda":
        return replace(hyper, lam=float(value)), spec
    if parameter in ("gamma", "m_z", "m_x"):
        return replace(hyper, **{parameter: float(value)}), spec
    if parameter == "width":
        return replace(hyper, hidden_width=int(value)), spec
    if parameter == "depth":
        return replace(hyper, depth=int(value)), spec
    if parameter == "contamination":
        return hyper, replace(spec, contamination_ratio=float(value), reserve_pool=True)
    raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {SWEEP_PARAMETERS}")


def run_sweep(dataset: Dataset, parameter, values, hyper: Hyperparams | None = None, seeds=(0,),
              variant="advae", split_spec: SplitSpec | None = None, **kw):
    """Retrain for each value; returns [(value, RunResult)]."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {SWEEP_PARAMETERS}")
    hyper = hyper or Hyperparams.for_dataset(dataset.name)
    base_spec = split_spec or SplitSpec()
    if parameter == "contamination":
        # same test side for every ratio
        base_spec = replace(base_spec, reserve_pool=True)
    out = []
    for v in values:
        h, spec = _apply_sweep_value(parameter, v, hyper, base_spec)
        for s in seeds:
            out.append((v, _safe_run(dataset, variant, h, s, split_spec=spec, **kw)))
    return out


def probe_sample(sp: Split, n=200, seed=0):
    """Up to ``n`` normal test rows, chosen by seed."""
    normal = np.flatnonzero(sp.test.labels == 0)
    rng = RngStream(seed, (0x9B0BE,))
    pick = np.sort(normal[rng.permutation(normal.size)[:n]])
    return sp.x_test[pick]


def run_probe(model: AdvaeModel, x_normal, seed=0, kinds=NOISE_KINDS, n_samples=None):
    return {k: latent_probe(model, x_normal, k, RngStream(seed, (i,)), n_samples) for i, k in enumerate(kinds)}


# ---------------------------------------------------------------------------
# report files

METRIC_FIELDS = [f.name for f in fields(EvalReport)]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_metric_rows(path, results):
    """One CSV row per run; failed runs keep their identifiers and an error note."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS + ["train_flagged", "kde_h", "error"])
        for r in results:
            if r.report is None:
                w.writerow([r.dataset, r.variant, r.seed] + [""] * (len(METRIC_FIELDS) - 3) + ["", "", r.error])
            else:
                w.writerow([_fmt(v) for v in asdict(r.report).values()] + [_fmt(r.train_flagged), _fmt(r.kde_h), ""])


def median_table(results, metric):
    """{(dataset, variant): median metric over successful seeds}."""
    groups = {}
    for r in results:
        if r.report is not None:
            groups.setdefault((r.dataset, r.variant), []).append(getattr(r.report, metric))
    return {k: float(np.median(v)) for k, v in groups.items()}


def summary_markdown(results, metric_pairs=(("ap", "auc"), ("recall", "f1"))):
    """Median-over-seeds tables laid out variants x datasets, one block per metric pair."""
    datasets = list(dict.fromkeys(r.dataset for r in results))
    variants = [v for v in VARIANTS[::-1] if any(r.variant == v for r in results)]
    lines = []
    for pair in metric_pairs:
        tabs = {m: median_table(results, m) for m in pair}
        head = ["Method"] + [f"{m.upper()} {d[:3].capitalize()}" for m in pair for d in datasets + ["avg"]]
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for v in variants:
            row = [v]
            for m in pair:
                vals = [tabs[m].get((d, v), math.nan) for d in datasets]
                row += [f"{x:.3f}" for x in vals] + [f"{np.mean(vals):.3f}"]
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def write_summary(path, results):
    with open(path, "w") as fh:
        fh.write(summary_markdown(results))


def write_sweep_rows(path, parameter, sweep):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "value", "seed", "ap", "auc", "error"])
        for v, r in sweep:
            if r.report is None:
                w.writerow([parameter, v, r.seed, "", "", r.error])
            else:
                w.writerow([parameter, v, r.seed, repr(r.report.ap), repr(r.report.auc), ""])


def write_probe_rows(path, distances: dict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["noise", "wasserstein"])
        for k, v in distances.items():
            w.writerow([k, repr(float(v))])


def write_latents(path, model: AdvaeModel, x, labels=None):
    """Encoder means per row, for external visualisation."""
    mu, _ = model.E(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"z{j}" for j in range(mu.shape[1])] + ["label"])
        for i, row in enumerate(mu):
            w.writerow([repr(float(v)) for v in row] + ["" if labels is None else int(labels[i])])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
