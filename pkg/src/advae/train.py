"""Alternating two-step training (and single-objective training for vae/ae)."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    AdvaeModel,
    LossBreakdown,
    StepState,
    draw_step_state,
    encoder_grads,
    generator_grads,
    vae_grads,
)
from .nn import Adam, RngStream

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration, losses):
        super().__init__(f"non-finite loss at iteration {iteration}: {losses}")
        self.iteration = iteration
        self.losses = losses


@dataclass
class TrainConfig:
    max_iters: int = 20000
    batch_size: int = 128
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class TrainTrace:
    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    phase_seconds: dict = field(default_factory=lambda: {"step_one": 0.0, "step_two": 0.0})

    def record(self, it, lb: LossBreakdown):
        self.iterations.append(it)
        self.losses.append(lb)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration"] + LossBreakdown.names())
            for it, lb in zip(self.iterations, self.losses):
                w.writerow([it] + [repr(float(v)) for v in lb.values()])


class Optimizers:
    """Disjoint Adam states: {G, T} for step one, {E} for step two, {E, G} for vae/ae."""

    def __init__(self, model: AdvaeModel, config: TrainConfig):
        kw = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        if model.variant in ("vae", "ae"):
            self.joint = Adam(model.E.parameters() + model.G.parameters(), **kw)
        else:
            self.gen = Adam(model.G.parameters() + model.T.parameters(), **kw)
            self.enc = Adam(model.E.parameters(), **kw)


def _check_finite(it, lb):
    if not all(math.isfinite(v) for v in lb.values()):
        raise TrainingDivergedError(it, lb)


def train_step_one(model: AdvaeModel, step: StepState, opt: Adam, iteration=0) -> LossBreakdown:
    """Update G and T on L_G + lam * L_T with E frozen."""
    opt.zero_grad()
    lb = generator_grads(model, step, include_gzt=(model.variant != "e_advae"))
    _check_finite(iteration, lb)
    opt.step()
    return lb


def train_step_two(model: AdvaeModel, step: StepState, opt: Adam, iteration=0) -> LossBreakdown:
    """Update E on L_E; reconstructions are detached, G and T frozen."""
    opt.zero_grad()
    lb = encoder_grads(model, step, discriminate=(model.variant != "g_advae"))
    _check_finite(iteration, lb)
    opt.step()
    return lb


def train_step_vae(model: AdvaeModel, step: StepState, opt: Adam, iteration=0) -> LossBreakdown:
    opt.zero_grad()
    lb = vae_grads(model, step)
    _check_finite(iteration, lb)
    opt.step()
    return lb


def sample_batch(x, batch_size, rng: RngStream):
    idx = rng.integers(x.shape[0], batch_size)
    return x[idx]


def train_iteration(model, x_train, config, opts: Optimizers, it) -> LossBreakdown:
    rng = RngStream(config.seed, (it,))
    batch = sample_batch(x_train, config.batch_size, rng)
    st = draw_step_state(model, batch, rng)
    if model.variant in ("vae", "ae"):
        return train_step_vae(model, st, opts.joint, it)
    lb = train_step_one(model, st, opts.gen, it)
    return lb.merge(train_step_two(model, st, opts.enc, it), ["mse", "kld_prior", "l_E"])


def fit(model: AdvaeModel, x_train, config: TrainConfig, trace_every=None):
    """Train in place for ``config.max_iters`` mini-batch iterations.

    Batches are drawn uniformly with replacement from a stream keyed by
    (seed, iteration), so the run is a pure function of the initial weights,
    the data and the config.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    if x_train.ndim != 2 or x_train.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    trace = TrainTrace()
    if config.max_iters == 0:
        return model, trace
    opts = Optimizers(model, config)
    every = trace_every or config.log_every
    t0 = time.perf_counter()
    for it in range(1, config.max_iters + 1):
        lb = train_iteration(model, x_train, config, opts, it)
        if it % every == 0 or it == 1 or it == config.max_iters:
            trace.record(it, lb)
            if config.log_every and it % config.log_every == 0:
                log.debug("iter %d %s", it, lb)
    trace.phase_seconds["total"] = time.perf_counter() - t0
    return model, trace
