"""Monte-Carlo reconstruction scores and the latent-noise probe."""

from __future__ import annotations

import csv
import hashlib
import logging

import numpy as np

from .model import AdvaeModel, encode
from .nn import RngStream

log = logging.getLogger(__name__)

NOISE_KINDS = (
    "uniform01_add",
    "gaussian01_add",
    "const_half_add",
    "scale_last_half_by_half",
    "zero_first_half",
)


def _row_key(row):
    digest = hashlib.blake2b(np.ascontiguousarray(row, dtype="<f8").tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def score_noise(rng: RngStream, x, n_samples, latent_dim):
    """Standard-normal noise of shape (rows, n_samples, latent_dim).

    Each row draws from its own substream keyed by the row's bytes, so a row's
    score does not depend on its position in the batch.
    """
    out = np.empty((x.shape[0], n_samples, latent_dim))
    for i, row in enumerate(x):
        out[i] = rng.spawn(_row_key(row)).standard_normal(n_samples, latent_dim)
    return out


def mean_reconstruction(model: AdvaeModel, x, rng: RngStream, n_samples=None, chunk=256, perturb=None):
    x = np.asarray(x, dtype=np.float64)
    L = n_samples or model.hyper.mc_samples
    gp = encode(model, x)
    if model.variant == "ae":
        z = gp.mu if perturb is None else perturb(gp.mu)
        return model.G(z)
    out = np.empty_like(x)
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        mu, sigma = gp.mu[sl], gp.sigma[sl]
        eps = score_noise(rng, x[sl], L, model.latent_dim)
        acc = np.zeros_like(x[sl])
        for l in range(L):
            z = mu + sigma * eps[:, l, :]
            if perturb is not None:
                z = perturb(z)
            acc += model.G(z)
        out[sl] = acc / L
    return out


def anomaly_scores(model: AdvaeModel, x, rng: RngStream, n_samples=None):
    """Squared distance between each row and its average reconstruction over L latent draws."""
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < -0.5 or x.max() > 1.5):
        log.warning("scoring input outside the scaled range [%.3g, %.3g]; was the scaler applied?", x.min(), x.max())
    recon = mean_reconstruction(model, x, rng, n_samples)
    e = x - recon
    return np.einsum("ij,ij->i", e, e)


def wasserstein_1d(a, b):
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _noise_fn(kind, rng: RngStream):
    if kind == "none":
        return lambda z: z
    if kind == "uniform01_add":
        return lambda z: z + rng.uniform(0.0, 1.0, z.shape)
    if kind == "gaussian01_add":
        return lambda z: z + rng.standard_normal(*z.shape)
    if kind == "const_half_add":
        return lambda z: z + 0.5
    if kind == "scale_last_half_by_half":
        def f(z):
            z = z.copy()
            z[:, z.shape[1] // 2:] *= 0.5
            return z
        return f
    if kind == "zero_first_half":
        def f(z):
            z = z.copy()
            z[:, : z.shape[1] // 2] = 0.0
            return z
        return f
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS} or 'none'")


def latent_probe(model: AdvaeModel, x_normal, noise_kind, rng: RngStream, n_samples=None):
    """W1 distance between scores of clean and noised latent codes, both decoded by G."""
    perturb = _noise_fn(noise_kind, rng.spawn(1))
    x_normal = np.asarray(x_normal, dtype=np.float64)
    score_rng = rng.spawn(0)
    clean = mean_reconstruction(model, x_normal, score_rng, n_samples)
    noisy = mean_reconstruction(model, x_normal, score_rng, n_samples, perturb=perturb)
    s_n = np.sum((x_normal - clean) ** 2, axis=1)
    s_o = np.sum((x_normal - noisy) ** 2, axis=1)
    return wasserstein_1d(s_n, s_o)


def write_scores(path, scores, labels=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "score", "label"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s)), "" if labels is None else int(labels[i])])
