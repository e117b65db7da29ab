import hashlib

import numpy as np
import pytest

from advae.data import Dataset
from advae.model import (
    AdvaeModel,
    GaussianParams,
    Hyperparams,
    draw_step_state,
    encode,
    loss_encoder,
    loss_generator,
    loss_kld_gauss,
    loss_kld_prior,
    loss_mse,
    transform,
)
from advae.nn import RngStream


def weight_hash(net):
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def small_model(seed, d=None, k=None, variant="advae", **hyper):
    """Random small net (dims <= 8) plus a batch (<= 4 rows) and a step state."""
    r = np.random.default_rng(seed)
    d = d or int(r.integers(2, 9))
    k = k or int(r.integers(1, min(d, 4) + 1))
    n = int(r.integers(2, 5))
    width = int(r.integers(2, 9))
    depth = int(r.integers(1, 4))
    base = dict(lam=float(r.uniform(0.01, 1.0)), gamma=float(r.uniform(0.05, 1.0)), m_x=2.0, m_z=20.0)
    base.update(hyper)
    hp = Hyperparams(latent_dim=k, hidden_width=width, depth=depth, **base)
    model = AdvaeModel.create(d, hp, variant, RngStream(seed))
    x = r.random((n, d))
    st = draw_step_state(model, x, RngStream(seed, (99,)))
    return model, st


def generator_objective(model, st, include_gzt=True):
    """L_G + lam * L_T as a function of G and T weights, built from value-only pieces."""
    gp = encode(model, st.x)
    gp_t = transform(model, gp)
    z = gp.mu + gp.sigma * st.eps
    z_T = gp_t.mu + gp_t.sigma * st.eps_T
    lb = loss_generator(model, st.x, z, z_T, include_gzt)
    return lb.l_G + model.hyper.lam * loss_kld_gauss(gp, gp_t)


def encoder_objective(model, st, x_r, x_Tr, discriminate=True):
    return loss_encoder(model, st.x, x_r, x_Tr, eps=st.eps, discriminate=discriminate).l_E


def vae_objective(model, st):
    gp = encode(model, st.x)
    if model.variant == "ae":
        return loss_mse(st.x, model.G(gp.mu))
    return loss_mse(st.x, model.G(gp.mu + gp.sigma * st.eps)) + model.hyper.lam * loss_kld_prior(gp)


def fd_max_rel_err(params, value_fn, analytic, step=1e-5, floor=1e-6, n_coords=None, rng=None):
    """Central differences of ``value_fn`` against stored analytic grads, worst relative error."""
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = range(flat.size) if n_coords is None else rng.permutation(flat.size)[:n_coords]
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = value_fn()
            flat[i] = old - step
            down = value_fn()
            flat[i] = old
            num = (up - down) / (2 * step)
            worst = max(worst, abs(ga.reshape(-1)[i] - num) / max(abs(num), floor))
    return worst


def blob_dataset(name="toy", n_normal=400, n_anom=20, d=8, seed=0):
    """Correlated Gaussian normals with scattered anomalies."""
    r = np.random.default_rng(seed)
    half = d // 2
    x = r.normal(size=(n_normal, d))
    x[:, half:] = x[:, :half][:, : d - half] * 0.5 + 0.1 * r.normal(size=(n_normal, d - half))
    a = r.normal(size=(n_anom, d)) * 2.0
    return Dataset(name, np.vstack([x, a]), np.r_[np.zeros(n_normal), np.ones(n_anom)])


@pytest.fixture
def toy_dataset():
    return blob_dataset()
