"""adVAE networks, loss terms and the per-step objectives with their gradients.

Loss reductions: squared error sums over features, KL terms sum over latent
dimensions; both are then averaged over the batch.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .nn import DTYPE, Dense, DenseNet, InvalidDimensionError, RngStream, sample_standard_normal

VARIANTS = ("advae", "e_advae", "g_advae", "vae", "ae")

# lambda, m_z, m_x, gamma per dataset
DATASET_DEFAULTS = {
    "letter": dict(lam=0.003, m_z=40.0, m_x=2.0, gamma=0.001),
    "cardio": dict(lam=0.1, m_z=20.0, m_x=2.0, gamma=0.001),
    "satellite": dict(lam=0.01, m_z=40.0, m_x=2.0, gamma=0.001),
    "optical": dict(lam=0.03, m_z=40.0, m_x=2.0, gamma=0.001),
    "pen": dict(lam=0.01, m_z=20.0, m_x=2.0, gamma=0.001),
}


class UnknownVariantError(ValueError):
    pass


@dataclass
class GaussianParams:
    """Diagonal Gaussian per row, stored as mean and log-variance."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise InvalidDimensionError(f"mu {self.mu.shape} vs logvar {self.logvar.shape}")

    @property
    def sigma(self):
        return np.exp(0.5 * self.logvar)

    @classmethod
    def from_sigma(cls, mu, sigma):
        mu = np.asarray(mu, dtype=DTYPE)
        sigma = np.asarray(sigma, dtype=DTYPE)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be strictly positive")
        return cls(mu, 2.0 * np.log(sigma))


@dataclass
class Hyperparams:
    lam: float = 0.01
    gamma: float = 0.001
    m_x: float = 2.0
    m_z: float = 20.0
    latent_dim: int | None = None
    mc_samples: int = 1000
    # architecture; None width means dim(x)
    hidden_width: int | None = None
    depth: int = 3

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be >= 0")
        if self.m_x <= 0 or self.m_z <= 0:
            raise ValueError("margins must be > 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @classmethod
    def for_dataset(cls, name, **overrides):
        base = dict(DATASET_DEFAULTS.get(name.lower(), {}))
        base.update(overrides)
        return cls(**base)


def default_latent_dim(input_dim):
    return max(2, math.ceil(input_dim / 4))


@dataclass
class LossBreakdown:
    mse: float = 0.0
    kld_prior: float = 0.0
    l_T: float = 0.0
    l_Gz: float = 0.0
    l_GzT: float = 0.0
    l_G: float = 0.0
    l_E: float = 0.0

    def merge(self, other: "LossBreakdown", names):
        for n in names:
            setattr(self, n, getattr(other, n))
        return self

    def values(self):
        return [getattr(self, f.name) for f in fields(self)]

    @staticmethod
    def names():
        return [f.name for f in fields(LossBreakdown)]


# ---------------------------------------------------------------------------
# loss terms: value-only public versions and (value, grads) helpers


def _check_same(a, b):
    if a.shape != b.shape:
        raise InvalidDimensionError(f"shape mismatch {a.shape} vs {b.shape}")


def loss_mse(x, x_hat):
    x = np.asarray(x, dtype=DTYPE)
    x_hat = np.asarray(x_hat, dtype=DTYPE)
    _check_same(x, x_hat)
    return float(np.sum((x - x_hat) ** 2) / x.shape[0])


def _mse(a, b):
    """MSE(a, b) and its gradient with respect to ``a`` (the gradient for b is the negative)."""
    n = a.shape[0]
    diff = a - b
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def loss_kld_prior(gp: GaussianParams):
    if np.any(~np.isfinite(gp.logvar)):
        raise ValueError("sigma must be finite and strictly positive")
    return _kld_prior(gp.mu, gp.logvar)[0]


def _kld_prior(mu, logvar):
    n = mu.shape[0]
    var = np.exp(logvar)
    value = -0.5 * np.sum(1.0 + logvar - mu * mu - var) / n
    return float(value), mu / n, 0.5 * (var - 1.0) / n


def loss_kld_gauss(gp: GaussianParams, gp_T: GaussianParams):
    """KL(N(mu, sigma^2) || N(mu_T, sigma_T^2)), summed over dims, batch mean."""
    _check_same(gp.mu, gp_T.mu)
    for g in (gp, gp_T):
        if np.any(~np.isfinite(g.logvar)):
            raise ValueError("sigma must be finite and strictly positive")
    return _kld_gauss(gp.mu, gp.logvar, gp_T.mu, gp_T.logvar)[0]


def _kld_gauss(mu, lv, mu_t, lv_t):
    """Value and grads w.r.t. (mu, lv, mu_t, lv_t)."""
    n = mu.shape[0]
    var = np.exp(lv)
    inv_var_t = np.exp(-lv_t)
    d = mu - mu_t
    q = (var + d * d) * inv_var_t
    value = np.sum(0.5 * (lv_t - lv) + 0.5 * q - 0.5) / n
    g_mu = d * inv_var_t / n
    g_lv = (-0.5 + 0.5 * var * inv_var_t) / n
    g_mu_t = -g_mu
    g_lv_t = (0.5 - 0.5 * q) / n
    return float(value), g_mu, g_lv, g_mu_t, g_lv_t


def hinge(margin, value):
    return max(0.0, margin - value)


def _hinge_slope(margin, value):
    # d/d(value) of max(0, margin - value)
    return -1.0 if margin - value > 0 else 0.0


# ---------------------------------------------------------------------------
# model


class AdvaeModel:
    """Encoder E, generator G and Gaussian transformer T plus hyperparameters.

    The transformer is built for every variant so that serialized files share one
    layout; vae and ae simply never touch it.
    """

    def __init__(self, E: DenseNet, G: DenseNet, T: DenseNet, hyper: Hyperparams, variant="advae"):
        if variant not in VARIANTS:
            raise UnknownVariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        latent = E.heads[0].out_dim
        if G.input_dim != latent or T.input_dim != 2 * latent or T.heads[0].out_dim != latent:
            raise InvalidDimensionError("E/G/T latent dimensions disagree")
        if G.heads[0].out_dim != E.input_dim:
            raise InvalidDimensionError("G output must match E input")
        self.E, self.G, self.T = E, G, T
        self.hyper = hyper
        self.variant = variant

    @classmethod
    def create(cls, input_dim, hyper: Hyperparams | None = None, variant="advae", rng: RngStream | int = 0):
        if variant not in VARIANTS:
            raise UnknownVariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        hyper = hyper or Hyperparams()
        if isinstance(rng, (int, np.integer)):
            rng = RngStream(int(rng))
        latent = hyper.latent_dim or default_latent_dim(input_dim)
        hyper = replace(hyper, latent_dim=latent)
        width = hyper.hidden_width or input_dim
        widths = [width] * hyper.depth
        E = DenseNet.build(input_dim, widths, [latent, latent], "identity", rng.spawn(1), "E")
        G = DenseNet.build(latent, widths, [input_dim], "sigmoid", rng.spawn(2), "G")
        T = DenseNet.build(2 * latent, widths, [latent, latent], "identity", rng.spawn(3), "T")
        return cls(E, G, T, hyper, variant)

    @property
    def input_dim(self):
        return self.E.input_dim

    @property
    def latent_dim(self):
        return self.E.heads[0].out_dim

    def networks(self):
        return {"E": self.E, "G": self.G, "T": self.T}

    def parameters(self):
        return self.E.parameters() + self.G.parameters() + self.T.parameters()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def encode(model: AdvaeModel, x) -> GaussianParams:
    mu, lv = model.E(x)
    return GaussianParams(mu, lv)


def reparameterize(gp: GaussianParams, rng: RngStream, count: int = 1):
    if count < 1:
        raise ValueError("count must be >= 1")
    sigma = gp.sigma
    n, k = gp.mu.shape
    return [gp.mu + sigma * sample_standard_normal(rng, n, k) for _ in range(count)]


def _transformer_input(mu, logvar):
    return np.concatenate([mu, np.exp(0.5 * logvar)], axis=1)


def transform(model: AdvaeModel, gp: GaussianParams) -> GaussianParams:
    if gp.mu.shape[1] != model.latent_dim:
        raise InvalidDimensionError(f"expected latent dim {model.latent_dim}, got {gp.mu.shape[1]}")
    mu_t, lv_t = model.T(_transformer_input(gp.mu, gp.logvar))
    return GaussianParams(mu_t, lv_t)


def loss_generator(model: AdvaeModel, x, z, z_T, include_gzt=True) -> LossBreakdown:
    """Generator objective for latent batches ``z`` (normal) and ``z_T`` (transformed)."""
    h = model.hyper
    x_r = model.G(z)
    x_Tr = model.G(z_T)
    _check_same(x, x_r)
    mu_r, lv_r = model.E(x_r)
    l_gz = loss_mse(x, x_r) + h.gamma * _kld_prior(mu_r, lv_r)[0]
    l_gzt = 0.0
    if include_gzt:
        mu_tr, lv_tr = model.E(x_Tr)
        l_gzt = hinge(h.m_x, loss_mse(x_r, x_Tr)) + h.gamma * hinge(h.m_z, _kld_prior(mu_tr, lv_tr)[0])
    return LossBreakdown(l_Gz=l_gz, l_GzT=l_gzt, l_G=l_gz + l_gzt)


def loss_encoder(model: AdvaeModel, x, x_r, x_Tr, eps=None, discriminate=True) -> LossBreakdown:
    """Encoder objective.

    ``x_r`` and ``x_Tr`` are treated as constants (detached). When ``eps`` is
    given the reconstruction term is recomputed as G(mu + sigma * eps) from the
    current encoder, which is the path the encoder gradient travels in training;
    otherwise the supplied ``x_r`` is used for that term too.
    """
    h = model.hyper
    mu, lv = model.E(x)
    if eps is not None:
        recon = model.G(mu + np.exp(0.5 * lv) * eps)
    else:
        recon = x_r
    mse = loss_mse(x, recon)
    kld = _kld_prior(mu, lv)[0]
    l_e = mse + h.lam * kld
    if discriminate:
        mu_r, lv_r = model.E(x_r)
        mu_tr, lv_tr = model.E(x_Tr)
        l_e += h.gamma * hinge(h.m_z, _kld_prior(mu_r, lv_r)[0])
        l_e += h.gamma * hinge(h.m_z, _kld_prior(mu_tr, lv_tr)[0])
    return LossBreakdown(mse=mse, kld_prior=kld, l_E=l_e)


# ---------------------------------------------------------------------------
# objectives with gradients (used by training)


@dataclass
class StepState:
    """Noise and latent codes shared by both steps of one iteration."""

    x: np.ndarray
    eps: np.ndarray
    eps_T: np.ndarray
    z_T: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def generator_grads(model: AdvaeModel, st: StepState, include_gzt=True) -> LossBreakdown:
    """Accumulate d(L_G + lam * L_T)/d(theta_G, delta_T). E is evaluated but its grads are not touched."""
    h = model.hyper
    E, G, T = model.E, model.G, model.T
    x = st.x
    mu, lv = E(x)
    sigma = np.exp(0.5 * lv)
    (mu_t, lv_t), cT = T.forward(np.concatenate([mu, sigma], axis=1))
    sigma_t = np.exp(0.5 * lv_t)
    z = mu + sigma * st.eps
    z_T = mu_t + sigma_t * st.eps_T
    st.z_T = z_T

    x_r, cG1 = G.forward(z)
    x_Tr, cG2 = G.forward(z_T)
    (mu_r, lv_r), cE1 = E.forward(x_r)

    mse_r, g_a = _mse(x_r, x)
    d_xr = g_a.copy()
    kld_r, gm, gl = _kld_prior(mu_r, lv_r)
    d_xr += E.backward(cE1, (h.gamma * gm, h.gamma * gl), param_grads=False)
    l_gz = mse_r + h.gamma * kld_r

    d_xTr = np.zeros_like(x_Tr)
    l_gzt = 0.0
    if include_gzt:
        (mu_tr, lv_tr), cE2 = E.forward(x_Tr)
        mse_rt, g_rt = _mse(x_r, x_Tr)
        s1 = _hinge_slope(h.m_x, mse_rt)
        if s1:
            d_xr += s1 * g_rt
            d_xTr -= s1 * g_rt
        kld_tr, gm, gl = _kld_prior(mu_tr, lv_tr)
        s2 = _hinge_slope(h.m_z, kld_tr)
        if s2:
            d_xTr += E.backward(cE2, (s2 * h.gamma * gm, s2 * h.gamma * gl), param_grads=False)
        l_gzt = hinge(h.m_x, mse_rt) + h.gamma * hinge(h.m_z, kld_tr)

    l_t, _, _, g_mut, g_lvt = _kld_gauss(mu, lv, mu_t, lv_t)

    G.backward(cG1, d_xr)
    d_zt = G.backward(cG2, d_xTr)
    d_mut = h.lam * g_mut + d_zt
    d_lvt = h.lam * g_lvt + d_zt * st.eps_T * sigma_t * 0.5
    T.backward(cT, (d_mut, d_lvt))
    return LossBreakdown(l_T=l_t, l_Gz=l_gz, l_GzT=l_gzt, l_G=l_gz + l_gzt)


def encoder_grads(model: AdvaeModel, st: StepState, discriminate=True) -> LossBreakdown:
    """Accumulate dL_E/d(phi_E). Reconstructions enter E's discrimination terms detached."""
    h = model.hyper
    E, G = model.E, model.G
    x = st.x
    (mu, lv), cE0 = E.forward(x)
    sigma = np.exp(0.5 * lv)
    z = mu + sigma * st.eps
    x_r, cG = G.forward(z)

    mse, g_xr = _mse(x_r, x)
    d_z = G.backward(cG, g_xr, param_grads=False)
    kld, gm, gl = _kld_prior(mu, lv)
    d_mu = d_z + h.lam * gm
    d_lv = d_z * st.eps * sigma * 0.5 + h.lam * gl
    E.backward(cE0, (d_mu, d_lv))
    l_e = mse + h.lam * kld

    if discriminate:
        z_T = st.z_T
        if z_T is None:
            mu_t, lv_t = model.T(np.concatenate([mu, sigma], axis=1))
            z_T = mu_t + np.exp(0.5 * lv_t) * st.eps_T
        x_Tr = G(z_T)
        for xin in (x_r.copy(), x_Tr):
            (m, l), c = E.forward(xin)
            k, gm, gl = _kld_prior(m, l)
            s = _hinge_slope(h.m_z, k)
            if s:
                E.backward(c, (s * h.gamma * gm, s * h.gamma * gl))
            l_e += h.gamma * hinge(h.m_z, k)
    return LossBreakdown(mse=mse, kld_prior=kld, l_E=l_e)


def vae_grads(model: AdvaeModel, st: StepState) -> LossBreakdown:
    """Plain VAE (or AE for variant 'ae') objective; grads into both E and G."""
    h = model.hyper
    E, G = model.E, model.G
    (mu, lv), cE = E.forward(st.x)
    if model.variant == "ae":
        x_r, cG = G.forward(mu)
        mse, g_xr = _mse(x_r, st.x)
        d_z = G.backward(cG, g_xr)
        E.backward(cE, (d_z, None))
        return LossBreakdown(mse=mse, l_E=mse)
    sigma = np.exp(0.5 * lv)
    x_r, cG = G.forward(mu + sigma * st.eps)
    mse, g_xr = _mse(x_r, st.x)
    d_z = G.backward(cG, g_xr)
    kld, gm, gl = _kld_prior(mu, lv)
    E.backward(cE, (d_z + h.lam * gm, d_z * st.eps * sigma * 0.5 + h.lam * gl))
    return LossBreakdown(mse=mse, kld_prior=kld, l_E=mse + h.lam * kld)


def draw_step_state(model: AdvaeModel, x, rng: RngStream) -> StepState:
    n, k = x.shape[0], model.latent_dim
    eps = sample_standard_normal(rng, n, k)
    eps_T = sample_standard_normal(rng, n, k)
    return StepState(x=x, eps=eps, eps_T=eps_T)


def loss_variant(model: AdvaeModel, batch, rng: RngStream) -> LossBreakdown:
    """Evaluate the variant's training objectives on ``batch`` without touching grads."""
    v = model.variant
    h = model.hyper
    st = draw_step_state(model, batch, rng)
    gp = encode(model, batch)
    if v in ("vae", "ae"):
        if v == "ae":
            x_r = model.G(gp.mu)
            mse = loss_mse(batch, x_r)
            return LossBreakdown(mse=mse, l_E=mse)
        x_r = model.G(gp.mu + gp.sigma * st.eps)
        mse = loss_mse(batch, x_r)
        kld = _kld_prior(gp.mu, gp.logvar)[0]
        return LossBreakdown(mse=mse, kld_prior=kld, l_E=mse + h.lam * kld)
    gp_t = transform(model, gp)
    z = gp.mu + gp.sigma * st.eps
    z_T = gp_t.mu + gp_t.sigma * st.eps_T
    out = loss_generator(model, batch, z, z_T, include_gzt=(v != "e_advae"))
    out.l_T = loss_kld_gauss(gp, gp_t)
    enc = loss_encoder(model, batch, model.G(z), model.G(z_T), eps=st.eps, discriminate=(v != "g_advae"))
    return out.merge(enc, ["mse", "kld_prior", "l_E"])


# ---------------------------------------------------------------------------
# serialization

MAGIC = b"ADVAEMDL"
FORMAT_VERSION = 1


def _net_layout(net: DenseNet):
    return {
        "hidden": [[l.in_dim, l.out_dim, l.activation] for l in net.hidden],
        "heads": [[l.in_dim, l.out_dim, l.activation] for l in net.heads],
    }


def save_model(model: AdvaeModel, path, meta=None):
    """Write header (JSON) and raw little-endian float64 weights. ``meta`` is free-form run info."""
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "variant": model.variant,
        "hyper": asdict(model.hyper),
        "dtype": "<f8",
        "layout": {k: _net_layout(n) for k, n in model.networks().items()},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def read_model_meta(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not an adVAE model file")
        _, n = struct.unpack("<IQ", fh.read(12))
        return json.loads(fh.read(n)).get("meta", {})


def load_model(path) -> AdvaeModel:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not an adVAE model file")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        header = json.loads(fh.read(n))
        raw = fh.read()
    offset = 0

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(DTYPE)
        offset += 8 * count
        return arr

    nets = {}
    for name in ("E", "G", "T"):
        lay = header["layout"][name]
        hidden, heads = [], []
        for i, (fi, fo, act) in enumerate(lay["hidden"]):
            hidden.append((fi, fo, act, f"{name}.h{i}"))
        for j, (fi, fo, act) in enumerate(lay["heads"]):
            heads.append((fi, fo, act, f"{name}.out{j}"))
        nets[name] = (hidden, heads)
    built = {}
    # parameters were written E, G, T; within a net hidden then heads; W then b
    for name in ("E", "G", "T"):
        hidden, heads = nets[name]
        layers = []
        for fi, fo, act, lname in hidden + heads:
            W = take((fi, fo))
            b = take((fo,))
            layers.append(Dense(W, b, act, lname))
        built[name] = DenseNet(layers[: len(hidden)], layers[len(hidden):], name)
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing weight bytes")
    hyper = Hyperparams(**header["hyper"])
    return AdvaeModel(built["E"], built["G"], built["T"], hyper, header["variant"])
