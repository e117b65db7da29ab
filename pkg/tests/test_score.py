import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wasserstein_distance

from advae.model import AdvaeModel, Hyperparams, encode
from advae.nn import Dense, DenseNet, RngStream
from advae.score import NOISE_KINDS, anomaly_scores, latent_probe, score_noise, wasserstein_1d, write_scores


def _model(variant="advae", d=5, seed=0, mc=20):
    return AdvaeModel.create(d, Hyperparams(mc_samples=mc), variant, RngStream(seed))


def _x(n=12, d=5, seed=0):
    return np.random.default_rng(seed).random((n, d))


def test_constant_generator_zero_score():
    m = _model()
    c = 0.3
    k = m.latent_dim
    # sigmoid head with zero weights and logit(c) bias returns c for any z
    m.G = DenseNet([Dense(np.zeros((k, 3)), np.zeros(3), "relu")],
                   [Dense(np.zeros((3, 5)), np.full(5, np.log(c / (1 - c))), "sigmoid")], "G")
    s = anomaly_scores(m, np.full((4, 5), c), RngStream(0), 7)
    assert np.allclose(s, 0.0, atol=1e-28)


def test_single_sample_is_plain_squared_error():
    m = _model()
    x = _x()
    rng = RngStream(3)
    s = anomaly_scores(m, x, rng, 1)
    gp = encode(m, x)
    eps = score_noise(rng, x, 1, m.latent_dim)[:, 0, :]
    ref = np.sum((x - m.G(gp.mu + gp.sigma * eps)) ** 2, axis=1)
    assert np.allclose(s, ref, rtol=1e-13, atol=0)


def test_matches_loop_oracle_l1000():
    m = _model()
    x = _x(6)
    rng = RngStream(11)
    s = anomaly_scores(m, x, rng, 1000)
    gp = encode(m, x)
    eps = score_noise(rng, x, 1000, m.latent_dim)
    ref = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        total = np.zeros(x.shape[1])
        for l in range(1000):
            z = gp.mu[i] + gp.sigma[i] * eps[i, l]
            total += m.G(z[None, :])[0]
        mean = total / 1000
        ref[i] = sum((a - b) ** 2 for a, b in zip(x[i], mean))
    assert np.allclose(s, ref, rtol=0, atol=1e-12)


def test_scores_are_permutation_equivariant_and_chunk_free():
    m = _model()
    x = _x(30)
    rng = RngStream(5)
    s = anomaly_scores(m, x, rng, 8)
    perm = np.random.default_rng(1).permutation(30)
    assert np.array_equal(anomaly_scores(m, x[perm], rng, 8), s[perm])
    assert np.array_equal(anomaly_scores(m, x[:7], rng, 8), s[:7])


def test_ae_scores_deterministic_without_noise():
    m = _model("ae")
    x = _x()
    a = anomaly_scores(m, x, RngStream(0), 50)
    b = anomaly_scores(m, x, RngStream(99), 3)
    assert np.array_equal(a, b)
    assert np.allclose(a, np.sum((x - m.G(encode(m, x).mu)) ** 2, axis=1))


def test_scores_nonnegative_and_shaped():
    s = anomaly_scores(_model(), _x(9), RngStream(0), 4)
    assert s.shape == (9,) and np.all(s >= 0)


def test_wasserstein_examples():
    a = np.array([0.3, 1.2, -4.0])
    assert wasserstein_1d(a, a) == 0.0
    assert wasserstein_1d([0, 0], [1, 1]) == 1.0
    with pytest.raises(ValueError):
        wasserstein_1d([1, 2], [1])


def test_wasserstein_matches_assignment_oracle():
    from itertools import permutations

    r = np.random.default_rng(0)
    for _ in range(20):
        a, b = r.normal(size=6), r.normal(size=6)
        brute = min(np.mean(np.abs(a - b[list(p)])) for p in permutations(range(6)))
        assert wasserstein_1d(a, b) == pytest.approx(brute, abs=1e-12)
    a, b = r.normal(size=100), r.exponential(size=100)
    assert wasserstein_1d(a, b) == pytest.approx(np.mean(np.abs(np.sort(a) - np.sort(b))), abs=1e-15)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.integers(0, 1000))
@settings(max_examples=80, deadline=None)
def test_wasserstein_matches_scipy(values, seed):
    a = np.array(values)
    b = a + np.random.default_rng(seed).normal(size=a.size)
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_distance(a, b), rel=1e-9, abs=1e-9)


def test_probe_zero_noise_control_and_nonnegative():
    m = _model()
    x = _x(20)
    assert latent_probe(m, x, "none", RngStream(0), 10) == 0.0
    for kind in NOISE_KINDS:
        assert latent_probe(m, x, kind, RngStream(0), 10) >= 0.0
    with pytest.raises(ValueError):
        latent_probe(m, x, "bogus", RngStream(0), 10)
    assert len(NOISE_KINDS) == 5


def test_probe_deterministic():
    m = _model()
    x = _x(20)
    assert latent_probe(m, x, "gaussian01_add", RngStream(4), 5) == latent_probe(m, x, "gaussian01_add", RngStream(4), 5)


def test_out_of_range_input_warns(caplog):
    with caplog.at_level("WARNING"):
        anomaly_scores(_model(), _x() * 10, RngStream(0), 2)
    assert "scaled range" in caplog.text


def test_write_scores(tmp_path):
    p = tmp_path / "s.csv"
    write_scores(p, [0.5, 0.25], [0, 1])
    assert p.read_text().splitlines() == ["row_id,score,label", "0,0.5,0", "1,0.25,1"]
