import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridsense import simgen
from gridsense.disagg import (CVAE, LatentParams, Router, activation_iou, cvae_loss, decoder_base_length,
                              disaggregate_series, mae, reparameterize, sae, score, score_series,
                              train_disagg)
from gridsense.errors import DataError, FormatError, ShapeError
from gridsense.nn import TrainConfig, kl_gaussian
from gridsense.nn.gradcheck import max_relative_error, numerical_gradient


def small_model(T=64, latent=3, seed=0):
    return CVAE(T, latent=latent, lam=0.1, seed=seed, filters=(3, 4))


# --- KL and reparameterisation ----------------------------------------------------------

def test_kl_closed_form_matches_monte_carlo():
    rng = np.random.default_rng(7)
    mu = rng.normal(0.0, 1.0, 4)
    logvar = rng.normal(0.0, 0.7, 4)
    closed, _ = kl_gaussian(mu[None], logvar[None])
    n = 1_000_000
    sd = np.exp(0.5 * logvar)
    z = mu + sd * rng.standard_normal((n, 4))
    log_q = -0.5 * (((z - mu) / sd) ** 2 + logvar + np.log(2 * np.pi))
    log_p = -0.5 * (z ** 2 + np.log(2 * np.pi))
    mc = float(np.mean(np.sum(log_q - log_p, axis=1)))
    assert abs(mc - closed) <= 0.01 * closed


def test_reparameterize_zero_variance_limit():
    mu = np.array([[0.3, -1.2]])
    z = reparameterize(LatentParams(mu, np.full((1, 2), -np.inf)), seed=4)
    np.testing.assert_array_equal(z, mu)


def test_reparameterize_statistics_and_seed():
    p = LatentParams(np.zeros((100_000, 1)), np.zeros((100_000, 1)))
    z = reparameterize(p, seed=11)
    assert abs(z.mean()) <= 0.02 and abs(z.var() - 1.0) <= 0.02
    np.testing.assert_array_equal(z, reparameterize(LatentParams(p.mu, p.logvar), seed=11))
    np.testing.assert_array_equal(p.z, p.mu + p.eps)


@pytest.mark.parametrize("seed", range(3))
def test_cvae_loss_gradient_check(seed):
    model = small_model(seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 64))
    y = rng.random((2, 64))
    eps = rng.standard_normal((2, model.latent))
    model.loss(x, y, eps, backward=True)
    grads = {k: v.copy() for k, v in model.named_grads().items()}
    f = lambda: model.loss(x, y, eps)[0]
    for name, p in model.named_params().items():
        err = max_relative_error(grads[name], numerical_gradient(f, p))
        assert err <= 1e-4, (name, err)


# --- encoder and decoder ----------------------------------------------------------------

def test_zero_weight_encoder_gives_bias():
    model = small_model()
    for k, v in model.named_params().items():
        if k.startswith(("encoder", "mu_head", "lv_head")):
            v[...] = 0.0
    model.mu_head.layers[0].params["b"][:] = [1.0, 2.0, 3.0]
    lp = model.encode(np.random.default_rng(0).standard_normal((2, 64)))
    np.testing.assert_array_equal(lp.mu, [[1.0, 2.0, 3.0]] * 2)
    np.testing.assert_array_equal(lp.logvar, np.zeros((2, 3)))


def test_encoder_matches_layer_oracle():
    model = small_model(seed=5)
    x = np.random.default_rng(1).standard_normal(64)
    p = model.named_params()
    w1, b1, w2, b2 = p["encoder.0.W"], p["encoder.0.b"], p["encoder.2.W"], p["encoder.2.b"]
    h1 = np.maximum([np.correlate(x, w1[f, 0], "valid") + b1[f] for f in range(3)], 0.0)
    h2 = np.maximum([sum(np.correlate(h1[c], w2[f, c], "valid") for c in range(3)) + b2[f] for f in range(4)], 0.0)
    flat = h2.reshape(-1)
    mu = p["mu_head.0.W"] @ flat + p["mu_head.0.b"]
    lv = p["lv_head.0.W"] @ flat + p["lv_head.0.b"]
    lp = model.encode(x)
    np.testing.assert_allclose(lp.mu[0], mu, atol=1e-10)
    np.testing.assert_allclose(lp.logvar[0], lv, atol=1e-10)
    again = model.encode(x)
    np.testing.assert_array_equal(again.mu, lp.mu)


@pytest.mark.parametrize("T", [64, 128, 256])
def test_decoder_length(T):
    model = CVAE(T)
    assert model.decode(np.zeros((2, 16))).shape == (2, T)
    l0 = decoder_base_length(T)
    assert ((l0 - 1) * 2 + 5 - 1) * 2 + 4 == T


def test_unreachable_length():
    with pytest.raises(ShapeError):
        decoder_base_length(66)


def test_zero_weight_decoder_is_constant():
    model = small_model()
    for k, v in model.decoder.named_params().items():
        v[...] = 0.0
    model.decoder.layers[4].params["b"][:] = 0.7
    out = model.decode(np.random.default_rng(2).standard_normal((3, 3)))
    np.testing.assert_array_equal(out, np.full((3, 64), 0.7))


def test_decoder_distinguishes_latents():
    model = CVAE(128, seed=1)
    z = np.random.default_rng(3).standard_normal((20, 16))
    out = model.decode(z)
    diffs = [np.max(np.abs(out[i] - out[j])) for i in range(20) for j in range(i + 1, 20)]
    assert min(diffs) > 1e-6


# --- loss --------------------------------------------------------------------------------

def test_perfect_reconstruction_has_zero_loss():
    model = small_model()
    for k, v in model.named_params().items():
        v[...] = 0.0
    model.decoder.layers[4].params["b"][:] = 0.4
    x = np.random.default_rng(0).standard_normal((2, 64))
    total, est, var = cvae_loss(x, np.full((2, 64), 0.4), model)
    assert (total, est, var) == (0.0, 0.0, 0.0)


def test_lambda_zero_is_estimation_only():
    model = small_model(seed=2)
    x = np.random.default_rng(0).standard_normal((2, 64))
    total, est, var = cvae_loss(x, np.ones((2, 64)), model, lam=0.0, seed=3)
    assert total == est and var > 0
    assert CVAE(64).lam == 0.1


# --- training and inference --------------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    windows = simgen.gen_disagg_corpus("kettle", 1200, 64, seed=3)
    model = CVAE(64, seed=0)
    hist = train_disagg(model, windows, TrainConfig("adam", 2e-3, 64, 12, 0))
    return model, hist


def test_training_reduces_loss(trained):
    _, hist = trained
    assert hist.total[-1] < hist.total[0]
    assert len(hist.total) == len(hist.estimation) == len(hist.variational) == 12


def test_training_deterministic():
    windows = simgen.gen_disagg_corpus("kettle", 128, 64, seed=1)
    runs = []
    for _ in range(2):
        model = small_model()
        runs.append(train_disagg(model, windows, TrainConfig("adam", 1e-3, 64, 2, 5)).total)
    assert runs[0] == runs[1]


def test_training_rejects_mixed_appliances():
    a = simgen.gen_disagg_corpus("kettle", 4, 64, seed=1)
    b = simgen.gen_disagg_corpus("microwave", 4, 64, seed=1)
    with pytest.raises(DataError):
        train_disagg(small_model(), a + b)


def test_half_the_windows_lack_the_target():
    windows = simgen.gen_disagg_corpus("kettle", 2000, 128, seed=9)
    without = np.mean([not np.any(w.target) for w in windows])
    assert abs(without - 0.5) < 0.05


def test_disaggregate_nonnegative_and_deterministic(trained):
    model, _ = trained
    x = np.random.default_rng(0).uniform(0, 3000, (5, 64))
    y = model.disaggregate(x)
    assert np.all(y >= 0)
    np.testing.assert_array_equal(y, model.disaggregate(x))


def test_zero_aggregate_gives_near_zero(trained):
    model, _ = trained
    # no sample reaches the activation threshold and the mean stays under 1% of kettle power
    y = model.disaggregate(np.zeros(64))
    assert np.max(y) < 200.0 and np.mean(y) < 20.0


def test_kettle_window_overlap(trained):
    model, _ = trained
    rng = np.random.default_rng(4)
    ious = []
    for k in range(10):
        act = simgen.gen_activation(simgen.kettle_profile(2500.0), seed=k)
        w = simgen.gen_aggregate({"kettle": act}, 64, "kettle", noise_std=10.0, base_load=120.0,
                                 seed=int(rng.integers(1000)))
        ious.append(activation_iou(w.target, model.disaggregate(w.aggregate)))
    assert np.mean(ious) >= 0.7


def test_untrained_warns():
    with pytest.warns(RuntimeWarning, match="untrained"):
        small_model().disaggregate(np.zeros(64))


def test_normalisation_roundtrip():
    model = small_model()
    model.input_mean, model.input_std = 431.5, 212.25
    x = np.random.default_rng(0).uniform(0, 4000, 64)
    np.testing.assert_allclose(model.denormalize(model.normalize(x)), x, atol=1e-9)


def test_persistence_roundtrip(trained):
    model, _ = trained
    back = CVAE.loads(model.dumps())
    x = np.random.default_rng(1).uniform(0, 3000, (3, 64))
    np.testing.assert_array_equal(back.disaggregate(x), model.disaggregate(x))
    doc = model.to_document()
    doc["version"] += 1
    with pytest.raises(FormatError):
        CVAE.from_document(doc)


def test_router(trained):
    model, _ = trained
    router = Router({"kettle": model})
    w = simgen.gen_disagg_corpus("kettle", 1, 64, seed=2)[0]
    np.testing.assert_array_equal(router.disaggregate(w), model.disaggregate(w.aggregate))
    w.appliance_id = "fridge"
    with pytest.raises(DataError):
        router.disaggregate(w)


def test_score_matches_metrics(trained):
    model, _ = trained
    windows = simgen.gen_disagg_corpus("kettle", 20, 64, seed=8)
    s = score(model, windows)
    y = np.stack([w.target for w in windows])
    y_hat = model.disaggregate(np.stack([w.aggregate for w in windows]))
    assert s.mae == mae(y, y_hat) and s.sae == sae(y, y_hat)


# --- scores and series -------------------------------------------------------------------

def test_mae_sae_examples():
    y = np.array([0.0, 100.0, 2000.0, 50.0])
    assert mae(y, y) == 0.0 and sae(y, y) == 0.0
    assert mae(y, y + 5) == pytest.approx(5.0, abs=1e-12)
    assert sae(y, 1.1 * y) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(DataError):
        sae(np.zeros(4), np.ones(4))
    with pytest.raises(ShapeError):
        mae(np.zeros(3), np.zeros(4))


@given(st.lists(st.floats(0, 5000), min_size=1, max_size=30), st.floats(0.01, 10))
def test_sae_scale_law(y, c):
    y = np.array(y)
    if y.sum() <= 1e-6:
        return
    assert sae(y, c * y) == pytest.approx(abs(1 - c), abs=1e-9)


class Identity:
    T = 16
    trained = True

    def disaggregate(self, x):
        return np.asarray(x, dtype=float)


@pytest.mark.parametrize("hop", [None, 1, 5, 16])
def test_series_averaging_reconstructs_identity(hop):
    x = np.random.default_rng(0).uniform(0, 100, 101)
    np.testing.assert_allclose(disaggregate_series(Identity(), x, hop), x, atol=1e-12)


def test_series_too_short():
    with pytest.raises(ShapeError):
        disaggregate_series(Identity(), np.zeros(10))


def test_series_score_without_activation():
    s = score_series(np.zeros(5), np.ones(5))
    assert s.sae is None and s.mae == 1.0
    assert s.as_record() == {"mae_w": 1.0, "sae": None}
    assert score_series([0.0, 10.0], [0.0, 12.0]).sae == pytest.approx(0.2)
