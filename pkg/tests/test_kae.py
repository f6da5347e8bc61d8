from __future__ import annotations

import numpy as np
import pytest

from koopreps import linalg, nn
from koopreps.datasets import YinYangSpec, gen_yinyang
from koopreps.errors import ArgumentError, NumericalError, UsageError
from koopreps.kae import (KaeLossWeights, KaeModel, KaeTrainConfig, check_operator,
                          compute_losses, interpolate, koopman_operator, loss_gradients,
                          predict, train_kae)
from koopreps.preprocess import fit_pair, invert
from koopreps.resnet import MlpTrainConfig, ResidualMlp, capture_representations, evaluate, train_mlp


def _model(seed=0, d=4, h=6, p=5, k=10):
    return KaeModel.init(d, h, p, seed=seed, k_steps=k, dtype=np.float64)


def _identity_model(d=3):
    eye = lambda act: nn.Dense(np.eye(d), np.zeros(d), act)
    return KaeModel([eye("leaky_relu"), eye("identity")], [eye("leaky_relu"), eye("identity")],
                    np.zeros((d, d)), k_steps=5)


def test_operator_examples(rng):
    m = _model()
    m.generator = np.zeros((5, 5))
    assert np.array_equal(koopman_operator(m), np.eye(5))
    m.generator = rng.standard_normal((5, 5)) * 0.3
    m.k_steps = 1
    assert np.linalg.norm(koopman_operator(m) - linalg.matrix_exp(m.generator)) <= 1e-14
    m.k_steps = 7
    assert np.linalg.norm(koopman_operator(m) - linalg.matrix_exp(m.generator)) <= 1e-8
    assert check_operator(m) <= 1e-8


def test_identity_model_has_zero_losses(rng):
    m = _identity_model()
    x = np.abs(rng.standard_normal((10, 3))) + 0.1
    losses = compute_losses(m, x, x, KaeLossWeights())
    assert losses.to_dict() == {"total": 0.0, "recon": 0.0, "linear": 0.0, "state": 0.0,
                                "dist": 0.0}
    assert np.array_equal(predict(m, x), x)


def _leaky(v, slope=0.01):
    return v if v > 0 else slope * v


def _mlp_scalar(layers, row):
    h = list(row)
    for layer in layers:
        out = []
        for o in range(layer.n_out):
            z = layer.bias[o] + sum(layer.weight[o, i] * h[i] for i in range(layer.n_in))
            out.append(_leaky(z, layer.slope) if layer.activation == "leaky_relu" else z)
        h = out
    return h


def test_losses_match_scalar_loop(rng):
    m = _model(seed=3)
    m.generator = rng.standard_normal((5, 5)) * 0.5
    x_i, x_j = rng.standard_normal((7, 4)), rng.standard_normal((7, 4))
    w = KaeLossWeights(0.7, 1.3, 0.4, 2.1)
    got = compute_losses(m, x_i, x_j, w)
    k = linalg.matrix_exp(m.generator)
    sums = dict(recon=0.0, linear=0.0, state=0.0, dist=0.0)
    for a, b in zip(x_i, x_j):
        za, zb = _mlp_scalar(m.encoder, a), _mlp_scalar(m.encoder, b)
        ka = [sum(k[r, c] * za[c] for c in range(5)) for r in range(5)]
        ra, rb, pa = _mlp_scalar(m.decoder, za), _mlp_scalar(m.decoder, zb), _mlp_scalar(m.decoder, ka)
        sums["recon"] += sum((ra[t] - a[t]) ** 2 + (rb[t] - b[t]) ** 2 for t in range(4))
        sums["linear"] += sum((zb[t] - ka[t]) ** 2 for t in range(5))
        sums["state"] += sum((b[t] - pa[t]) ** 2 for t in range(4))
        for x, z in ((a, za), (b, zb)):
            sums["dist"] += (sum(v * v for v in x) - sum(v * v for v in z)) ** 2
    expected = {key: val / 7 for key, val in sums.items()}
    for key, val in expected.items():
        assert abs(getattr(got, key) - val) <= 1e-10 * max(1.0, abs(val)), key
    assert got.total == pytest.approx(0.7 * got.recon + 1.3 * got.linear + 0.4 * got.state
                                      + 2.1 * got.dist, rel=1e-15)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    m = _model(seed=5)
    m.generator = rng.standard_normal((5, 5)) * 0.4
    x_i, x_j = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    w = KaeLossWeights(1.0, 0.8, 1.2, 0.5)
    _, grads = loss_gradients(m, x_i, x_j, w)
    params = m.params
    sizes = np.array([p.size for p in params], dtype=float)
    h = 1e-5
    for _ in range(150):
        t = rng.choice(len(params), p=sizes / sizes.sum())
        idx = tuple(rng.integers(0, s) for s in params[t].shape)
        old = params[t][idx]
        params[t][idx] = old + h
        up = compute_losses(m, x_i, x_j, w).total
        params[t][idx] = old - h
        down = compute_losses(m, x_i, x_j, w).total
        params[t][idx] = old
        fd = (up - down) / (2 * h)
        an = grads[t][idx]
        assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-3), (t, idx, fd, an)


def test_interpolate_endpoints(rng):
    m = _model(k=6)
    x = rng.standard_normal((5, 4))
    assert np.array_equal(interpolate(m, x, 6), predict(m, x))
    assert np.array_equal(interpolate(m, x, 0), m.decode(m.encode(x)))
    with pytest.raises(ArgumentError):
        interpolate(m, x, 7)
    with pytest.raises(UsageError):
        interpolate(m.with_operator(np.eye(5)), x, 1)


def test_predict_is_pure(rng):
    m = _model()
    x = rng.standard_normal((5, 4))
    before = [p.copy() for p in m.params]
    a, b = predict(m, x), predict(m, x)
    assert np.array_equal(a, b)
    assert all(np.array_equal(p, q) for p, q in zip(before, m.params))


def test_untied_mirrored_shapes():
    m = KaeModel.init(10, 30, 20)
    assert [l.weight.shape for l in m.encoder] == [(30, 10), (20, 30)]
    assert [l.weight.shape for l in m.decoder] == [(30, 20), (10, 30)]
    assert m.generator.shape == (20, 20)
    assert m.encoder[0].activation == "leaky_relu" and m.decoder[0].activation == "leaky_relu"


def test_weights_must_be_nonnegative():
    with pytest.raises(ArgumentError):
        KaeLossWeights(dist=-1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_corrupt_generator_fails_consistency_check():
    m = _model()
    m.generator = np.full((5, 5), 1e4)
    with pytest.raises(NumericalError):
        check_operator(m)


def _toy_pair(seed=0, n=600):
    g = np.random.default_rng(seed)
    x_i = g.standard_normal((n, 4))
    rot = np.linalg.qr(g.standard_normal((4, 4)))[0]
    return x_i, np.tanh(x_i @ rot)


def test_training_reduces_heldout_state_and_is_deterministic():
    x_i, x_j = _toy_pair()
    cfg = KaeTrainConfig(batch_size=128, epochs=40, lr=1e-2, seed=1)
    m = _model(seed=1, p=6)
    init = compute_losses(m, x_i[500:], x_j[500:], cfg.weights).state
    a, hist = train_kae(m, x_i[:500], x_j[:500], cfg, heldout=(x_i[500:], x_j[500:]))
    b, _ = train_kae(m, x_i[:500], x_j[:500], cfg)
    assert hist[-1]["heldout_state"] < init
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    with pytest.raises(UsageError):
        train_kae(a.with_operator(np.eye(6)), x_i, x_j, cfg)


def test_true_targets_reproduce_mlp_accuracy():
    train = gen_yinyang(YinYangSpec(n=600, seed=0))
    mlp, _ = train_mlp(ResidualMlp.init(2, 10, 4, 3, seed=0), train,
                       MlpTrainConfig(epochs=20, batch_size=64))
    reps = capture_representations(mlp, train)
    t_i, t_j, _, x_j = fit_pair(reps[0], reps[-1])
    preds = np.argmax(mlp.head_logits(invert(t_j, x_j)), axis=1)
    assert np.array_equal(preds, np.argmax(mlp.logits(train.features), axis=1))
    acc = evaluate(mlp, train)
    pred_acc = 100.0 * np.mean(preds == train.labels)
    assert pred_acc == pytest.approx(acc.overall, abs=1e-9)
