"""Forward/predict semantics, gradients, training variants, persistence."""
import math

import numpy as np
import pytest

from maladv.errors import BadConfig, DimensionError, EmptyData, NoAleatoricHead
from maladv.features import BinaryFeatureVector, Dataset, Sample
from maladv.mlp import (
    DistillConfig,
    MlpConfig,
    MlpModel,
    _attenuated_loss_and_delta,
    _ce_loss_and_delta,
    _softmax,
    class_jacobian,
    classification_metrics,
    dense_batch,
    init_model,
    load_model,
    loss_gradient_wrt_input,
    save_model,
    train,
    train_distilled,
    train_minmax_adversarial,
    train_with_attenuation,
)

from helpers import linear_model, small_synth, toy_separable


def zero_model(m=6, hidden=(4,)):
    cfg = MlpConfig(input_dim=m, hidden=hidden)
    model = init_model(cfg)
    return MlpModel(cfg, [np.zeros_like(w) for w in model.weights],
                    [np.zeros_like(b) for b in model.biases])


# ------------------------------------------------------------------- forward


def test_forward_all_zero_weights_is_uniform():
    model = zero_model()
    x = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 0.0])
    assert np.allclose(model.forward(x), [0.5, 0.5])
    assert model.predict(x) == 0  # tie breaks toward benign


def test_forward_hand_built_single_hidden_unit():
    cfg = MlpConfig(input_dim=1, hidden=(1,))
    model = MlpModel(cfg, [np.array([[1.0]]), np.array([[1.0, -1.0]])],
                     [np.zeros(1), np.zeros(2)])
    p = model.forward(np.array([1.0]))
    assert p == pytest.approx([0.8808, 0.1192], abs=1e-4)


def test_forward_is_deterministic_and_normalized():
    rng = np.random.default_rng(0)
    cfg = MlpConfig(input_dim=20, hidden=(7, 5), seed=3)
    model = init_model(cfg)
    for _ in range(20):
        x = (rng.random(20) < 0.4).astype(float)
        p1, p2 = model.forward(x), model.forward(x)
        assert np.array_equal(p1, p2)
        assert abs(p1.sum() - 1.0) <= 1e-9
        assert 0.0 <= p1[0] <= 1.0 and 0.0 <= p1[1] <= 1.0


def test_forward_rejects_wrong_width():
    model = zero_model(m=6)
    with pytest.raises(DimensionError):
        model.forward(np.zeros(7))


def test_stochastic_forward_with_zero_dropout_equals_deterministic():
    cfg = MlpConfig(input_dim=15, hidden=(9,), dropout=0.0, seed=1)
    model = init_model(cfg)
    x = (np.random.default_rng(2).random(15) < 0.3).astype(float)
    assert np.array_equal(model.forward(x, stochastic=True, seed=5), model.forward(x))


def test_stochastic_forward_with_dropout_varies_by_seed():
    cfg = MlpConfig(input_dim=15, hidden=(16,), dropout=0.5, seed=1)
    _, ds = small_synth(m=15, n=200, n_discriminative=6, target_sparsity=4)
    model, _ = train(MlpConfig(input_dim=15, hidden=(16,), dropout=0.5, epochs=5, seed=1), ds)
    x = ds.samples[0].features.to_dense()
    outs = {tuple(model.forward(x, stochastic=True, seed=s)) for s in range(8)}
    assert len(outs) > 1


def test_predict_thresholds():
    w = np.ones(4)
    benign = linear_model(w, 5.0)   # benign logit strongly positive
    malicious = linear_model(w, -9.0)
    x = np.array([1.0, 0.0, 1.0, 0.0])
    assert benign.forward(x)[0] > 0.9 and benign.predict(x) == 0
    assert malicious.forward(x)[1] > 0.9 and malicious.predict(x) == 1


# ------------------------------------------------------------------ training


def test_train_reaches_full_accuracy_on_separable_toy():
    ds = toy_separable(n=100)
    cfg = MlpConfig(input_dim=30, hidden=(8,), epochs=200, batch_size=32, seed=0)
    model, report = train(cfg, ds)
    X, y = dense_batch(ds.train, 30)
    acc = float((model.forward_batch(X).argmax(axis=1) == y).mean())
    assert acc == 1.0
    assert len(report.train_loss) <= 200


def test_train_zero_epochs_returns_initialization():
    ds = toy_separable(n=32)
    cfg = MlpConfig(input_dim=30, hidden=(8,), epochs=0, seed=4)
    model, report = train(cfg, ds)
    ref = init_model(cfg)
    for got, want in zip(model.weights, ref.weights):
        assert np.array_equal(got, want)
    assert report.train_loss == [] and report.val_loss == []


def test_train_empty_split_raises():
    ds = Dataset(samples=(), train_idx=(), val_idx=(), test_idx=())
    with pytest.raises(EmptyData):
        train(MlpConfig(input_dim=4, hidden=(2,)), ds)


def test_train_is_bitwise_reproducible():
    _, ds = small_synth(m=40, n=300)
    cfg = MlpConfig(input_dim=40, hidden=(12,), epochs=6, seed=9)
    m1, _ = train(cfg, ds)
    m2, _ = train(cfg, ds)
    for a, b in zip(m1.weights, m2.weights):
        assert np.array_equal(a, b)
    for a, b in zip(m1.biases, m2.biases):
        assert np.array_equal(a, b)


def test_train_default_corpus_reaches_target_accuracy(plain_model):
    _, report = plain_model
    print(f"accuracy {report.test_accuracy:.4f} fnr {report.test_fnr:.4f} fpr {report.test_fpr:.4f}")
    assert report.test_accuracy >= 0.95
    assert 0.0 <= report.test_fnr <= 1.0 and 0.0 <= report.test_fpr <= 1.0


def test_config_validation_errors():
    with pytest.raises(BadConfig):
        MlpConfig(input_dim=0, hidden=(4,)).validate()
    with pytest.raises(BadConfig):
        MlpConfig(input_dim=4, hidden=(0,)).validate()
    with pytest.raises(BadConfig):
        MlpConfig(input_dim=4, hidden=(4,), dropout=1.0).validate()
    with pytest.raises(BadConfig):
        MlpConfig(input_dim=4, hidden=(4,), learning_rate=0.0).validate()
    with pytest.raises(BadConfig):
        MlpConfig(input_dim=4, hidden=(4,), epochs=-1).validate()


def test_classification_metrics_hand_case():
    w = np.array([2.0, -2.0])
    model = linear_model(w, -1.0)  # benign iff 2 x0 - 2 x1 > 1
    mk = lambda bits, lab, i: Sample(BinaryFeatureVector.from_dense(np.array(bits, float)), lab, i)
    samples = (
        mk([1, 0], 0, 0),  # benign, predicted benign
        mk([0, 1], 1, 1),  # malicious, predicted malicious
        mk([0, 0], 0, 2),  # benign, predicted malicious -> false positive
        mk([1, 0], 1, 3),  # malicious, predicted benign -> false negative
    )
    acc, fnr, fpr = classification_metrics(model, samples)
    assert acc == 0.5 and fnr == 0.5 and fpr == 0.5
    acc2, fnr2, fpr2 = classification_metrics(model, samples[:1])
    assert math.isnan(fnr2) and fpr2 == 0.0 and acc2 == 1.0


# ----------------------------------------------------------------- gradients


def test_input_gradient_matches_finite_differences():
    _, ds = small_synth(m=40, n=400)
    model, _ = train(MlpConfig(input_dim=40, hidden=(10, 6), epochs=10, seed=1), ds)
    x = ds.test[0].features.to_dense()
    h = 1e-4
    for target in (0, 1):
        g = loss_gradient_wrt_input(model, x, target)
        gmax = float(np.abs(g).max())
        for c in range(40):
            xp, xm = x.copy(), x.copy()
            xp[c] += h
            xm[c] -= h
            fd = (-math.log(model.forward(xp)[target]) + math.log(model.forward(xm)[target])) / (2 * h)
            rel = abs(g[c] - fd) / max(abs(g[c]), abs(fd), 1e-3 * gmax)
            assert rel <= 1e-4, f"target {target} coord {c}: {g[c]} vs {fd}"


def test_input_gradient_closed_form_on_linear_net():
    w = np.random.default_rng(3).normal(size=9)
    model = linear_model(w, 0.3)
    x = (np.random.default_rng(4).random(9) < 0.5).astype(float)
    p1 = model.forward(x)[1]
    g = loss_gradient_wrt_input(model, x, 0)
    assert np.allclose(g, -2.0 * p1 * w, atol=1e-10)


def test_input_gradient_rejects_bad_target():
    model = zero_model()
    with pytest.raises(BadConfig):
        loss_gradient_wrt_input(model, np.zeros(6), 2)


def test_class_jacobian_rows_cancel_and_match_finite_differences():
    _, ds = small_synth(m=30, n=300)
    model, _ = train(MlpConfig(input_dim=30, hidden=(8,), epochs=8, seed=2), ds)
    x = ds.test[1].features.to_dense()
    J = class_jacobian(model, x)
    assert J.shape == (2, 30)
    assert np.abs(J.sum(axis=0)).max() <= 1e-10
    h = 1e-4
    gmax = float(np.abs(J).max())
    for c in range(30):
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        fd = (model.forward(xp) - model.forward(xm)) / (2 * h)
        for cls in (0, 1):
            rel = abs(J[cls, c] - fd[cls]) / max(abs(J[cls, c]), abs(fd[cls]), 1e-3 * gmax)
            assert rel <= 1e-4


def test_gradients_vanish_on_zero_model():
    model = zero_model(m=8)
    x = np.ones(8)
    assert np.array_equal(loss_gradient_wrt_input(model, x, 0), np.zeros(8))
    assert np.array_equal(class_jacobian(model, x), np.zeros((2, 8)))


# -------------------------------------------------------------- distillation


def test_distillation_softening_closed_form():
    soft = _softmax(np.array([[2.0 / 150.0, -2.0 / 150.0]]))[0]
    assert soft == pytest.approx([0.5067, 0.4933], abs=1e-4)


def test_distilled_student_tracks_teacher():
    ds = toy_separable(n=100)
    cfg = MlpConfig(input_dim=30, hidden=(8,), epochs=200, batch_size=32, seed=0)
    teacher, _ = train(cfg, ds)
    student, _ = train_distilled(
        MlpConfig(input_dim=30, hidden=(8,), epochs=300, batch_size=32, seed=5),
        DistillConfig(teacher=teacher, temperature=1.0),
        ds,
    )
    X, y = dense_batch(ds.train, 30)
    acc_t = float((teacher.forward_batch(X).argmax(axis=1) == y).mean())
    acc_s = float((student.forward_batch(X).argmax(axis=1) == y).mean())
    assert acc_s >= acc_t - 0.02


def test_distillation_rejects_bad_temperature_and_width():
    ds = toy_separable(n=32)
    teacher, _ = train(MlpConfig(input_dim=30, hidden=(4,), epochs=5, seed=0), ds)
    with pytest.raises(BadConfig):
        train_distilled(MlpConfig(input_dim=30, hidden=(4,)),
                        DistillConfig(teacher=teacher, temperature=0.0), ds)
    with pytest.raises(DimensionError):
        train_distilled(MlpConfig(input_dim=31, hidden=(4,)),
                        DistillConfig(teacher=teacher, temperature=150.0), ds)


# ------------------------------------------------------------------- minmax


def test_minmax_with_identity_handle_reduces_to_ordinary_training():
    _, ds = small_synth(m=40, n=300)
    cfg = MlpConfig(input_dim=40, hidden=(10,), epochs=5, seed=3)
    plain, _ = train(cfg, ds)
    hardened, report = train_minmax_adversarial(cfg, ds, lambda model, s: s.features)
    for a, b in zip(plain.weights, hardened.weights):
        assert np.array_equal(a, b)
    assert report.perturbation_failures == 0


def test_minmax_counts_handle_failures():
    _, ds = small_synth(m=40, n=300)
    cfg = MlpConfig(input_dim=40, hidden=(10,), epochs=2, seed=3)
    plain, _ = train(cfg, ds)
    _, report = train_minmax_adversarial(cfg, ds, lambda model, s: None)
    n_malicious_train = sum(1 for s in ds.train if s.label == 1)
    assert report.perturbation_failures == n_malicious_train * 2


def test_minmax_on_all_benign_data_equals_ordinary_training():
    base = toy_separable(n=60)
    benign = tuple(Sample(s.features, 0, s.sample_id) for s in base.samples)
    ds = Dataset(samples=benign, train_idx=base.train_idx, val_idx=(), test_idx=())
    cfg = MlpConfig(input_dim=30, hidden=(6,), epochs=4, seed=1)
    plain, _ = train(cfg, ds)

    def handle(model, s):
        raise AssertionError("handle must not run without malicious samples")

    hardened, _ = train_minmax_adversarial(cfg, ds, handle)
    for a, b in zip(plain.weights, hardened.weights):
        assert np.array_equal(a, b)


# ----------------------------------------------------------------- aleatoric


def test_attenuated_loss_approaches_cross_entropy_as_variance_vanishes():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(16, 3))
    z[:, 2] = 2.0 * math.log(1e-6)
    y = rng.integers(0, 2, size=16)
    la, _ = _attenuated_loss_and_delta(z, y, 30, np.random.default_rng(1))
    lc, _ = _ce_loss_and_delta(z, y)
    assert abs(la - lc) < 1e-4


def test_attenuated_variance_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(8, 3))
    y = rng.integers(0, 2, size=8)
    _, delta = _attenuated_loss_and_delta(z, y, 40, np.random.default_rng(2))
    h = 1e-5
    for i in range(8):
        zp, zm = z.copy(), z.copy()
        zp[i, 2] += h
        zm[i, 2] -= h
        lp, _ = _attenuated_loss_and_delta(zp, y, 40, np.random.default_rng(2))
        lm, _ = _attenuated_loss_and_delta(zm, y, 40, np.random.default_rng(2))
        fd = (lp - lm) / (2 * h)
        assert abs(delta[i, 2] - fd) / max(abs(fd), 1e-6) <= 1e-3


def test_attenuation_learns_higher_variance_on_noisy_subset():
    rng = np.random.default_rng(3)
    n, m = 900, 40
    X = np.zeros((n, m))
    y = np.zeros(n, dtype=int)
    kind = rng.integers(0, 3, size=n)
    for i in range(n):
        if kind[i] == 0:
            on = rng.choice(10, size=4, replace=False)
            y[i] = 1
        elif kind[i] == 1:
            on = 10 + rng.choice(10, size=4, replace=False)
            y[i] = 0
        else:  # contradictory labels: irreducible noise
            on = 20 + rng.choice(10, size=4, replace=False)
            y[i] = int(rng.random() < 0.5)
        X[i, on] = 1
    samples = tuple(
        Sample(BinaryFeatureVector.from_dense(X[i]), int(y[i]), i) for i in range(n)
    )
    ds = Dataset(samples=samples, train_idx=tuple(range(720)),
                 val_idx=tuple(range(720, 810)), test_idx=tuple(range(810, 900)))
    model, _ = train_with_attenuation(
        MlpConfig(input_dim=m, hidden=(16,), epochs=50, seed=0, aleatoric=True), ds)
    var_clean = np.mean([model.aleatoric_variance(X[i]) for i in range(n) if kind[i] != 2])
    var_noisy = np.mean([model.aleatoric_variance(X[i]) for i in range(n) if kind[i] == 2])
    print(f"sigma2 clean {var_clean:.4f} noisy {var_noisy:.4f}")
    assert var_noisy > var_clean


def test_attenuation_requires_aleatoric_head():
    ds = toy_separable(n=32)
    with pytest.raises(BadConfig):
        train_with_attenuation(MlpConfig(input_dim=30, hidden=(4,), epochs=1), ds)
    plain, _ = train(MlpConfig(input_dim=30, hidden=(4,), epochs=1, seed=0), ds)
    with pytest.raises(NoAleatoricHead):
        plain.aleatoric_variance(np.zeros(30))


# --------------------------------------------------------------- persistence


def test_save_load_reproduces_forward(tmp_path):
    _, ds = small_synth(m=40, n=300)
    model, _ = train(MlpConfig(input_dim=40, hidden=(12, 5), epochs=4, seed=8), ds)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    for s in ds.test[:20]:
        x = s.features.to_dense()
        assert np.max(np.abs(model.forward(x) - back.forward(x))) <= 1e-12


def test_load_rejects_foreign_format(tmp_path):
    path = tmp_path / "bogus.json"
    path.write_text('{"format": "something-else"}', encoding="utf-8")
    with pytest.raises(BadConfig):
        load_model(path)
