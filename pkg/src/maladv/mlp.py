"""Feed-forward classifier over binary feature vectors.

Two-class softmax head on ReLU hidden layers, trained with mini-batch SGD
and cross-entropy.  The dense input relaxation lives in [0, 1]^m so input
gradients and Jacobians are well defined.  Variants:

* dropout on hidden layers, reusable at inference time for Monte-Carlo
  sampling of the predictive distribution;
* an optional extra output unit carrying a raw log-variance, trained with
  a noise-attenuated likelihood (see defense module);
* softened-label distillation from a trained teacher;
* alternating adversarial retraining, where malicious training samples are
  replaced by fresh adversarial versions every epoch.

Ties at 0.5/0.5 classify as benign (class 0).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BadConfig, DimensionError, EmptyData, NumericalFailure
from .features import BinaryFeatureVector, Dataset, Sample

logger = logging.getLogger(__name__)

_ATTENUATION_CLIP_NORM = 5.0


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple[int, ...] = (200, 200)
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 128
    dropout: float = 0.0
    patience: int = 10
    seed: int = 0
    aleatoric: bool = False

    def validate(self) -> None:
        if self.input_dim <= 0:
            raise BadConfig("input_dim must be positive")
        if any(h <= 0 for h in self.hidden):
            raise BadConfig("hidden layer sizes must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise BadConfig("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise BadConfig("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size <= 0 or self.patience < 0:
            raise BadConfig("bad epochs/batch_size/patience")


@dataclass(frozen=True)
class DistillConfig:
    teacher: "MlpModel"
    temperature: float = 150.0


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_accuracy: float = float("nan")
    test_fnr: float = float("nan")
    test_fpr: float = float("nan")
    best_epoch: int = -1
    perturbation_failures: int = 0


class MlpModel:
    """Weights plus the config that shaped them.  n_out is 2, or 3 when an
    aleatoric log-variance unit is attached after the class logits."""

    def __init__(self, config: MlpConfig, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.config = config
        self.weights = weights
        self.biases = biases

    @property
    def aleatoric(self) -> bool:
        return self.config.aleatoric

    # ---- forward passes -------------------------------------------------

    def _dense(self, x) -> np.ndarray:
        if isinstance(x, BinaryFeatureVector):
            if x.m != self.config.input_dim:
                raise DimensionError(f"vector m={x.m}, model expects {self.config.input_dim}")
            return x.to_dense()
        arr = np.asarray(x, dtype=np.float64)
        if arr.shape != (self.config.input_dim,):
            raise DimensionError(f"input shape {arr.shape}, model expects ({self.config.input_dim},)")
        return arr

    def _run(self, X: np.ndarray, rng: Optional[np.random.Generator]) -> list[np.ndarray]:
        """Activations per layer; rng enables inverted dropout on hidden layers."""
        p = self.config.dropout
        acts = [X]
        a = X
        last_hidden = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if l < last_hidden:
                a = np.maximum(z, 0.0)
                if rng is not None and p > 0.0:
                    mask = (rng.random(a.shape) >= p) / (1.0 - p)
                    a = a * mask
            else:
                a = z
            acts.append(a)
        return acts

    def logits_batch(self, X: np.ndarray, stochastic: bool = False, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed) if stochastic else None
        return self._run(np.asarray(X, dtype=np.float64), rng)[-1]

    def forward_batch(self, X: np.ndarray, stochastic: bool = False, seed: int = 0) -> np.ndarray:
        z = self.logits_batch(X, stochastic=stochastic, seed=seed)
        return _softmax(z[:, :2])

    def forward(self, x, stochastic: bool = False, seed: int = 0) -> np.ndarray:
        """Class probabilities [p_benign, p_malicious]; sums to 1."""
        return self.forward_batch(self._dense(x)[None, :], stochastic=stochastic, seed=seed)[0]

    def predict(self, x) -> int:
        p = self.forward(x)
        return 0 if p[0] >= p[1] else 1

    def logits(self, x) -> np.ndarray:
        return self.logits_batch(self._dense(x)[None, :])[0]

    def aleatoric_variance(self, x, stochastic: bool = False, seed: int = 0) -> float:
        from .errors import NoAleatoricHead

        if not self.aleatoric:
            raise NoAleatoricHead("model has no log-variance output")
        z = self.logits_batch(self._dense(x)[None, :], stochastic=stochastic, seed=seed)[0]
        return float(np.exp(z[2]))

    def final_hidden(self, x) -> np.ndarray:
        """Deterministic activations of the last hidden layer."""
        acts = self._run(self._dense(x)[None, :], rng=None)
        return acts[-2][0] if len(self.weights) > 1 else acts[0][0]

    def final_hidden_batch(self, X: np.ndarray) -> np.ndarray:
        acts = self._run(np.asarray(X, dtype=np.float64), rng=None)
        return acts[-2] if len(self.weights) > 1 else acts[0]

    def clone(self) -> "MlpModel":
        return MlpModel(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_model(config: MlpConfig) -> MlpModel:
    """Symmetric uniform init scaled by fan-in; biases start at zero."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_out = 3 if config.aleatoric else 2
    sizes = [config.input_dim, *config.hidden, n_out]
    weights, biases = [], []
    for n_in, n_o in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_o)))
        biases.append(np.zeros(n_o))
    return MlpModel(config, weights, biases)


def dense_batch(samples: Sequence[Sample], m: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.zeros((len(samples), m), dtype=np.float64)
    y = np.zeros(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.features.active:
            X[i, list(s.features.active)] = 1.0
        y[i] = s.label
    return X, y


def classification_metrics(model: MlpModel, samples: Sequence[Sample]) -> tuple[float, float, float]:
    """(accuracy, false-negative rate, false-positive rate)."""
    if not samples:
        return float("nan"), float("nan"), float("nan")
    X, y = dense_batch(samples, model.config.input_dim)
    p = model.forward_batch(X)
    pred = (p[:, 1] > p[:, 0]).astype(np.int64)
    acc = float((pred == y).mean())
    mal, ben = y == 1, y == 0
    fnr = float((pred[mal] == 0).mean()) if mal.any() else float("nan")
    fpr = float((pred[ben] == 1).mean()) if ben.any() else float("nan")
    return acc, fnr, fpr


# ---- gradients ----------------------------------------------------------


def _backprop_input(model: MlpModel, x: np.ndarray, dlogits: np.ndarray) -> np.ndarray:
    """Propagate a gradient at the class logits back to the input vector."""
    acts = model._run(x[None, :], rng=None)
    n_out = model.weights[-1].shape[1]
    delta = np.zeros((1, n_out))
    delta[0, :2] = dlogits
    for l in range(len(model.weights) - 1, 0, -1):
        delta = delta @ model.weights[l].T
        delta = delta * (acts[l] > 0)
    return (delta @ model.weights[0].T)[0]


def loss_gradient_wrt_input(model: MlpModel, x, target_class: int) -> np.ndarray:
    """Gradient of cross-entropy toward target_class w.r.t. the dense input."""
    if target_class not in (0, 1):
        raise BadConfig("target_class must be 0 or 1")
    xd = model._dense(x)
    p = model.forward_batch(xd[None, :])[0]
    dlogits = p.copy()
    dlogits[target_class] -= 1.0
    return _backprop_input(model, xd, dlogits)


def class_jacobian(model: MlpModel, x) -> np.ndarray:
    """Rows are gradients of [p_benign, p_malicious] w.r.t. the input."""
    xd = model._dense(x)
    p = model.forward_batch(xd[None, :])[0]
    J = np.zeros((2, model.config.input_dim))
    for c in (0, 1):
        dlogits = -p[c] * p
        dlogits[c] += p[c]
        J[c] = _backprop_input(model, xd, dlogits)
    return J


# ---- training -----------------------------------------------------------


def _ce_loss_and_delta(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    p = _softmax(z[:, :2])
    eps_p = np.clip(p[np.arange(len(y)), y], 1e-300, None)
    loss = float(-np.log(eps_p).mean())
    delta = p.copy()
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    if z.shape[1] == 3:
        delta = np.concatenate([delta, np.zeros((len(y), 1))], axis=1)
    return loss, delta


def _distill_loss_and_delta(z: np.ndarray, q: np.ndarray, T: float) -> tuple[float, np.ndarray]:
    p = _softmax(z[:, :2] / T)
    loss = float(-(q * np.log(np.clip(p, 1e-300, None))).sum(axis=1).mean())
    delta = (p - q) / (T * len(q))
    return loss, delta


def _attenuated_loss_and_delta(
    z: np.ndarray, y: np.ndarray, n_noise: int, rng: np.random.Generator
) -> tuple[float, np.ndarray]:
    """Likelihood of the true class averaged over logit-noise draws.

    The class logits are perturbed by sigma(x) * eps_n with eps_n standard
    normal, sigma = exp(s / 2) from the raw log-variance unit, and the loss
    is -log of the sample-mean softmax probability of the true class.
    """
    B = len(y)
    logits, s = z[:, :2], z[:, 2]
    sigma = np.exp(0.5 * s)
    eps = rng.standard_normal((B, n_noise, 2))
    zh = logits[:, None, :] + sigma[:, None, None] * eps
    P = _softmax(zh)
    pc = P[np.arange(B), :, y]
    A = pc.mean(axis=1)
    loss = float(-np.log(np.clip(A, 1e-300, None)).mean())

    onehot = np.zeros((B, 2))
    onehot[np.arange(B), y] = 1.0
    dA_dz = (pc[:, :, None] * (onehot[:, None, :] - P)).mean(axis=1)
    eps_c = eps[np.arange(B), :, y]
    dA_dsigma = (pc * (eps_c - (P * eps).sum(axis=2))).mean(axis=1)
    coef = -1.0 / (np.clip(A, 1e-300, None) * B)
    delta = np.zeros((B, 3))
    delta[:, :2] = coef[:, None] * dA_dz
    delta[:, 2] = coef * dA_dsigma * 0.5 * sigma
    return loss, delta


def _clip_global_norm(grads: list[np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale


def _fit(
    model: MlpModel,
    config: MlpConfig,
    epoch_data_fn: Callable[[MlpModel, int], tuple[np.ndarray, np.ndarray]],
    batch_loss_fn,
    val_loss_fn: Callable[[MlpModel], tuple[float, float]],
    clip_norm: Optional[float] = None,
) -> tuple[MlpModel, TrainReport]:
    rng = np.random.default_rng(config.seed + 1)
    velocity_w = [np.zeros_like(w) for w in model.weights]
    velocity_b = [np.zeros_like(b) for b in model.biases]
    report = TrainReport()
    best_val = np.inf
    best_state = None
    since_best = 0
    p_drop = config.dropout
    inv_keep = 1.0 / (1.0 - p_drop) if p_drop > 0.0 else 1.0

    for epoch in range(config.epochs):
        X, Y = epoch_data_fn(model, epoch)
        if len(X) == 0:
            raise EmptyData("empty training split")
        order = rng.permutation(len(X))
        losses, accs = [], []
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], Y[idx]
            drop_rng = rng if p_drop > 0.0 else None
            acts = model._run(xb, drop_rng)
            z = acts[-1]
            loss, delta = batch_loss_fn(z, yb, rng)
            if not np.isfinite(loss):
                raise NumericalFailure(f"non-finite training loss at epoch {epoch}")
            losses.append(loss)
            if yb.ndim == 1 and np.issubdtype(yb.dtype, np.integer):
                accs.append(float((np.argmax(z[:, :2], axis=1) == yb).mean()))

            grads_w, grads_b = [], []
            d = delta
            for l in range(len(model.weights) - 1, -1, -1):
                grads_w.append(acts[l].T @ d)
                grads_b.append(d.sum(axis=0))
                if l > 0:
                    # (acts > 0) zeroes dropped and inactive units; surviving
                    # units carried an inverted-dropout scale on the forward.
                    d = (d @ model.weights[l].T) * (acts[l] > 0) * inv_keep
            grads_w.reverse()
            grads_b.reverse()
            if clip_norm is not None:
                _clip_global_norm(grads_w + grads_b, clip_norm)
            for l in range(len(model.weights)):
                velocity_w[l] = config.momentum * velocity_w[l] - config.learning_rate * grads_w[l]
                velocity_b[l] = config.momentum * velocity_b[l] - config.learning_rate * grads_b[l]
                model.weights[l] += velocity_w[l]
                model.biases[l] += velocity_b[l]

        report.train_loss.append(float(np.mean(losses)))
        report.train_acc.append(float(np.mean(accs)) if accs else float("nan"))
        vloss, vacc = val_loss_fn(model)
        report.val_loss.append(vloss)
        report.val_acc.append(vacc)

        if np.isnan(vloss):
            continue  # no validation split, run every epoch
        if vloss < best_val - 1e-12:
            best_val = vloss
            best_state = ([w.copy() for w in model.weights], [b.copy() for b in model.biases])
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break

    if best_state is not None:
        model.weights, model.biases = best_state
    return model, report


def _val_ce(model: MlpModel, X_val: np.ndarray, y_val: np.ndarray) -> tuple[float, float]:
    if len(X_val) == 0:
        return float("nan"), float("nan")
    z = model.logits_batch(X_val)
    loss, _ = _ce_loss_and_delta(z, y_val)
    acc = float((np.argmax(z[:, :2], axis=1) == y_val).mean())
    return loss, acc


def train(config: MlpConfig, dataset: Dataset) -> tuple[MlpModel, TrainReport]:
    """Mini-batch SGD with momentum; early stopping on validation loss.

    Epoch zero returns the freshly initialised model with empty epoch lists.
    Identical (config, dataset) runs produce bitwise-equal weights.
    """
    config.validate()
    if not dataset.train:
        raise EmptyData("dataset has no training samples")
    model = init_model(config)
    X_tr, y_tr = dense_batch(dataset.train, config.input_dim)
    X_val, y_val = dense_batch(dataset.val, config.input_dim)

    def data_fn(_model, _epoch):
        return X_tr, y_tr

    def loss_fn(z, yb, _rng):
        return _ce_loss_and_delta(z, yb)

    model, report = _fit(model, config, data_fn, loss_fn, lambda mm: _val_ce(mm, X_val, y_val))
    report.test_accuracy, report.test_fnr, report.test_fpr = classification_metrics(
        model, dataset.test
    )
    return model, report


def train_distilled(config: MlpConfig, distill: DistillConfig, dataset: Dataset) -> MlpModel:
    """Student trained on the teacher's temperature-softened class posteriors.

    Both sides use the same temperature inside the softmax, which flattens
    the targets toward 0.5/0.5 at large temperatures.
    """
    config.validate()
    if distill.temperature <= 0:
        raise BadConfig("distillation temperature must be positive")
    teacher = distill.teacher
    if teacher.config.input_dim != config.input_dim:
        raise DimensionError("teacher and student input widths differ")
    if not dataset.train:
        raise EmptyData("dataset has no training samples")

    T = distill.temperature
    X_tr, _ = dense_batch(dataset.train, config.input_dim)
    X_val, _ = dense_batch(dataset.val, config.input_dim)
    q_tr = _softmax(teacher.logits_batch(X_tr)[:, :2] / T)
    q_val = _softmax(teacher.logits_batch(X_val)[:, :2] / T) if len(X_val) else np.zeros((0, 2))

    student = init_model(config)

    def data_fn(_model, _epoch):
        return X_tr, q_tr

    def loss_fn(z, qb, _rng):
        return _distill_loss_and_delta(z, qb, T)

    def val_fn(mm):
        if len(X_val) == 0:
            return float("nan"), float("nan")
        z = mm.logits_batch(X_val)
        loss, _ = _distill_loss_and_delta(z, q_val, T)
        acc = float((np.argmax(z[:, :2], axis=1) == np.argmax(q_val, axis=1)).mean())
        return loss, acc

    student, _ = _fit(student, config, data_fn, loss_fn, val_fn)
    return student


def train_minmax_adversarial(
    config: MlpConfig,
    dataset: Dataset,
    attack_handle: Callable[[MlpModel, Sample], Optional[BinaryFeatureVector]],
) -> tuple[MlpModel, TrainReport]:
    """Alternating retraining: every epoch the malicious training samples are
    regenerated as adversarials against the current weights.  Handles that
    fail (raise or return None) leave that sample unperturbed; failures are
    counted in the report.  A handle that never perturbs reduces this to
    ordinary training.
    """
    config.validate()
    if not dataset.train:
        raise EmptyData("dataset has no training samples")
    model = init_model(config)
    X_clean, y_tr = dense_batch(dataset.train, config.input_dim)
    X_val, y_val = dense_batch(dataset.val, config.input_dim)
    mal_rows = [i for i, s in enumerate(dataset.train) if s.label == 1]
    failures = [0]

    def data_fn(current: MlpModel, _epoch):
        X = X_clean.copy()
        snapshot = current.clone()
        for i in mal_rows:
            s = dataset.train[i]
            try:
                adv = attack_handle(snapshot, s)
            except Exception:
                adv = None
            if adv is None:
                failures[0] += 1
            else:
                X[i] = adv.to_dense()
        return X, y_tr

    def loss_fn(z, yb, _rng):
        return _ce_loss_and_delta(z, yb)

    model, report = _fit(model, config, data_fn, loss_fn, lambda mm: _val_ce(mm, X_val, y_val))
    report.perturbation_failures = failures[0]
    if failures[0]:
        logger.info("adversarial retraining: %d perturbation failures", failures[0])
    report.test_accuracy, report.test_fnr, report.test_fpr = classification_metrics(
        model, dataset.test
    )
    return model, report


def train_with_attenuation(config: MlpConfig, dataset: Dataset, n_noise: int = 30) -> tuple[MlpModel, TrainReport]:
    """Joint training of class logits and the log-variance unit.

    Gradients are clipped to global norm 5; a loss that still goes
    non-finite raises NumericalFailure.  Early stopping tracks the
    deterministic classification loss on the validation split.
    """
    if not config.aleatoric:
        raise BadConfig("config.aleatoric must be True for attenuated training")
    if n_noise < 1:
        raise BadConfig("n_noise must be at least 1")
    config.validate()
    if not dataset.train:
        raise EmptyData("dataset has no training samples")
    model = init_model(config)
    X_tr, y_tr = dense_batch(dataset.train, config.input_dim)
    X_val, y_val = dense_batch(dataset.val, config.input_dim)

    def data_fn(_model, _epoch):
        return X_tr, y_tr

    def loss_fn(z, yb, rng):
        return _attenuated_loss_and_delta(z, yb, n_noise, rng)

    model, report = _fit(
        model,
        config,
        data_fn,
        loss_fn,
        lambda mm: _val_ce(mm, X_val, y_val),
        clip_norm=_ATTENUATION_CLIP_NORM,
    )
    report.test_accuracy, report.test_fnr, report.test_fpr = classification_metrics(
        model, dataset.test
    )
    return model, report


# ---- serialization ------------------------------------------------------

_FORMAT = "maladv-mlp-1"


def save_model(model: MlpModel, path) -> None:
    """Single self-describing text file; weights in decimal text, row-major."""
    doc = {
        "format": _FORMAT,
        "config": asdict(model.config),
        "shapes": [list(w.shape) for w in model.weights],
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _FORMAT:
        raise BadConfig(f"unrecognised model file format {doc.get('format')!r}")
    cfg_d = dict(doc["config"])
    cfg_d["hidden"] = tuple(cfg_d["hidden"])
    config = MlpConfig(**cfg_d)
    weights = [
        np.array(flat, dtype=np.float64).reshape(shape)
        for flat, shape in zip(doc["weights"], doc["shapes"])
    ]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    return MlpModel(config, weights, biases)
