"""Shared builders for the test suite: small corpora, planted models, batteries."""
from dataclasses import dataclass

import numpy as np

from maladv.features import (
    BinaryFeatureVector,
    Dataset,
    FeatureMask,
    Sample,
    SynthConfig,
    synthesize_dataset,
)
from maladv.mlp import MlpConfig, MlpModel
from maladv.oracle import AccessLevel, OracleSession

DATA_SEED = 7
MODEL_SEED = 6
ATTACK_SEED_BASE = 1000
N_TARGETS = 50


# scaled-down generator settings that still train to ~0.9 accuracy:
# fewer, larger benign groups keep the co-occurrence signal learnable
TRAINABLE_SMALL = dict(
    m=200, n_samples=1500, n_discriminative=120,
    benign_share=0.5, benign_groups=4, target_sparsity=20,
)


def small_trainable(seed: int = 5):
    return synthesize_dataset(SynthConfig(**TRAINABLE_SMALL), seed=seed)


def small_synth(m: int = 200, n: int = 1000, seed: int = 5, **over):
    """Scaled-down synthetic corpus for fast unit tests."""
    cfg = SynthConfig(
        m=m,
        n_samples=n,
        n_discriminative=over.pop("n_discriminative", int(0.36 * m)),
        target_sparsity=over.pop("target_sparsity", max(8, round(0.042 * m))),
        **over,
    )
    return synthesize_dataset(cfg, seed=seed)


def full_mask(m: int) -> FeatureMask:
    return FeatureMask(allowed=frozenset(range(m)), m=m)


@dataclass
class LinearCase:
    """Hand-built net whose benign logit is w.x + c (first layer is the
    identity, so ReLU passes binary inputs through unchanged)."""

    model: MlpModel
    x0: np.ndarray
    w: np.ndarray
    zeros: np.ndarray

    @property
    def x0v(self) -> BinaryFeatureVector:
        return BinaryFeatureVector.from_dense(self.x0)

    @property
    def mask(self) -> FeatureMask:
        return full_mask(len(self.x0))


def linear_model(w: np.ndarray, bias: float) -> MlpModel:
    """Net whose benign logit is exactly w.x + bias.

    The hidden layer is the identity shifted by +0.5 so every ReLU stays in
    its linear region on binary inputs and gradients reach zero coordinates.
    """
    m = len(w)
    out_bias = bias - 0.5 * float(w.sum())
    return MlpModel(
        MlpConfig(input_dim=m, hidden=(m,)),
        [np.eye(m), np.stack([w, -w], axis=1)],
        [np.full(m, 0.5), np.array([out_bias, -out_bias])],
    )


def linear_plant(seed: int, m: int = 12, deficit_scale: float = 0.6) -> LinearCase:
    """Malicious starting point that a few positive-weight flips push benign."""
    rng = np.random.default_rng(seed)
    while True:
        w = rng.uniform(-1.0, 1.0, size=m)
        x0 = (rng.random(m) < 0.4).astype(float)
        zeros = np.flatnonzero(x0 == 0)
        pos = np.sort(w[zeros][w[zeros] > 0])[::-1]
        if len(pos) < 3:
            continue
        deficit = deficit_scale * (pos[0] + pos[1])
        bias = -float(w @ x0) - deficit
        model = linear_model(w, bias)
        if model.forward(x0)[0] < 0.5:
            return LinearCase(model=model, x0=x0, w=w, zeros=zeros)


def one_flip_case(seed: int = 7, m: int = 12) -> LinearCase:
    """Exactly one zero-feature flip crosses the boundary."""
    rng = np.random.default_rng(seed)
    while True:
        w = rng.uniform(-1.0, 1.0, size=m)
        x0 = (rng.random(m) < 0.4).astype(float)
        zeros = np.flatnonzero(x0 == 0)
        if len(zeros) < 4:
            continue
        wz = np.sort(w[zeros])[::-1]
        if wz[0] <= 0 or wz[0] - max(wz[1], 0.0) < 0.05:
            continue
        deficit = 0.5 * (max(wz[1], 0.0) + wz[0])
        model = linear_model(w, -float(w @ x0) - deficit)
        if model.forward(x0)[0] >= 0.5:
            continue
        n_evade = 0
        for z in zeros:
            xt = x0.copy()
            xt[z] = 1.0
            if model.forward(xt)[0] >= 0.5:
                n_evade += 1
        if n_evade == 1:
            return LinearCase(model=model, x0=x0, w=w, zeros=zeros)


def toy_separable(n: int = 64, m: int = 30, seed: int = 9) -> Dataset:
    """Linearly separable labelled corpus, train split only."""
    rng = np.random.default_rng(seed)
    X = (rng.random((n, m)) < 0.3).astype(float)
    w = np.random.default_rng(seed + 1).normal(size=m)
    y = (X @ w > 0).astype(int)
    samples = tuple(
        Sample(features=BinaryFeatureVector.from_dense(X[i]), label=int(y[i]), sample_id=i)
        for i in range(n)
    )
    return Dataset(samples=samples, train_idx=tuple(range(n)), val_idx=(), test_idx=())


class SpySession(OracleSession):
    """Oracle that records every queried vector, densified."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.seen = []

    def query(self, x):
        out = super().query(x)
        if isinstance(x, BinaryFeatureVector):
            self.seen.append(x.to_dense())
        else:
            self.seen.append(np.asarray(x, dtype=float).copy())
        return out


@dataclass
class Cell:
    """One attack's outcomes over a battery of targets."""

    results: list  # (Sample, AttackResult) pairs
    elapsed: float

    @property
    def successes(self):
        return [(s, r) for s, r in self.results if r.success]

    @property
    def mr(self) -> float:
        return len(self.successes) / len(self.results)

    @property
    def avg_perturbations(self) -> float:
        return float(np.mean([r.perturbations for _, r in self.successes]))

    @property
    def avg_queries(self) -> float:
        return float(np.mean([r.total_queries for _, r in self.successes]))


def correctly_flagged_malicious(model, dataset, limit: int = N_TARGETS):
    """First `limit` test samples that are labelled and predicted malicious."""
    X = np.stack([s.features.to_dense() for s in dataset.test])
    preds = model.forward_batch(X).argmax(axis=1)
    picked = [s for s, p in zip(dataset.test, preds) if s.label == 1 and p == 1]
    return picked[:limit]


def white_session(model):
    return OracleSession(model, access=AccessLevel.WHITE_BOX)


def semi_session(model):
    return OracleSession(model, access=AccessLevel.SEMI_BLACK_BOX)
