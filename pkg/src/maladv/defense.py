"""Uncertainty and density scores for flagging adversarial inputs.

Epistemic uncertainty is the entropy of the mean class posterior over
Monte-Carlo dropout passes.  Aleatoric uncertainty is the learned input-
dependent variance from the noise-attenuated head, averaged over the same
passes.  Their weighted sum (default lambda 0.4) is the combined score.
Two geometric scores work on final-hidden-layer activations: a Gaussian
kernel density against same-class training activations, and a maximum-
likelihood local intrinsic dimensionality estimate against a fixed
reference batch.  A one-dimensional logistic detector on any standardized
score turns flags into a hardened prediction: flagged inputs are treated
as malicious.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BadConfig,
    DegenerateLabels,
    EmptyIndex,
    NoAleatoricHead,
)
from .features import Sample
from .mlp import MlpModel, dense_batch

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)
LID_CAP = 1e6
DISTANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class BayesianPredictConfig:
    n_passes: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.n_passes < 2:
            raise BadConfig("n_passes must be at least 2")


@dataclass(frozen=True)
class UncertaintyScores:
    eu: float
    au: float
    cu: float


def _mc_passes(model: MlpModel, x, cfg: BayesianPredictConfig) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Stochastic forward passes: class posteriors and, when the model has
    a variance head, per-pass predicted variances."""
    cfg.validate()
    xd = model._dense(x)
    seed_rng = np.random.default_rng(cfg.seed)
    pass_seeds = seed_rng.integers(0, 2**63, size=cfg.n_passes)
    P = np.empty((cfg.n_passes, 2))
    s2 = np.empty(cfg.n_passes) if model.aleatoric else None
    for i in range(cfg.n_passes):
        z = model.logits_batch(xd[None, :], stochastic=True, seed=int(pass_seeds[i]))[0]
        zc = z[:2] - z[:2].max()
        e = np.exp(zc)
        P[i] = e / e.sum()
        if s2 is not None:
            s2[i] = np.exp(z[2])
    return P, s2


def _entropy2(p: np.ndarray) -> float:
    """Two-class entropy with 0 * log 0 = 0, clamped into [0, log 2]."""
    h = 0.0
    for v in p:
        if v > 0.0:
            h -= float(v) * math.log(float(v))
    return min(max(h, 0.0), LOG2)


def epistemic_entropy(model: MlpModel, x, cfg: BayesianPredictConfig = BayesianPredictConfig()) -> tuple[np.ndarray, float]:
    """Mean posterior over MC-dropout passes and its entropy."""
    P, _ = _mc_passes(model, x, cfg)
    p_mean = P.mean(axis=0)
    return p_mean, _entropy2(p_mean)


def combined_uncertainty(
    model: MlpModel,
    x,
    cfg: BayesianPredictConfig = BayesianPredictConfig(),
    lam: float = 0.4,
) -> UncertaintyScores:
    """eu + lambda * au over one shared set of stochastic passes."""
    if not model.aleatoric:
        raise NoAleatoricHead("combined uncertainty needs the variance head")
    P, s2 = _mc_passes(model, x, cfg)
    eu = _entropy2(P.mean(axis=0))
    au = float(s2.mean())
    return UncertaintyScores(eu=eu, au=au, cu=eu + lam * au)


# ---- activation-space scores ----------------------------------------------


@dataclass
class NeighborIndex:
    """Reference activations for density and dimensionality scoring."""

    class_acts: dict[int, np.ndarray]
    bandwidth: dict[int, float]
    lid_batch: np.ndarray
    k_nn: int = 20


def _median_pairwise(A: np.ndarray, rng: np.random.Generator, cap: int = 500) -> float:
    if len(A) > cap:
        A = A[rng.choice(len(A), size=cap, replace=False)]
    sq = (A * A).sum(axis=1)
    d2 = np.clip(sq[:, None] + sq[None, :] - 2.0 * (A @ A.T), 0.0, None)
    iu = np.triu_indices(len(A), k=1)
    return float(np.sqrt(np.median(d2[iu])))


def build_neighbor_index(
    model: MlpModel,
    samples: Sequence[Sample],
    k_nn: int = 20,
    lid_reference: int = 2000,
    seed: int = 0,
) -> NeighborIndex:
    """Final-hidden-layer activations of the reference samples, split by
    class for density, pooled (subsampled to `lid_reference`) for LID.
    Bandwidths follow the median pairwise-distance heuristic per class."""
    if not samples:
        raise EmptyIndex("no reference samples")
    if k_nn < 1:
        raise BadConfig("k_nn must be at least 1")
    X, y = dense_batch(samples, model.config.input_dim)
    acts = model.final_hidden_batch(X)
    rng = np.random.default_rng(seed)
    class_acts, bandwidth = {}, {}
    for c in (0, 1):
        A = acts[y == c]
        class_acts[c] = A
        if len(A) >= 2:
            bw = _median_pairwise(A, rng)
            bandwidth[c] = bw if bw > 0.0 else 1.0
        else:
            bandwidth[c] = 1.0
    if len(acts) > lid_reference:
        pick = rng.choice(len(acts), size=lid_reference, replace=False)
        lid_batch = acts[np.sort(pick)]
    else:
        lid_batch = acts
    return NeighborIndex(class_acts=class_acts, bandwidth=bandwidth, lid_batch=lid_batch, k_nn=k_nn)


def kernel_density_score(index: NeighborIndex, model: MlpModel, x) -> float:
    """Mean Gaussian kernel between x's activation and same-class references.

    The reference class is the model's predicted class for x, so benign-
    looking adversarials are compared against genuine benign geometry.
    """
    c = model.predict(x)
    A = index.class_acts.get(c)
    if A is None or len(A) == 0:
        raise EmptyIndex(f"no reference activations for class {c}")
    a = model.final_hidden(x)
    diff = A - a
    d2 = (diff * diff).sum(axis=1)
    h = index.bandwidth[c]
    return float(np.exp(-d2 / (h * h)).mean())


def lid_from_distances(distances: np.ndarray, k_nn: int) -> float:
    """Maximum-likelihood local intrinsic dimensionality from neighbour
    distances.  Distances are floored at 1e-12; a degenerate all-equal
    neighbourhood is capped at 1e6."""
    d = np.sort(np.asarray(distances, dtype=np.float64))
    if d.shape[0] < k_nn:
        raise EmptyIndex(f"need at least {k_nn} reference points, have {d.shape[0]}")
    r = np.clip(d[:k_nn], DISTANCE_FLOOR, None)
    r_max = r[-1]
    s = float(np.log(r / r_max).sum())
    if s >= 0.0:
        logger.warning("degenerate neighbourhood: all %d neighbours equidistant", k_nn)
        return LID_CAP
    lid = -k_nn / s
    return float(min(lid, LID_CAP))


def lid_score(index: NeighborIndex, model: MlpModel, x) -> float:
    """LID of x's activation against the pooled reference batch."""
    a = model.final_hidden(x)
    diff = index.lid_batch - a
    d = np.sqrt((diff * diff).sum(axis=1))
    return lid_from_distances(d, index.k_nn)


# ---- scalar-score detector -------------------------------------------------


@dataclass(frozen=True)
class DetectorModel:
    weight: float
    bias: float
    mean: float
    std: float
    threshold: float = 0.5

    def probability(self, score: float) -> float:
        z = (score - self.mean) / self.std
        return 1.0 / (1.0 + math.exp(-(self.weight * z + self.bias)))

    def flag(self, score: float) -> bool:
        return self.probability(score) >= self.threshold


def train_detector(
    scores: Sequence[float],
    labels: Sequence[int],
    learning_rate: float = 0.5,
    iterations: int = 500,
) -> DetectorModel:
    """Logistic regression on one standardized score, full-batch gradient
    descent from zero init.  Label 1 marks adversarial."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1 or len(s) == 0:
        raise BadConfig("scores and labels must be equal-length 1-D sequences")
    classes = set(int(v) for v in y)
    if classes != {0, 1}:
        raise DegenerateLabels(f"need both classes, got {sorted(classes)}")
    mu = float(s.mean())
    sd = float(s.std())
    if sd < 1e-12:
        sd = 1.0
    z = (s - mu) / sd
    w, b = 0.0, 0.0
    for _ in range(iterations):
        p = 1.0 / (1.0 + np.exp(-(w * z + b)))
        gw = float(((p - y) * z).mean())
        gb = float((p - y).mean())
        w -= learning_rate * gw
        b -= learning_rate * gb
    return DetectorModel(weight=w, bias=b, mean=mu, std=sd)


def defended_predict(
    detector: DetectorModel,
    model: MlpModel,
    x,
    scorer: Callable[[object], float],
) -> int:
    """Flagged inputs are declared malicious; the rest keep the model's call."""
    if detector.flag(scorer(x)):
        return 1
    return model.predict(x)


SCORE_DUMP_HEADER = "sample_id,label,predicted,kd,lid,au,eu,cu,flag"


def write_score_dump(path, rows: Sequence[dict]) -> None:
    """One line per sample: id, true label, predicted class, the five
    scores, and the detector flag."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SCORE_DUMP_HEADER + "\n")
        for r in rows:
            fh.write(
                "{sample_id},{label},{predicted},{kd:.10g},{lid:.10g},{au:.10g},{eu:.10g},{cu:.10g},{flag}\n".format(
                    **r
                )
            )
