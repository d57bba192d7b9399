"""Session-scoped fixtures: the desk-scale corpus, trained models and
attack batteries reused by the module and acceptance tests."""
import time

import numpy as np
import pytest

from maladv.baselines import GenAttackParams, PointwiseParams, genattack, jsmf_attack, pointwise_attack
from maladv.defense import BayesianPredictConfig, build_neighbor_index
from maladv.features import MODE_ALL, SynthConfig, mode_mask, synthesize_dataset
from maladv.mlp import MlpConfig, train, train_with_attenuation
from maladv.ofei import OfeiParams, ofei_attack

from helpers import (
    ATTACK_SEED_BASE,
    DATA_SEED,
    MODEL_SEED,
    N_TARGETS,
    Cell,
    correctly_flagged_malicious,
    semi_session,
    white_session,
)


@pytest.fixture(scope="session")
def desk():
    """Default synthetic corpus plus its all-features mask."""
    vocab, ds = synthesize_dataset(SynthConfig(), seed=DATA_SEED)
    return vocab, ds, mode_mask(vocab, MODE_ALL)


@pytest.fixture(scope="session")
def plain_model(desk):
    _, ds, _ = desk
    cfg = MlpConfig(input_dim=1000, hidden=(200, 200), epochs=60, seed=MODEL_SEED)
    return train(cfg, ds)


@pytest.fixture(scope="session")
def bayes_model(desk):
    _, ds, _ = desk
    cfg = MlpConfig(
        input_dim=1000, hidden=(200, 200), epochs=60, seed=MODEL_SEED,
        dropout=0.5, aleatoric=True,
    )
    return train_with_attenuation(cfg, ds)


def _run_battery(model, targets, mask, attacks):
    cells = {}
    for name, make in attacks.items():
        t0 = time.perf_counter()
        results = []
        for i, s in enumerate(targets):
            results.append((s, make(s, ATTACK_SEED_BASE ^ i)))
        cells[name] = Cell(results=results, elapsed=time.perf_counter() - t0)
    return cells


@pytest.fixture(scope="session")
def plain_battery(desk, plain_model):
    """All five attacks against the plain model, 50 targets each."""
    _, ds, mask = desk
    model, _ = plain_model
    targets = correctly_flagged_malicious(model, ds, N_TARGETS)
    assert len(targets) == N_TARGETS

    attacks = {
        "jsmf": lambda s, seed: jsmf_attack(s.features, white_session(model), mask, max_flips=20),
        "ofei": lambda s, seed: ofei_attack(s.features, semi_session(model), mask, OfeiParams(seed=seed)),
        "ofei+fgsm": lambda s, seed: ofei_attack(
            s.features, white_session(model), mask, OfeiParams(seed=seed, guidance="fgsm")
        ),
        "genattack": lambda s, seed: genattack(
            s.features, semi_session(model), mask, params=GenAttackParams(seed=seed)
        ),
        "pointwise": lambda s, seed: pointwise_attack(
            s.features, semi_session(model), mask, params=PointwiseParams(seed=seed)
        ),
    }
    cells = _run_battery(model, targets, mask, attacks)
    return {"targets": targets, "cells": cells}


@pytest.fixture(scope="session")
def bayes_battery(desk, bayes_model):
    """Attacks against the uncertainty-headed model, plus clean controls."""
    _, ds, mask = desk
    model, _ = bayes_model
    X = np.stack([s.features.to_dense() for s in ds.test])
    preds = model.forward_batch(X).argmax(axis=1)
    targets = [s for s, p in zip(ds.test, preds) if s.label == 1 and p == 1][:N_TARGETS]
    normals = [s for s, p in zip(ds.test, preds) if p == s.label][:120]
    assert len(targets) == N_TARGETS and len(normals) == 120

    attacks = {
        "jsmf": lambda s, seed: jsmf_attack(s.features, white_session(model), mask, max_flips=20),
        "ofei": lambda s, seed: ofei_attack(s.features, semi_session(model), mask, OfeiParams(seed=seed)),
        "genattack": lambda s, seed: genattack(
            s.features, semi_session(model), mask, params=GenAttackParams(seed=seed)
        ),
    }
    cells = _run_battery(model, targets, mask, attacks)
    return {"targets": targets, "normals": normals, "cells": cells}


@pytest.fixture(scope="session")
def bayes_scoring(desk, bayes_model):
    """Monte-Carlo pass config and activation index for uncertainty scores."""
    _, ds, _ = desk
    model, _ = bayes_model
    bp = BayesianPredictConfig(n_passes=50, seed=0)
    index = build_neighbor_index(model, ds.train, seed=0)
    return bp, index
