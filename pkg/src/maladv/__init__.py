"""Adversarial-evasion laboratory for binary-feature malware classifiers."""

__version__ = "0.1.0"

from .features import (
    BinaryFeatureVector,
    Dataset,
    FeatureMask,
    Sample,
    SynthConfig,
    Vocabulary,
    flip_count,
    ingest_samples,
    load_vocabulary,
    mode_mask,
    synthesize_dataset,
)
from .mlp import MlpConfig, MlpModel, train
from .oracle import AccessLevel, OracleSession
from .gp import GpState, KernelParams, UcbParams, matern52, ucb_fitness
from .ofei import AttackResult, OfeiParams, ofei_attack
from .baselines import GenAttackParams, PointwiseParams, genattack, jsmf_attack, pointwise_attack

__all__ = [
    "AccessLevel",
    "AttackResult",
    "BinaryFeatureVector",
    "Dataset",
    "FeatureMask",
    "GenAttackParams",
    "GpState",
    "KernelParams",
    "MlpConfig",
    "MlpModel",
    "OfeiParams",
    "OracleSession",
    "PointwiseParams",
    "Sample",
    "SynthConfig",
    "UcbParams",
    "Vocabulary",
    "flip_count",
    "genattack",
    "ingest_samples",
    "jsmf_attack",
    "load_vocabulary",
    "matern52",
    "mode_mask",
    "ofei_attack",
    "pointwise_attack",
    "synthesize_dataset",
    "train",
    "ucb_fitness",
]
