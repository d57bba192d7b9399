"""Binary feature space: vocabularies, sparse sample vectors, datasets.

Feature vectors are sets of active indices over a fixed vocabulary of m
string-valued features.  Every feature belongs to one of eight tag groups:
S1..S4 describe manifest-derived properties and S5..S8 describe properties
extracted from disassembled code.  Attacks may only add features, and a
feature mask restricts which indices are legal to touch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadConfig,
    BadLabel,
    BadTag,
    DimensionError,
    DuplicateFeature,
    ParseError,
)

MANIFEST_TAGS = ("S1", "S2", "S3", "S4")
DEXCODE_TAGS = ("S5", "S6", "S7", "S8")
ALL_TAGS = MANIFEST_TAGS + DEXCODE_TAGS

MODE_ALL = "all-features"
MODE_MANIFEST = "manifest-only"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered feature strings with their tag group and a reverse index."""

    entries: tuple[tuple[str, str], ...]  # (feature string, tag)
    index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            object.__setattr__(
                self, "index", {s: i for i, (s, _) in enumerate(self.entries)}
            )

    @property
    def m(self) -> int:
        return len(self.entries)

    def tag_of(self, i: int) -> str:
        return self.entries[i][1]

    def indices_with_tags(self, tags: Sequence[str]) -> frozenset[int]:
        wanted = set(tags)
        return frozenset(i for i, (_, t) in enumerate(self.entries) if t in wanted)


def load_vocabulary(path) -> Vocabulary:
    """Read one `<tag>\\t<feature-string>` line per feature.

    Raises DuplicateFeature on a repeated string, BadTag on an unknown tag
    and ParseError (with the 1-based line number) on a malformed line.
    An empty file yields a valid vocabulary with m = 0.
    """
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError(line_no, f"expected '<tag>\\t<feature>', got {line!r}")
            tag, feat = parts
            if tag not in ALL_TAGS:
                raise BadTag(f"line {line_no}: unknown tag {tag!r}")
            if feat in seen:
                raise DuplicateFeature(f"line {line_no}: duplicate feature {feat!r}")
            seen.add(feat)
            entries.append((feat, tag))
    return Vocabulary(entries=tuple(entries))


@dataclass(frozen=True)
class BinaryFeatureVector:
    """Sparse binary vector: sorted active indices plus the space width m."""

    active: tuple[int, ...]
    m: int

    def __post_init__(self):
        prev = -1
        for i in self.active:
            if i <= prev:
                raise ValueError("active indices must be strictly increasing")
            prev = i
        if prev >= self.m:
            raise DimensionError(f"index {prev} out of range for m={self.m}")
        if self.active and self.active[0] < 0:
            raise ValueError("negative feature index")

    @classmethod
    def from_indices(cls, indices: Iterable[int], m: int) -> "BinaryFeatureVector":
        return cls(active=tuple(sorted(set(int(i) for i in indices))), m=m)

    @classmethod
    def from_dense(cls, arr: np.ndarray) -> "BinaryFeatureVector":
        nz = np.flatnonzero(arr)
        return cls(active=tuple(int(i) for i in nz), m=int(arr.shape[0]))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.m, dtype=np.float64)
        if self.active:
            out[list(self.active)] = 1.0
        return out

    def with_added(self, idx: int) -> "BinaryFeatureVector":
        if idx < 0 or idx >= self.m:
            raise DimensionError(f"index {idx} out of range for m={self.m}")
        if idx in self.active:
            return self
        return BinaryFeatureVector(
            active=tuple(sorted(self.active + (idx,))), m=self.m
        )

    def __len__(self) -> int:
        return len(self.active)


def flip_count(x: BinaryFeatureVector, x_star: BinaryFeatureVector) -> int:
    """Size of the symmetric difference between two vectors' active sets."""
    if x.m != x_star.m:
        raise DimensionError(f"m mismatch: {x.m} vs {x_star.m}")
    return len(set(x.active) ^ set(x_star.active))


@dataclass(frozen=True)
class Sample:
    """One labelled feature vector.  Label 0 is benign, 1 is malicious."""

    features: BinaryFeatureVector
    label: int
    sample_id: int = 0


@dataclass(frozen=True)
class FeatureMask:
    """Indices an attack is allowed to modify."""

    allowed: frozenset[int]
    m: int

    def allowed_array(self) -> np.ndarray:
        return np.fromiter(sorted(self.allowed), dtype=np.int64, count=len(self.allowed))


def mode_mask(vocab: Vocabulary, mode: str) -> FeatureMask:
    """Mask for an attack mode: every feature, or manifest tags only."""
    if mode == MODE_ALL:
        return FeatureMask(allowed=frozenset(range(vocab.m)), m=vocab.m)
    if mode == MODE_MANIFEST:
        return FeatureMask(allowed=vocab.indices_with_tags(MANIFEST_TAGS), m=vocab.m)
    raise BadConfig(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class Dataset:
    """Samples plus disjoint train/validation/test index splits."""

    samples: tuple[Sample, ...]
    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    unknown_skipped: int = 0

    @property
    def n(self) -> int:
        return len(self.samples)

    def subset(self, idx: Sequence[int]) -> tuple[Sample, ...]:
        return tuple(self.samples[i] for i in idx)

    @property
    def train(self) -> tuple[Sample, ...]:
        return self.subset(self.train_idx)

    @property
    def val(self) -> tuple[Sample, ...]:
        return self.subset(self.val_idx)

    @property
    def test(self) -> tuple[Sample, ...]:
        return self.subset(self.test_idx)


def make_split(
    n: int, seed: int = 0, test_frac: float = 0.2, val_frac: float = 0.2
) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """Shuffled disjoint splits: test_frac for test, then val_frac of the
    remaining training block held out for validation."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = int(round(n * test_frac))
    rest = order[n_test:]
    n_val = int(round(len(rest) * val_frac))
    test = tuple(int(i) for i in order[:n_test])
    val = tuple(int(i) for i in rest[:n_val])
    train = tuple(int(i) for i in rest[n_val:])
    return train, val, test


def dataset_from_samples(samples: Sequence[Sample], seed: int = 0, **split_kw) -> Dataset:
    train, val, test = make_split(len(samples), seed=seed, **split_kw)
    return Dataset(samples=tuple(samples), train_idx=train, val_idx=val, test_idx=test)


def ingest_samples(path, vocab: Vocabulary) -> Dataset:
    """Read `<label>\\t<feat>[,<feat>...]` lines against a vocabulary.

    Unknown feature strings are skipped and counted in Dataset.unknown_skipped.
    File order is preserved; the default split is a fixed-seed shuffle.
    """
    samples: list[Sample] = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(line_no, f"expected '<label>\\t<features>', got {line!r}")
            label_str, payload = parts
            if label_str not in ("0", "1"):
                raise BadLabel(f"line {line_no}: label must be 0 or 1, got {label_str!r}")
            indices: list[int] = []
            if payload:
                for feat in payload.split(","):
                    idx = vocab.index.get(feat)
                    if idx is None:
                        skipped += 1
                    else:
                        indices.append(idx)
            samples.append(
                Sample(
                    features=BinaryFeatureVector.from_indices(indices, vocab.m),
                    label=int(label_str),
                    sample_id=len(samples),
                )
            )
    ds = dataset_from_samples(samples, seed=0)
    return Dataset(
        samples=ds.samples,
        train_idx=ds.train_idx,
        val_idx=ds.val_idx,
        test_idx=ds.test_idx,
        unknown_skipped=skipped,
    )


def serialize_samples(samples: Sequence[Sample], vocab: Vocabulary, path) -> None:
    """Write samples back out in the ingest format."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            names = ",".join(vocab.entries[i][0] for i in s.features.active)
            fh.write(f"{s.label}\t{names}\n")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus with a planted class-discriminative structure.

    The discriminative features split into a benign-leaning block
    (benign_share of them) and a malicious-leaning block (the rest).

    Benign evidence is bundled: the benign-leaning features partition
    into benign_groups co-occurrence groups, mirroring the shared
    library and framework footprints that benign applications drag in
    wholesale.  A benign sample activates each group as a unit (with a
    per-group probability decaying from rate_benign_max to
    rate_benign_min) and then fires each member of an active group with
    a per-sample rate drawn uniformly from group_member_rate plus or
    minus group_member_spread, so group footprints come in graded sizes
    rather than all-or-nothing; members of inactive groups fall back to
    rate_cold.  On malicious samples the same features fire
    independently at the matching marginal rate, so a single
    benign-leaning feature carries no evidence on its own and the class
    signal lives in the co-activation patterns.

    Malicious evidence stays per-feature: each malicious-leaning
    feature fires independently at a rate decaying from rate_mal_max
    to rate_mal_min in class, rate_cold out of class.  Both decays are
    log-linear curves bent by spectrum_shape (1.0 is plain geometric;
    below 1.0 the rates plunge early and then flatten).  The remaining
    features fire at a label-independent noise rate chosen so the
    median active count lands near the target sparsity.
    """

    m: int = 1000
    n_samples: int = 10000
    malicious_fraction: float = 0.5
    n_discriminative: int = 360
    benign_share: float = 0.289
    benign_groups: int = 8
    group_member_rate: float = 0.66
    group_member_spread: float = 0.25
    rate_benign_max: float = 0.68
    rate_benign_min: float = 0.24
    rate_mal_max: float = 0.035
    rate_mal_min: float = 0.012
    rate_cold: float = 0.02
    spectrum_shape: float = 1.0
    label_noise: float = 0.02
    target_sparsity: int = 42
    manifest_fraction: float = 0.95

    def validate(self) -> None:
        if self.n_discriminative > self.m:
            raise BadConfig("more discriminative features than features")
        if not (0.0 <= self.malicious_fraction <= 1.0):
            raise BadConfig("malicious_fraction outside [0, 1]")
        if self.m < 0 or self.n_samples < 0:
            raise BadConfig("negative sizes")
        rates = (
            self.rate_benign_max,
            self.rate_benign_min,
            self.rate_mal_max,
            self.rate_mal_min,
            self.rate_cold,
        )
        for r in rates:
            if not (0.0 <= r <= 1.0):
                raise BadConfig("rates must lie in [0, 1]")
        if self.spectrum_shape <= 0.0:
            raise BadConfig("spectrum_shape must be positive")
        if self.benign_groups < 1:
            raise BadConfig("benign_groups must be at least 1")
        if not (0.0 <= self.group_member_rate <= 1.0):
            raise BadConfig("group_member_rate must lie in [0, 1]")
        if self.group_member_spread < 0.0:
            raise BadConfig("group_member_spread must be non-negative")
        if not (0.0 <= self.label_noise < 0.5):
            raise BadConfig("label_noise must lie in [0, 0.5)")
        if not (0.0 <= self.benign_share <= 1.0):
            raise BadConfig("benign_share must lie in [0, 1]")
        if self.rate_benign_min > self.rate_benign_max:
            raise BadConfig("rate_benign_min must not exceed rate_benign_max")
        if self.rate_mal_min > self.rate_mal_max:
            raise BadConfig("rate_mal_min must not exceed rate_mal_max")


def _rate_spectrum(count: int, hi: float, lo: float, shape: float = 1.0) -> np.ndarray:
    if count == 0:
        return np.zeros(0)
    if count == 1 or hi == lo:
        return np.full(count, hi)
    u = np.arange(count) / (count - 1)
    return hi * (lo / hi) ** (u**shape)


def synthesize_dataset(config: SynthConfig, seed: int = 0) -> tuple[Vocabulary, Dataset]:
    """Generate a vocabulary and a labelled dataset from the planted model.

    The same (config, seed) pair reproduces the corpus bit for bit.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    m, n = config.m, config.n_samples

    n_manifest = int(round(m * config.manifest_fraction))
    entries = []
    for i in range(m):
        group = MANIFEST_TAGS if i < n_manifest else DEXCODE_TAGS
        entries.append((f"feat{i:05d}", group[i % len(group)]))
    vocab = Vocabulary(entries=tuple(entries))

    # class-conditional activation rates, row 0 benign / row 1 malicious
    rates = np.zeros((2, m), dtype=np.float64)
    d = config.n_discriminative
    roles = rng.choice(m, size=d, replace=False) if d else np.array([], dtype=np.int64)
    n_ben = int(round(d * config.benign_share))
    benign_leaning, mal_leaning = roles[:n_ben], roles[n_ben:]
    n_groups = min(config.benign_groups, n_ben) if n_ben else 0
    group_rates = _rate_spectrum(
        n_groups, config.rate_benign_max, config.rate_benign_min, config.spectrum_shape
    )
    group_of = np.arange(n_ben) % max(n_groups, 1)
    if n_ben:
        # per-feature marginal in class: group on and member fires, or cold
        rates[0, benign_leaning] = (
            group_rates[group_of] * config.group_member_rate
            + (1.0 - group_rates[group_of]) * config.rate_cold
        )
        # malicious samples fire the same features at the same marginal
        # rate but independently, so a single benign-leaning feature
        # carries no evidence; only the co-activation pattern does
        rates[1, benign_leaning] = rates[0, benign_leaning]
    rates[1, mal_leaning] = _rate_spectrum(
        d - n_ben, config.rate_mal_max, config.rate_mal_min, config.spectrum_shape
    )
    rates[0, mal_leaning] = config.rate_cold

    planted_mean = 0.0
    if d:
        bal = config.malicious_fraction
        planted_mean = (1 - bal) * rates[0, roles].sum() + bal * rates[1, roles].sum()
    noise_rate = 0.0
    if m > d:
        noise_rate = max(0.0, (config.target_sparsity - planted_mean) / (m - d))
        noise_rate = min(noise_rate, 1.0)
    noise_idx = np.setdiff1d(np.arange(m), roles)
    rates[:, noise_idx] = noise_rate

    n_mal = int(round(n * config.malicious_fraction))
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_mal] = 1
    rng.shuffle(labels)

    draws = rng.random((n, m))
    active_matrix = draws < rates[labels]

    if n_ben and n_groups:
        # grouped co-occurrence on the true-benign rows replaces the
        # independent draw for the benign-leaning columns
        ben_rows = np.flatnonzero(labels == 0)
        active_groups = rng.random((ben_rows.size, n_groups)) < group_rates
        fill = np.clip(
            rng.uniform(
                config.group_member_rate - config.group_member_spread,
                config.group_member_rate + config.group_member_spread,
                size=(ben_rows.size, n_groups),
            ),
            0.0,
            1.0,
        )
        member_p = np.where(
            active_groups[:, group_of], fill[:, group_of], config.rate_cold
        )
        active_matrix[np.ix_(ben_rows, benign_leaning)] = (
            rng.random((ben_rows.size, n_ben)) < member_p
        )

    # features follow the true class; the recorded label is sometimes wrong
    observed = labels.copy()
    if config.label_noise > 0.0:
        flip = rng.random(n) < config.label_noise
        observed[flip] = 1 - observed[flip]

    samples = []
    for i in range(n):
        fv = BinaryFeatureVector(
            active=tuple(int(j) for j in np.flatnonzero(active_matrix[i])), m=m
        )
        samples.append(Sample(features=fv, label=int(observed[i]), sample_id=i))

    split_seed = int(rng.integers(0, 2**32))
    ds = dataset_from_samples(samples, seed=split_seed)
    return vocab, ds


def median_sparsity(samples: Sequence[Sample]) -> float:
    if not samples:
        return math.nan
    return float(np.median([len(s.features) for s in samples]))
