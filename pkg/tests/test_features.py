"""Vocabulary parsing, sparse vectors, ingestion and the synthetic generator."""
import numpy as np
import pytest
from scipy.stats import chi2_contingency

from maladv.errors import (
    BadConfig,
    BadLabel,
    BadTag,
    DimensionError,
    DuplicateFeature,
    ParseError,
)
from maladv.features import (
    MODE_ALL,
    MODE_MANIFEST,
    BinaryFeatureVector,
    DEXCODE_TAGS,
    MANIFEST_TAGS,
    SynthConfig,
    flip_count,
    ingest_samples,
    load_vocabulary,
    median_sparsity,
    mode_mask,
    serialize_samples,
    synthesize_dataset,
)

from helpers import small_synth


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


# ---------------------------------------------------------------- vocabulary


def test_vocabulary_three_line_file(tmp_path):
    p = write_lines(tmp_path / "v.tsv", [
        "S1\tperm.SEND_SMS",
        "S2\thw.camera",
        "S5\tapi.getDeviceId",
    ])
    vocab = load_vocabulary(p)
    assert vocab.m == 3
    assert vocab.index["hw.camera"] == 1
    assert vocab.tag_of(2) == "S5"
    mask = mode_mask(vocab, MODE_MANIFEST)
    assert mask.allowed == {0, 1}


def test_vocabulary_empty_file(tmp_path):
    p = write_lines(tmp_path / "v.tsv", [])
    vocab = load_vocabulary(p)
    assert vocab.m == 0
    assert mode_mask(vocab, MODE_ALL).allowed == frozenset()


def test_vocabulary_duplicate_string_rejected(tmp_path):
    p = write_lines(tmp_path / "v.tsv", ["S1\tperm.SEND_SMS", "S2\tperm.SEND_SMS"])
    with pytest.raises(DuplicateFeature):
        load_vocabulary(p)


def test_vocabulary_unknown_tag_rejected(tmp_path):
    p = write_lines(tmp_path / "v.tsv", ["S9\tperm.SEND_SMS"])
    with pytest.raises(BadTag):
        load_vocabulary(p)


def test_vocabulary_malformed_line_reports_position(tmp_path):
    p = write_lines(tmp_path / "v.tsv", ["S1\ta", "no-tab-here"])
    with pytest.raises(ParseError) as exc:
        load_vocabulary(p)
    assert exc.value.line_no == 2


# ------------------------------------------------------------ sparse vectors


def test_vector_from_indices_sorts_and_dedups():
    v = BinaryFeatureVector.from_indices([5, 1, 5, 3], 8)
    assert v.active == (1, 3, 5)
    assert len(v) == 3


def test_vector_dense_roundtrip():
    rng = np.random.default_rng(0)
    arr = (rng.random(64) < 0.2).astype(float)
    v = BinaryFeatureVector.from_dense(arr)
    assert np.array_equal(v.to_dense(), arr)


def test_vector_with_added_is_idempotent_on_present_index():
    v = BinaryFeatureVector.from_indices([2, 4], 6)
    assert v.with_added(2) is v
    w = v.with_added(5)
    assert w.active == (2, 4, 5)
    with pytest.raises(DimensionError):
        v.with_added(6)


def test_vector_rejects_out_of_range_index():
    with pytest.raises(DimensionError):
        BinaryFeatureVector.from_indices([9], 4)


def test_flip_count_examples():
    a = BinaryFeatureVector.from_indices([1, 2], 10)
    b = BinaryFeatureVector.from_indices([1, 2, 7], 10)
    assert flip_count(a, b) == 1
    assert flip_count(a, a) == 0
    with pytest.raises(DimensionError):
        flip_count(a, BinaryFeatureVector.from_indices([1], 11))


def test_flip_count_matches_dense_xor_popcount():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = (rng.random(40) < 0.3).astype(int)
        y = (rng.random(40) < 0.3).astype(int)
        expected = int(np.bitwise_xor(x, y).sum())
        got = flip_count(
            BinaryFeatureVector.from_dense(x.astype(float)),
            BinaryFeatureVector.from_dense(y.astype(float)),
        )
        assert got == expected


# -------------------------------------------------------------------- masks


def test_mode_mask_sizes_on_mixed_vocab(tmp_path):
    lines = [f"S{1 + i % 4}\tman{i}" for i in range(5)]
    lines += [f"S{5 + i % 4}\tdex{i}" for i in range(3)]
    vocab = load_vocabulary(write_lines(tmp_path / "v.tsv", lines))
    assert len(mode_mask(vocab, MODE_MANIFEST).allowed) == 5
    assert len(mode_mask(vocab, MODE_ALL).allowed) == 8
    with pytest.raises(BadConfig):
        mode_mask(vocab, "bogus")


def test_manifest_mask_disjoint_from_dexcode_indices(desk):
    vocab, _, _ = desk
    manifest = mode_mask(vocab, MODE_MANIFEST).allowed
    dexcode = vocab.indices_with_tags(DEXCODE_TAGS)
    assert manifest.isdisjoint(dexcode)
    assert manifest | dexcode == set(range(vocab.m))


# ---------------------------------------------------------------- ingestion


VOCAB_LINES = ["S1\tpa", "S2\tpb", "S5\tca", "S6\tcb"]


def test_ingest_counts_unknown_strings(tmp_path):
    vocab = load_vocabulary(write_lines(tmp_path / "v.tsv", VOCAB_LINES))
    p = write_lines(tmp_path / "s.tsv", [
        "1\tpa,ca",
        "0\tpb,nonsense,cb",
        "0\t",
    ])
    ds = ingest_samples(p, vocab)
    assert ds.n == 3
    assert ds.unknown_skipped == 1
    assert ds.samples[0].features.active == (0, 2)
    assert ds.samples[2].features.active == ()


def test_ingest_rejects_bad_label(tmp_path):
    vocab = load_vocabulary(write_lines(tmp_path / "v.tsv", VOCAB_LINES))
    p = write_lines(tmp_path / "s.tsv", ["2\tpa"])
    with pytest.raises(BadLabel):
        ingest_samples(p, vocab)


def test_ingest_rejects_malformed_line(tmp_path):
    vocab = load_vocabulary(write_lines(tmp_path / "v.tsv", VOCAB_LINES))
    p = write_lines(tmp_path / "s.tsv", ["1\tpa", "garbage line with no tab".replace("\t", " ")])
    with pytest.raises(ParseError) as exc:
        ingest_samples(p, vocab)
    assert exc.value.line_no == 2


def test_ingest_serialize_reingest_identity(tmp_path):
    vocab = load_vocabulary(write_lines(tmp_path / "v.tsv", VOCAB_LINES))
    p = write_lines(tmp_path / "s.tsv", [
        "1\tpa,ca",
        "0\tpb",
        "1\tpa,pb,ca,cb",
        "0\t",
    ])
    ds1 = ingest_samples(p, vocab)
    out = tmp_path / "round.tsv"
    serialize_samples(ds1.samples, vocab, out)
    ds2 = ingest_samples(out, vocab)
    assert ds2.samples == ds1.samples


def test_split_indices_are_disjoint_and_cover(tmp_path):
    vocab, ds = small_synth(m=60, n=500, seed=1)
    all_idx = sorted(ds.train_idx + ds.val_idx + ds.test_idx)
    assert all_idx == list(range(ds.n))
    assert set(ds.train_idx).isdisjoint(ds.val_idx)
    assert set(ds.train_idx).isdisjoint(ds.test_idx)
    assert set(ds.val_idx).isdisjoint(ds.test_idx)


# ---------------------------------------------------------------- generator


def test_synthesize_default_median_sparsity(desk):
    _, ds, _ = desk
    med = median_sparsity(ds.samples)
    assert 34 <= med <= 50, f"median active count {med}"


def test_synthesize_zero_samples_is_empty():
    _, ds = small_synth(m=50, n=0)
    assert ds.n == 0
    assert ds.train_idx == () and ds.test_idx == ()
    assert np.isnan(median_sparsity(ds.samples))


def test_synthesize_same_seed_is_bitwise_identical():
    v1, d1 = small_synth(m=80, n=300, seed=9)
    v2, d2 = small_synth(m=80, n=300, seed=9)
    assert v1.entries == v2.entries
    assert d1 == d2
    _, d3 = small_synth(m=80, n=300, seed=10)
    assert d3 != d1


def test_synthesize_vocab_tags_cover_both_sections():
    vocab, _ = small_synth(m=100, n=10)
    manifest = vocab.indices_with_tags(MANIFEST_TAGS)
    dexcode = vocab.indices_with_tags(DEXCODE_TAGS)
    assert len(manifest) == 95
    assert len(dexcode) == 5
    assert len(manifest | dexcode) == 100


def test_synthesize_without_discriminative_features_is_label_independent():
    cfg = SynthConfig(m=1000, n_samples=10000, n_discriminative=0)
    _, ds = synthesize_dataset(cfg, seed=11)
    X = np.zeros((ds.n, cfg.m), dtype=np.int64)
    y = np.zeros(ds.n, dtype=np.int64)
    for i, s in enumerate(ds.samples):
        if s.features.active:
            X[i, list(s.features.active)] = 1
        y[i] = s.label
    feats = np.random.default_rng(5).choice(cfg.m, size=20, replace=False)
    for f in feats:
        table = np.zeros((2, 2))
        for label in (0, 1):
            on = int(X[y == label, f].sum())
            table[label] = [int(np.sum(y == label)) - on, on]
        _, p, _, _ = chi2_contingency(table)
        assert p > 0.01, f"feature {f} correlates with labels, p={p:.4f}"


def test_synth_config_validation_errors():
    with pytest.raises(BadConfig):
        SynthConfig(m=10, n_discriminative=20).validate()
    with pytest.raises(BadConfig):
        SynthConfig(malicious_fraction=1.5).validate()
    with pytest.raises(BadConfig):
        SynthConfig(rate_cold=-0.1).validate()
    with pytest.raises(BadConfig):
        SynthConfig(label_noise=0.5).validate()
    with pytest.raises(BadConfig):
        SynthConfig(spectrum_shape=0.0).validate()
    with pytest.raises(BadConfig):
        SynthConfig(rate_benign_min=0.9, rate_benign_max=0.3).validate()
