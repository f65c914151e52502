"""Unit tests for corpus synthesis, acoustic features, and dataset curation."""

import numpy as np
import numpy.testing as npt
import pytest

from spdp.audio import (FEATURE_NAMES, TERTILE_CUT, UNVOICED, BinThresholds,
                        FeatureVector5, annotate_intersect, bin_index,
                        build_filter_fixture_set, compute_bins, curate_test,
                        extract_features5, filter_high_expressivity, load_wav,
                        sample_confused_label, save_wav, synth_expressive_tone)
from spdp.corpus import (CorpusConfig, Utterance, centroid_separation,
                         class_centroids, generate_corpus, load_corpus,
                         save_corpus)
from spdp.vocab import build_vocab

VOCAB = build_vocab()


# -- corpus generation ---------------------------------------------------------------


def test_corpus_is_deterministic():
    cfg = CorpusConfig(n_per_class=6, seed=5)
    a = generate_corpus(cfg, VOCAB)
    b = generate_corpus(cfg, VOCAB)
    assert len(a) == len(b) == 48
    for ua, ub in zip(a, b):
        assert ua.id == ub.id and ua.transcript == ub.transcript
        assert ua.frames.tobytes() == ub.frames.tobytes()


def test_corpus_counts_and_split():
    cfg = CorpusConfig(n_per_class=10, train_fraction=0.8, seed=1)
    utts = generate_corpus(cfg, VOCAB)
    for cls in range(8):
        mine = [u for u in utts if u.gold_style == cls]
        assert len(mine) == 10
        assert sum(u.split == "train" for u in mine) == 8
        assert sum(u.split == "test" for u in mine) == 2


def test_corpus_frames_cluster_around_centroids():
    centroids = class_centroids(8)
    sep = centroid_separation(centroids)
    cfg = CorpusConfig(n_per_class=8, spread=0.1 * sep, coupling=1.0, seed=2)
    utts = generate_corpus(cfg, VOCAB)
    hits = 0
    for u in utts:
        mean = u.frames.mean(axis=0)
        nearest = int(np.argmin(np.linalg.norm(centroids - mean, axis=1)))
        hits += nearest == u.gold_style
    assert hits / len(utts) >= 0.95


def test_corpus_coupling_controls_word_blocks():
    full = generate_corpus(CorpusConfig(n_per_class=8, coupling=1.0, seed=3), VOCAB)
    none = generate_corpus(CorpusConfig(n_per_class=8, coupling=0.0, seed=3), VOCAB)
    for u in full:
        block = set(VOCAB.class_blocks[u.gold_style])
        assert set(u.transcript) <= block
    foreign = sum(not set(u.transcript) <= set(VOCAB.class_blocks[u.gold_style])
                  for u in none)
    assert foreign == len(none)


def test_corpus_transcript_lengths_within_bounds():
    cfg = CorpusConfig(n_per_class=16, transcript_len=(4, 8), seed=4)
    for u in generate_corpus(cfg, VOCAB):
        assert 4 <= len(u.transcript) <= 8


def test_corpus_config_validation():
    with pytest.raises(ValueError, match="n_per_class"):
        generate_corpus(CorpusConfig(n_per_class=1), VOCAB)
    with pytest.raises(ValueError, match="coupling"):
        generate_corpus(CorpusConfig(coupling=1.5), VOCAB)
    with pytest.raises(ValueError, match="train_fraction"):
        generate_corpus(CorpusConfig(train_fraction=1.0), VOCAB)


def test_corpus_round_trip(tmp_path):
    utts = generate_corpus(CorpusConfig(n_per_class=4, seed=6), VOCAB)
    manifest, frames = tmp_path / "manifest.jsonl", tmp_path / "frames.bin"
    save_corpus(utts, manifest, frames)
    again = load_corpus(manifest, frames)
    assert len(again) == len(utts)
    for ua, ub in zip(utts, again):
        assert (ua.id, ua.gold_style, ua.split) == (ub.id, ub.gold_style, ub.split)
        assert ua.transcript == ub.transcript
        assert ua.frames.tobytes() == ub.frames.tobytes()


def test_corpus_load_detects_count_mismatch(tmp_path):
    utts = generate_corpus(CorpusConfig(n_per_class=4, seed=6), VOCAB)
    manifest, frames = tmp_path / "manifest.jsonl", tmp_path / "frames.bin"
    save_corpus(utts, manifest, frames)
    lines = manifest.read_text().splitlines()
    manifest.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ValueError, match="disagree"):
        load_corpus(manifest, frames)


# -- acoustic features ----------------------------------------------------------------


def test_pitch_of_pure_tone():
    sr = 16000
    t = np.arange(sr) / sr
    wav = 0.3 * np.sin(2 * np.pi * 220.0 * t)
    fv = extract_features5(wav, sr)
    assert abs(fv.pitch_mean - 220.0) < 2.0
    assert fv.pitch_std < 1.5
    assert fv.flags == []


def test_pitch_resample_invariance():
    base = None
    for sr in (16000, 22050):
        t = np.arange(round(1.2 * sr)) / sr
        wav = 0.3 * np.sin(2 * np.pi * 220.0 * t)
        fv = extract_features5(wav, sr)
        if base is None:
            base = fv.pitch_mean
        else:
            assert abs(fv.pitch_mean - base) < 2.0


def test_silence_reports_unvoiced():
    fv = extract_features5(np.zeros(16000), 16000)
    npt.assert_allclose(fv.as_array(), 0.0)
    assert fv.flags == [UNVOICED]


def test_speaking_rate_counts_envelope_peaks():
    sr = 16000
    t = np.arange(2 * sr) / sr
    env = 0.3 * (1.0 + 0.6 * np.sin(2 * np.pi * 3.0 * t))
    wav = env * np.sin(2 * np.pi * 200.0 * t)
    fv = extract_features5(wav, sr)
    assert 2.5 <= fv.speaking_rate <= 3.5


def test_energy_features_track_amplitude_knobs():
    quiet = extract_features5(synth_expressive_tone(1.0, 0.1, 3.0, 0.3, 200, 5), 16000)
    loud = extract_features5(synth_expressive_tone(1.0, 0.4, 3.0, 0.3, 200, 5), 16000)
    flat = extract_features5(synth_expressive_tone(1.0, 0.3, 3.0, 0.1, 200, 5), 16000)
    wavy = extract_features5(synth_expressive_tone(1.0, 0.3, 3.0, 0.8, 200, 5), 16000)
    assert loud.energy_mean > quiet.energy_mean
    assert wavy.energy_std > flat.energy_std


def test_vibrato_raises_pitch_std():
    steady = extract_features5(synth_expressive_tone(1.0, 0.3, 3.0, 0.3, 200, 1), 16000)
    warbly = extract_features5(synth_expressive_tone(1.0, 0.3, 3.0, 0.3, 200, 15), 16000)
    assert warbly.pitch_std > steady.pitch_std + 1.0


def test_waveform_shorter_than_window_rejected():
    with pytest.raises(ValueError, match="shorter than one analysis window"):
        extract_features5(np.zeros(100), 16000)


# -- binning ---------------------------------------------------------------------------


def test_bins_on_standard_normal_population():
    rng = np.random.default_rng(10)
    mat = rng.normal(size=(20000, 5))
    bins = compute_bins(mat)
    npt.assert_allclose(bins.mu, 0.0, atol=0.03)
    npt.assert_allclose(bins.low_cut, -TERTILE_CUT, atol=0.03)
    npt.assert_allclose(bins.high_cut, TERTILE_CUT, atol=0.03)


def test_bins_shift_equivariance():
    rng = np.random.default_rng(11)
    mat = rng.normal(size=(500, 5))
    shift = np.array([10.0, -3.0, 0.5, 100.0, 7.0])
    a = compute_bins(mat)
    b = compute_bins(mat + shift)
    npt.assert_allclose(b.low_cut, a.low_cut + shift, atol=1e-9)
    npt.assert_allclose(b.high_cut, a.high_cut + shift, atol=1e-9)
    npt.assert_allclose(b.sigma, a.sigma, atol=1e-9)


def test_bins_split_normal_population_into_thirds():
    rng = np.random.default_rng(12)
    mat = rng.normal(size=(100000, 5))
    bins = compute_bins(mat)
    for feat in range(5):
        idx = np.array([bin_index(v, feat, bins) for v in mat[:, feat]])
        for b in range(3):
            assert abs((idx == b).mean() - 1 / 3) < 0.01


def test_bins_degenerate_feature_rejected():
    mat = np.random.default_rng(13).normal(size=(50, 5))
    mat[:, 2] = 4.2
    with pytest.raises(ValueError, match="degenerate feature"):
        compute_bins(mat)


def test_bins_require_five_features():
    with pytest.raises(ValueError, match="feature population"):
        compute_bins(np.zeros((10, 4)))


def test_bin_index_boundaries():
    bins = BinThresholds(mu=np.zeros(5), sigma=np.ones(5),
                         low_cut=np.full(5, -TERTILE_CUT),
                         high_cut=np.full(5, TERTILE_CUT))
    assert bin_index(-TERTILE_CUT, 0, bins) == 0          # boundary joins the low bin
    assert bin_index(-TERTILE_CUT + 1e-9, 0, bins) == 1
    assert bin_index(TERTILE_CUT, 0, bins) == 1           # boundary joins the medium bin
    assert bin_index(TERTILE_CUT + 1e-9, 0, bins) == 2


# -- expressivity filter ------------------------------------------------------------------


def unit_bins() -> BinThresholds:
    return BinThresholds(mu=np.zeros(5), sigma=np.ones(5),
                         low_cut=np.full(5, -TERTILE_CUT),
                         high_cut=np.full(5, TERTILE_CUT))


def test_filter_requires_all_five_high():
    bins = unit_bins()
    assert filter_high_expressivity(FeatureVector5(1, 1, 1, 1, 1), bins)
    assert not filter_high_expressivity(FeatureVector5(1, 1, 0, 1, 1), bins)
    assert not filter_high_expressivity(
        FeatureVector5(TERTILE_CUT, 1, 1, 1, 1), bins)  # strict inequality


def test_filter_pass_rate_matches_independent_tertiles():
    rng = np.random.default_rng(14)
    mat = rng.normal(size=(20000, 5))
    bins = compute_bins(mat)
    passed = (mat > bins.high_cut).all(axis=1).mean()
    assert abs(passed - (1 / 3) ** 5) < 0.002


def test_filter_recovers_planted_fixtures(tmp_path):
    truth = build_filter_fixture_set(tmp_path, n=60, planted_fraction=0.2, seed=0)
    features = {}
    for name in truth:
        wav, sr = load_wav(tmp_path / name)
        features[name] = extract_features5(wav, sr)
    bins = compute_bins(list(features.values()))
    kept = {name for name, fv in features.items()
            if filter_high_expressivity(fv, bins)}
    planted = {name for name, is_planted in truth.items() if is_planted}
    recall = len(kept & planted) / len(planted)
    assert recall >= 0.9, f"planted recall {recall:.2f}"
    false_keeps = len(kept - planted)
    assert false_keeps <= 3


# -- annotation and curation ----------------------------------------------------------------


def test_annotate_intersect_rules():
    assert annotate_intersect(3, 3) == 3
    assert annotate_intersect(3, 4) is None
    with pytest.raises(ValueError, match="out of range"):
        annotate_intersect(8, 3)
    with pytest.raises(ValueError, match="out of range"):
        annotate_intersect(0, -1)


def test_intersection_boosts_label_purity():
    rng = np.random.default_rng(15)
    confusion = np.full((8, 8), 0.2 / 7)
    np.fill_diagonal(confusion, 0.8)
    kept = correct = 0
    n = 20000
    golds = rng.integers(0, 8, size=n)
    for g in golds:
        a = sample_confused_label(int(g), confusion, rng)
        b = sample_confused_label(int(g), confusion, rng)
        lbl = annotate_intersect(a, b)
        if lbl is not None:
            kept += 1
            correct += lbl == g
    expected_keep = 0.8 ** 2 + 7 * (0.2 / 7) ** 2
    assert abs(kept / n - expected_keep) < 0.01
    assert correct / kept > 0.98


def test_sample_confused_label_identity_matrix():
    rng = np.random.default_rng(16)
    eye = np.eye(8)
    assert all(sample_confused_label(g, eye, rng) == g for g in range(8))


def test_curate_test_threshold():
    assert curate_test(6, 5)            # mean 5.5: retained
    assert not curate_test(5, 5)        # mean 5.0: dropped (strictly above 5)
    assert curate_test(10, 1)           # mean 5.5: retained
    assert not curate_test(1, 1)
    assert curate_test(10, 10)


def test_curate_test_rejects_invalid_scores():
    with pytest.raises(ValueError, match="reviewer scores"):
        curate_test(0, 5)
    with pytest.raises(ValueError, match="reviewer scores"):
        curate_test(5, 11)
    with pytest.raises(ValueError, match="reviewer scores"):
        curate_test(5.5, 5)


# -- WAV io -----------------------------------------------------------------------------------


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(17)
    wav = rng.uniform(-0.9, 0.9, size=8000)
    path = tmp_path / "x.wav"
    save_wav(path, wav, sample_rate=16000)
    again, sr = load_wav(path)
    assert sr == 16000
    assert np.abs(again - wav).max() < 1.01 / 32767
