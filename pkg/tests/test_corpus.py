"""Corpus generator: determinism, SNR oracle, splits, captions, separability."""

import numpy as np
import pytest

from emoalign import audio, corpus
from emoalign.corpus import (CLS, PAD, UNK, CorpusConfig, SOUNDSCAPES, EMOTIONS,
                             build_corpus, load_manifest, plan_records,
                             synth_caption, synth_clip, synth_components, tokenize)
from emoalign.errors import ConfigError, DataError


def test_label_tables():
    assert len(EMOTIONS) == 4 and len(set(EMOTIONS)) == 4
    assert [s.id for s in SOUNDSCAPES] == list(range(12))
    assert len({s.name for s in SOUNDSCAPES}) == 12
    # the default holdout introduces no unseen noise kind
    train_kinds = {s.noise_kind for s in SOUNDSCAPES if s.id < 8}
    holdout_kinds = {s.noise_kind for s in SOUNDSCAPES if s.id >= 8}
    assert holdout_kinds <= train_kinds


def test_synth_clip_bit_identical():
    a = synth_clip(0, 1, 12345)
    b = synth_clip(0, 1, 12345)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synth_clip(0, 1, 12346))


def test_no_noise_soundscape_is_pure_signature():
    sig, noise = synth_components(3, 0, 9)  # studio has noise_kind none
    assert np.all(noise == 0.0)
    clip = synth_clip(3, 0, 9)
    assert np.array_equal(clip, sig)
    assert np.isclose(np.max(np.abs(clip)), 0.9, atol=1e-12)


def test_snr_recomputed_from_components():
    # park is white noise at 20 dB with no band filter
    assert SOUNDSCAPES[7].noise_kind == "white" and SOUNDSCAPES[7].snr_db == 20.0
    sig, noise = synth_components(2, 7, 7)
    measured = 10.0 * np.log10(np.mean(sig**2) / np.mean(noise**2))
    assert abs(measured - 20.0) < 0.5
    # and once through a band-filtered soundscape
    sig, noise = synth_components(1, 1, 3)
    measured = 10.0 * np.log10(np.mean(sig**2) / np.mean(noise**2))
    assert abs(measured - SOUNDSCAPES[1].snr_db) < 0.5


def test_clips_peak_at_nine_tenths():
    for e, s, seed in [(0, 2, 1), (1, 5, 2), (2, 10, 3)]:
        clip = synth_clip(e, s, seed)
        assert np.isclose(np.max(np.abs(clip)), 0.9, atol=1e-12)
        assert clip.shape == (audio.CLIP_SAMPLES,)


def test_bad_ids_rejected():
    with pytest.raises(DataError):
        synth_clip(4, 0, 0)
    with pytest.raises(DataError):
        synth_clip(0, 12, 0)
    with pytest.raises(DataError):
        synth_caption(-1, 0, False)


def test_caption_templates_literal():
    assert synth_caption(1, 0, False) == "This is a happy sound"
    assert synth_caption(2, 1, True) == "This is a sad sound in a street"
    # literal substitution, no article fix-up
    assert synth_caption(0, 0, False) == "This is a angry sound"


def test_tokenize_spec_examples():
    ids = tokenize("This is a happy sound")
    words = [corpus.VOCAB[i] for i in ids]
    assert words[:6] == ["<cls>", "this", "is", "a", "happy", "sound"]
    assert all(w == "<pad>" for w in words[6:])
    assert len(ids) == 16

    ids = tokenize("XYZZY sound")
    assert list(ids[:3]) == [CLS, UNK, corpus.VOCAB.index("sound")]
    assert all(i == PAD for i in ids[3:])

    with pytest.raises(DataError):
        tokenize("")


def test_tokenize_custom_length_and_truncation():
    long = "this " * 30
    assert tokenize(long).shape == (16,)
    assert tokenize(long, seq_len=40).shape == (40,)
    assert tokenize("this is a happy sound", seq_len=40)[0] == CLS


def test_generated_captions_never_hit_unk():
    for e in range(4):
        for s in range(12):
            for flag in (False, True):
                ids = tokenize(synth_caption(e, s, flag))
                assert UNK not in ids, (e, s, flag)
    for tpl in corpus.ZERO_SHOT_TEMPLATES.values():
        for name in EMOTIONS:
            assert UNK not in tokenize(tpl.replace("[CLASS]", name))


def test_plan_default_counts_and_split_rules():
    cfg = CorpusConfig(seed=0)
    recs = plan_records(cfg)
    by_split = {s: [r for r in recs if r.split == s] for s in ("train", "test_in", "test_dg")}
    assert len(by_split["train"]) == 4 * 8 * 16 == 512
    assert len(by_split["test_in"]) == 4 * 8 * 4 == 128
    assert len(by_split["test_dg"]) == 4 * 4 * 8 == 128
    assert all(r.soundscape_id < 8 for r in by_split["train"] + by_split["test_in"])
    assert all(r.soundscape_id >= 8 for r in by_split["test_dg"])
    seeds = [r.seed for r in recs]
    assert len(set(seeds)) == len(seeds)
    # captions use the plain template
    r = by_split["train"][0]
    assert r.caption == synth_caption(r.emotion_id, r.soundscape_id, False)


def test_config_validation():
    with pytest.raises(ConfigError):
        CorpusConfig(dg_holdout=()).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(dg_holdout=tuple(range(12))).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(dg_holdout=(3, 99)).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(dg_holdout=(3, 3)).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(train_clips=0).validate()


def test_build_corpus_round_trip_and_reproducibility(tmp_path):
    cfg = CorpusConfig(seed=11, train_clips=1, test_clips=1, dg_clips=1)
    m1 = build_corpus(cfg, tmp_path / "a")
    m2 = build_corpus(cfg, tmp_path / "b")
    man_a = (tmp_path / "a" / "manifest.tsv").read_bytes()
    man_b = (tmp_path / "b" / "manifest.tsv").read_bytes()
    assert man_a == man_b
    for r in (m1.records[0], m1.records[40], m1.records[-1]):
        wav_a = (tmp_path / "a" / r.clip_path).read_bytes()
        wav_b = (tmp_path / "b" / r.clip_path).read_bytes()
        assert wav_a == wav_b

    loaded = load_manifest(tmp_path / "a" / "manifest.tsv")
    assert loaded.records == m1.records
    assert loaded.seed == 11 and loaded.version == corpus.GEN_VERSION
    assert loaded.root == tmp_path / "a"
    # every referenced clip exists and loads at the pinned format
    clip = audio.load_clip(tmp_path / "a" / loaded.records[0].clip_path)
    assert clip.shape == (audio.CLIP_SAMPLES,)


def test_load_manifest_errors(tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "nope.tsv")
    bad = tmp_path / "bad.tsv"
    bad.write_text("# emoalign-corpus v1\n# seed 0\nonly\tthree\tfields\n")
    with pytest.raises(DataError):
        load_manifest(bad)
    worse = tmp_path / "worse.tsv"
    worse.write_text("# emoalign-corpus v99\n# seed 0\n")
    with pytest.raises(DataError):
        load_manifest(worse)
    noseed = tmp_path / "noseed.tsv"
    noseed.write_text("# emoalign-corpus v1\n")
    with pytest.raises(DataError):
        load_manifest(noseed)


def test_nearest_centroid_separability():
    # mean log-mel features must already be informative for emotion, or the
    # downstream learning problem is hopeless
    from emoalign.rng import derive_seed

    def mean_feature(e, s, seed):
        return audio.log_mel(synth_clip(e, s, seed)).mean(axis=0)

    in_domain = [s.id for s in SOUNDSCAPES if s.id < 8]
    train_x, train_y, test_x, test_y = [], [], [], []
    idx = 0
    for e in range(4):
        for s in in_domain:
            for i in range(3):
                f = mean_feature(e, s, derive_seed(999, idx))
                idx += 1
                if i < 2:
                    train_x.append(f)
                    train_y.append(e)
                else:
                    test_x.append(f)
                    test_y.append(e)
    train_x = np.array(train_x)
    test_x = np.array(test_x)
    centroids = np.array([train_x[np.array(train_y) == e].mean(axis=0) for e in range(4)])
    pred = np.argmin(((test_x[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
    acc = float(np.mean(pred == np.array(test_y)))
    assert acc >= 0.60, acc


def test_emotion_spectral_ordering():
    # dark/low sad vs flat/mid neutral vs bright/high happy, in clean studio
    def centroid(e, seed):
        mel = np.exp(audio.log_mel(synth_clip(e, 0, seed)))
        w = mel.mean(axis=0)
        return float((w * np.arange(40)).sum() / w.sum())

    sad = np.mean([centroid(2, s) for s in (1, 2, 3)])
    neu = np.mean([centroid(3, s) for s in (1, 2, 3)])
    hap = np.mean([centroid(1, s) for s in (1, 2, 3)])
    assert sad < neu < hap
