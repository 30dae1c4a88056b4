"""Shared fixtures: a small corpus and its features, built once per session."""

import numpy as np
import pytest

from emoalign.config import parse_config_text
from emoalign.corpus import CorpusConfig, build_corpus
from emoalign.pipeline import compute_features

TINY_CONFIG_TEXT = """
profile = desk
corpus.train_clips = 2
corpus.test_clips = 1
corpus.dg_clips = 1
pretrain.epochs = 2
pretrain.batch_size = 16
acpt.iterations = 5
classifier.epochs = 5
"""


@pytest.fixture(scope="session")
def tiny_cfg():
    return parse_config_text(TINY_CONFIG_TEXT)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory, tiny_cfg):
    """112-clip corpus (2 train / 1 in / 1 dg clip per pair), plus features."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cc = tiny_cfg.corpus
    manifest = build_corpus(CorpusConfig(seed=cc.seed, train_clips=cc.train_clips,
                                         test_clips=cc.test_clips,
                                         dg_clips=cc.dg_clips), root)
    mels = compute_features(manifest, cache_path=root / "features.npz")
    return manifest, mels
