"""Encoder contracts: unit norms, masking exactness, prompt isolation, shapes."""

import numpy as np
import pytest

import emoalign.tensor as T
from emoalign.corpus import EMOTIONS, PAD, SEQ_LEN, VOCAB, tokenize
from emoalign.encoders import (AlignmentModel, AudioEncoder, PROJ_DIM,
                               PromptBank, TextEncoder)
from emoalign.errors import ConfigError, ContractError, ShapeError
from emoalign.rng import Xoshiro256StarStar
from emoalign.tensor import Tensor, backward, finite_diff_check


def _mel(rng, b=3, frames=498, bins=40):
    # values in the raw log-mel range (log 1e-10 .. ~0)
    return rng.uniform_range(-16.0, -2.0, b * frames * bins).reshape(b, frames, bins)


def _tokens(texts):
    return np.stack([tokenize(t) for t in texts])


def test_encode_paths_return_unit_norm_rows():
    model = AlignmentModel(seed=3)
    rng = Xoshiro256StarStar(40)
    T.clear_tape()
    with T.no_grad():
        a = model.encode_audio(_mel(rng))
        t = model.encode_text(_tokens(["this is a happy sound",
                                       "this is a sad sound in a street"]))
    assert a.shape == (3, PROJ_DIM)
    assert np.abs(np.sqrt((a.data ** 2).sum(axis=1)) - 1).max() < 1e-9
    assert np.abs(np.sqrt((t.data ** 2).sum(axis=1)) - 1).max() < 1e-9


def test_construction_is_deterministic_and_seed_sensitive():
    pa = AlignmentModel(seed=5).named_parameters()
    pb = AlignmentModel(seed=5).named_parameters()
    pc = AlignmentModel(seed=6).named_parameters()
    assert set(pa) == set(pb) == set(pc)
    for name in pa:
        assert pa[name].data.tobytes() == pb[name].data.tobytes(), name
    assert any(pa[n].data.tobytes() != pc[n].data.tobytes() for n in pa)


def test_batch_rows_are_independent():
    model = AlignmentModel(seed=7)
    rng = Xoshiro256StarStar(41)
    mel = _mel(rng, b=4)
    T.clear_tape()
    with T.no_grad():
        full = model.encode_audio(mel).data
        one = model.encode_audio(mel[2:3]).data
    assert np.abs(full[2] - one[0]).max() < 1e-12
    toks = _tokens(["this is a angry sound", "this is a neutral sound in a cafe",
                    "this is a sad sound"])
    with T.no_grad():
        t_full = model.encode_text(toks).data
        t_one = model.encode_text(toks[1:2]).data
    assert np.abs(t_full[1] - t_one[0]).max() < 1e-12


def test_pad_embedding_content_cannot_leak_into_outputs():
    model = AlignmentModel(seed=11)
    toks = _tokens(["this is a happy sound"])          # padded out to SEQ_LEN
    assert (toks == PAD).sum() > 0
    T.clear_tape()
    with T.no_grad():
        before_text = model.encode_text(toks).data.copy()
        before_prompt = model.encode_prompted_class(3, [VOCAB.index("happy")]).data.copy()
    model.text.embed.data[PAD] += 17.0                  # poison the PAD row
    with T.no_grad():
        after_text = model.encode_text(toks).data
        after_prompt = model.encode_prompted_class(3, [VOCAB.index("happy")]).data
    assert np.array_equal(before_text, after_text)      # exact, not approximate
    assert np.array_equal(before_prompt, after_prompt)


def test_prompted_class_layout_and_budget():
    model = AlignmentModel(seed=13)
    emb = model.encode_prompted_class(0, [VOCAB.index("sad")])
    assert emb.shape == (PROJ_DIM,)
    assert abs(np.sqrt((emb.data ** 2).sum()) - 1) < 1e-9
    # 1 CLS + 8 prompts + 1 class token = 10 used positions of 16
    assert 1 + model.bank.n_prompt + 1 == 10 <= SEQ_LEN
    with pytest.raises(ContractError):
        model.encode_prompted_class(12, [VOCAB.index("sad")])
    with pytest.raises(ContractError):
        model.encode_prompted_class(0, [])
    big = AlignmentModel(seed=13, n_prompt=15)
    with pytest.raises(ConfigError, match="sequence budget"):
        big.encode_prompted_class(0, [VOCAB.index("sad")])
    wide = AlignmentModel(seed=13, n_prompt=32)
    assert wide.encode_prompted_class(0, [VOCAB.index("sad")], seq_len=40).shape == (32,)


def test_prompt_gradients_isolated_to_selected_soundscape():
    model = AlignmentModel(seed=17)
    params = model.named_parameters()
    from emoalign.encoders import set_trainable
    set_trainable([p for n, p in params.items() if n != "bank.prompts"], False)
    T.clear_tape()
    loss = model.encode_prompted_class(5, [VOCAB.index("angry")]).sum()
    backward(loss)
    for name, p in params.items():
        if name == "bank.prompts":
            assert p.grad is not None
            assert np.abs(p.grad[5]).max() > 0
            mask = np.ones(12, bool)
            mask[5] = False
            assert np.abs(p.grad[mask]).max() == 0.0
        else:
            assert p.grad is None, name
    set_trainable(params.values(), True)


def test_audio_encoder_shape_contract():
    enc = AudioEncoder(Xoshiro256StarStar(1))
    rng = Xoshiro256StarStar(2)
    T.clear_tape()
    with T.no_grad():
        out = enc.forward(Tensor(_mel(rng, b=2)))
    assert out.shape == (2, 64)
    with pytest.raises(ShapeError):
        enc.forward(Tensor(np.zeros((498, 40))))


def test_text_encoder_rejects_bad_tokens():
    enc = TextEncoder(Xoshiro256StarStar(1))
    with pytest.raises(ContractError):
        enc.forward_tokens(np.array([[0, len(VOCAB)]]))
    with pytest.raises(ShapeError):
        enc.forward_tokens(np.array([1, 2, 3]))


def test_class_text_embeddings_contract():
    model = AlignmentModel(seed=19)
    T.clear_tape()
    with T.no_grad():
        rows = model.class_text_embeddings(EMOTIONS, "This is a [CLASS] sound", tokenize)
    assert rows.shape == (4, PROJ_DIM)
    # different classes produce genuinely different embeddings
    sims = rows.data @ rows.data.T
    off = sims[~np.eye(4, dtype=bool)]
    assert off.max() < 1.0 - 1e-6
    with pytest.raises(ContractError):
        model.class_text_embeddings(["solo"], "a [CLASS]", tokenize)


def test_prompt_bank_validation():
    with pytest.raises(ConfigError):
        PromptBank(Xoshiro256StarStar(1), n_prompt=0)
    bank = PromptBank(Xoshiro256StarStar(1), n_prompt=4)
    assert bank.prompts.shape == (12, 4, 32)
    assert np.abs(bank.prompts.data).max() < 0.02 * 6  # sigma-scaled init


def test_encode_audio_gradient_matches_finite_differences():
    model = AlignmentModel(seed=23)
    rng = Xoshiro256StarStar(42)
    mel = _mel(rng, b=2, frames=20)

    def f(x):
        return model.encode_audio(x).sum()

    r = finite_diff_check(f, Tensor(mel), name="encode_audio/input")
    assert r.passed, str(r)
