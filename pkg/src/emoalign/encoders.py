"""Audio and text encoders, projection heads, and the soundscape prompt bank.

Both encoders end in a projection head to a shared 32-dimensional space and
every public encode path returns unit-norm rows, so cosine similarity is a
plain dot product downstream.

The audio side is a small channels-last conv net over the log-mel "image";
the text side is a token embedding plus one post-norm transformer block read
out at the CLS position.  The prompt bank holds one row of learnable prompt
token vectors per soundscape; a prompted class embedding is the text encoder
run on [CLS, prompts, class tokens, PAD...] with PAD keys masked out of the
attention exactly.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .corpus import PAD, CLS, VOCAB
from .errors import ConfigError, ContractError, ShapeError
from .rng import Xoshiro256StarStar
from .tensor import Tensor

EMBED_DIM = 32      # token / joint-space width
HIDDEN_DIM = 64     # encoder output width before projection
PROJ_DIM = 32       # shared space dimensionality
FF_DIM = 64         # transformer feed-forward width
N_SOUNDSCAPES = 12
DEFAULT_PROMPT_LEN = 8
PROMPT_SIGMA = 0.02
MASK_BIAS = -1e9

# Raw log-mel (natural-log power, silence floor at log(1e-10) ~ -23) is
# centered per clip, then divided by a fixed scale, before the conv net.
# Per-clip centering cancels global gain: a rescaled clip shifts every
# log-power bin by the same constant, which the mean removes, so loudness
# carries no information and only spectral shape does.
MEL_SCALE = 8.0


def _uniform_init(rng: Xoshiro256StarStar, fan_in: int, *shape: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform_range(-bound, bound, int(np.prod(shape))).reshape(shape)
    return Tensor(data, requires_grad=True)


def _normal_init(rng: Xoshiro256StarStar, sigma: float, *shape: int) -> Tensor:
    data = rng.normal(int(np.prod(shape)), sigma=sigma).reshape(shape)
    return Tensor(data, requires_grad=True)


def _near_identity(rng: Xoshiro256StarStar, sigma: float, d: int) -> Tensor:
    data = np.eye(d) + rng.normal(d * d, sigma=sigma).reshape(d, d)
    return Tensor(data, requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class AudioEncoder:
    """[B, 498, 40] log-mel -> [B, 64]; three conv/relu/pool blocks.

    The input map is average-pooled once before the first convolution: the
    class-bearing cues (pitch band, spectral tilt, 1-8 Hz amplitude
    modulation) are broad against a 100 Hz frame rate and 40 mel bands, so
    halving both axes keeps them intact while quartering the conv work.
    """

    CHANNELS = (1, 8, 16, 32)

    def __init__(self, rng: Xoshiro256StarStar):
        c1, c2, c3, c4 = self.CHANNELS
        self.conv1_w = _uniform_init(rng, 9 * c1, 9 * c1, c2)
        self.conv1_b = _zeros(c2)
        self.conv2_w = _uniform_init(rng, 9 * c2, 9 * c2, c3)
        self.conv2_b = _zeros(c3)
        self.conv3_w = _uniform_init(rng, 9 * c3, 9 * c3, c4)
        self.conv3_b = _zeros(c4)
        self.head_w = _uniform_init(rng, c4, c4, HIDDEN_DIM)
        self.head_b = _zeros(HIDDEN_DIM)

    def named_parameters(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in
                ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                 "conv3_w", "conv3_b", "head_w", "head_b")}

    def forward(self, mel: Tensor) -> Tensor:
        if mel.ndim != 3:
            raise ShapeError(f"audio encoder wants [B, frames, mels], got {mel.shape}")
        b, fr, nm = mel.shape
        x = T.avgpool2(mel.reshape(b, fr, nm, 1))
        for w, bias in ((self.conv1_w, self.conv1_b),
                        (self.conv2_w, self.conv2_b),
                        (self.conv3_w, self.conv3_b)):
            x = T.relu(T.add_rowvec(T.conv3x3(x, w), bias))
            x = T.avgpool2(x)
        x = x.mean(axis=1).mean(axis=1)  # global pool -> [B, C]
        return T.add_rowvec(x @ self.head_w, self.head_b)


class TextEncoder:
    """Token ids -> [B, 64] through one single-head post-norm transformer block.

    The block stays frozen through alignment training, standing in for a
    pretrained language encoder, so its initialization must already treat
    captions sensibly rather than scramble them: query/key weights start
    small (near-uniform attention over real tokens) and value/output start
    near identity, making the CLS state approximately the bag of the
    caption's token embeddings.  Compositional inputs -- a caption plus a
    soundscape suffix, or prompt vectors plus a class token -- then shift
    the embedding predictably instead of arbitrarily.
    """

    MIX_SIGMA = 0.05

    def __init__(self, rng: Xoshiro256StarStar, vocab_size: int = len(VOCAB)):
        self.vocab_size = vocab_size
        d = EMBED_DIM
        s = self.MIX_SIGMA
        self.embed = _uniform_init(rng, vocab_size, vocab_size, d)
        self.attn_q_w = _normal_init(rng, s, d, d)
        self.attn_q_b = _zeros(d)
        self.attn_k_w = _normal_init(rng, s, d, d)
        self.attn_k_b = _zeros(d)
        self.attn_v_w = _near_identity(rng, s, d)
        self.attn_v_b = _zeros(d)
        self.attn_o_w = _near_identity(rng, s, d)
        self.attn_o_b = _zeros(d)
        self.ln1_g = _ones(d)
        self.ln1_b = _zeros(d)
        self.ff1_w = _normal_init(rng, s, d, FF_DIM)
        self.ff1_b = _zeros(FF_DIM)
        self.ff2_w = _normal_init(rng, s, FF_DIM, d)
        self.ff2_b = _zeros(d)
        self.ln2_g = _ones(d)
        self.ln2_b = _zeros(d)
        self.read_w = _uniform_init(rng, d, d, HIDDEN_DIM)
        self.read_b = _zeros(HIDDEN_DIM)

    _PARAM_NAMES = ("embed",
                    "attn_q_w", "attn_q_b", "attn_k_w", "attn_k_b",
                    "attn_v_w", "attn_v_b", "attn_o_w", "attn_o_b",
                    "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
                    "ln2_g", "ln2_b", "read_w", "read_b")

    def named_parameters(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in self._PARAM_NAMES}

    def body_parameters(self) -> list[Tensor]:
        """Everything except nothing -- the whole encoder is the 'body'."""
        return list(self.named_parameters().values())

    def embed_tokens(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ShapeError(f"token batch must be [B, L], got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise ContractError(f"token id out of range [0, {self.vocab_size})")
        onehot = np.eye(self.vocab_size)[tokens]  # [B, L, V], constant
        return Tensor(onehot) @ self.embed

    def forward_embeddings(self, x: Tensor, key_pad_mask: np.ndarray) -> Tensor:
        """x: [B, L, 32]; key_pad_mask: [B, L] bool, True at PAD positions."""
        b, L, d = x.shape
        if key_pad_mask.shape != (b, L):
            raise ShapeError(f"pad mask {key_pad_mask.shape} vs batch {(b, L)}")
        q = T.add_rowvec(x @ self.attn_q_w, self.attn_q_b)
        k = T.add_rowvec(x @ self.attn_k_w, self.attn_k_b)
        v = T.add_rowvec(x @ self.attn_v_w, self.attn_v_b)
        scores = T.scale(q @ T.transpose(k), 1.0 / math.sqrt(d))
        # additive key mask; exp(-1e9 - max) underflows to exactly 0,
        # which is what makes PAD invariance exact rather than approximate
        bias = np.where(key_pad_mask[:, None, :], MASK_BIAS, 0.0)
        scores = scores + Tensor(np.broadcast_to(bias, (b, L, L)).copy())
        ctx = T.softmax(scores) @ v
        attn_out = T.add_rowvec(ctx @ self.attn_o_w, self.attn_o_b)
        x = T.layer_norm(x + attn_out, self.ln1_g, self.ln1_b)
        ff = T.relu(T.add_rowvec(x @ self.ff1_w, self.ff1_b))
        ff = T.add_rowvec(ff @ self.ff2_w, self.ff2_b)
        x = T.layer_norm(x + ff, self.ln2_g, self.ln2_b)
        cls = x.narrow(1, 0, 1).reshape(b, d)
        return T.add_rowvec(cls @ self.read_w, self.read_b)

    def forward_tokens(self, tokens: np.ndarray) -> Tensor:
        emb = self.embed_tokens(tokens)
        return self.forward_embeddings(emb, np.asarray(tokens) == PAD)


class ProjectionHead:
    """64 -> 64 -> relu -> 32."""

    def __init__(self, rng: Xoshiro256StarStar):
        self.fc1_w = _uniform_init(rng, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM)
        self.fc1_b = _zeros(HIDDEN_DIM)
        self.fc2_w = _uniform_init(rng, HIDDEN_DIM, HIDDEN_DIM, PROJ_DIM)
        self.fc2_b = _zeros(PROJ_DIM)

    def named_parameters(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in ("fc1_w", "fc1_b", "fc2_w", "fc2_b")}

    def forward(self, x: Tensor) -> Tensor:
        h = T.relu(T.add_rowvec(x @ self.fc1_w, self.fc1_b))
        return T.add_rowvec(h @ self.fc2_w, self.fc2_b)


class PromptBank:
    """[N_SOUNDSCAPES, n_prompt, 32] learnable prompt token vectors."""

    def __init__(self, rng: Xoshiro256StarStar, n_prompt: int = DEFAULT_PROMPT_LEN):
        if n_prompt < 1:
            raise ConfigError("prompt length must be at least 1")
        self.n_prompt = n_prompt
        data = rng.normal(N_SOUNDSCAPES * n_prompt * EMBED_DIM, sigma=PROMPT_SIGMA)
        self.prompts = Tensor(data.reshape(N_SOUNDSCAPES, n_prompt, EMBED_DIM),
                              requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"prompts": self.prompts}


class AlignmentModel:
    """The full trainable bundle: encoders, projections, temperature, prompts.

    All weights are drawn from one seeded stream in a fixed declaration
    order, so construction is reproducible bit for bit.
    """

    def __init__(self, seed: int, n_prompt: int = DEFAULT_PROMPT_LEN,
                 vocab_size: int = len(VOCAB), tau_init: float = 0.07):
        rng = Xoshiro256StarStar(seed)
        self.audio = AudioEncoder(rng)
        self.text = TextEncoder(rng, vocab_size)
        self.proj_a = ProjectionHead(rng)
        self.proj_t = ProjectionHead(rng)
        self.bank = PromptBank(rng, n_prompt)
        self.log_tau = Tensor(np.array([math.log(tau_init)]), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, comp in (("audio", self.audio), ("text", self.text),
                             ("proj_a", self.proj_a), ("proj_t", self.proj_t),
                             ("bank", self.bank)):
            for name, p in comp.named_parameters().items():
                out[f"{prefix}.{name}"] = p
        out["log_tau"] = self.log_tau
        return out

    # -- encode paths ----------------------------------------------------

    def encode_audio(self, mel) -> Tensor:
        """[B, 498, 40] log-mel (array or tensor) -> [B, 32] unit-norm rows."""
        x = mel if isinstance(mel, Tensor) else Tensor(np.asarray(mel, dtype=np.float64))
        if x.ndim != 3:
            raise ShapeError(f"encode_audio: expected [B, frames, mels], got {x.shape}")
        b, fr, nm = x.shape
        flat = T.reshape(x, b, fr * nm)
        centered = T.sub(flat, T.expand_last(T.tensor_mean(flat, axis=1, keepdims=True),
                                             fr * nm))
        x = T.scale(T.reshape(centered, b, fr, nm), 1.0 / MEL_SCALE)
        return T.l2_normalize(self.proj_a.forward(self.audio.forward(x)))

    def encode_text(self, tokens: np.ndarray) -> Tensor:
        """[B, L] token ids -> [B, 32] unit-norm rows."""
        return T.l2_normalize(self.proj_t.forward(self.text.forward_tokens(tokens)))

    def encode_prompted_class(self, soundscape_id: int, class_tokens,
                              seq_len: int = 16) -> Tensor:
        """Unit-norm [32] embedding of [CLS, prompts(soundscape), class tokens]."""
        if not 0 <= soundscape_id < N_SOUNDSCAPES:
            raise ContractError(f"soundscape id {soundscape_id} out of range")
        ct = np.asarray(class_tokens, dtype=np.int64).reshape(-1)
        if ct.size == 0:
            raise ContractError("class token sequence is empty")
        used = 1 + self.bank.n_prompt + ct.size
        if used > seq_len:
            raise ConfigError(
                f"prompt length {self.bank.n_prompt} plus {ct.size} class tokens "
                f"needs {used} positions but the sequence budget is {seq_len}; "
                "reduce the prompt length or raise the sequence length")
        cls_emb = self.text.embed_tokens(np.array([[CLS]]))
        prom = T.narrow(self.bank.prompts, 0, soundscape_id, soundscape_id + 1)
        pieces = [cls_emb, prom, self.text.embed_tokens(ct[None, :])]
        if used < seq_len:
            pieces.append(self.text.embed_tokens(np.full((1, seq_len - used), PAD)))
        seq = T.concat(pieces, axis=1)
        mask = np.arange(seq_len)[None, :] >= used
        h = self.text.forward_embeddings(seq, mask)
        return T.l2_normalize(self.proj_t.forward(h)).reshape(PROJ_DIM)

    def class_text_embeddings(self, class_names, template: str,
                              tokenize_fn) -> Tensor:
        """[C, 32] unit-norm rows from template-instantiated captions."""
        names = list(class_names)
        if len(names) < 2:
            raise ContractError("need at least 2 class names")
        toks = np.stack([tokenize_fn(template.replace("[CLASS]", n)) for n in names])
        return self.encode_text(toks)


def set_trainable(params, flag: bool) -> None:
    for p in params:
        p.requires_grad = flag
        if not flag:
            p.grad = None
