"""Training objectives and similarity primitives.

Three trainable stages share this module: batch-symmetric contrastive
alignment of audio/text embedding pairs, prompt tuning against per-class
anchor embeddings (a temperature-scaled classification term plus a pairwise
ranking hinge), and an additive-angular-margin softmax classifier head.
Cosine similarity and the zero-shot argmax rule live here too so that every
consumer scores embeddings identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DomainError
from .tensor import Tensor

TAU_MIN = 1e-3
TAU_MAX = 100.0
DEFAULT_OMEGA = 0.07

_ZERO_EPS = 1e-12


# -- similarity and prediction ----------------------------------------------

def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"cosine_sim: shapes {a.shape} and {b.shape} differ")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na < _ZERO_EPS or nb < _ZERO_EPS:
        raise DomainError("cosine_sim: zero vector has no direction")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def predict_zero_shot(audio_emb: np.ndarray, class_embs: np.ndarray) -> int:
    """Most-similar class by cosine; ties go to the lowest class id."""
    class_embs = np.asarray(class_embs, dtype=np.float64)
    if class_embs.ndim != 2 or class_embs.shape[0] < 1:
        raise ContractError(f"predict_zero_shot: need [C, D] classes, got {class_embs.shape}")
    sims = np.array([cosine_sim(audio_emb, row) for row in class_embs])
    return int(np.argmax(sims))


# -- label plumbing -----------------------------------------------------------

def _one_hot(labels, n_rows: int, n_classes: int) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.shape[0] != n_rows:
        raise ContractError(f"labels: expected {n_rows} entries, got {lab.shape[0]}")
    if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
        raise ContractError(f"labels: values must lie in [0, {n_classes}), got "
                            f"[{lab.min()}, {lab.max()}]")
    return np.eye(n_classes)[lab]


def _check_pair(name: str, rows: Tensor, anchors: Tensor) -> tuple[int, int]:
    if rows.ndim != 2 or anchors.ndim != 2 or rows.shape[1] != anchors.shape[1]:
        raise ContractError(f"{name}: incompatible shapes {rows.shape} vs {anchors.shape}")
    return rows.shape[0], anchors.shape[0]


# -- contrastive alignment -----------------------------------------------------

def temperature(log_tau: Tensor) -> Tensor:
    """Positive temperature from its log-space parameter, clamped to a safe range."""
    return T.clamp(T.exp(log_tau), TAU_MIN, TAU_MAX)


def contrastive_loss(audio: Tensor, text: Tensor, log_tau: Tensor) -> Tensor:
    """Symmetric batch alignment loss over row-paired unit embeddings.

    Row i of ``audio`` pairs with row i of ``text``; every other row in the
    batch acts as a negative, in both retrieval directions.
    """
    if audio.ndim != 2 or audio.shape != text.shape:
        raise ContractError(f"contrastive_loss: {audio.shape} vs {text.shape}")
    n = audio.shape[0]
    if n < 1:
        raise ContractError("contrastive_loss: empty batch")
    inv_tau = T.reciprocal(temperature(log_tau))
    sims = (audio @ text.transpose()) * inv_tau
    eye = Tensor(np.eye(n))
    picked = (T.log_softmax(sims) * eye).sum() + (T.log_softmax(sims.transpose()) * eye).sum()
    return picked * (-0.5 / n)


# -- prompt-tuning objectives ---------------------------------------------------

def acpt_cls_loss(text_embs: Tensor, class_embs: Tensor, labels,
                  omega: float = DEFAULT_OMEGA) -> Tensor:
    """Mean cross-entropy of each text row against the class anchors at 1/omega gain."""
    if omega <= 0.0:
        raise ConfigError(f"omega must be positive, got {omega}")
    m, c = _check_pair("acpt_cls_loss", text_embs, class_embs)
    mask = Tensor(_one_hot(labels, m, c))
    logits = (text_embs @ class_embs.transpose()) * (1.0 / omega)
    return (T.log_softmax(logits) * mask).sum() * (-1.0 / m)


def acpt_rank_loss(text_embs: Tensor, class_embs: Tensor, labels) -> Tensor:
    """Unit-margin ranking hinge, summed over every (positive, negative) pair.

    A sum, not a mean: the magnitude grows with the number of rows and
    negatives, which keeps each violated pair's pull on the gradient constant.
    """
    m, c = _check_pair("acpt_rank_loss", text_embs, class_embs)
    onehot = _one_hot(labels, m, c)
    sims = text_embs @ class_embs.transpose()
    pos = (sims * Tensor(onehot)).sum(axis=1, keepdims=True)
    slack = T.add(T.scale(pos, -1.0), 1.0).expand_last(c) + sims
    return (T.relu(slack) * Tensor(1.0 - onehot)).sum()


def acpt_loss(text_embs: Tensor, class_embs: Tensor, labels,
              omega: float = DEFAULT_OMEGA) -> Tensor:
    """Classification plus ranking objective for prompt tuning."""
    return (acpt_cls_loss(text_embs, class_embs, labels, omega)
            + acpt_rank_loss(text_embs, class_embs, labels))


# -- additive angular margin classification -------------------------------------

@dataclass
class ArcFaceConfig:
    """Margin-softmax head: class weight rows plus (scale, margin) knobs."""

    weights: Tensor
    scale: float = 16.0
    margin: float = 0.2

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ConfigError(f"class weights must be [C, D], got {self.weights.shape}")
        if not self.scale > 0.0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ConfigError(f"margin must lie in [0, pi/2), got {self.margin}")


def arcface_loss(features: Tensor, config: ArcFaceConfig, labels) -> Tensor:
    """Mean cross-entropy with the target-class angle widened by the margin.

    cos(theta + m) is expanded as cos*cos(m) - sqrt(max(1-cos^2, 0))*sin(m),
    which is exact on the closed interval including cos = +/-1; the clamp
    under the square root only guards against rounding pushing 1-cos^2
    negative.
    """
    w = config.weights
    b, c = _check_pair("arcface_loss", features, w)
    if c < 2:
        raise ContractError("arcface_loss: need at least 2 classes")
    onehot = Tensor(_one_hot(labels, b, c))
    cos_all = T.l2_normalize(features) @ T.l2_normalize(w).transpose()
    cos_y = (cos_all * onehot).sum(axis=1, keepdims=True)
    sin_y = T.sqrt(T.clamp(T.add(T.scale(cos_y * cos_y, -1.0), 1.0), 0.0, 2.0))
    target = T.scale(cos_y, math.cos(config.margin)) + T.scale(sin_y, -math.sin(config.margin))
    delta = target + T.scale(cos_y, -1.0)
    logits = (cos_all + delta.expand_last(c) * onehot) * config.scale
    return (T.log_softmax(logits) * onehot).sum() * (-1.0 / b)
