"""Training and evaluation stages, from alignment pretraining to reports.

Stages compose over a shared (manifest, features, config, seed) tuple:

  pretrain             contrastive audio-text alignment of the encoders
  run_acpt             per-soundscape prompt tuning (prompt bank only)
  build_text_training_set / train_classifier
                       text-feature classifier with angular-margin training
  encode_split / evaluate_split / zero_shot_weights
                       audio-side inference and scoring
  ablate / prompt_length_sweep
                       the two standard study grids

Every source of randomness inside a stage is derived from the run seed
through ``derive_seed(seed, stage_tag, step)``, so a (config, seed) pair
reproduces a run bit for bit.  Corpus randomness is separate: it flows
from the corpus seed recorded in the manifest.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio
from . import tensor as T
from .checkpoint import fnv1a64, load_tensors, save_tensors
from .config import RunConfig
from .corpus import (EMOTIONS, SOUNDSCAPES, VOCAB, ZERO_SHOT_TEMPLATES,
                     Manifest, synth_caption, tokenize)
from .encoders import PROJ_DIM, AlignmentModel, set_trainable
from .errors import CheckpointError, ContractError, DataError
from .errors import DomainError
from .losses import (ArcFaceConfig, acpt_loss, arcface_loss, contrastive_loss,
                     predict_zero_shot)
from .metrics import EvalResult, evaluate_predictions
from .optim import SGD, Adam
from .rng import Xoshiro256StarStar, derive_seed
from .tensor import Tensor

# seed-derivation tags, one per stage that consumes randomness
STAGE_PRETRAIN = 1
STAGE_ACPT = 2
STAGE_CLASSIFIER = 3

LOG_COLUMNS = ("stage", "epoch_or_iter", "loss", "seed")


class RunLogWriter:
    """Appends one tab-separated line per logged step: stage, step, loss, seed.

    Header lines (config echoes, provenance) are written as ``# `` comments
    followed by the column row.  Loss values are written with ``repr`` so the
    log itself is bit-reproducible across identical runs.
    """

    def __init__(self, path, header_lines=()):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        for line in header_lines:
            self._fh.write(f"# {line}\n")
        self._fh.write("\t".join(LOG_COLUMNS) + "\n")

    def __call__(self, stage: str, step: int, loss: float, seed: int) -> None:
        self._fh.write(f"{stage}\t{step}\t{loss!r}\t{seed}\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- features ----------------------------------------------------------------

def split_indices(manifest: Manifest, split: str) -> list[int]:
    """Positions of a split's records inside the manifest record order."""
    ids = [i for i, r in enumerate(manifest.records) if r.split == split]
    if not ids:
        raise DataError(f"split {split!r} has no records")
    return ids


def compute_features(manifest: Manifest, cache_path=None) -> np.ndarray:
    """Log-mel spectrograms for every record, [n, 498, 40] float32.

    Row i belongs to ``manifest.records[i]``.  When ``cache_path`` is given,
    a previously computed array for the same corpus seed and record count is
    reused; anything stale is recomputed and overwritten.
    """
    n = len(manifest.records)
    if cache_path is not None:
        p = Path(cache_path)
        if p.is_file():
            with np.load(p) as z:
                if int(z["seed"]) == manifest.seed and z["mel"].shape[0] == n:
                    return z["mel"]
    if manifest.root is None:
        raise DataError("manifest does not know its clip directory")
    mels = np.empty((n, audio.N_FRAMES, audio.N_MELS), dtype=np.float32)
    for i, rec in enumerate(manifest.records):
        mels[i] = audio.log_mel(audio.load_clip(Path(manifest.root) / rec.clip_path))
    if cache_path is not None:
        p = Path(cache_path)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "wb") as fh:
            np.savez(fh, mel=mels, seed=np.int64(manifest.seed))
    return mels


def _epoch_batches(n: int, batch_size: int, rng: Xoshiro256StarStar) -> list[np.ndarray]:
    """Shuffled batch index lists; the trailing partial batch is dropped.

    A dataset smaller than one batch is used whole (still shuffled), since
    dropping the partial batch would otherwise drop the entire dataset.
    """
    order = rng.shuffle(n)
    if n < batch_size:
        return [order]
    return [order[k * batch_size:(k + 1) * batch_size]
            for k in range(n // batch_size)]


# -- stage 1: contrastive pretraining -----------------------------------------

@dataclass
class PretrainStats:
    seed: int
    first_batch_loss: float
    epoch_mean_losses: list


def pretrain(model: AlignmentModel, manifest: Manifest, mels: np.ndarray,
             cfg: RunConfig, seed: int, log=None) -> PretrainStats:
    """Align audio and caption embeddings with the symmetric contrastive loss.

    Trains the audio encoder, both projection heads, and the temperature;
    the text encoder body stays frozen (its gradients are asserted absent
    every step).  Adam, two parameter groups: audio encoder at
    ``pretrain.audio_lr``, heads and temperature at ``pretrain.proj_lr``.
    """
    pc = cfg.pretrain
    ids = split_indices(manifest, "train")
    tokens = np.stack([tokenize(manifest.records[i].caption) for i in ids])
    named = model.named_parameters()
    body = model.text.body_parameters()
    set_trainable(body, False)
    audio_params = [p for name, p in named.items() if name.startswith("audio.")]
    head_params = [p for name, p in named.items()
                   if name.startswith(("proj_a.", "proj_t."))] + [model.log_tau]
    opt_audio = Adam(audio_params, pc.audio_lr)
    opt_heads = Adam(head_params, pc.proj_lr)
    first_loss = None
    epoch_means = []
    try:
        for epoch in range(pc.epochs):
            rng = Xoshiro256StarStar(derive_seed(seed, STAGE_PRETRAIN, epoch))
            total, n_batches = 0.0, 0
            for batch in _epoch_batches(len(ids), pc.batch_size, rng):
                sel = [ids[j] for j in batch]
                T.clear_tape()
                a = model.encode_audio(mels[sel].astype(np.float64))
                t = model.encode_text(tokens[batch])
                loss = contrastive_loss(a, t, model.log_tau)
                value = float(loss.data)
                if first_loss is None:
                    first_loss = value
                T.backward(loss)
                for p in body:
                    if p.grad is not None:
                        raise ContractError(
                            "frozen text encoder body received a gradient")
                opt_audio.step()
                opt_heads.step()
                total += value
                n_batches += 1
            epoch_means.append(total / n_batches)
            if log is not None:
                log("pretrain", epoch, epoch_means[-1], seed)
    finally:
        T.clear_tape()
        set_trainable(body, True)
    return PretrainStats(seed, first_loss, epoch_means)


# -- stage 2: acoustic context prompt tuning ----------------------------------

@dataclass
class AcptStats:
    seed: int
    iteration_losses: list


def run_acpt(model: AlignmentModel, manifest: Manifest, cfg: RunConfig,
             seed: int, log=None) -> AcptStats:
    """Tune the prompt bank so prompted class embeddings match frozen captions.

    For every soundscape seen in training, the four soundscape-aware caption
    embeddings (computed once, frozen) are scored against that soundscape's
    prompted class embeddings; the classification + ranking objective is
    summed over soundscapes and minimized by momentum SGD over the prompt
    bank alone.  Every other parameter is checksummed before and after: a
    single changed byte anywhere else fails the run.
    """
    ac = cfg.acpt
    scapes = sorted({manifest.records[i].soundscape_id
                     for i in split_indices(manifest, "train")})
    n_classes = len(EMOTIONS)
    labels = np.arange(n_classes)
    class_tokens = [[VOCAB.index(name)] for name in EMOTIONS]
    T.clear_tape()
    targets = {}
    with T.no_grad():
        for s in scapes:
            toks = np.stack([tokenize(synth_caption(e, s, True), ac.seq_len)
                             for e in range(n_classes)])
            targets[s] = model.encode_text(toks).data.copy()
    named = model.named_parameters()
    frozen = {name: p for name, p in named.items() if name != "bank.prompts"}
    checksums = {name: fnv1a64(p.data.tobytes()) for name, p in frozen.items()}
    set_trainable(frozen.values(), False)
    # preflight the sequence budget before any state is touched
    model.encode_prompted_class(scapes[0], class_tokens[0], ac.seq_len)
    opt = SGD([model.bank.prompts], ac.lr, ac.momentum)
    losses = []
    try:
        for it in range(ac.iterations):
            T.clear_tape()
            total = None
            for s in scapes:
                anchors = T.concat(
                    [T.reshape(model.encode_prompted_class(s, class_tokens[c],
                                                           ac.seq_len),
                               1, PROJ_DIM)
                     for c in range(n_classes)], axis=0)
                part = acpt_loss(Tensor(targets[s]), anchors, labels, ac.omega)
                total = part if total is None else total + part
            losses.append(float(total.data))
            T.backward(total)
            opt.step()
            if log is not None:
                log("acpt", it, losses[-1], seed)
    finally:
        T.clear_tape()
        set_trainable(frozen.values(), True)
    for name, p in frozen.items():
        if fnv1a64(p.data.tobytes()) != checksums[name]:
            raise ContractError(f"prompt tuning modified frozen parameter {name}")
    return AcptStats(seed, losses)


# -- stage 3: text-trained classifier ------------------------------------------

def build_text_training_set(model: AlignmentModel,
                            cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per class: 12 prompted soundscape embeddings + 1 plain caption = 13 rows.

    All rows are frozen unit-norm text-side features; the audio side never
    contributes training data to the classifier.
    """
    ac = cfg.acpt
    feats, labels = [], []
    T.clear_tape()
    with T.no_grad():
        for c, name in enumerate(EMOTIONS):
            token = [VOCAB.index(name)]
            for s in range(len(SOUNDSCAPES)):
                feats.append(model.encode_prompted_class(s, token, ac.seq_len)
                             .data.copy())
                labels.append(c)
            caption = ZERO_SHOT_TEMPLATES["train_form"].replace("[CLASS]", name)
            toks = tokenize(caption, ac.seq_len)[None, :]
            feats.append(model.encode_text(toks).data[0].copy())
            labels.append(c)
    return np.stack(feats), np.asarray(labels, dtype=np.int64)


def build_plain_text_training_set(model: AlignmentModel,
                                  cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """One plain template caption embedding per class (the no-prompt baseline)."""
    ac = cfg.acpt
    T.clear_tape()
    with T.no_grad():
        toks = np.stack(
            [tokenize(ZERO_SHOT_TEMPLATES["train_form"].replace("[CLASS]", name),
                      ac.seq_len) for name in EMOTIONS])
        feats = model.encode_text(toks).data.copy()
    return feats, np.arange(len(EMOTIONS), dtype=np.int64)


@dataclass
class ClassifierResult:
    weights: Tensor            # [C, D] class weight matrix
    loss_variant: str
    epoch_mean_losses: list
    train_accuracy: float


def _softmax_ce_loss(features: Tensor, labels: np.ndarray, weights: Tensor,
                     scale: float) -> Tensor:
    """Plain cross-entropy on scaled cosine logits (no angular margin)."""
    logits = T.scale(T.l2_normalize(features) @ T.l2_normalize(weights).transpose(),
                     scale)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    return (T.log_softmax(logits) * Tensor(onehot)).sum() * (-1.0 / labels.size)


def train_classifier(features: np.ndarray, labels: np.ndarray, cfg: RunConfig,
                     seed: int, log=None) -> ClassifierResult:
    """Fit class weight rows to frozen features; inference stays cosine-argmax.

    ``classifier.loss`` selects the angular-margin objective ("arcface") or
    plain cross-entropy on scaled cosine logits ("softmax").  The margin
    exists only in training: prediction always takes the best cosine.
    """
    cc = cfg.classifier
    feats = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
        raise ContractError(
            f"features {feats.shape} do not pair with labels {labels.shape}")
    n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 2:
        raise ContractError("classifier needs at least two classes")
    dim = feats.shape[1]
    rng = Xoshiro256StarStar(derive_seed(seed, STAGE_CLASSIFIER, 0))
    bound = 1.0 / np.sqrt(dim)
    weights = Tensor(rng.uniform_range(-bound, bound, n_classes * dim)
                     .reshape(n_classes, dim), requires_grad=True)
    opt = SGD([weights], cc.lr, cc.momentum)
    epoch_means = []
    for epoch in range(cc.epochs):
        shuffle_rng = Xoshiro256StarStar(
            derive_seed(seed, STAGE_CLASSIFIER, 1 + epoch))
        total, n_batches = 0.0, 0
        for batch in _epoch_batches(labels.size, cc.batch_size, shuffle_rng):
            T.clear_tape()
            fb = Tensor(feats[batch])
            lb = labels[batch]
            if cc.loss == "arcface":
                loss = arcface_loss(fb, ArcFaceConfig(
                    weights=weights, scale=cc.scale, margin=cc.margin), lb)
            else:
                loss = _softmax_ce_loss(fb, lb, weights, cc.scale)
            total += float(loss.data)
            n_batches += 1
            T.backward(loss)
            opt.step()
        epoch_means.append(total / n_batches)
        if log is not None:
            log("classifier", epoch, epoch_means[-1], seed)
    T.clear_tape()
    preds = classify_embeddings(feats, weights.data)
    train_acc = float((preds == labels).mean())
    return ClassifierResult(weights, cc.loss, epoch_means, train_acc)


# -- inference and evaluation --------------------------------------------------

def classify_embeddings(embs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cosine-argmax class ids for a whole batch; ties go to the lowest id.

    The batched form of ``predict_zero_shot``: one normalized matmul
    instead of a per-clip loop.
    """
    embs = np.asarray(embs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if embs.ndim != 2 or weights.ndim != 2 or embs.shape[1] != weights.shape[1]:
        raise ContractError(
            f"classify_embeddings: {embs.shape} against {weights.shape}")
    en = np.linalg.norm(embs, axis=1, keepdims=True)
    wn = np.linalg.norm(weights, axis=1, keepdims=True)
    if en.min() < 1e-12 or wn.min() < 1e-12:
        raise DomainError("classify_embeddings: zero vector has no direction")
    return np.argmax((embs / en) @ (weights / wn).T, axis=1)


def encode_split(model: AlignmentModel, manifest: Manifest, mels: np.ndarray,
                 split: str, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Audio embeddings and true labels for one split, in manifest order."""
    ids = split_indices(manifest, split)
    out = np.empty((len(ids), PROJ_DIM))
    labels = np.array([manifest.records[i].emotion_id for i in ids], dtype=np.int64)
    T.clear_tape()
    with T.no_grad():
        for k in range(0, len(ids), batch_size):
            sel = ids[k:k + batch_size]
            out[k:k + len(sel)] = model.encode_audio(
                mels[sel].astype(np.float64)).data
    return out, labels


def zero_shot_weights(model: AlignmentModel,
                      template: str = ZERO_SHOT_TEMPLATES["train_form"]) -> np.ndarray:
    """Class weight rows straight from template captions (no training at all)."""
    T.clear_tape()
    with T.no_grad():
        return model.class_text_embeddings(EMOTIONS, template, tokenize).data.copy()


def evaluate_split(model: AlignmentModel, weights: np.ndarray, manifest: Manifest,
                   mels: np.ndarray, split: str) -> EvalResult:
    """Cosine-argmax classification of one split against given weight rows."""
    embs, labels = encode_split(model, manifest, mels, split)
    preds = classify_embeddings(embs, weights)
    return evaluate_predictions(labels, preds, weights.shape[0])


def infer_clip(model: AlignmentModel, weights: np.ndarray, clip: np.ndarray) -> str:
    """Emotion name for one 5 s, 16 kHz waveform."""
    mel = audio.log_mel(np.asarray(clip, dtype=np.float64))
    T.clear_tape()
    with T.no_grad():
        emb = model.encode_audio(mel[None, :, :]).data
    return EMOTIONS[predict_zero_shot(emb[0], weights)]


# -- checkpoint glue -----------------------------------------------------------

def save_model(model: AlignmentModel, path) -> None:
    save_tensors(path, {name: p.data
                        for name, p in model.named_parameters().items()})


def load_model(model: AlignmentModel, path) -> None:
    """Load a parameter checkpoint into ``model`` in place.

    Names must match exactly.  Shapes must match too, with one documented
    exception: a ``bank.prompts`` of a different prompt length is skipped,
    because pretraining never updates the bank and sweeps re-initialize it
    at a new length while reusing the pretrained encoders.
    """
    loaded = load_tensors(path)
    named = model.named_parameters()
    missing = sorted(set(named) - set(loaded))
    extra = sorted(set(loaded) - set(named))
    if missing or extra:
        raise CheckpointError(
            f"parameter names do not match: missing {missing}, unexpected {extra}")
    for name, p in named.items():
        arr = loaded[name]
        if arr.shape != p.data.shape:
            if name == "bank.prompts":
                continue
            raise CheckpointError(
                f"{name}: checkpoint shape {arr.shape} does not match "
                f"model shape {p.data.shape}")
        p.data[...] = arr


def save_classifier(result: ClassifierResult, path) -> None:
    save_tensors(path, {"classifier.weights": result.weights.data})


def load_classifier(path) -> np.ndarray:
    loaded = load_tensors(path)
    if "classifier.weights" not in loaded:
        raise CheckpointError(
            f"{path}: no classifier.weights tensor "
            f"(found {sorted(loaded) or 'nothing'})")
    w = loaded["classifier.weights"]
    if w.ndim != 2:
        raise CheckpointError(f"classifier.weights must be 2-D, got {w.shape}")
    return w


# -- study grids ----------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    pretrained: bool
    acpt: bool
    split: str
    seed: int
    wa: float
    ua: float


def ablate(manifest: Manifest, mels: np.ndarray, cfg: RunConfig, seeds,
           model_factory, log=None) -> list[AblationRow]:
    """The 2x2 study: {fresh, pretrained} x {plain captions, tuned prompts}.

    ``model_factory(seed, pretrained, n_prompt)`` must return a model that is
    safe to mutate (prompt tuning happens in place).  Each cell's classifier
    is trained on text features only, then scored on both test splits.
    """
    rows = []
    for seed in seeds:
        for pretrained in (False, True):
            model = model_factory(seed, pretrained, cfg.acpt.n_prompt)
            plain = train_classifier(*build_plain_text_training_set(model, cfg),
                                     cfg, seed, log)
            run_acpt(model, manifest, cfg, seed, log)
            tuned = train_classifier(*build_text_training_set(model, cfg),
                                     cfg, seed, log)
            for split in ("test_in", "test_dg"):
                embs, labels = encode_split(model, manifest, mels, split)
                for used_acpt, clf in ((False, plain), (True, tuned)):
                    preds = classify_embeddings(embs, clf.weights.data)
                    r = evaluate_predictions(labels, preds,
                                             clf.weights.shape[0])
                    rows.append(AblationRow(pretrained, used_acpt, split,
                                            seed, r.wa, r.ua))
    return rows


def ablation_means(rows, split: str) -> dict[tuple[bool, bool], float]:
    """Mean WA per (pretrained, acpt) cell over seeds, for one split."""
    cells: dict[tuple[bool, bool], list[float]] = {}
    for row in rows:
        if row.split == split:
            cells.setdefault((row.pretrained, row.acpt), []).append(row.wa)
    return {cell: float(np.mean(v)) for cell, v in cells.items()}


@dataclass(frozen=True)
class ComparisonRow:
    loss_variant: str
    split: str
    seed: int
    wa: float
    ua: float


def classifier_loss_comparison(manifest: Manifest, mels: np.ndarray,
                               cfg: RunConfig, seeds, model_factory,
                               log=None) -> list[ComparisonRow]:
    """Margin-softmax versus plain-softmax classifier heads, trained on the
    same tuned text features per seed and scored on both test splits."""
    rows = []
    for seed in seeds:
        model = model_factory(seed, True, cfg.acpt.n_prompt)
        run_acpt(model, manifest, cfg, seed, log)
        features, labels = build_text_training_set(model, cfg)
        split_embs = {split: encode_split(model, manifest, mels, split)
                      for split in ("test_in", "test_dg")}
        for variant in ("arcface", "softmax"):
            vcfg = copy.deepcopy(cfg)
            vcfg.classifier.loss = variant
            clf = train_classifier(features, labels, vcfg, seed, log)
            for split, (embs, elabels) in split_embs.items():
                preds = classify_embeddings(embs, clf.weights.data)
                r = evaluate_predictions(elabels, preds, clf.weights.shape[0])
                rows.append(ComparisonRow(variant, split, seed, r.wa, r.ua))
    return rows


@dataclass(frozen=True)
class SweepRow:
    n_prompt: int
    seed: int
    wa: float
    ua: float


SWEEP_PROMPT_LENGTHS = (2, 4, 8, 16, 32)
SWEEP_SEQ_LEN = 40
SWEEP_SPLIT = "test_dg"


def prompt_length_sweep(manifest: Manifest, mels: np.ndarray, cfg: RunConfig,
                        seeds, model_factory,
                        n_prompts=SWEEP_PROMPT_LENGTHS,
                        log=None) -> list[SweepRow]:
    """Prompt-count study on the held-out soundscapes.

    The sequence budget is raised to 40 so the longest prompt still fits;
    everything else matches the main configuration.  One row per
    (prompt length, seed), in that nesting order.
    """
    rows = []
    for n_prompt in n_prompts:
        sweep_cfg = copy.deepcopy(cfg)
        sweep_cfg.acpt.n_prompt = n_prompt
        sweep_cfg.acpt.seq_len = SWEEP_SEQ_LEN
        for seed in seeds:
            model = model_factory(seed, True, n_prompt)
            run_acpt(model, manifest, sweep_cfg, seed, log)
            clf = train_classifier(*build_text_training_set(model, sweep_cfg),
                                   sweep_cfg, seed, log)
            embs, labels = encode_split(model, manifest, mels, SWEEP_SPLIT)
            preds = classify_embeddings(embs, clf.weights.data)
            r = evaluate_predictions(labels, preds, clf.weights.shape[0])
            rows.append(SweepRow(n_prompt, seed, r.wa, r.ua))
    return rows
