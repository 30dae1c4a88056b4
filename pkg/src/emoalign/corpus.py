"""Synthetic emotional-audio corpus with domain-generalization splits.

Each clip is a harmonic "emotion signature" mixed with a "soundscape" noise
bed at a per-soundscape SNR.  Emotion cues (fundamental range, amplitude
modulation, spectral tilt) are generated independently of soundscape cues
(noise kind, band, SNR), so held-out soundscapes test generalization of the
emotion representation, not memorized backgrounds.

All randomness flows from one 64-bit corpus seed through documented
derivation: record i uses derive_seed(seed, i), split again into a signature
stream and a noise stream.  Rebuilding with the same seed is byte-identical,
WAVs included.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio
from .errors import ConfigError, DataError
from .rng import Xoshiro256StarStar, derive_seed

GEN_VERSION = 2

EMOTIONS = ("angry", "happy", "sad", "neutral")

# name -> (f0_lo, f0_hi, am_rate_hz, am_depth, tilt_exp)
# tilt_exp is the harmonic rolloff exponent: "bright" < 1, "flat" = 1, "dark" > 1
EMOTION_SYNTH = {
    "angry":   (180.0, 240.0, 8.0, 0.8, 0.4),
    "happy":   (220.0, 300.0, 5.0, 0.5, 0.8),
    "sad":     (90.0, 140.0, 1.0, 0.6, 2.0),
    "neutral": (140.0, 180.0, 2.5, 0.3, 1.0),
}


@dataclass(frozen=True)
class SoundscapeCondition:
    id: int
    name: str
    noise_kind: str          # white | pink | hum | babble | none
    snr_db: float            # unused when noise_kind == "none"
    band: tuple[float, float] | None = None


SOUNDSCAPES = (
    SoundscapeCondition(0, "studio", "none", 0.0),
    SoundscapeCondition(1, "street", "pink", 10.0, (50.0, 2000.0)),
    SoundscapeCondition(2, "crowd", "babble", 8.0),
    SoundscapeCondition(3, "cafe", "babble", 15.0),
    SoundscapeCondition(4, "car", "hum", 8.0, (30.0, 300.0)),
    SoundscapeCondition(5, "rain", "white", 12.0, (1000.0, 7500.0)),
    SoundscapeCondition(6, "office", "hum", 18.0),
    SoundscapeCondition(7, "park", "white", 20.0),
    SoundscapeCondition(8, "kitchen", "white", 10.0, (500.0, 6000.0)),
    SoundscapeCondition(9, "station", "babble", 10.0),
    SoundscapeCondition(10, "basement", "hum", 12.0, (40.0, 500.0)),
    SoundscapeCondition(11, "forest", "pink", 15.0, (100.0, 4000.0)),
)

# every noise kind used by the default holdout {8..11} also occurs in {0..7},
# so domain shift comes from new kind/band/SNR combinations, not unseen kinds

SPLITS = ("train", "test_in", "test_dg")


def emotion_id(name: str) -> int:
    try:
        return EMOTIONS.index(name)
    except ValueError:
        raise DataError(f"unknown emotion {name!r}") from None


def _check_ids(emotion: int, soundscape: int) -> None:
    if not 0 <= emotion < len(EMOTIONS):
        raise DataError(f"emotion id {emotion} out of range")
    if not 0 <= soundscape < len(SOUNDSCAPES):
        raise DataError(f"soundscape id {soundscape} out of range")


# -- signal synthesis ------------------------------------------------------

_T = np.arange(audio.CLIP_SAMPLES) / audio.SAMPLE_RATE
_MAX_HARMONICS = 40
_HARMONIC_CEIL_HZ = 7600.0


def _emotion_signature(emotion: int, rng: Xoshiro256StarStar) -> np.ndarray:
    f0_lo, f0_hi, am_rate, am_depth, tilt = EMOTION_SYNTH[EMOTIONS[emotion]]
    f0 = float(rng.uniform_range(f0_lo, f0_hi, 1)[0])
    n_h = min(_MAX_HARMONICS, int(_HARMONIC_CEIL_HZ / f0))
    k = np.arange(1, n_h + 1)
    phases = rng.uniform(n_h) * 2.0 * np.pi
    am_phase = float(rng.uniform(1)[0]) * 2.0 * np.pi
    amps = k.astype(np.float64) ** (-tilt)
    tones = np.sin(2.0 * np.pi * f0 * np.outer(_T, k) + phases) @ amps
    env = (1.0 - am_depth) + am_depth * 0.5 * (1.0 + np.sin(2.0 * np.pi * am_rate * _T + am_phase))
    return env * tones


def _fir_lowpass(cutoff_hz: float, numtaps: int = 257) -> np.ndarray:
    n = np.arange(numtaps) - (numtaps - 1) / 2.0
    fc = cutoff_hz / audio.SAMPLE_RATE
    h = 2.0 * fc * np.sinc(2.0 * fc * n)
    h *= np.hamming(numtaps)
    return h / h.sum()


def _band_filter(x: np.ndarray, band: tuple[float, float]) -> np.ndarray:
    lo, hi = band
    h = _fir_lowpass(hi) - _fir_lowpass(lo)
    return np.convolve(x, h, mode="same")


def _pink(rng: Xoshiro256StarStar, n: int) -> np.ndarray:
    # Voss-McCartney: octave-held white rows summed
    rows = 16
    out = np.zeros(n)
    for r in range(rows):
        hold = 1 << r
        m = -(-n // hold)
        out += np.repeat(rng.normal(m), hold)[:n]
    return out / np.sqrt(rows)


def _hum(rng: Xoshiro256StarStar, n: int) -> np.ndarray:
    t = _T[:n]
    phases = rng.uniform(5) * 2.0 * np.pi
    out = np.zeros(n)
    for k in range(1, 6):
        out += np.sin(2.0 * np.pi * 50.0 * k * t + phases[k - 1]) / k
    floor = rng.normal(n)
    return out + 0.05 * floor / np.sqrt(np.mean(floor * floor))


def _babble(rng: Xoshiro256StarStar, n: int) -> np.ndarray:
    # speech-shaped noise with a slow wandering envelope
    base = np.convolve(rng.normal(n), _fir_lowpass(3400.0), mode="same")
    ctrl = rng.uniform(21)
    env = 0.3 + 0.9 * np.interp(np.linspace(0.0, 20.0, n), np.arange(21), ctrl)
    return base * env


def _soundscape_noise(ss: SoundscapeCondition, rng: Xoshiro256StarStar, n: int) -> np.ndarray:
    if ss.noise_kind == "white":
        x = rng.normal(n)
    elif ss.noise_kind == "pink":
        x = _pink(rng, n)
    elif ss.noise_kind == "hum":
        x = _hum(rng, n)
    elif ss.noise_kind == "babble":
        x = _babble(rng, n)
    else:
        raise DataError(f"unknown noise kind {ss.noise_kind!r}")
    if ss.band is not None:
        x = _band_filter(x, ss.band)
    return x


def synth_components(emotion: int, soundscape: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The (signature, noise) pair whose sum is the final clip.

    Both are already scaled: noise sits at the soundscape's SNR relative to
    the signature, and the pair is jointly normalized so the mix peaks at 0.9.
    A no-noise soundscape returns an all-zero noise component.
    """
    _check_ids(emotion, soundscape)
    ss = SOUNDSCAPES[soundscape]
    sig = _emotion_signature(emotion, Xoshiro256StarStar(derive_seed(seed, 0)))
    if ss.noise_kind == "none":
        noise = np.zeros_like(sig)
    else:
        noise = _soundscape_noise(ss, Xoshiro256StarStar(derive_seed(seed, 1)), sig.size)
        rms_sig = np.sqrt(np.mean(sig * sig))
        rms_noise = np.sqrt(np.mean(noise * noise))
        noise = noise * (rms_sig * 10.0 ** (-ss.snr_db / 20.0) / rms_noise)
    peak = np.max(np.abs(sig + noise))
    scale = 0.9 / peak
    return sig * scale, noise * scale


def synth_clip(emotion: int, soundscape: int, seed: int) -> np.ndarray:
    """One 5 s, 16 kHz clip for (emotion, soundscape, seed)."""
    sig, noise = synth_components(emotion, soundscape, seed)
    return sig + noise


# -- captions and tokens ---------------------------------------------------

def synth_caption(emotion: int, soundscape: int, include_soundscape: bool) -> str:
    """Literal template substitution; no article correction on purpose."""
    _check_ids(emotion, soundscape)
    base = f"This is a {EMOTIONS[emotion]} sound"
    if include_soundscape:
        return base + f" in a {SOUNDSCAPES[soundscape].name}"
    return base


# templates carry a literal [CLASS] slot; "train_form" mirrors the caption
# wording the alignment stage saw, "sound_of" is the generic zero-shot phrasing
ZERO_SHOT_TEMPLATES = {
    "train_form": "This is a [CLASS] sound",
    "sound_of": "this is a sound of [CLASS]",
}

PAD, CLS, UNK = 0, 1, 2
VOCAB = (
    "<pad>", "<cls>", "<unk>",
    "this", "is", "a", "sound", "in", "of",
    *EMOTIONS,
    *(ss.name for ss in SOUNDSCAPES),
)
_WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}
SEQ_LEN = 16


def tokenize(text: str, seq_len: int = SEQ_LEN) -> np.ndarray:
    """CLS-prefixed, padded id sequence over the closed caption vocabulary."""
    if not text:
        raise DataError("tokenize: empty text")
    words = [w for w in re.split(r"[^a-z0-9]+", text.lower()) if w]
    ids = [CLS] + [_WORD_TO_ID.get(w, UNK) for w in words]
    ids = ids[:seq_len]
    ids += [PAD] * (seq_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


# -- corpus assembly ----------------------------------------------------------

@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 0
    train_clips: int = 16    # per (emotion, non-holdout soundscape)
    test_clips: int = 4      # per (emotion, non-holdout soundscape)
    dg_clips: int = 8        # per (emotion, holdout soundscape)
    dg_holdout: tuple[int, ...] = (8, 9, 10, 11)

    def validate(self) -> None:
        hs = set(self.dg_holdout)
        if not hs:
            raise ConfigError("dg_holdout must name at least one soundscape")
        if len(hs) >= len(SOUNDSCAPES):
            raise ConfigError("dg_holdout cannot cover every soundscape")
        bad = [i for i in hs if not 0 <= i < len(SOUNDSCAPES)]
        if bad:
            raise ConfigError(f"dg_holdout ids out of range: {bad}")
        if len(hs) != len(self.dg_holdout):
            raise ConfigError("dg_holdout has duplicates")
        for k in ("train_clips", "test_clips", "dg_clips"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be positive")


@dataclass(frozen=True)
class Record:
    clip_path: str           # relative to the corpus root
    caption: str
    emotion_id: int
    soundscape_id: int
    split: str
    seed: int


@dataclass
class Manifest:
    records: list[Record]
    seed: int
    version: int = GEN_VERSION
    root: Path | None = field(default=None, compare=False)

    def split(self, name: str) -> list[Record]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]


def plan_records(cfg: CorpusConfig) -> list[Record]:
    """The full record list, in the fixed generation order, without audio."""
    cfg.validate()
    holdout = set(cfg.dg_holdout)
    in_domain = [s.id for s in SOUNDSCAPES if s.id not in holdout]
    out_domain = [s.id for s in SOUNDSCAPES if s.id in holdout]
    plan = (("train", in_domain, cfg.train_clips),
            ("test_in", in_domain, cfg.test_clips),
            ("test_dg", out_domain, cfg.dg_clips))
    records: list[Record] = []
    index = 0
    for split, scapes, per_pair in plan:
        for e in range(len(EMOTIONS)):
            for s in scapes:
                for i in range(per_pair):
                    seed = derive_seed(cfg.seed, index)
                    path = f"clips/{split}_{EMOTIONS[e]}_{SOUNDSCAPES[s].name}_{i:03d}.wav"
                    # Alternate caption forms within each (emotion, soundscape)
                    # group: even clips get the bare class template, odd clips
                    # add the soundscape phrase.  Alignment training then
                    # anchors the class words to the audio clusters while also
                    # teaching the text tower where each acoustic condition
                    # sits, which is what lets prompt rows transfer to
                    # held-out conditions.
                    records.append(Record(path, synth_caption(e, s, i % 2 == 1),
                                          e, s, split, seed))
                    index += 1
    return records


def build_corpus(cfg: CorpusConfig, out_dir) -> Manifest:
    """Materialize clips and manifest under ``out_dir``."""
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    records = plan_records(cfg)
    for r in records:
        audio.write_wav(out / r.clip_path, synth_clip(r.emotion_id, r.soundscape_id, r.seed))
    manifest = Manifest(records, cfg.seed, root=out)
    save_manifest(manifest, out / "manifest.tsv")
    return manifest


MANIFEST_NAME = "manifest.tsv"


def save_manifest(m: Manifest, path) -> None:
    lines = [
        f"# emoalign-corpus v{m.version}",
        f"# seed {m.seed}",
        "# emotions " + ",".join(EMOTIONS),
        "# soundscapes " + ",".join(ss.name for ss in SOUNDSCAPES),
    ]
    for r in m.records:
        lines.append(f"{r.clip_path}\t{r.caption}\t{r.emotion_id}\t{r.soundscape_id}\t{r.split}\t{r.seed}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no manifest at {path}")
    seed = None
    version = None
    records: list[Record] = []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("emoalign-corpus v"):
                version = int(body.rsplit("v", 1)[1])
            elif body.startswith("seed "):
                seed = int(body.split()[1])
            elif body.startswith("emotions "):
                if tuple(body.split(None, 1)[1].split(",")) != EMOTIONS:
                    raise DataError(f"{path}:{ln}: emotion table does not match this build")
            elif body.startswith("soundscapes "):
                if tuple(body.split(None, 1)[1].split(",")) != tuple(s.name for s in SOUNDSCAPES):
                    raise DataError(f"{path}:{ln}: soundscape table does not match this build")
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DataError(f"{path}:{ln}: expected 6 tab-separated fields, got {len(parts)}")
        clip_path, caption, e, s, split, rec_seed = parts
        if split not in SPLITS:
            raise DataError(f"{path}:{ln}: unknown split {split!r}")
        records.append(Record(clip_path, caption, int(e), int(s), split, int(rec_seed)))
    if seed is None or version is None:
        raise DataError(f"{path}: missing seed/version header")
    if version != GEN_VERSION:
        raise DataError(f"{path}: generator version {version} unsupported (want {GEN_VERSION})")
    return Manifest(records, seed, version, root=path.parent)
