"""Fixed-format audio I/O and log-mel features.

Everything here is pinned to one clip format: mono 16-bit PCM at 16 kHz,
5 seconds per clip.  The spectrogram front end is deliberately explicit --
Hann-windowed 400-sample frames with a 160-sample hop, a dense-matrix DFT
(no FFT, so the arithmetic order is fixed and platform-independent), a
40-band triangular mel filterbank on 0..8000 Hz, and a natural log with an
absolute floor.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import DataError, UnsupportedRateError

SAMPLE_RATE = 16000
CLIP_SECONDS = 5.0
CLIP_SAMPLES = 80000
FRAME_LEN = 400
HOP = 160
N_FFT = 512
N_BINS = N_FFT // 2 + 1
N_MELS = 40
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-10
N_FRAMES = 1 + (CLIP_SAMPLES - FRAME_LEN) // HOP  # 498


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


# -- WAV I/O ----------------------------------------------------------------

def write_wav(path, x: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    """Write a float signal in [-1, 1] as mono 16-bit PCM."""
    q = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0 - 1.0 / 32768.0)
    pcm = np.round(q * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file to (float64 samples in [-1, 1), sample rate).

    Multichannel input is averaged down to mono.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such audio file: {path}")
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2:
            raise DataError(f"{path}: only 16-bit PCM is supported")
        rate = w.getframerate()
        nch = w.getnchannels()
        raw = w.readframes(w.getnframes())
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if nch > 1:
        x = x.reshape(-1, nch).mean(axis=1)
    return x, rate


def standardize(x: np.ndarray, rate: int) -> np.ndarray:
    """Force a signal into the pipeline clip format.

    Rejects any rate other than 16 kHz (no resampler here); pads with
    trailing zeros or truncates to exactly 5 s.
    """
    if rate != SAMPLE_RATE:
        raise UnsupportedRateError(f"expected {SAMPLE_RATE} Hz input, got {rate} Hz")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size >= CLIP_SAMPLES:
        return x[:CLIP_SAMPLES].copy()
    out = np.zeros(CLIP_SAMPLES)
    out[:x.size] = x
    return out


def load_clip(path) -> np.ndarray:
    x, rate = read_wav(path)
    return standardize(x, rate)


# -- spectrogram ------------------------------------------------------------

def _hann(n: int) -> np.ndarray:
    # periodic form, the usual analysis-window convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray) -> np.ndarray:
    """Slice a clip into overlapping frames, shape [N_FRAMES, FRAME_LEN]."""
    if x.shape != (CLIP_SAMPLES,):
        raise DataError(f"expected a standardized clip of shape ({CLIP_SAMPLES},), got {x.shape}")
    idx = np.arange(FRAME_LEN)[None, :] + HOP * np.arange(N_FRAMES)[:, None]
    return x[idx]


def _dft_bases() -> tuple[np.ndarray, np.ndarray]:
    # real/imag projection matrices for the first half-spectrum of a 512-point
    # DFT applied to 400-sample frames (the zero padding contributes nothing,
    # so the bases only span the first 400 time indices)
    n = np.arange(FRAME_LEN)[:, None]
    k = np.arange(N_BINS)[None, :]
    ang = 2.0 * np.pi * n * k / N_FFT
    return np.cos(ang), -np.sin(ang)


def mel_filterbank() -> np.ndarray:
    """Triangular mel filters as a dense [N_BINS, N_MELS] matrix.

    42 band edges equally spaced on the mel axis between 0 and 8 kHz;
    filter m rises over (edge[m], edge[m+1]) and falls over
    (edge[m+1], edge[m+2]), sampled at the DFT bin centers.
    """
    mel_pts = np.linspace(hz_to_mel(FMIN), hz_to_mel(FMAX), N_MELS + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(N_BINS) * (SAMPLE_RATE / N_FFT)
    fb = np.zeros((N_BINS, N_MELS))
    for m in range(N_MELS):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rise = (bin_hz - lo) / (mid - lo)
        fall = (hi - bin_hz) / (hi - mid)
        fb[:, m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


_CACHE: dict[str, np.ndarray] = {}


def _cached(name: str, build) -> np.ndarray:
    if name not in _CACHE:
        _CACHE[name] = build()
    return _CACHE[name]


def power_spectrogram(x: np.ndarray) -> np.ndarray:
    """Hann-windowed power spectrum per frame, shape [N_FRAMES, N_BINS]."""
    frames = frame_signal(x) * _cached("hann", lambda: _hann(FRAME_LEN))
    cos_b = _cached("cos", lambda: _dft_bases()[0])
    sin_b = _cached("sin", lambda: _dft_bases()[1])
    re = frames @ cos_b
    im = frames @ sin_b
    return re * re + im * im


def log_mel(x: np.ndarray) -> np.ndarray:
    """Log-mel features for one standardized clip, shape [N_FRAMES, N_MELS]."""
    spec = power_spectrogram(x)
    mel = spec @ _cached("fb", mel_filterbank)
    return np.log(np.maximum(mel, LOG_FLOOR))
