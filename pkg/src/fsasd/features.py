"""Log-mel spectrogram and context-window features."""
from __future__ import annotations

import struct
from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .errors import CorruptFile, DegenerateBand, InvalidConfig, TooFewFrames, TooShort


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate_hz: int = 16000
    fft_size: int = 1024
    hop: int = 512
    n_mels: int = 128
    context_frames: int = 5
    mel_fmin_hz: float = 0.0
    mel_fmax_hz: float = 8000.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise InvalidConfig(f"fft_size={self.fft_size} is not a power of two")
        if not 1 <= self.hop <= self.fft_size:
            raise InvalidConfig(f"hop={self.hop} must lie in [1, fft_size]")
        if self.n_mels < 1 or self.context_frames < 1:
            raise InvalidConfig("n_mels and context_frames must be >= 1")
        if self.mel_fmax_hz > self.sample_rate_hz / 2:
            raise InvalidConfig("mel_fmax_hz exceeds the Nyquist frequency")
        if self.mel_fmin_hz < 0:
            raise InvalidConfig("mel_fmin_hz must be >= 0")
        if not self.log_floor > 0:
            raise InvalidConfig("log_floor must be positive")

    @property
    def dim(self) -> int:
        return self.n_mels * self.context_frames

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeatureMatrix:
    vectors: np.ndarray  # K' x D
    config: FeatureConfig

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _frame(wave: np.ndarray, size: int, hop: int) -> np.ndarray:
    n = (len(wave) - size) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(wave, size)[::hop][:n]


def stft_power(wave, cfg: FeatureConfig) -> np.ndarray:
    """Squared-magnitude STFT, one row per frame (no padding)."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1 or len(wave) < cfg.fft_size:
        raise TooShort(f"need at least {cfg.fft_size} samples, got {wave.shape}")
    frames = _frame(wave, cfg.fft_size, cfg.hop) * _hann(cfg.fft_size)
    spec = np.fft.rfft(frames, axis=1)
    return spec.real ** 2 + spec.imag ** 2


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular filters, centres evenly spaced in mel, peak weight 1."""
    return _mel_filterbank(cfg.sample_rate_hz, cfg.fft_size, cfg.n_mels,
                           cfg.mel_fmin_hz, cfg.mel_fmax_hz)


@lru_cache(maxsize=8)
def _mel_filterbank(sr, n_fft, n_mels, fmin, fmax):
    if fmin >= fmax:
        raise DegenerateBand(f"fmin={fmin} >= fmax={fmax}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(~(fb > 0).any(axis=1))
    if empty.size:
        raise DegenerateBand(
            f"{empty.size} of {n_mels} mel filters cover no FFT bin; "
            f"reduce n_mels or raise fft_size")
    fb.setflags(write=False)
    return fb


def log_mel(wave, cfg: FeatureConfig) -> np.ndarray:
    power = stft_power(wave, cfg)
    mel = power @ mel_filterbank(cfg).T
    return 10.0 * np.log10(np.maximum(mel, cfg.log_floor))


def context_frames(logmel: np.ndarray, n_context: int, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Stack ``n_context`` consecutive frames into each row (time order)."""
    logmel = np.asarray(logmel, dtype=np.float64)
    k, f = logmel.shape
    if n_context < 1 or k < n_context:
        raise TooFewFrames(f"{k} frames, context of {n_context}")
    windows = np.lib.stride_tricks.sliding_window_view(logmel, (n_context, f))[:, 0]
    vectors = np.ascontiguousarray(windows.reshape(k - n_context + 1, n_context * f))
    if cfg is None:
        cfg = FeatureConfig(n_mels=f, context_frames=n_context)
    return FeatureMatrix(vectors, cfg)


def extract(wave, cfg: FeatureConfig) -> FeatureMatrix:
    return context_frames(log_mel(wave, cfg), cfg.context_frames, cfg)


# ---------------------------------------------------------------------------
# debug dump: 16-byte header (magic, K', D, reserved) + float32 LE row-major

_DUMP_MAGIC = b"FMAT"
_DUMP_HEADER = struct.Struct("<4sIII")


def save_feature_dump(path, features: FeatureMatrix) -> None:
    rows, dim = features.vectors.shape
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, rows, dim, 0))
        fh.write(features.vectors.astype("<f4").tobytes())


def load_feature_dump(path) -> np.ndarray:
    blob = open(path, "rb").read()
    if len(blob) < _DUMP_HEADER.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, rows, dim, _ = _DUMP_HEADER.unpack_from(blob)
    if magic != _DUMP_MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    body = blob[_DUMP_HEADER.size:]
    if len(body) != 4 * rows * dim:
        raise CorruptFile(f"{path}: expected {rows}x{dim} values")
    return np.frombuffer(body, dtype="<f4").reshape(rows, dim).astype(np.float64)
