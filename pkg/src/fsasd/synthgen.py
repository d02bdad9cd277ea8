"""Parametric synthetic machine sounds written in the challenge layout.

Each clip is a harmonic stack plus band-limited noise. The target domain
scales the fundamental and shifts the SNR; anomalous clips add
Poisson-timed broadband bursts on top of the clip the same random
substream would give as a normal clip.

Randomness: every clip gets its own Philox stream keyed by
``(seed, machine, split, domain, condition, index)``.
"""
from __future__ import annotations

import dataclasses
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import SAMPLE_RATE, ClipMetadata, CorpusManifest, format_filename, scan_corpus, write_wav
from .errors import InvalidSpec, IoFailure

PEAK_LIMIT = 0.9
TONAL_RMS = 0.02  # leaves headroom for +12 dB bursts under the peak limit

_DOMAIN_CODE = {"source": 0, "target": 1}
_CONDITION_CODE = {"normal": 0, "anomaly": 1}
_SPLIT_CODE = {"train": 0, "test": 1}


@dataclass(frozen=True)
class TargetShift:
    fundamental_scale: float = 1.02
    snr_delta_db: float = -0.5


@dataclass(frozen=True)
class AnomalySpec:
    burst_rate_hz: float = 1.5
    burst_gain_db: float = 12.0
    burst_seconds: float = 0.1


@dataclass(frozen=True)
class MachineSpec:
    name: str
    fundamental_hz: float = 120.0
    n_harmonics: int = 8
    harmonic_decay: float = 0.7
    noise_band: tuple[float, float] = (50.0, 6000.0)
    snr_db: float = 10.0
    clip_seconds: float = 6.0
    # per-clip operating variation: relative f0 spread and SNR spread (uniform, +/-)
    fundamental_jitter: float = 0.04
    snr_jitter_db: float = 2.0
    target_shift: TargetShift = field(default_factory=TargetShift)
    anomaly_spec: AnomalySpec = field(default_factory=AnomalySpec)

    def validate(self) -> None:
        nyquist = SAMPLE_RATE / 2
        if not self.name or "/" in self.name:
            raise InvalidSpec(f"machine name {self.name!r} must be non-empty without '/'")
        if not 0 < self.fundamental_hz < nyquist:
            raise InvalidSpec(f"{self.name}: fundamental_hz must lie in (0, {nyquist})")
        if not 0 < self.fundamental_hz * self.target_shift.fundamental_scale * (1 + self.fundamental_jitter) < nyquist:
            raise InvalidSpec(f"{self.name}: shifted fundamental above Nyquist")
        if self.n_harmonics < 1 or not 0 < self.harmonic_decay <= 1:
            raise InvalidSpec(f"{self.name}: need n_harmonics >= 1 and harmonic_decay in (0, 1]")
        low, high = self.noise_band
        if not 0 <= low < high <= nyquist:
            raise InvalidSpec(f"{self.name}: noise_band must satisfy 0 <= low < high <= {nyquist}")
        if not 0 <= self.fundamental_jitter < 1 or self.snr_jitter_db < 0:
            raise InvalidSpec(f"{self.name}: jitter must be non-negative (fundamental_jitter < 1)")
        if not 6 <= self.clip_seconds <= 18:
            raise InvalidSpec(f"{self.name}: clip_seconds must lie in [6, 18]")
        a = self.anomaly_spec
        if a.burst_rate_hz < 0 or a.burst_seconds <= 0 or a.burst_seconds > self.clip_seconds:
            raise InvalidSpec(f"{self.name}: invalid burst rate/duration")
        if not all(np.isfinite([self.snr_db, self.target_shift.snr_delta_db, a.burst_gain_db])):
            raise InvalidSpec(f"{self.name}: levels must be finite")

    @property
    def n_samples(self) -> int:
        return int(round(self.clip_seconds * SAMPLE_RATE))


@dataclass(frozen=True)
class SynthCounts:
    train_source: int = 990
    train_target: int = 10
    test_normal_per_domain: int = 50
    test_anomaly_per_domain: int = 50

    def __post_init__(self):
        if min(dataclasses.astuple(self)) < 1:
            raise InvalidSpec("all counts must be >= 1")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    machines: tuple[MachineSpec, ...] = ()
    counts: SynthCounts = field(default_factory=SynthCounts)
    root: Path | None = None

    def validate(self) -> None:
        names = [m.name for m in self.machines]
        if not names:
            raise InvalidSpec("no machines configured")
        if len(set(names)) != len(names):
            raise InvalidSpec("machine names must be unique")
        if self.seed < 0:
            raise InvalidSpec("seed must be non-negative")
        for m in self.machines:
            m.validate()


# seven stand-in machine types, one section each
CATALOGUE = {
    "ToyCar": MachineSpec("ToyCar", 95.0, 10, 0.75, (100.0, 5000.0), 8.0),
    "ToyTrain": MachineSpec("ToyTrain", 140.0, 6, 0.6, (200.0, 7000.0), 6.0),
    "bearing": MachineSpec("bearing", 310.0, 5, 0.5, (1000.0, 7500.0), 10.0),
    "fan": MachineSpec("fan", 60.0, 12, 0.8, (50.0, 4000.0), 5.0),
    "gearbox": MachineSpec("gearbox", 210.0, 8, 0.65, (150.0, 6000.0), 9.0),
    "slider": MachineSpec("slider", 175.0, 4, 0.5, (300.0, 6500.0), 7.0),
    "valve": MachineSpec("valve", 440.0, 3, 0.45, (500.0, 8000.0), 12.0),
}


def substream(seed: int, machine: str, split: str, domain: str, condition: str, index: int) -> np.random.SeedSequence:
    key = (zlib.crc32(machine.encode()), _SPLIT_CODE[split], _DOMAIN_CODE[domain],
           _CONDITION_CODE[condition], int(index))
    return np.random.SeedSequence(seed, spawn_key=key)


def _child(seq: np.random.SeedSequence, k: int) -> np.random.Generator:
    # derive without touching seq's spawn counter so the call is repeatable
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seq.entropy, spawn_key=(*seq.spawn_key, k))))


def _band_noise(rng: np.random.Generator, n: int, low: float, high: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    spec[(freqs < low) | (freqs > high)] = 0.0
    noise = np.fft.irfft(spec, n)
    power = np.mean(noise ** 2)
    return noise / np.sqrt(power) if power > 0 else noise


def synth_clip(spec: MachineSpec, domain: str, condition: str, seq: np.random.SeedSequence) -> np.ndarray:
    """One clip of ``clip_seconds * 16000`` samples, peak at most 0.9."""
    spec.validate()
    if domain not in _DOMAIN_CODE or condition not in _CONDITION_CODE:
        raise InvalidSpec(f"unknown domain/condition {domain!r}/{condition!r}")
    n = spec.n_samples
    t = np.arange(n) / SAMPLE_RATE
    base_rng = _child(seq, 0)

    f0, snr = spec.fundamental_hz, spec.snr_db
    if domain == "target":
        f0 *= spec.target_shift.fundamental_scale
        snr += spec.target_shift.snr_delta_db
    f0 *= 1.0 + spec.fundamental_jitter * base_rng.uniform(-1.0, 1.0)
    snr += spec.snr_jitter_db * base_rng.uniform(-1.0, 1.0)

    harmonics = [h for h in range(1, spec.n_harmonics + 1) if h * f0 < SAMPLE_RATE / 2]
    phases = base_rng.uniform(0.0, 2 * np.pi, size=spec.n_harmonics)
    amps = spec.harmonic_decay ** np.arange(spec.n_harmonics)
    tonal = np.zeros(n)
    for h in harmonics:
        tonal += amps[h - 1] * np.sin(2 * np.pi * h * f0 * t + phases[h - 1])
    tonal *= TONAL_RMS / np.sqrt(np.mean(tonal ** 2))
    tonal_power = TONAL_RMS ** 2

    noise = _band_noise(base_rng, n, *spec.noise_band) * np.sqrt(tonal_power / 10 ** (snr / 10))
    wave = tonal + noise

    if condition == "anomaly":
        wave = wave + _bursts(spec.anomaly_spec, n, tonal_power, _child(seq, 1))

    peak = np.max(np.abs(wave))
    if peak > PEAK_LIMIT:
        wave *= PEAK_LIMIT / peak
    return wave


def _bursts(a: AnomalySpec, n: int, tonal_power: float, rng: np.random.Generator) -> np.ndarray:
    """Broadband bursts raising the local level ``burst_gain_db`` above the tone.

    Burst power is ``tonal_power * (10**(gain/10) - 1)``, so a gain of 0 dB
    or less adds nothing.
    """
    out = np.zeros(n)
    excess = 10 ** (a.burst_gain_db / 10) - 1
    length = int(round(a.burst_seconds * SAMPLE_RATE))
    count = rng.poisson(a.burst_rate_hz * n / SAMPLE_RATE)
    starts = np.sort(rng.integers(0, n - length + 1, size=count))
    envelope = np.hanning(length)
    # mean power of a Hann-windowed unit-variance burst is 3/8
    scale = np.sqrt(max(excess, 0.0) * tonal_power / 0.375)
    for s in starts:
        out[s:s + length] += scale * envelope * rng.standard_normal(length)
    return out


def corpus_plan(cfg: SynthConfig) -> list[tuple[MachineSpec, ClipMetadata]]:
    """Every clip the corpus will contain, in write order."""
    c = cfg.counts
    plan = []
    for spec in cfg.machines:
        parts = [("train", "source", "normal", c.train_source),
                 ("train", "target", "normal", c.train_target)]
        for domain in ("source", "target"):
            parts += [("test", domain, "normal", c.test_normal_per_domain),
                      ("test", domain, "anomaly", c.test_anomaly_per_domain)]
        for split, domain, label, count in parts:
            for i in range(count):
                plan.append((spec, ClipMetadata(spec.name, 0, domain, split, label, i)))
    return plan


def synth_corpus(cfg: SynthConfig, root=None, workers: int = 1) -> CorpusManifest:
    cfg.validate()
    root = Path(root if root is not None else cfg.root)
    plan = corpus_plan(cfg)

    def job(item):
        spec, meta = item
        seq = substream(cfg.seed, spec.name, meta.split, meta.domain, meta.label, meta.clip_index)
        path = root / spec.name / meta.split / format_filename(meta)
        write_wav(path, synth_clip(spec, meta.domain, meta.label, seq))

    try:
        for spec in cfg.machines:
            for split in ("train", "test"):
                (root / spec.name / split).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(job, plan))
    else:
        for item in plan:
            job(item)
    return scan_corpus(root)
