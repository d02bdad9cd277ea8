"""Corpus layout: file-name grammar, directory scanning, WAV I/O and
submission CSVs.

Clip names follow the public challenge convention::

    section_<NN>_<domain>_<split>_<label>_<index>[_<key>_<value>]*.wav
    section_<NN>_<index>.wav                      (evaluation-style test clip)

Indices are written with four digits, sections with two.
"""
from __future__ import annotations

import csv
import logging
import wave
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyCorpus,
    InvalidWav,
    IoFailure,
    MalformedName,
    MissingDecision,
    MissingDirectory,
    UnknownDomainToken,
    UnknownLabelToken,
)

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
DOMAINS = ("source", "target", "unknown")
SPLITS = ("train", "test")
LABELS = ("normal", "anomaly", "unknown")

# canonical per-section partition sizes of the development set
CANONICAL_COUNTS = {
    ("train", "source"): 990,
    ("train", "target"): 10,
    ("test", "all"): 200,
}


@dataclass(frozen=True)
class ClipMetadata:
    machine_type: str
    section: int
    domain: str
    split: str
    label: str
    clip_index: int
    attributes: tuple[tuple[str, str], ...] = ()
    path: Path | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise UnknownDomainToken(f"unknown domain {self.domain!r}")
        if self.label not in LABELS:
            raise UnknownLabelToken(f"unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise MalformedName(f"unknown split {self.split!r}")
        if self.section < 0 or self.clip_index < 0:
            raise MalformedName("section and clip index must be non-negative")
        if self.split == "train" and self.label != "normal":
            raise MalformedName("training clips must be labelled normal")
        if self.split == "train" and self.domain == "unknown":
            raise MalformedName("training clips must carry a domain")

    @property
    def filename(self) -> str:
        return format_filename(self)

    @property
    def group(self) -> tuple[str, int]:
        return (self.machine_type, self.section)

    @property
    def labelled(self) -> bool:
        return self.label != "unknown" and self.domain != "unknown"


def parse_filename(name: str, machine_type: str = "", path: Path | None = None) -> ClipMetadata:
    """Parse a clip file name into :class:`ClipMetadata`.

    Attribute tokens after the index are consumed two at a time; a single
    trailing token (e.g. ``noAttr``) is kept as a key with an empty value.
    """
    base = Path(name).name
    if not base.endswith(".wav"):
        raise MalformedName(f"{name}: expected a .wav file")
    tokens = base[: -len(".wav")].split("_")
    if len(tokens) < 3 or tokens[0] != "section" or not tokens[1].isdigit():
        raise MalformedName(f"{name}: expected 'section_<NN>_...'")
    section = int(tokens[1])

    if tokens[2].isdigit():
        # evaluation-style: section_NN_index
        if len(tokens) != 3:
            raise MalformedName(f"{name}: unexpected tokens after the clip index")
        return ClipMetadata(machine_type, section, "unknown", "test", "unknown",
                            int(tokens[2]), (), path)

    if len(tokens) < 6:
        raise MalformedName(f"{name}: expected domain, split, label and index")
    domain, split, label, index = tokens[2:6]
    if domain not in ("source", "target"):
        raise UnknownDomainToken(f"{name}: unknown domain token {domain!r}")
    if split not in SPLITS:
        raise MalformedName(f"{name}: unknown split token {split!r}")
    if label not in ("normal", "anomaly"):
        raise UnknownLabelToken(f"{name}: unknown label token {label!r}")
    if not index.isdigit():
        raise MalformedName(f"{name}: clip index {index!r} is not a number")

    tail = tokens[6:]
    if any(t == "" for t in tail):
        raise MalformedName(f"{name}: empty attribute token")
    attrs = [(tail[i], tail[i + 1]) for i in range(0, len(tail) - 1, 2)]
    if len(tail) % 2:
        attrs.append((tail[-1], ""))
    try:
        return ClipMetadata(machine_type, section, domain, split, label,
                            int(index), tuple(attrs), path)
    except MalformedName as exc:
        raise MalformedName(f"{name}: {exc}") from None


def format_filename(meta: ClipMetadata) -> str:
    if meta.domain == "unknown" or meta.label == "unknown":
        return f"section_{meta.section:02d}_{meta.clip_index:04d}.wav"
    parts = [f"section_{meta.section:02d}", meta.domain, meta.split, meta.label,
             f"{meta.clip_index:04d}"]
    for key, value in meta.attributes:
        parts.append(key)
        if value:
            parts.append(value)
    return "_".join(parts) + ".wav"


# ---------------------------------------------------------------------------
# WAV I/O (PCM 16-bit mono 16 kHz only)

def read_wav(path) -> np.ndarray:
    """Read a PCM16 mono 16 kHz file as float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise InvalidWav(f"{path}: expected mono, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise InvalidWav(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
            if w.getframerate() != SAMPLE_RATE:
                raise InvalidWav(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()} Hz")
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise InvalidWav(f"{path}: {exc}") from None
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None
    if len(raw) != 2 * n:
        raise InvalidWav(f"{path}: truncated data chunk")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def quantize_pcm16(wave_: np.ndarray) -> np.ndarray:
    # pure rounding, no dither
    return np.clip(np.rint(np.asarray(wave_) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, wave_: np.ndarray) -> None:
    data = quantize_pcm16(wave_)
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(SAMPLE_RATE)
            w.writeframes(data.tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# corpus scanning

@dataclass
class CorpusManifest:
    root: Path
    groups: dict[tuple[str, int], list[ClipMetadata]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def clips(self, machine_type=None, section=None, split=None, domain=None, label=None):
        out = []
        for (m, n), clips in self.groups.items():
            if machine_type is not None and m != machine_type:
                continue
            if section is not None and n != section:
                continue
            for c in clips:
                if split is not None and c.split != split:
                    continue
                if domain is not None and c.domain != domain:
                    continue
                if label is not None and c.label != label:
                    continue
                out.append(c)
        return out

    def counts(self, group) -> dict[tuple[str, str, str], int]:
        return dict(Counter((c.split, c.domain, c.label) for c in self.groups[group]))

    def train_counts(self, group) -> dict[str, int]:
        clips = [c for c in self.groups[group] if c.split == "train"]
        return {d: sum(c.domain == d for c in clips) for d in ("source", "target")}

    def summary_lines(self) -> list[str]:
        lines = []
        for (m, n) in sorted(self.groups):
            tc = self.train_counts((m, n))
            test = self.clips(m, n, split="test")
            lines.append(
                f"{m} section_{n:02d}: train source={tc['source']} target={tc['target']} "
                f"test={len(test)} (normal={sum(c.label == 'normal' for c in test)}, "
                f"anomaly={sum(c.label == 'anomaly' for c in test)})"
            )
        return lines


def _read_attribute_csv(path: Path) -> dict[str, tuple[tuple[str, str], ...]]:
    table = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            values = row[1:]
            pairs = tuple((values[i], values[i + 1] if i + 1 < len(values) else "")
                          for i in range(0, len(values), 2) if values[i])
            table[Path(row[0]).name] = pairs
    return table


def scan_corpus(root) -> CorpusManifest:
    """Index ``<root>/<machine_type>/{train,test}/*.wav``.

    Clips are sorted by path. Partition sizes that differ from the
    canonical 990/10/200 layout are recorded in ``manifest.warnings``.
    Optional ``attributes_<NN>.csv`` files are cross-checked against the
    names; the names win.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingDirectory(f"corpus root {root} does not exist")
    machine_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not machine_dirs:
        raise EmptyCorpus(f"{root}: no machine-type directories")

    manifest = CorpusManifest(root=root)
    seen = set()
    for mdir in machine_dirs:
        for split in SPLITS:
            if not (mdir / split).is_dir():
                raise MissingDirectory(f"{mdir / split} is missing")
        machine = mdir.name
        for split in SPLITS:
            for path in sorted((mdir / split).glob("*.wav")):
                try:
                    meta = parse_filename(path.name, machine, path)
                except MalformedName as exc:
                    raise type(exc)(f"{path}: {exc}") from None
                if meta.split != split:
                    raise MalformedName(f"{path}: split token does not match directory {split!r}")
                if path in seen:
                    raise MalformedName(f"{path}: duplicate clip")
                seen.add(path)
                manifest.groups.setdefault(meta.group, []).append(meta)

        for csv_path in sorted(mdir.glob("attributes_*.csv")):
            table = _read_attribute_csv(csv_path)
            for clip in (c for (m, _), cs in manifest.groups.items() if m == machine for c in cs):
                if clip.filename in table and table[clip.filename] != clip.attributes:
                    manifest.warnings.append(
                        f"{csv_path.name}: attributes for {clip.filename} disagree with file name")

    if not manifest.groups:
        raise EmptyCorpus(f"{root}: no WAV files found")
    for group in sorted(manifest.groups):
        manifest.groups[group].sort(key=lambda c: str(c.path))
        tc = manifest.train_counts(group)
        if tc["source"] + tc["target"] == 0:
            raise EmptyCorpus(f"{group[0]} section_{group[1]:02d}: no training clips")
        n_test = len(manifest.clips(*group, split="test"))
        expected = (CANONICAL_COUNTS[("train", "source")], CANONICAL_COUNTS[("train", "target")],
                    CANONICAL_COUNTS[("test", "all")])
        if (tc["source"], tc["target"], n_test) != expected:
            manifest.warnings.append(
                f"{group[0]} section_{group[1]:02d}: counts train source={tc['source']} "
                f"target={tc['target']} test={n_test} differ from {expected[0]}/{expected[1]}/{expected[2]}")
    for w in manifest.warnings:
        logger.warning(w)
    return manifest


# ---------------------------------------------------------------------------
# submission files

@dataclass(frozen=True)
class ScoreRecord:
    filename: str
    score: float
    decision: int | None = None


def submission_paths(out_dir, machine_type: str, section: int) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    stem = f"{machine_type}_section_{section:02d}.csv"
    return out_dir / f"anomaly_score_{stem}", out_dir / f"decision_result_{stem}"


def write_submission(records: Sequence[ScoreRecord], machine_type: str, section: int,
                     out_dir, write_decisions: bool = True) -> tuple[Path, Path | None]:
    if not records:
        raise ValueError("no records to write")
    for r in records:
        if not np.isfinite(r.score):
            raise ValueError(f"{r.filename}: score {r.score!r} is not finite")
        if write_decisions and r.decision not in (0, 1):
            raise MissingDecision(f"{r.filename}: no decision")
    score_path, decision_path = submission_paths(out_dir, machine_type, section)
    try:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(score_path, "w", newline="\n") as fh:
            fh.writelines(f"{r.filename},{float(r.score)!r}\n" for r in records)
        if write_decisions:
            with open(decision_path, "w", newline="\n") as fh:
                fh.writelines(f"{r.filename},{int(r.decision)}\n" for r in records)
    except OSError as exc:
        raise IoFailure(str(exc)) from None
    return score_path, (decision_path if write_decisions else None)


def read_submission(path, cast=float) -> list[tuple[str, float]]:
    rows = []
    with open(path) as fh:
        for line in fh:
            name, value = line.rstrip("\n").rsplit(",", 1)
            rows.append((name, cast(value)))
    return rows


def iter_clips(manifest: CorpusManifest, split: str) -> Iterable[ClipMetadata]:
    for group in sorted(manifest.groups):
        yield from (c for c in manifest.groups[group] if c.split == split)
