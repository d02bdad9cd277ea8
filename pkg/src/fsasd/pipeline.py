"""Per-(machine, section) train / score / evaluate steps behind the CLI.

Run directory layout, one subdirectory per training seed::

    <out>/seed_<s>/mode.txt
    <out>/seed_<s>/model_<machine>_section_<NN>.bin
    <out>/seed_<s>/cov_<machine>_section_<NN>.bin        (mahalanobis mode)
    <out>/seed_<s>/threshold_<machine>_section_<NN>.txt
    <out>/seed_<s>/loss_<machine>_section_<NN>.csv
    <out>/seed_<s>/submission/anomaly_score_<machine>_section_<NN>.csv
    <out>/seed_<s>/submission/decision_result_<machine>_section_<NN>.csv
    <out>/seed_<s>/report.csv, report.json
    <out>/aggregate.csv
"""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import metrics, scoring
from .config import RunConfig
from .datasets import ClipMetadata, CorpusManifest, ScoreRecord, read_submission, read_wav, submission_paths, write_submission
from .errors import ConfigMismatch, MissingModel
from .features import FeatureConfig, FeatureMatrix, extract

logger = logging.getLogger(__name__)


class FeatureCache:
    """Features per clip path, computed once per process."""

    def __init__(self, cfg: FeatureConfig):
        self.cfg = cfg
        self._store: dict[Path, FeatureMatrix] = {}

    def __call__(self, clip: ClipMetadata) -> FeatureMatrix:
        if clip.path not in self._store:
            self._store[clip.path] = extract(read_wav(clip.path), self.cfg)
        return self._store[clip.path]


def seed_dir(out: Path, seed: int) -> Path:
    return Path(out) / f"seed_{seed}"


def _stem(machine: str, section: int) -> str:
    return f"{machine}_section_{section:02d}"


def model_path(run_dir: Path, machine: str, section: int) -> Path:
    return run_dir / f"model_{_stem(machine, section)}.bin"


def cov_path(run_dir: Path, machine: str, section: int) -> Path:
    return run_dir / f"cov_{_stem(machine, section)}.bin"


def threshold_path(run_dir: Path, machine: str, section: int) -> Path:
    return run_dir / f"threshold_{_stem(machine, section)}.txt"


def clip_score(model, cov, feats: FeatureMatrix, mode: str) -> float:
    if mode == "mahalanobis":
        return scoring.score_mahalanobis(model, cov, feats)
    return scoring.score_simple(model, feats)


def train_section(manifest: CorpusManifest, group, cfg: RunConfig, seed: int,
                  run_dir: Path, cache: FeatureCache) -> list[float]:
    machine, section = group
    train_clips = manifest.clips(machine, section, split="train")
    feats = {c.path: cache(c) for c in train_clips}
    frames = np.vstack([feats[c.path].vectors for c in train_clips])

    model = ae.init_model(cfg.architecture(), seed, cfg.features)
    model, curve = ae.train(model, frames, dataclasses.replace(cfg.train, seed=seed))
    ae.save_model(model, model_path(run_dir, machine, section))
    with open(run_dir / f"loss_{_stem(machine, section)}.csv", "w") as fh:
        fh.write("epoch,loss\n")
        fh.writelines(f"{i + 1},{v!r}\n" for i, v in enumerate(curve))

    cov = None
    if cfg.mode == "mahalanobis":
        by_domain = {d: np.vstack([feats[c.path].vectors for c in train_clips if c.domain == d])
                     for d in ("source", "target")}
        cov = scoring.fit_covariances(model, by_domain["source"], by_domain["target"], cfg.ridge)
        cov.save(cov_path(run_dir, machine, section))

    train_scores = [clip_score(model, cov, feats[c.path], cfg.mode) for c in train_clips]
    threshold = scoring.calibrate_threshold(train_scores, cfg.threshold_q)
    threshold_path(run_dir, machine, section).write_text(threshold.to_text())
    logger.info("%s: trained, final loss %.4g, phi %.4g", _stem(machine, section), curve[-1], threshold.phi)
    return curve


def check_mode(run_dir: Path, mode: str) -> None:
    mode_file = run_dir / "mode.txt"
    if not mode_file.exists():
        raise MissingModel(f"{run_dir}: no trained models (run 'train' first)")
    trained = mode_file.read_text().strip()
    if trained != mode:
        raise ConfigMismatch(f"{run_dir}: models were trained for mode {trained!r}, "
                             f"requested {mode!r}")


def score_section(manifest: CorpusManifest, group, cfg: RunConfig, run_dir: Path,
                  cache: FeatureCache) -> tuple[Path, Path]:
    machine, section = group
    mpath = model_path(run_dir, machine, section)
    if not mpath.exists():
        raise MissingModel(f"missing model {mpath}")
    model = ae.load_model(mpath)
    if model.feature_config != cfg.features:
        raise ConfigMismatch(f"{mpath}: trained with a different feature configuration")
    cov = None
    if cfg.mode == "mahalanobis":
        cpath = cov_path(run_dir, machine, section)
        if not cpath.exists():
            raise MissingModel(f"missing covariance sidecar {cpath}")
        cov = scoring.DomainCovariances.load(cpath)
    threshold = scoring.Threshold.from_text(threshold_path(run_dir, machine, section).read_text())

    records = []
    for clip in manifest.clips(machine, section, split="test"):
        s = clip_score(model, cov, cache(clip), cfg.mode)
        records.append(ScoreRecord(clip.filename, s, int(scoring.decide(s, threshold) == "anomaly")))
    return write_submission(records, machine, section, run_dir / "submission")


def load_scores(manifest: CorpusManifest, run_dir: Path) -> dict:
    scores = {}
    for (machine, section) in sorted(manifest.groups):
        path, _ = submission_paths(run_dir / "submission", machine, section)
        if not path.exists():
            continue
        for name, value in read_submission(path):
            scores[(machine, section, name)] = value
    return scores


def evaluate_run(manifest: CorpusManifest, cfg: RunConfig, run_dir: Path) -> metrics.EvalReport:
    report = metrics.evaluate(manifest.clips(split="test"), load_scores(manifest, run_dir), cfg.p)
    report.write(run_dir)
    return report


def write_aggregate(reports, path: Path) -> list[tuple[str, str, float, float]]:
    rows = metrics.aggregate(reports)
    with open(path, "w") as fh:
        fh.write("key,metric,mean,std\n")
        fh.writelines(f"{k},{m},{mean!r},{std!r}\n" for k, m, mean, std in rows)
    return rows
