"""Evaluation protocol: domain-wise AUC, section-wise pAUC and the
harmonic-mean official score.

All pair statistics are exact integer counts: a pair (anomaly, normal)
counts only when the anomaly score is strictly greater, so ties count 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datasets import ClipMetadata
from .errors import EmptyList, MissingScores, PTooSmall, UnlabeledData

DEFAULT_P = 0.1


def _as_scores(values, what) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyList(f"no {what} scores")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} scores must be finite")
    return arr


def count_wins(normals, anomalies) -> int:
    """Number of (anomaly, normal) pairs with anomaly > normal."""
    normals = np.sort(np.asarray(normals, dtype=np.float64))
    # normals strictly below each anomaly
    return int(np.searchsorted(normals, np.asarray(anomalies, dtype=np.float64), side="left").sum())


def auc_counts(normals, anomalies) -> tuple[int, int]:
    n = _as_scores(normals, "normal")
    a = _as_scores(anomalies, "anomaly")
    return count_wins(n, a), n.size * a.size


def auc_domain(normals, anomalies) -> float:
    wins, total = auc_counts(normals, anomalies)
    return wins / total


def top_normals(normals, p: float) -> np.ndarray:
    """The floor(p*N) highest-scoring normals; ties resolved by input order."""
    n = _as_scores(normals, "normal")
    k = math.floor(p * n.size)
    if k < 1:
        raise PTooSmall(f"floor({p} * {n.size}) = 0 normal clips in the FPR range")
    order = np.argsort(-n, kind="stable")
    return n[order[:k]]


def pauc_counts(normals, anomalies, p: float = DEFAULT_P) -> tuple[int, int]:
    if not 0 < p <= 1:
        raise ValueError(f"p={p} must lie in (0, 1]")
    top = top_normals(normals, p)
    a = _as_scores(anomalies, "anomaly")
    return count_wins(top, a), top.size * a.size


def pauc_section(normals, anomalies, p: float = DEFAULT_P) -> float:
    wins, total = pauc_counts(normals, anomalies, p)
    return wins / total


def official_score(aucs: Sequence[float], paucs: Sequence[float] = ()) -> float:
    """Harmonic mean of all values; 0 if any value is 0."""
    values = [float(v) for v in (*aucs, *paucs)]
    if not values:
        raise EmptyList("no values to average")
    if any(not 0 <= v <= 1 for v in values):
        raise ValueError("metric values must lie in [0, 1]")
    if any(v == 0 for v in values):
        return 0.0
    return len(values) / math.fsum(1.0 / v for v in values)


@dataclass
class SectionResult:
    machine_type: str
    section: int
    auc_source: float
    auc_target: float
    pauc: float
    counts: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    sections: list[SectionResult]
    official_score: float
    p: float

    def values(self) -> list[float]:
        out = []
        for s in self.sections:
            out += [s.auc_source, s.auc_target, s.pauc]
        return out

    def to_csv(self) -> str:
        lines = ["machine,section,auc_source,auc_target,pauc"]
        lines += [f"{s.machine_type},{s.section:02d},{s.auc_source!r},{s.auc_target!r},{s.pauc!r}"
                  for s in self.sections]
        lines.append(f"official_score,{self.official_score!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "p": self.p,
            "official_score": self.official_score,
            "sections": [
                {"machine": s.machine_type, "section": s.section, "auc_source": s.auc_source,
                 "auc_target": s.auc_target, "pauc": s.pauc, "counts": s.counts}
                for s in self.sections
            ],
        }, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / "report.csv", out_dir / "report.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.to_json())
        return csv_path, json_path


def read_report_csv(path) -> EvalReport:
    sections, omega = [], None
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        parts = line.split(",")
        if parts[0] == "official_score":
            omega = float(parts[1])
        elif parts[0]:
            sections.append(SectionResult(parts[0], int(parts[1]), *map(float, parts[2:5])))
    return EvalReport(sections, omega, DEFAULT_P)


def evaluate(clips: Sequence[ClipMetadata], scores: Mapping, p: float = DEFAULT_P) -> EvalReport:
    """Score the labelled test clips of every (machine, section).

    ``scores`` maps a clip's path (or, failing that, ``(machine, section,
    filename)``) to its anomaly score.
    """
    test = [c for c in clips if c.split == "test"]
    if not test:
        raise EmptyList("no test clips")
    if any(not c.labelled for c in test):
        raise UnlabeledData("test clips without condition/domain labels cannot be evaluated; "
                            "use score-only export")

    def lookup(c):
        for key in (c.path, str(c.path), (c.machine_type, c.section, c.filename)):
            if key in scores:
                return float(scores[key])
        raise MissingScores(f"no score for {c.machine_type}/{c.filename}")

    groups: dict[tuple[str, int], list[tuple[ClipMetadata, float]]] = {}
    for c in test:
        groups.setdefault(c.group, []).append((c, lookup(c)))

    results = []
    for (machine, section) in sorted(groups):
        items = groups[(machine, section)]
        anomalies = [s for c, s in items if c.label == "anomaly"]
        normals = {d: [s for c, s in items if c.label == "normal" and c.domain == d]
                   for d in ("source", "target")}
        for d, v in normals.items():
            if not v:
                raise EmptyList(f"{machine} section_{section:02d}: no {d}-domain normal test clips")
        if not anomalies:
            raise EmptyList(f"{machine} section_{section:02d}: no anomalous test clips")
        pooled = normals["source"] + normals["target"]
        src = auc_counts(normals["source"], anomalies)
        tgt = auc_counts(normals["target"], anomalies)
        pa = pauc_counts(pooled, anomalies, p)
        results.append(SectionResult(
            machine, section, src[0] / src[1], tgt[0] / tgt[1], pa[0] / pa[1],
            counts={"n_normal_source": len(normals["source"]), "n_normal_target": len(normals["target"]),
                    "n_anomaly": len(anomalies), "wins_source": src[0], "wins_target": tgt[0],
                    "wins_pauc": pa[0], "pairs_pauc": pa[1]}))
    omega = official_score([v for r in results for v in (r.auc_source, r.auc_target, r.pauc)])
    return EvalReport(results, omega, p)


def aggregate(reports: Sequence[EvalReport]) -> list[tuple[str, str, float, float]]:
    """Mean and sample std (ddof=1) of every metric across runs.

    Rows are ``(key, metric, mean, std)``; ``std`` is nan for a single run.
    """
    if not reports:
        raise EmptyList("no reports to aggregate")
    rows = []
    by_key: dict[tuple[str, str], list[float]] = {}
    for rep in reports:
        for s in rep.sections:
            key = f"{s.machine_type}_section_{s.section:02d}"
            for metric in ("auc_source", "auc_target", "pauc"):
                by_key.setdefault((key, metric), []).append(getattr(s, metric))
        by_key.setdefault(("all", "official_score"), []).append(rep.official_score)
    for (key, metric), vals in by_key.items():
        arr = np.asarray(vals)
        std = float(arr.std(ddof=1)) if arr.size > 1 else float("nan")
        rows.append((key, metric, float(arr.mean()), std))
    return rows
