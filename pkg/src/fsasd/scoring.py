"""Per-clip anomaly scores (simple and selective Mahalanobis) and the
threshold decision rule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _binio
from .autoencoder import AeModel, forward
from .errors import ConfigMismatch, EmptyScores, SingularAfterRidge, TooFewFrames
from .features import FeatureMatrix

COV_MAGIC = b"FSCV"
COV_VERSION = 1
DEFAULT_RIDGE = 1e-3
INVERSE_TOLERANCE = 1e-6


def _check_config(model: AeModel, features: FeatureMatrix) -> np.ndarray:
    if model.feature_config is not None and features.config != model.feature_config:
        raise ConfigMismatch("features were not extracted with the model's feature configuration")
    if features.vectors.shape[1] != model.arch.input_dim:
        raise ConfigMismatch(f"feature width {features.vectors.shape[1]} != model input {model.arch.input_dim}")
    return features.vectors


def residuals(model: AeModel, vectors) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    return vectors - forward(model, vectors)


def score_simple(model: AeModel, features: FeatureMatrix) -> float:
    """Mean squared reconstruction error over all K' x D entries."""
    e = residuals(model, _check_config(model, features))
    return float(np.sum(e * e) / e.size)


@dataclass
class DomainCovariances:
    source: np.ndarray
    target: np.ndarray
    source_inv: np.ndarray
    target_inv: np.ndarray
    n_source: int
    n_target: int
    ridge_source: float
    ridge_target: float
    ridge_scale: float

    @classmethod
    def identity(cls, dim: int) -> "DomainCovariances":
        eye = np.eye(dim)
        return cls(eye, eye.copy(), eye.copy(), eye.copy(), 0, 0, 0.0, 0.0, 0.0)

    @property
    def dim(self) -> int:
        return self.source.shape[0]

    def save(self, path) -> None:
        meta = {"n_source": self.n_source, "n_target": self.n_target,
                "ridge_source": self.ridge_source, "ridge_target": self.ridge_target,
                "ridge_scale": self.ridge_scale}
        _binio.write_container(path, COV_MAGIC, COV_VERSION, meta, [
            ("source", self.source), ("target", self.target),
            ("source_inv", self.source_inv), ("target_inv", self.target_inv)])

    @classmethod
    def load(cls, path) -> "DomainCovariances":
        meta, a = _binio.read_container(path, COV_MAGIC, COV_VERSION)
        return cls(a["source"], a["target"], a["source_inv"], a["target_inv"],
                   meta["n_source"], meta["n_target"], meta["ridge_source"],
                   meta["ridge_target"], meta["ridge_scale"])


def regularized_inverse(cov: np.ndarray, ridge_scale: float) -> tuple[np.ndarray, float]:
    """Inverse of ``cov + eps*I`` with ``eps = ridge_scale * trace(cov)/D``.

    A zero-trace covariance falls back to ``eps = ridge_scale``.
    """
    dim = cov.shape[0]
    scale = np.trace(cov) / dim
    eps = ridge_scale * (scale if scale > 0 else 1.0)
    reg = cov + eps * np.eye(dim)
    try:
        factor = scipy.linalg.cho_factor(reg, lower=True)
    except np.linalg.LinAlgError:
        raise SingularAfterRidge(f"covariance not positive definite after ridge {eps:g}") from None
    inv = scipy.linalg.cho_solve(factor, np.eye(dim))
    inv = 0.5 * (inv + inv.T)
    err = np.max(np.abs(reg @ inv - np.eye(dim)))
    if not err < INVERSE_TOLERANCE:
        raise SingularAfterRidge(f"ill-conditioned covariance: |S S^-1 - I|max = {err:.3g}")
    return inv, float(eps)


def fit_covariances(model: AeModel, source_frames, target_frames,
                    ridge_scale: float = DEFAULT_RIDGE) -> DomainCovariances:
    """Residual covariances per domain with a trace-scaled ridge."""
    fitted = []
    for frames in (source_frames, target_frames):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 2:
            raise TooFewFrames("need at least two frames per domain")
        e = residuals(model, frames)
        cov = np.cov(e, rowvar=False, ddof=1).reshape(e.shape[1], e.shape[1])
        cov = 0.5 * (cov + cov.T)
        inv, eps = regularized_inverse(cov, ridge_scale)
        fitted.append((cov, inv, eps, frames.shape[0]))
    (cs, inv_s, eps_s, ns), (ct, inv_t, eps_t, nt) = fitted
    return DomainCovariances(cs, ct, inv_s, inv_t, ns, nt, eps_s, eps_t, ridge_scale)


def frame_distances(model: AeModel, cov: DomainCovariances, vectors) -> tuple[np.ndarray, np.ndarray]:
    """Squared Mahalanobis forms e^T S^-1 e of each frame's residual, per domain."""
    e = residuals(model, vectors)
    d_s = np.sum((e @ cov.source_inv) * e, axis=1)
    d_t = np.sum((e @ cov.target_inv) * e, axis=1)
    return d_s, d_t


def score_mahalanobis(model: AeModel, cov: DomainCovariances, features: FeatureMatrix) -> float:
    vectors = _check_config(model, features)
    if cov.dim != vectors.shape[1]:
        raise ConfigMismatch(f"covariance dim {cov.dim} != feature dim {vectors.shape[1]}")
    d_s, d_t = frame_distances(model, cov, vectors)
    return float(np.sum(np.minimum(d_s, d_t)) / vectors.size)


@dataclass(frozen=True)
class Threshold:
    phi: float
    method: str
    n_samples: int
    q: float | None = None

    def to_text(self) -> str:
        return (f"phi,{self.phi!r}\nmethod,{self.method}\n"
                f"q,{self.q!r}\nn_samples,{self.n_samples}\n")

    @classmethod
    def from_text(cls, text: str) -> "Threshold":
        kv = dict(line.split(",", 1) for line in text.splitlines() if line)
        q = None if kv.get("q") in (None, "None") else float(kv["q"])
        return cls(float(kv["phi"]), kv["method"], int(kv["n_samples"]), q)


def calibrate_threshold(training_scores, q: float = 0.9) -> Threshold:
    """Linearly interpolated q-quantile (Hyndman-Fan type 7) of the scores."""
    scores = np.asarray(training_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise EmptyScores("no training scores to calibrate on")
    if not np.all(np.isfinite(scores)):
        raise ValueError("training scores must be finite")
    if not 0 < q < 1:
        raise ValueError(f"q={q} must lie in (0, 1)")
    return Threshold(float(np.quantile(scores, q, method="linear")), "quantile", scores.size, q)


def decide(score: float, threshold) -> str:
    phi = threshold.phi if isinstance(threshold, Threshold) else float(threshold)
    return "anomaly" if score > phi else "normal"
