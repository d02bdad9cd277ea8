"""Flat ``key = value`` configuration files and the ``mini``/``full`` presets.

Blank lines and ``#`` comments are ignored. Keys are listed in the README.
Command-line flags override values read from a file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .autoencoder import AeArchitecture, TrainConfig
from .errors import InvalidConfig
from .features import FeatureConfig
from .metrics import DEFAULT_P
from .scoring import DEFAULT_RIDGE
from .synthgen import CATALOGUE, MachineSpec, SynthConfig, SynthCounts

MODES = ("simple", "mahalanobis")


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidConfig(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_flat(path) -> dict[str, str]:
    path = Path(path)
    try:
        return parse_flat(path.read_text(), str(path))
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.replace(" ", "").split(",") if v)


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {value!r}")


# ---------------------------------------------------------------------------
# synthetic corpus

SYNTH_PRESETS = {
    "mini": {"machines": "ToyCar,fan", "train_source": "20", "train_target": "2",
             "test_normal": "5", "test_anomaly": "5"},
    "full": {"machines": ",".join(CATALOGUE), "train_source": "990", "train_target": "10",
             "test_normal": "50", "test_anomaly": "50"},
}

_MACHINE_FIELDS = {
    "fundamental_hz": float, "n_harmonics": int, "harmonic_decay": float, "snr_db": float,
    "clip_seconds": float, "noise_low_hz": float, "noise_high_hz": float,
    "target_fundamental_scale": float, "target_snr_delta_db": float,
    "burst_rate_hz": float, "burst_gain_db": float, "burst_seconds": float,
}


def _apply_machine(spec: MachineSpec, key: str, value: str) -> MachineSpec:
    if key not in _MACHINE_FIELDS:
        raise InvalidConfig(f"unknown machine key {key!r}")
    v = _MACHINE_FIELDS[key](value)
    if key == "noise_low_hz":
        return dataclasses.replace(spec, noise_band=(v, spec.noise_band[1]))
    if key == "noise_high_hz":
        return dataclasses.replace(spec, noise_band=(spec.noise_band[0], v))
    if key.startswith("target_"):
        name = key[len("target_"):]
        return dataclasses.replace(spec, target_shift=dataclasses.replace(spec.target_shift, **{name: v}))
    if key.startswith("burst_"):
        return dataclasses.replace(spec, anomaly_spec=dataclasses.replace(spec.anomaly_spec, **{key: v}))
    return dataclasses.replace(spec, **{key: v})


def synth_config(values: dict[str, str], preset: str = "mini") -> SynthConfig:
    """Build a :class:`SynthConfig` from preset defaults overlaid with ``values``.

    Machine keys may be set for every machine (``burst_gain_db = 0``) or for
    one (``fan.burst_gain_db = 0``).
    """
    if preset not in SYNTH_PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}")
    kv = {**SYNTH_PRESETS[preset], **values}
    try:
        names = [n for n in kv.pop("machines").replace(" ", "").split(",") if n]
        machines = {}
        for n in names:
            machines[n] = CATALOGUE.get(n, MachineSpec(n))
        counts = SynthCounts(int(kv.pop("train_source")), int(kv.pop("train_target")),
                             int(kv.pop("test_normal")), int(kv.pop("test_anomaly")))
        seed = int(kv.pop("seed", "0"))
        root = kv.pop("out", None)
        for key, value in sorted(kv.items(), key=lambda item: "." in item[0]):
            if "." in key:
                machine, mkey = key.split(".", 1)
                if machine not in machines:
                    raise InvalidConfig(f"{key}: machine {machine!r} not configured")
                machines[machine] = _apply_machine(machines[machine], mkey, value)
            else:
                for n in machines:
                    machines[n] = _apply_machine(machines[n], key, value)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, InvalidConfig):
            raise
        raise InvalidConfig(str(exc)) from None
    return SynthConfig(seed, tuple(machines.values()), counts, Path(root) if root else None)


# ---------------------------------------------------------------------------
# train / score / evaluate runs

@dataclass(frozen=True)
class RunConfig:
    corpus: Path | None = None
    out: Path | None = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: tuple[int, ...] = (128, 128, 128, 128)
    bottleneck: int = 8
    batch_norm: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "simple"
    threshold_q: float = 0.9
    p: float = DEFAULT_P
    ridge: float = DEFAULT_RIDGE
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.p <= 1:
            raise InvalidConfig(f"p={self.p} must lie in (0, 1]")
        if not 0 < self.threshold_q < 1:
            raise InvalidConfig(f"threshold_q={self.threshold_q} must lie in (0, 1)")
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")

    def architecture(self) -> AeArchitecture:
        return AeArchitecture(self.features.dim, self.encoder, self.bottleneck, batch_norm=self.batch_norm)


RUN_PRESETS = {
    "mini": {"n_mels": "32", "encoder": "64,64", "bottleneck": "8", "epochs": "10",
             "batch_size": "256", "lr": "1e-2"},
    "full": {"n_mels": "128", "encoder": "128,128,128,128", "bottleneck": "8", "epochs": "100",
             "batch_size": "256", "lr": "1e-3"},
}

_FEATURE_KEYS = {"n_fft": ("fft_size", int), "hop": ("hop", int), "n_mels": ("n_mels", int),
                 "context": ("context_frames", int), "fmin": ("mel_fmin_hz", float),
                 "fmax": ("mel_fmax_hz", float), "log_floor": ("log_floor", float)}
_TRAIN_KEYS = {"epochs": ("epochs", int), "batch_size": ("batch_size", int),
               "lr": ("learning_rate", float), "beta1": ("beta1", float), "beta2": ("beta2", float),
               "adam_eps": ("eps", float), "shuffle": ("shuffle", _bool)}
RUN_KEYS = {"corpus", "out", "mode", "threshold_q", "p", "ridge", "seeds", "encoder",
            "bottleneck", "batch_norm", *_FEATURE_KEYS, *_TRAIN_KEYS}


def run_config(values: dict[str, str], preset: str = "mini") -> RunConfig:
    if preset not in RUN_PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}")
    kv = {**RUN_PRESETS[preset], **values}
    unknown = set(kv) - RUN_KEYS
    if unknown:
        raise InvalidConfig(f"unknown run config keys: {', '.join(sorted(unknown))}")
    try:
        feat = FeatureConfig(**{name: cast(kv[k]) for k, (name, cast) in _FEATURE_KEYS.items() if k in kv})
        train = TrainConfig(**{name: cast(kv[k]) for k, (name, cast) in _TRAIN_KEYS.items() if k in kv})
        return RunConfig(
            corpus=Path(kv["corpus"]) if kv.get("corpus") else None,
            out=Path(kv["out"]) if kv.get("out") else None,
            features=feat,
            encoder=_int_list(kv["encoder"]),
            bottleneck=int(kv["bottleneck"]),
            batch_norm=_bool(kv.get("batch_norm", "true")),
            train=train,
            mode=kv.get("mode", "simple"),
            threshold_q=float(kv.get("threshold_q", 0.9)),
            p=float(kv.get("p", DEFAULT_P)),
            ridge=float(kv.get("ridge", DEFAULT_RIDGE)),
            seeds=_int_list(kv.get("seeds", "0")),
        )
    except InvalidConfig:
        raise
    except (ValueError, TypeError) as exc:
        raise InvalidConfig(str(exc)) from None
