"""Dense autoencoder over context vectors, trained with Adam.

Hidden layers are ``Linear -> BatchNorm -> ReLU``; the output layer is
linear. Everything runs in float64 on numpy, with hand-written reverse-mode
gradients.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _binio
from .errors import CorruptFile, InvalidArchitecture, NonFiniteLoss, ShapeMismatch
from .features import FeatureConfig

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
MODEL_MAGIC = b"FSAE"
MODEL_VERSION = 1


@dataclass(frozen=True)
class AeArchitecture:
    input_dim: int
    encoder: tuple[int, ...] = (128, 128, 128, 128)
    bottleneck: int = 8
    activation: str = "relu"
    batch_norm: bool = True
    # bottleneck without BN/activation; used for identity-style configurations
    linear_bottleneck: bool = False

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(int(w) for w in self.encoder))
        if self.activation != "relu":
            raise InvalidArchitecture(f"unsupported activation {self.activation!r}")
        if min((self.input_dim, self.bottleneck, *self.encoder)) < 1:
            raise InvalidArchitecture("all layer widths must be >= 1")

    @property
    def decoder(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder))

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.encoder, self.bottleneck, *self.decoder, self.input_dim]

    def layer_kinds(self) -> list[tuple[bool, bool]]:
        """(batch_norm, relu) per dense layer."""
        n = len(self.widths) - 1
        kinds = []
        for i in range(n):
            if i == n - 1:
                kinds.append((False, False))
            elif i == len(self.encoder) and self.linear_bottleneck:
                kinds.append((False, False))
            else:
                kinds.append((self.batch_norm, True))
        return kinds


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    batch_norm: bool
    relu: bool
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def params(self) -> dict[str, np.ndarray]:
        p = {"W": self.W, "b": self.b}
        if self.batch_norm:
            p["gamma"] = self.gamma
            p["beta"] = self.beta
        return p

    def buffers(self) -> dict[str, np.ndarray]:
        if not self.batch_norm:
            return {}
        return {"running_mean": self.running_mean, "running_var": self.running_var}


@dataclass
class AeModel:
    arch: AeArchitecture
    layers: list[Layer]
    feature_config: FeatureConfig | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays in a fixed order; arrays are live views."""
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers) for k, v in layer.params().items()]

    def state(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"{i}.{k}", v) for k, v in layer.params().items()]
            out += [(f"{i}.{k}", v) for k, v in layer.buffers().items()]
        return out

    def copy(self) -> "AeModel":
        layers = [dataclasses.replace(l, **{k: v.copy() for k, v in {**l.params(), **l.buffers()}.items()})
                  for l in self.layers]
        return AeModel(self.arch, layers, self.feature_config, self.seed, dict(self.extra))


def init_model(arch: AeArchitecture, seed: int = 0, feature_config: FeatureConfig | None = None) -> AeModel:
    """He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases."""
    if not isinstance(arch, AeArchitecture):
        raise InvalidArchitecture("expected an AeArchitecture")
    rng = np.random.default_rng(seed)
    widths = arch.widths
    layers = []
    for (fan_in, fan_out), (bn, relu) in zip(zip(widths[:-1], widths[1:]), arch.layer_kinds()):
        bound = np.sqrt(6.0 / fan_in)
        layer = Layer(W=rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                      b=np.zeros(fan_out), batch_norm=bn, relu=relu)
        if bn:
            layer.gamma = np.ones(fan_out)
            layer.beta = np.zeros(fan_out)
            layer.running_mean = np.zeros(fan_out)
            layer.running_var = np.ones(fan_out)
        layers.append(layer)
    return AeModel(arch, layers, feature_config, seed)


def _check_batch(model: AeModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise ShapeMismatch(f"expected (B, {model.arch.input_dim}) batch, got {x.shape}")
    return x


def _forward(model: AeModel, x: np.ndarray, training: bool, update_stats: bool = False):
    caches = []
    h = x
    for layer in model.layers:
        z = h @ layer.W + layer.b
        cache = {"h_in": h}
        if layer.batch_norm:
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    n = z.shape[0]
                    unbiased = var * n / (n - 1) if n > 1 else var
                    layer.running_mean *= 1 - BN_MOMENTUM
                    layer.running_mean += BN_MOMENTUM * mu
                    layer.running_var *= 1 - BN_MOMENTUM
                    layer.running_var += BN_MOMENTUM * unbiased
            else:
                mu, var = layer.running_mean, layer.running_var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            cache.update(xhat=xhat, inv_std=inv_std)
            z = layer.gamma * xhat + layer.beta
        if layer.relu:
            cache["mask"] = z > 0
            z = np.where(cache["mask"], z, 0.0)
        caches.append(cache)
        h = z
    return h, caches


def forward(model: AeModel, batch, training: bool = False) -> np.ndarray:
    """Reconstruct ``batch``; inference mode uses running BN statistics."""
    x = _check_batch(model, batch)
    return _forward(model, x, training)[0]


def loss_and_gradients(model: AeModel, batch, update_stats: bool = False):
    """Mean squared reconstruction error over B*D entries and its gradients.

    Batch-norm layers use batch statistics (training mode). Returns
    ``(loss, grads)`` with ``grads`` keyed like :meth:`AeModel.parameters`.
    """
    x = _check_batch(model, batch)
    y, caches = _forward(model, x, training=True, update_stats=update_stats)
    with np.errstate(over="ignore", invalid="ignore"):
        diff = y - x
        loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    grads = {}
    g = 2.0 * diff / diff.size
    for i in range(len(model.layers) - 1, -1, -1):
        layer, cache = model.layers[i], caches[i]
        if layer.relu:
            g = g * cache["mask"]
        if layer.batch_norm:
            xhat, inv_std = cache["xhat"], cache["inv_std"]
            grads[f"{i}.gamma"] = (g * xhat).sum(axis=0)
            grads[f"{i}.beta"] = g.sum(axis=0)
            gx = g * layer.gamma
            n = gx.shape[0]
            g = inv_std / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
        grads[f"{i}.W"] = cache["h_in"].T @ g
        grads[f"{i}.b"] = g.sum(axis=0)
        g = g @ layer.W.T
    return loss, {name: grads[name] for name, _ in model.parameters()}


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        # single-row batches carry no batch-norm statistics
        if len(idx) < 2 and n > 1:
            continue
        yield idx


def train(model: AeModel, frames, cfg: TrainConfig) -> tuple[AeModel, list[float]]:
    """Adam on the reconstruction loss. Returns a new model and per-epoch losses.

    Epoch losses are batch losses weighted by batch size. The input model
    is left untouched.
    """
    x = _check_batch(model, frames)
    if x.shape[0] < cfg.batch_size:
        raise ValueError(f"{x.shape[0]} frames is fewer than batch_size={cfg.batch_size}")
    model = model.copy()
    params = model.parameters()
    m = {k: np.zeros_like(v) for k, v in params}
    v = {k: np.zeros_like(p) for k, p in params}
    rng = np.random.default_rng(cfg.seed)
    step = 0
    curve = []
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total, seen = 0.0, 0
        for idx in _batches(n, cfg.batch_size, order):
            try:
                loss, grads = loss_and_gradients(model, x[idx], update_stats=True)
            except NonFiniteLoss:
                raise NonFiniteLoss(f"training diverged in epoch {epoch}", epoch=epoch) from None
            step += 1
            lr_t = cfg.learning_rate * np.sqrt(1 - cfg.beta2 ** step) / (1 - cfg.beta1 ** step)
            for name, p in params:
                g = grads[name]
                m[name] *= cfg.beta1
                m[name] += (1 - cfg.beta1) * g
                v[name] *= cfg.beta2
                v[name] += (1 - cfg.beta2) * g * g
                p -= lr_t * m[name] / (np.sqrt(v[name]) + cfg.eps)
            total += loss * len(idx)
            seen += len(idx)
        curve.append(total / seen)
        logger.debug("epoch %d loss %.6g", epoch, curve[-1])
    model.seed = cfg.seed
    return model, curve


def save_model(model: AeModel, path) -> None:
    meta = {
        "architecture": dataclasses.asdict(model.arch),
        "feature_config": model.feature_config.to_dict() if model.feature_config else None,
        "seed": model.seed,
        "extra": model.extra,
    }
    _binio.write_container(path, MODEL_MAGIC, MODEL_VERSION, meta, model.state())


def load_model(path) -> AeModel:
    meta, arrays = _binio.read_container(path, MODEL_MAGIC, MODEL_VERSION)
    arch = AeArchitecture(**meta["architecture"])
    fc = meta.get("feature_config")
    model = init_model(arch, 0, FeatureConfig(**fc) if fc else None)
    model.seed = meta.get("seed")
    model.extra = meta.get("extra") or {}
    expected = [name for name, _ in model.state()]
    if sorted(expected) != sorted(arrays):
        raise CorruptFile(f"{path}: parameter set does not match the architecture")
    for name, target in model.state():
        if arrays[name].shape != target.shape:
            raise CorruptFile(f"{path}: {name} has shape {arrays[name].shape}, expected {target.shape}")
        target[...] = arrays[name]
    return model
