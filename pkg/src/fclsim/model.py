"""Frozen random-feature backbone with per-task gated proxy layers.

Layer ``l`` (1-indexed, ``x_0`` is the input) for task ``t`` computes::

    x_l = gate(l, l) * G_l(x_{l-1}) + sum_{l'} gate(l', l) * P_t[l', l] @ x_{l'}

with ``G_l(x) = act(W_l x + b_l)`` frozen, ``l'`` ranging over
``max(l - k, 1) .. l - 1`` and ``gate = logistic(alpha_logit)``. The task head
maps ``x_L`` to class logits. Only proxies, gate logits and the head train.
"""

from __future__ import annotations

import json
import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, EmptyBatchError, LayoutError, MissingTaskError, ParseError
from .numerics import PURPOSE_INIT, Layout, ParamVector, Rng, derive_stream, gaussian_fill, make_layout

CHECKPOINT_VERSION = 1

Key = tuple[int, int]


@dataclass(frozen=True)
class BackboneSpec:
    input_dim: int
    layer_dims: tuple[int, ...]
    activation: str = "relu"
    skip_window: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        L = len(self.layer_dims)
        if L < 2:
            raise ConfigError(f"backbone needs at least 2 layers, got {L}")
        if self.input_dim < 1 or min(self.layer_dims) < 1:
            raise ConfigError("all backbone dimensions must be >= 1")
        if not 1 <= self.skip_window <= L - 1:
            raise ConfigError(f"skip_window must be in [1, {L - 1}], got {self.skip_window}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        return len(self.layer_dims)

    def dim(self, l: int) -> int:
        """Width of ``x_l``; ``l = 0`` is the input."""
        return self.input_dim if l == 0 else self.layer_dims[l - 1]

    def proxy_keys(self) -> tuple[Key, ...]:
        """``(l', l)`` pairs with a proxy branch, ordered by ``l`` then ``l'``."""
        return _proxy_keys(self.depth, self.skip_window)

    def gate_keys(self) -> tuple[Key, ...]:
        """Proxy keys plus the diagonal backbone gates, ordered by ``l`` then ``l'``."""
        return _gate_keys(self.depth, self.skip_window)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "skip_window": self.skip_window,
        }


@functools.lru_cache(maxsize=None)
def _proxy_keys(depth: int, window: int) -> tuple[Key, ...]:
    return tuple((lp, l) for l in range(1, depth + 1) for lp in range(max(l - window, 1), l))


@functools.lru_cache(maxsize=None)
def _gate_keys(depth: int, window: int) -> tuple[Key, ...]:
    keys = []
    for l in range(1, depth + 1):
        keys.extend((lp, l) for lp in range(max(l - window, 1), l))
        keys.append((l, l))
    return tuple(keys)


@dataclass(frozen=True)
class Backbone:
    spec: BackboneSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for l, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.shape != (self.spec.dim(l), self.spec.dim(l - 1)) or b.shape != (self.spec.dim(l),):
                raise LayoutError(f"backbone layer {l} has shape {W.shape}/{b.shape}")
            W.setflags(write=False)
            b.setflags(write=False)


@dataclass(frozen=True)
class TaskAdapter:
    task_id: int
    proxy_weights: Mapping[Key, np.ndarray]
    alpha_logits: Mapping[Key, float]
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def classes(self) -> int:
        return self.head_w.shape[0]

    def gates(self) -> dict[Key, float]:
        return {k: float(1.0 / (1.0 + np.exp(-v))) for k, v in self.alpha_logits.items()}


@dataclass(frozen=True)
class GlobalModel:
    backbone: Backbone
    adapters: Mapping[int, TaskAdapter] = field(default_factory=dict)

    @property
    def spec(self) -> BackboneSpec:
        return self.backbone.spec

    def adapter(self, task: int) -> TaskAdapter:
        try:
            return self.adapters[task]
        except KeyError:
            raise MissingTaskError(f"model has no adapter for task {task}") from None

    def adapter_vector(self, task: int) -> ParamVector:
        return flatten(self.spec, self.adapter(task))

    def with_adapter_vector(self, task: int, vec: ParamVector) -> "GlobalModel":
        adapters = dict(self.adapters)
        adapters[task] = unflatten(self.spec, vec, task)
        return GlobalModel(self.backbone, adapters)

    @property
    def tasks(self) -> list[int]:
        return sorted(self.adapters)


def _proxy_name(key: Key) -> str:
    return f"proxy[{key[0]},{key[1]}]"


@functools.lru_cache(maxsize=256)
def adapter_layout(spec: BackboneSpec, classes: int) -> Layout:
    blocks = [(_proxy_name(k), spec.dim(k[1]) * spec.dim(k[0])) for k in spec.proxy_keys()]
    blocks.append(("alpha", len(spec.gate_keys())))
    blocks.append(("head.w", classes * spec.dim(spec.depth)))
    blocks.append(("head.b", classes))
    return make_layout(blocks)


def flatten(spec: BackboneSpec, adapter: TaskAdapter) -> ParamVector:
    parts = [adapter.proxy_weights[k].ravel() for k in spec.proxy_keys()]
    parts.append(np.array([adapter.alpha_logits[k] for k in spec.gate_keys()], dtype=np.float64))
    parts.append(adapter.head_w.ravel())
    parts.append(adapter.head_b.ravel())
    return ParamVector(adapter_layout(spec, adapter.classes), np.concatenate(parts))


def unflatten(spec: BackboneSpec, vec: ParamVector, task_id: int) -> TaskAdapter:
    classes = vec.block("head.b").shape[0]
    if vec.layout != adapter_layout(spec, classes):
        raise LayoutError("vector layout does not match this backbone")
    proxies = {
        k: vec.block(_proxy_name(k)).reshape(spec.dim(k[1]), spec.dim(k[0])).copy()
        for k in spec.proxy_keys()
    }
    alpha = vec.block("alpha")
    logits = {k: float(alpha[i]) for i, k in enumerate(spec.gate_keys())}
    head_w = vec.block("head.w").reshape(classes, spec.dim(spec.depth)).copy()
    head_b = vec.block("head.b").copy()
    return TaskAdapter(task_id, proxies, logits, head_w, head_b)


def init_model(spec: BackboneSpec, tasks: int, classes_per_task: int, rng: Rng) -> GlobalModel:
    """Draw a random frozen backbone and ``tasks`` fresh adapters from ``rng``."""
    if tasks < 1:
        raise ConfigError("need at least one task")
    weights, biases = [], []
    for l in range(1, spec.depth + 1):
        fan_in = spec.dim(l - 1)
        weights.append(gaussian_fill(rng, spec.dim(l), fan_in, 1.0 / np.sqrt(fan_in)))
        biases.append(np.zeros(spec.dim(l)))
    backbone = Backbone(spec, tuple(weights), tuple(biases))

    d_L = spec.dim(spec.depth)
    adapters = {}
    for t in range(tasks):
        proxies = {}
        for lp, l in spec.proxy_keys():
            fan_in = spec.dim(lp)
            proxies[(lp, l)] = gaussian_fill(rng, spec.dim(l), fan_in, 0.01 / np.sqrt(fan_in))
        logits = {k: 0.0 for k in spec.gate_keys()}
        head_w = gaussian_fill(rng, classes_per_task, d_L, 1.0 / np.sqrt(d_L))
        adapters[t] = TaskAdapter(t, proxies, logits, head_w, np.zeros(classes_per_task))
    return GlobalModel(backbone, adapters)


def _act(name: str, a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0) if name == "relu" else np.tanh(a)


def _act_grad(name: str, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (a > 0.0).astype(np.float64)
    return 1.0 - g * g


@dataclass
class Trace:
    """Activations cached by the forward pass (batch rows)."""

    gates: dict[Key, float]
    xs: list[np.ndarray]  # x_0 .. x_L
    pre: list[np.ndarray]  # W_l x_{l-1} + b_l, index l-1
    backbone_out: list[np.ndarray]  # G_l(x_{l-1}), index l-1
    proxy_out: dict[Key, np.ndarray]


def _forward_batch(
    backbone: Backbone, adapter: TaskAdapter, X: np.ndarray, gates: Mapping[Key, float] | None = None
) -> tuple[np.ndarray, Trace]:
    spec = backbone.spec
    g = adapter.gates() if gates is None else dict(gates)
    xs = [X]
    pre, bout, pout = [], [], {}
    window = spec.skip_window
    for l in range(1, spec.depth + 1):
        a = xs[l - 1] @ backbone.weights[l - 1].T + backbone.biases[l - 1]
        h = _act(spec.activation, a)
        x = g[(l, l)] * h
        for lp in range(max(l - window, 1), l):
            p = xs[lp] @ adapter.proxy_weights[(lp, l)].T
            pout[(lp, l)] = p
            x = x + g[(lp, l)] * p
        pre.append(a)
        bout.append(h)
        xs.append(x)
    logits = xs[-1] @ adapter.head_w.T + adapter.head_b
    return logits, Trace(g, xs, pre, bout, pout)


def forward(
    model: GlobalModel, task: int, x: np.ndarray, gates: Mapping[Key, float] | None = None
) -> tuple[np.ndarray, Trace]:
    """Logits for one input vector (or a batch of rows) under ``task``.

    ``gates`` overrides the logistic gate values; it exists so tests can pin
    gates to exact 0/1.
    """
    adapter = model.adapter(task)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.spec.input_dim:
        raise LayoutError(f"expected {model.spec.input_dim} input features, got {x.shape[-1]}")
    if x.ndim == 1:
        logits, trace = _forward_batch(model.backbone, adapter, x[None, :], gates)
        return logits[0], trace
    return _forward_batch(model.backbone, adapter, x, gates)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def adapter_loss_and_grad(
    backbone: Backbone, adapter: TaskAdapter, X: np.ndarray, y: np.ndarray
) -> tuple[float, ParamVector]:
    spec = backbone.spec
    n = X.shape[0]
    if n == 0:
        raise EmptyBatchError("loss_and_grad needs at least one sample")
    y = np.asarray(y, dtype=np.int64)
    logits, tr = _forward_batch(backbone, adapter, X)
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    head_w_grad = dlogits.T @ tr.xs[-1]
    head_b_grad = dlogits.sum(axis=0)

    L = spec.depth
    dxs = [None] * (L + 1)
    dxs[L] = dlogits @ adapter.head_w
    proxy_grads: dict[Key, np.ndarray] = {}
    logit_grads: dict[Key, float] = {}
    for l in range(L, 0, -1):
        dx = dxs[l]
        # d gate / d logit = s (1 - s)
        s = tr.gates[(l, l)]
        logit_grads[(l, l)] = s * (1.0 - s) * float(np.sum(dx * tr.backbone_out[l - 1]))
        if l > 1:
            dh = s * dx
            da = dh * _act_grad(spec.activation, tr.pre[l - 1], tr.backbone_out[l - 1])
            _accumulate(dxs, l - 1, da @ backbone.weights[l - 1])
        for lp in range(max(l - spec.skip_window, 1), l):
            key = (lp, l)
            s = tr.gates[key]
            logit_grads[key] = s * (1.0 - s) * float(np.sum(dx * tr.proxy_out[key]))
            proxy_grads[key] = s * (dx.T @ tr.xs[lp])
            _accumulate(dxs, lp, s * (dx @ adapter.proxy_weights[key]))

    parts = [proxy_grads[k].ravel() for k in spec.proxy_keys()]
    parts.append(np.array([logit_grads[k] for k in spec.gate_keys()]))
    parts.append(head_w_grad.ravel())
    parts.append(head_b_grad)
    grad = ParamVector(adapter_layout(spec, adapter.classes), np.concatenate(parts))
    return loss, grad


def _accumulate(dxs: list, l: int, value: np.ndarray) -> None:
    dxs[l] = value if dxs[l] is None else dxs[l] + value


def loss_and_grad(model: GlobalModel, task: int, batch: tuple[np.ndarray, np.ndarray]) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy on ``batch`` and its gradient over the task adapter."""
    X, y = batch
    return adapter_loss_and_grad(model.backbone, model.adapter(task), np.asarray(X, dtype=np.float64), y)


def predict(model: GlobalModel, task: int, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward_batch(model.backbone, model.adapter(task), np.asarray(X, dtype=np.float64))
    return np.argmax(logits, axis=1)


def accuracy(model: GlobalModel, task: int, test: tuple[np.ndarray, np.ndarray]) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    X, y = test
    if len(y) == 0:
        raise EmptyBatchError("accuracy needs a nonempty test set")
    return float(np.mean(predict(model, task, X) == np.asarray(y)))


# -- checkpoints -------------------------------------------------------------

def _enc(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel()]}


def _dec(d: dict) -> np.ndarray:
    return np.array([float.fromhex(h) for h in d["hex"]], dtype=np.float64).reshape(d["shape"])


def model_to_dict(model: GlobalModel) -> dict:
    spec = model.spec
    return {
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "backbone": [
            {"W": _enc(W), "b": _enc(b)} for W, b in zip(model.backbone.weights, model.backbone.biases)
        ],
        "adapters": {str(t): _enc(flatten(spec, model.adapters[t]).data) for t in model.tasks},
        "classes": {str(t): model.adapters[t].classes for t in model.tasks},
    }


def model_from_dict(doc: dict) -> GlobalModel:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')!r}")
    s = doc["spec"]
    spec = BackboneSpec(s["input_dim"], tuple(s["layer_dims"]), s["activation"], s["skip_window"])
    backbone = Backbone(
        spec, tuple(_dec(l["W"]) for l in doc["backbone"]), tuple(_dec(l["b"]) for l in doc["backbone"])
    )
    adapters = {}
    for key, enc in doc["adapters"].items():
        t = int(key)
        layout = adapter_layout(spec, int(doc["classes"][key]))
        adapters[t] = unflatten(spec, ParamVector(layout, _dec(enc)), t)
    return GlobalModel(backbone, adapters)


def save_model(model: GlobalModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path: str | Path) -> GlobalModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def init_from_seed(spec: BackboneSpec, tasks: int, classes_per_task: int, master_seed: int) -> GlobalModel:
    return init_model(spec, tasks, classes_per_task, derive_stream(master_seed, 0, 0, PURPOSE_INIT))
