"""Client local training and the FedOpt server-side aggregation family."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, LayoutError
from .model import GlobalModel, adapter_loss_and_grad, unflatten
from .numerics import ParamVector, Rng, euclid_sq

BYTES_PER_SCALAR = 8


class ServerKind(str, Enum):
    FEDSGD = "fedsgd"
    FEDADAM = "fedadam"
    FEDADAGRAD = "fedadagrad"
    FEDYOGI = "fedyogi"

    @property
    def adaptive(self) -> bool:
        return self is not ServerKind.FEDSGD


class Weighting(str, Enum):
    SAMPLE_WEIGHTED = "sample_weighted"
    UNWEIGHTED_MEAN = "unweighted_mean"
    UNWEIGHTED_SUM = "unweighted_sum"


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    task_id: int
    delta: ParamVector
    sample_count: int
    upload_bytes: int

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("a client update needs at least one sample")


@dataclass
class ServerOptState:
    """Server optimizer hyperparameters plus per-task first and second moments.

    ``momentum[t]`` and ``second_moment[t]`` are created on the first step for
    task ``t`` (zeros and ``tau**2`` respectively) and persist while a task is
    dormant.
    """

    kind: ServerKind = ServerKind.FEDADAM
    eta: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.99
    tau: float = 1e-3
    momentum: dict[int, ParamVector] = field(default_factory=dict)
    second_moment: dict[int, ParamVector] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = ServerKind(self.kind)
        if self.kind.adaptive and not self.tau > 0:
            raise ConfigError(f"tau must be positive for {self.kind.value}, got {self.tau}")
        if not self.eta > 0:
            raise ConfigError(f"server learning rate must be positive, got {self.eta}")
        if not 0 <= self.beta1 < 1:
            raise ConfigError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0 <= self.beta2 < 1:
            raise ConfigError(f"beta2 must be in [0, 1), got {self.beta2}")


@dataclass(frozen=True)
class StragglerPolicy:
    drop_prob: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError(f"drop_prob must be in [0, 1], got {self.drop_prob}")


def local_train(
    model_copy: GlobalModel,
    task: int,
    shard: tuple[np.ndarray, np.ndarray],
    K: int,
    mu: float,
    batch_size: int | None,
    rng: Rng,
    client_id: int = 0,
) -> tuple[ClientUpdate, list[float]] | None:
    """Run ``K`` epochs of mini-batch SGD on the task adapter.

    Returns the update and one squared distance from the starting adapter per
    epoch, or ``None`` when the shard is empty (the client sits the round out).
    ``batch_size`` of ``None`` or ``0`` means full batch.
    """
    X, y = shard
    n = len(y)
    if n == 0:
        return None
    if K < 1:
        raise ConfigError("K must be >= 1")
    if mu < 0:
        raise ConfigError("client learning rate must be nonnegative")
    spec = model_copy.spec
    backbone = model_copy.backbone
    start = model_copy.adapter_vector(task)
    current = start
    adapter = model_copy.adapter(task)
    bs = n if not batch_size else min(int(batch_size), n)
    drift = []
    for _ in range(K):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            _, grad = adapter_loss_and_grad(backbone, adapter, X[idx], y[idx])
            current = current - mu * grad
            adapter = unflatten(spec, current, task)
        drift.append(euclid_sq(current, start))
    delta = current - start
    update = ClientUpdate(client_id, task, delta, n, len(delta) * BYTES_PER_SCALAR)
    return update, drift


def aggregate_pseudo_gradient(
    updates: Sequence[ClientUpdate], weighting: Weighting | str = Weighting.SAMPLE_WEIGHTED
) -> ParamVector | None:
    """Combine client deltas into one pseudo-gradient (``None`` for no updates).

    Summation runs in ascending ``client_id`` order regardless of arrival order.
    """
    if not updates:
        return None
    weighting = Weighting(weighting)
    ordered = sorted(updates, key=lambda u: u.client_id)
    task = ordered[0].task_id
    layout = ordered[0].delta.layout
    for u in ordered:
        if u.task_id != task or u.delta.layout != layout:
            raise LayoutError("cannot aggregate updates from different tasks or layouts")
    acc = np.zeros(len(ordered[0].delta))
    if weighting is Weighting.SAMPLE_WEIGHTED:
        total = 0
        for u in ordered:
            acc = acc + u.sample_count * u.delta.data
            total += u.sample_count
        acc = acc / total
    else:
        for u in ordered:
            acc = acc + u.delta.data
        if weighting is Weighting.UNWEIGHTED_MEAN:
            acc = acc / len(ordered)
    return ParamVector(layout, acc)


def update_second_moment(kind: ServerKind, v: np.ndarray, d: np.ndarray, beta2: float) -> np.ndarray:
    """Second-moment rule for the adaptive kinds, elementwise on arrays."""
    d2 = d * d
    if kind is ServerKind.FEDADAGRAD:
        return v + d2
    if kind is ServerKind.FEDYOGI:
        return v - (1.0 - beta2) * d2 * np.sign(v - d2)
    if kind is ServerKind.FEDADAM:
        return beta2 * v + (1.0 - beta2) * d2
    raise ValueError(f"{kind.value} has no second moment")


def server_step(
    state: ServerOptState, server_adapter: ParamVector, task: int, g: ParamVector
) -> tuple[ServerOptState, ParamVector]:
    """Apply one server optimizer step for ``task``; mutates and returns ``state``."""
    server_adapter.check_layout(g)
    m = state.momentum.get(task)
    if m is None:
        m = ParamVector.zeros(g.layout)
    m.check_layout(g)
    m = ParamVector(g.layout, state.beta1 * m.data + (1.0 - state.beta1) * g.data)
    state.momentum[task] = m
    if state.kind is ServerKind.FEDSGD:
        return state, ParamVector(g.layout, server_adapter.data + state.eta * m.data)

    v = state.second_moment.get(task)
    if v is None:
        v = ParamVector.full(g.layout, state.tau * state.tau)
    v = ParamVector(g.layout, update_second_moment(state.kind, v.data, m.data, state.beta2))
    state.second_moment[task] = v
    step = state.eta * m.data / (np.sqrt(np.maximum(v.data, 0.0)) + state.tau)
    return state, ParamVector(g.layout, server_adapter.data + step)


def apply_stragglers(participants: Sequence[int], policy: StragglerPolicy, rng: Rng) -> list[int]:
    """Drop each client independently with probability ``policy.drop_prob``."""
    participants = list(participants)
    if not participants:
        return []
    u = rng.random(len(participants))
    return [c for c, x in zip(participants, u) if not x < policy.drop_prob]


def comm_bytes(
    round_updates: Sequence[ClientUpdate], broadcast_param_count: int, recipients: int | None = None
) -> tuple[int, int]:
    """Client-to-server and server-to-client bytes for one round.

    ``recipients`` defaults to the number of distinct clients among the updates.
    """
    c2s = sum(u.upload_bytes for u in round_updates)
    if recipients is None:
        recipients = len({u.client_id for u in round_updates})
    s2c = broadcast_param_count * BYTES_PER_SCALAR * recipients
    return c2s, s2c
