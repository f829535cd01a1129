"""Datasets, task splits and client partitions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ParseError
from .numerics import Rng


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X has shape {X.shape} but there are {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.class_count)


@dataclass(frozen=True)
class TaskData:
    classes: tuple[int, ...]
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class TaskSplit:
    tasks: tuple[TaskData, ...]

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, t: int) -> TaskData:
        return self.tasks[t]

    def __iter__(self) -> Iterator[TaskData]:
        return iter(self.tasks)

    @property
    def classes_per_task(self) -> int:
        return len(self.tasks[0].classes)


@dataclass(frozen=True)
class ClientPartition:
    """``shards[(task, client)]`` indexes into that task's train set."""

    shards: dict[tuple[int, int], np.ndarray]
    num_clients: int

    def shard(self, task: int, client: int) -> np.ndarray:
        return self.shards[(task, client)]

    def to_manifest(self) -> dict:
        out: dict[str, dict[str, list[int]]] = {}
        for (t, c), idx in sorted(self.shards.items()):
            out.setdefault(str(t), {})[str(c)] = [int(i) for i in idx]
        return out

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest()))


def synth_blobs(classes: int, dim: int, per_class: int, spread: float, rng: Rng) -> Dataset:
    """Gaussian blobs around class means drawn uniformly on the unit sphere."""
    if classes < 2:
        raise ConfigError("synth_blobs needs at least 2 classes")
    if not spread > 0:
        raise ConfigError("spread must be positive")
    means = rng.normal((classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    y = np.repeat(np.arange(classes), per_class)
    X = means[y] + spread * rng.normal((classes * per_class, dim))
    return Dataset(X, y, classes)


def load_csv(path: str | Path) -> Dataset:
    """Read rows of ``label,f1,...,fd``."""
    labels: list[int] = []
    rows: list[list[float]] = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            try:
                label = int(fields[0])
            except ValueError:
                raise ParseError(f"label {fields[0]!r} is not an integer", lineno) from None
            if label < 0:
                raise ParseError(f"negative label {label}", lineno)
            try:
                feats = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", lineno) from None
            if width is None:
                width = len(feats)
                if width == 0:
                    raise ParseError("row has no features", lineno)
            elif len(feats) != width:
                raise ParseError(f"expected {width} features, found {len(feats)}", lineno)
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path} contains no data rows")
    y = np.array(labels, dtype=np.int64)
    return Dataset(np.array(rows), y, int(y.max()) + 1)


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for label, row in zip(ds.y, ds.X):
            fh.write(",".join([str(int(label))] + [format(float(v), ".17g") for v in row]) + "\n")


def split_tasks(
    ds: Dataset, T: int, test_fraction: float, rng: Rng, shuffle_classes: bool = False
) -> TaskSplit:
    """Assign classes to ``T`` tasks in ascending blocks and hold out a stratified test split."""
    if T < 1 or ds.class_count % T:
        raise ConfigError(f"class count {ds.class_count} is not divisible by task count {T}")
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    per_task = ds.class_count // T
    order = rng.permutation(ds.class_count) if shuffle_classes else np.arange(ds.class_count)
    tasks = []
    for t in range(T):
        classes = tuple(int(c) for c in order[t * per_task:(t + 1) * per_task])
        train_idx, test_idx = [], []
        for c in classes:
            idx = np.flatnonzero(ds.y == c)
            idx = idx[rng.permutation(idx.size)]
            n_test = int(round(test_fraction * idx.size))
            test_idx.append(idx[:n_test])
            train_idx.append(idx[n_test:])
        remap = np.full(ds.class_count, -1, dtype=np.int64)
        remap[list(classes)] = np.arange(per_task)
        train = np.sort(np.concatenate(train_idx))
        test = np.sort(np.concatenate(test_idx))
        tasks.append(
            TaskData(
                classes,
                Dataset(ds.X[train], remap[ds.y[train]], per_task),
                Dataset(ds.X[test], remap[ds.y[test]], per_task),
            )
        )
    return TaskSplit(tuple(tasks))


def partition_iid(split: TaskSplit, N: int, rng: Rng) -> ClientPartition:
    """Shuffle each task's train indices and deal them round-robin to ``N`` clients."""
    if N < 1:
        raise ConfigError("need at least one client")
    shards = {}
    for t, task in enumerate(split):
        perm = rng.permutation(len(task.train))
        for c in range(N):
            shards[(t, c)] = np.sort(perm[c::N])
    return ClientPartition(shards, N)


def largest_remainder(p: np.ndarray, total: int) -> np.ndarray:
    """Integer counts proportional to ``p`` that sum exactly to ``total``."""
    raw = np.asarray(p, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort: ties go to the lower client id
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_dirichlet(split: TaskSplit, N: int, alpha: float, rng: Rng) -> ClientPartition:
    """Per class, draw client proportions from Dirichlet(alpha) and deal accordingly."""
    if not alpha > 0:
        raise ConfigError(f"Dirichlet alpha must be positive, got {alpha}")
    if N < 1:
        raise ConfigError("need at least one client")
    shards: dict[tuple[int, int], np.ndarray] = {}
    for t, task in enumerate(split):
        parts: list[list[np.ndarray]] = [[] for _ in range(N)]
        for c in range(task.train.class_count):
            idx = np.flatnonzero(task.train.y == c)
            idx = idx[rng.permutation(idx.size)]
            p = rng.dirichlet([alpha] * N) if N > 1 else np.ones(1)
            counts = largest_remainder(p, idx.size)
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(N):
                parts[k].append(idx[bounds[k]:bounds[k + 1]])
        for k in range(N):
            shards[(t, k)] = np.sort(np.concatenate(parts[k])).astype(np.int64)
    return ClientPartition(shards, N)
