"""Accuracy matrix, ACC / BWT_f, client drift and cosine drift."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import TaskSplit
from .errors import ProtocolError, UndefinedMetricError
from .model import GlobalModel, accuracy
from .numerics import cosine_dist_arrays


def fmt(x: float | None) -> str:
    return "" if x is None else format(float(x), ".17g")


class AccuracyMatrix:
    """``T x R`` test accuracies; column ``r`` (1-indexed) is filled once after round ``r``."""

    def __init__(self, T: int, R: int):
        self.T = T
        self.R = R
        self.A = np.full((T, R), np.nan)

    def __getitem__(self, idx: tuple[int, int]) -> float:
        t, r = idx
        return float(self.A[t, r - 1])

    def filled(self, r: int) -> bool:
        return not np.isnan(self.A[:, r - 1]).all()

    @property
    def complete(self) -> bool:
        return not np.isnan(self.A).any()

    def set_column(self, r: int, values: Sequence[float]) -> None:
        if not 1 <= r <= self.R:
            raise ProtocolError(f"round {r} outside 1..{self.R}")
        if self.filled(r):
            raise ProtocolError(f"accuracy column for round {r} is already filled")
        col = np.asarray(values, dtype=np.float64)
        if col.shape != (self.T,) or np.any((col < 0) | (col > 1)):
            raise ValueError("accuracy column must hold T values in [0, 1]")
        self.A[:, r - 1] = col

    @classmethod
    def from_array(cls, A: np.ndarray) -> "AccuracyMatrix":
        A = np.asarray(A, dtype=np.float64)
        m = cls(*A.shape)
        for r in range(1, A.shape[1] + 1):
            m.set_column(r, A[:, r - 1])
        return m

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task"] + [f"r{r}" for r in range(1, self.R + 1)])
            for t in range(self.T):
                w.writerow([t] + [fmt(v) for v in self.A[t]])

    @classmethod
    def read_csv(cls, path: str | Path) -> "AccuracyMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return cls.from_array(np.array([[float(v) for v in row[1:]] for row in rows[1:]]))


def record_round(A: AccuracyMatrix, r: int, model: GlobalModel, split: TaskSplit) -> AccuracyMatrix:
    if 1 <= r <= A.R and A.filled(r):
        raise ProtocolError(f"accuracy column for round {r} is already filled")
    A.set_column(r, [accuracy(model, t, (task.test.X, task.test.y)) for t, task in enumerate(split)])
    return A


def _require_complete(A: AccuracyMatrix) -> None:
    if not A.complete:
        raise ProtocolError("accuracy matrix is incomplete")


def acc(A: AccuracyMatrix) -> float:
    """Mean test accuracy over tasks after the final round."""
    _require_complete(A)
    return float(np.mean(A.A[:, -1]))


def bwt_f(A: AccuracyMatrix, Q: int, mode: str = "literal") -> float:
    """Federated backward transfer.

    ``literal``: ``sum_t sum_{p=1..T} (A[t, pQ] - A[t, pQ-1]) / T**2``.
    ``boundary``: ``sum_t sum_{p=1..T-1} (A[t, pQ+1] - A[t, pQ]) / T**2``, the
    change across each phase boundary.
    Columns are 1-indexed rounds.
    """
    _require_complete(A)
    T = A.T
    if Q * T != A.R:
        raise UndefinedMetricError(f"Q={Q} times T={T} does not equal R={A.R}")
    if mode == "literal":
        if Q < 2:
            raise UndefinedMetricError("BWT_f needs Q >= 2 (column pQ-1 leaves the phase)")
        pairs = [(p * Q, p * Q - 1) for p in range(1, T + 1)]
    elif mode == "boundary":
        pairs = [(p * Q + 1, p * Q) for p in range(1, T)]
    else:
        raise ValueError(f"unknown BWT_f mode {mode!r}")
    total = 0.0
    for t in range(T):
        for hi, lo in pairs:
            total += A.A[t, hi - 1] - A.A[t, lo - 1]
    return total / (T * T)


def round_drift(drift_samples: Sequence[Sequence[float]], K: int) -> float | None:
    """Mean squared distance over every (client, epoch) sample; ``None`` with no survivors.

    ``drift_samples`` holds one list of ``K`` per-epoch samples per surviving client.
    """
    if not drift_samples:
        return None
    if any(len(s) != K for s in drift_samples):
        raise ValueError(f"each client must contribute exactly K={K} samples")
    total = 0.0
    for samples in drift_samples:
        for s in samples:
            total += s
    return total / (K * len(drift_samples))


def head_weights(model: GlobalModel, task: int) -> np.ndarray:
    return model.adapter(task).head_w.ravel()


def cosine_drift(prev_model: GlobalModel, cur_model: GlobalModel) -> dict[int, float]:
    """Per task cosine distance between consecutive server classifier heads."""
    return {
        t: cosine_dist_arrays(head_weights(prev_model, t), head_weights(cur_model, t))
        for t in cur_model.tasks
    }


@dataclass
class DriftSeries:
    T: int
    client_drift: list[float | None] = field(default_factory=list)
    cosine: list[dict[int, float]] = field(default_factory=list)

    def append(self, client_drift: float | None, cos: Mapping[int, float]) -> None:
        self.client_drift.append(client_drift)
        self.cosine.append(dict(cos))

    def cosine_matrix(self) -> np.ndarray:
        """``T x R`` array of consecutive-round cosine distances."""
        return np.array([[c[t] for c in self.cosine] for t in range(self.T)])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "eq2_drift"] + [f"cos_t{t + 1}" for t in range(self.T)])
            for r, (e, c) in enumerate(zip(self.client_drift, self.cosine), start=1):
                w.writerow([r, fmt(e)] + [fmt(c[t]) for t in range(self.T)])


def spike_ratios(
    cosine: np.ndarray, Q: int, updated: np.ndarray | None = None
) -> list[float | None]:
    """Per task: max boundary-round cosine distance over the median within-phase distance.

    ``cosine[t, r-1]`` is the distance between the server heads after rounds
    ``r-1`` and ``r``. Boundary rounds are the first rounds of phases 2..T;
    within-phase rounds are all others after round 1. When ``updated`` (same
    shape, bool) is given, only rounds in which the task was actually updated
    count. A task without usable rounds, or with a zero median, gets ``None``.
    """
    T, R = cosine.shape
    if updated is None:
        updated = np.ones_like(cosine, dtype=bool)
    out: list[float | None] = []
    for t in range(T):
        boundary, within = [], []
        for r in range(2, R + 1):
            if not updated[t, r - 1]:
                continue
            (boundary if (r - 1) % Q == 0 else within).append(float(cosine[t, r - 1]))
        if not boundary or not within:
            out.append(None)
            continue
        med = statistics.median(within)
        out.append(None if med == 0 else max(boundary) / med)
    return out
