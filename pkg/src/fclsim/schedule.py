"""Task-ordering regimes and per-round participant sets.

Tasks are 0-indexed; rounds and phases are 1-indexed. Phase ``p = ceil(r / Q)``
maps to task ``p - 1`` in the synchronous case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import ConfigError
from .numerics import PURPOSE_SCHEDULE, PURPOSE_TASK, Rng, derive_stream


class OrderingCase(str, Enum):
    FMTL = "fmtl"  # case 1: task drawn uniformly at random every round
    SYNC_FCL = "sync_fcl"  # case 2: common task order
    ASYNC_FCL = "async_fcl"  # case 3: per-client permutation

    @classmethod
    def parse(cls, value: "str | OrderingCase") -> "OrderingCase":
        aliases = {"sync": cls.SYNC_FCL, "async": cls.ASYNC_FCL, "1": cls.FMTL, "2": cls.SYNC_FCL, "3": cls.ASYNC_FCL}
        if isinstance(value, str) and value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown ordering case {value!r}") from None


@dataclass(frozen=True)
class Schedule:
    R: int
    T: int
    N: int
    case: OrderingCase
    master_seed: int
    permutations: tuple[tuple[int, ...], ...] | None = None

    @property
    def Q(self) -> int:
        return self.R // self.T

    def phase(self, r: int) -> int:
        return -(-r // self.Q)

    def is_phase_start(self, r: int) -> bool:
        return (r - 1) % self.Q == 0


def build_schedule(R: int, T: int, N: int, case: OrderingCase | str, rng: Rng) -> Schedule:
    """Validate ``Q = R / T`` and, for the asynchronous case, draw one permutation per client.

    The per-round draws of case 1 come from streams keyed by ``rng.state``
    (the master seed), so they do not depend on call order.
    """
    case = OrderingCase.parse(case)
    if T < 1 or R < 1 or R % T:
        raise ConfigError(f"rounds R={R} must be a positive multiple of tasks T={T}")
    if N < 1:
        raise ConfigError("need at least one client")
    perms = None
    if case is OrderingCase.ASYNC_FCL:
        perms = tuple(tuple(int(t) for t in rng.permutation(T)) for _ in range(N))
    return Schedule(R, T, N, case, rng.state, perms)


def schedule_stream(master_seed: int) -> Rng:
    return derive_stream(master_seed, 0, 0, PURPOSE_SCHEDULE)


def task_for(schedule: Schedule, r: int, c: int, rng: Rng | None = None) -> int:
    """Task trained by client ``c`` in round ``r``.

    ``rng`` is only consulted in case 1; by default the ``(round, client)``
    task stream under the schedule's master seed is used.
    """
    if not 1 <= r <= schedule.R:
        raise ConfigError(f"round {r} outside 1..{schedule.R}")
    if schedule.case is OrderingCase.FMTL:
        if rng is None:
            rng = derive_stream(schedule.master_seed, r, c, PURPOSE_TASK)
        return int(rng.integers(schedule.T))
    p = schedule.phase(r)
    if schedule.case is OrderingCase.SYNC_FCL:
        return p - 1
    return schedule.permutations[c][p - 1]


def participants(schedule: Schedule, r: int, surviving: Sequence[int]) -> dict[int, list[int]]:
    """Group surviving clients by their assigned task; tasks with no clients are omitted."""
    groups: dict[int, list[int]] = {}
    for c in sorted(surviving):
        groups.setdefault(task_for(schedule, r, c), []).append(c)
    return dict(sorted(groups.items()))


def assignment_table(schedule: Schedule) -> list[list[int]]:
    """``table[r - 1][c]`` is the task of client ``c`` in round ``r``."""
    return [[task_for(schedule, r, c) for c in range(schedule.N)] for r in range(1, schedule.R + 1)]


def dump_schedule(schedule: Schedule, path: str | Path) -> None:
    doc = {
        "R": schedule.R,
        "T": schedule.T,
        "Q": schedule.Q,
        "N": schedule.N,
        "case": schedule.case.value,
        "permutations": [list(p) for p in schedule.permutations] if schedule.permutations else None,
        "assignments": assignment_table(schedule),
    }
    Path(path).write_text(json.dumps(doc))
