"""Seeded random streams, parameter vectors and distances.

Every random draw in the simulator comes from an :class:`Rng` obtained with
:func:`derive_stream`, keyed by ``(master_seed, round, client_id, purpose)``.
The underlying bit generator is Philox (counter based), so a stream's output
depends only on its key and never on how many other streams were consumed
before it.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import LayoutError, UndefinedDistanceError

MASK64 = (1 << 64) - 1

# stream purposes
PURPOSE_INIT = 0
PURPOSE_DATA = 1
PURPOSE_SPLIT = 2
PURPOSE_PARTITION = 3
PURPOSE_SCHEDULE = 4
PURPOSE_TASK = 5
PURPOSE_STRAGGLER = 6
PURPOSE_TRAIN = 7


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _mix(*words: int) -> int:
    h = 0
    for w in words:
        h = splitmix64(h ^ (w & MASK64))
    return h


@dataclass
class Rng:
    """A seeded random stream.

    ``state`` and ``stream_id`` together form the 128-bit Philox key. The
    object is stateful (draws advance it); use :meth:`clone` to fork a copy
    that replays the same sequence.
    """

    state: int
    stream_id: int
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.state &= MASK64
        self.stream_id &= MASK64
        key = self.state | (self.stream_id << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def clone(self) -> "Rng":
        return copy.deepcopy(self)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def dirichlet(self, alpha: Sequence[float]) -> np.ndarray:
        return self._gen.dirichlet(alpha)


def derive_stream(master_seed: int, round: int, client_id: int, purpose: int) -> Rng:
    """Return the stream for ``(round, client_id, purpose)`` under ``master_seed``."""
    stream_id = _mix(0x46434C53, round, client_id, purpose)
    return Rng(state=master_seed, stream_id=stream_id)


def gaussian_fill(rng: Rng, rows: int, cols: int, scale: float) -> np.ndarray:
    """Return a ``rows x cols`` float64 matrix of i.i.d. N(0, scale**2) entries."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols))
    return rng.normal((rows, cols)) * scale


Layout = tuple[tuple[str, int, int], ...]


def make_layout(blocks: Iterable[tuple[str, int]]) -> Layout:
    """Build a contiguous layout from ``(name, length)`` pairs."""
    out = []
    offset = 0
    for name, length in blocks:
        out.append((name, offset, int(length)))
        offset += int(length)
    return tuple(out)


def layout_size(layout: Layout) -> int:
    if not layout:
        return 0
    name, offset, length = layout[-1]
    return offset + length


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 vector with a named block layout.

    Arithmetic between two vectors requires identical layouts and is executed
    elementwise in layout order.
    """

    layout: Layout
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 1:
            raise LayoutError("ParamVector data must be one-dimensional")
        expected = 0
        for name, offset, length in self.layout:
            if offset != expected or length < 0:
                raise LayoutError(f"block {name!r} is not contiguous at offset {offset}")
            expected = offset + length
        if expected != data.shape[0]:
            raise LayoutError(f"layout covers {expected} entries but data has {data.shape[0]}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, layout: Layout) -> "ParamVector":
        return cls(layout, np.zeros(layout_size(layout)))

    @classmethod
    def full(cls, layout: Layout, value: float) -> "ParamVector":
        return cls(layout, np.full(layout_size(layout), float(value)))

    def __len__(self) -> int:
        return self.data.shape[0]

    def block(self, name: str) -> np.ndarray:
        for n, offset, length in self.layout:
            if n == name:
                return self.data[offset:offset + length]
        raise KeyError(name)

    def check_layout(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise LayoutError("parameter vectors have different layouts")

    def _binary(self, other, op) -> "ParamVector":
        if isinstance(other, ParamVector):
            self.check_layout(other)
            return ParamVector(self.layout, op(self.data, other.data))
        return ParamVector(self.layout, op(self.data, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return ParamVector(self.layout, -self.data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]

    def dot(self, other: "ParamVector") -> float:
        self.check_layout(other)
        return float(np.dot(self.data, other.data))

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.data, self.data)))


def euclid_sq(a: ParamVector, b: ParamVector) -> float:
    a.check_layout(b)
    d = a.data - b.data
    return float(np.dot(d, d))


def cosine_dist(a: ParamVector, b: ParamVector) -> float:
    """``1 - cos(a, b)``, clipped to [0, 2]."""
    a.check_layout(b)
    return cosine_dist_arrays(a.data, b.data)


def cosine_dist_arrays(a: np.ndarray, b: np.ndarray) -> float:
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise UndefinedDistanceError("cosine distance is undefined for a zero vector")
    cos = float(np.dot(a, b)) / (na * nb)
    return min(2.0, max(0.0, 1.0 - cos))
