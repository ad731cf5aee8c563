"""Box geometry: boxes, sub-box partitions, dyadic boxes and the torus metric.

Conventions
-----------
A box of side ``N`` is the point set ``{0..N-1}^2`` shifted by ``origin``.
Its boundary is the outermost ring; interior points have all four lattice
neighbours inside the box. Arrays over a box are indexed ``values[x, y]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .errors import DomainError, InvalidPartitionError


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class BoxSpec:
    """Square lattice box.

    ``dyadic=False`` lifts the power-of-two requirement; it exists for the
    oracle layer, which also needs tiny boxes such as the 3x3 box with a
    single interior point.
    """

    side_length: int
    origin: tuple[int, int] = (0, 0)
    dyadic: bool = True

    def __post_init__(self):
        if int(self.side_length) != self.side_length or self.side_length < 1:
            raise DomainError(f"side length must be a positive integer, got {self.side_length}")
        if self.dyadic and not is_power_of_two(self.side_length):
            raise DomainError(f"side length {self.side_length} is not a power of 2")
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def N(self) -> int:
        return self.side_length

    @property
    def n(self) -> int:
        """log2 of the side length (dyadic boxes only)."""
        if not is_power_of_two(self.side_length):
            raise DomainError("log2 side length is only defined for dyadic boxes")
        return self.side_length.bit_length() - 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.side_length, self.side_length)

    @property
    def interior_side(self) -> int:
        return max(self.side_length - 2, 0)

    def contains(self, p) -> bool:
        x, y = p[0] - self.origin[0], p[1] - self.origin[1]
        return 0 <= x < self.side_length and 0 <= y < self.side_length

    def is_boundary(self, p) -> bool:
        x, y = p[0] - self.origin[0], p[1] - self.origin[1]
        s = self.side_length - 1
        return self.contains(p) and (x in (0, s) or y in (0, s))

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def points(self) -> np.ndarray:
        """All points in row-major order, shape (N*N, 2), absolute coordinates."""
        xs, ys = np.meshgrid(np.arange(self.N), np.arange(self.N), indexing="ij")
        return np.stack([xs.ravel(), ys.ravel()], axis=1) + np.asarray(self.origin)

    def boundary_points(self) -> np.ndarray:
        return self.points()[self.boundary_mask().ravel()]

    def interior_points(self) -> np.ndarray:
        return self.points()[self.interior_mask().ravel()]

    def local(self, p) -> tuple[int, int]:
        return (int(p[0]) - self.origin[0], int(p[1]) - self.origin[1])


@dataclass(frozen=True)
class SubBoxPartition:
    """Split of ``parent`` into ``K*K`` disjoint sub-boxes of side ``N/K``.

    ``delta`` selects the delta-interior of each sub-box: the points at L-inf
    distance at least ``ceil(delta*N/K)`` from the sub-box boundary ring.
    """

    parent: BoxSpec
    K: int
    delta: float = 0.0

    def __post_init__(self):
        N = self.parent.N
        if not is_power_of_two(self.K):
            raise InvalidPartitionError(f"K={self.K} is not a power of 2")
        if self.K >= N and N > 1:
            raise InvalidPartitionError(f"K={self.K} must be smaller than N={N}")
        if N % self.K:
            raise InvalidPartitionError(f"K={self.K} does not divide N={N}")
        if not 0.0 <= self.delta < 0.5:
            raise InvalidPartitionError(f"delta={self.delta} outside [0, 1/2)")

    @property
    def sub_side(self) -> int:
        return self.parent.N // self.K

    @property
    def margin(self) -> int:
        return math.ceil(Fraction(self.delta) * self.parent.N / self.K)

    def __len__(self) -> int:
        return self.K * self.K

    def index_of(self, p) -> int:
        x, y = self.parent.local(p)
        s = self.sub_side
        return (x // s) * self.K + (y // s)

    def subbox(self, i: int) -> BoxSpec:
        if not 0 <= i < self.K * self.K:
            raise DomainError(f"sub-box index {i} out of range")
        s = self.sub_side
        ox, oy = self.parent.origin
        return BoxSpec(s, (ox + (i // self.K) * s, oy + (i % self.K) * s), dyadic=self.parent.dyadic)

    def __iter__(self) -> Iterator[tuple[int, BoxSpec]]:
        for i in range(self.K * self.K):
            yield i, self.subbox(i)

    def ring_distance(self) -> np.ndarray:
        """L-inf distance of each point of the parent to its own sub-box ring."""
        s = self.sub_side
        a = np.arange(self.parent.N) % s
        d1 = np.minimum(a, s - 1 - a)
        return np.minimum(d1[:, None], d1[None, :])

    def delta_mask(self) -> np.ndarray:
        """Boolean mask of the delta-interior union over all sub-boxes."""
        return self.ring_distance() >= self.margin

    def ring_mask(self) -> np.ndarray:
        """Union of all sub-box boundary rings."""
        return self.ring_distance() == 0

    def contains_delta(self, p) -> bool:
        x, y = self.parent.local(p)
        N = self.parent.N
        if not (0 <= x < N and 0 <= y < N):
            return False
        return bool(self.delta_mask()[x, y])


def enumerate_subboxes(partition: SubBoxPartition) -> list[tuple[int, BoxSpec]]:
    return list(partition)


def delta_interior(partition: SubBoxPartition, i: int) -> np.ndarray:
    """Points (absolute coordinates) of the delta-interior of sub-box ``i``."""
    box = partition.subbox(i)
    s, m = box.N, partition.margin
    a = np.arange(m, s - m)
    if a.size == 0:
        return np.empty((0, 2), dtype=int)
    xs, ys = np.meshgrid(a, a, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1) + np.asarray(box.origin)


def torus_distance(u, v, N: int):
    """Euclidean distance on the torus Z^2 / N Z^2; broadcasts over leading axes."""
    u = np.asarray(u)
    v = np.asarray(v)
    d = np.abs(u - v) % N
    d = np.minimum(d, N - d)
    out = np.sqrt(np.sum(d.astype(float) ** 2, axis=-1))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DyadicBox:
    level: int
    corner: tuple[int, int]

    @property
    def side(self) -> int:
        return 1 << self.level

    def contains(self, p) -> bool:
        s = self.side
        return self.corner[0] <= p[0] < self.corner[0] + s and self.corner[1] <= p[1] < self.corner[1] + s

    @property
    def is_aligned(self) -> bool:
        return self.corner[0] % self.side == 0 and self.corner[1] % self.side == 0


def dyadic_boxes_containing(v, j: int, N: int) -> list[DyadicBox]:
    """The 4^j boxes of side 2^j (corners anywhere in Z^2) that contain ``v``."""
    if j < 0 or (1 << j) > N:
        raise DomainError(f"level {j} outside [0, log2 N]")
    s = 1 << j
    return [
        DyadicBox(j, (int(v[0]) - a, int(v[1]) - b))
        for a in range(s)
        for b in range(s)
    ]


def dyadic_ancestor(v, j: int) -> DyadicBox:
    """The unique aligned box of side 2^j containing ``v``."""
    s = 1 << j
    return DyadicBox(j, ((int(v[0]) // s) * s, (int(v[1]) // s) * s))


def centered_box_mask(N: int, delta: float) -> np.ndarray:
    """Mask of the centred sub-box of side about ``(1 - 2 delta) N``."""
    lo = math.ceil(delta * N)
    hi = N - lo
    m = np.zeros((N, N), dtype=bool)
    m[lo:hi, lo:hi] = True
    return m
