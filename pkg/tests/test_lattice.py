from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgff.errors import DomainError, InvalidPartitionError
from dgff.lattice import (
    BoxSpec,
    SubBoxPartition,
    centered_box_mask,
    delta_interior,
    dyadic_ancestor,
    dyadic_boxes_containing,
    enumerate_subboxes,
    torus_distance,
)


def brute_margin_filter(part: SubBoxPartition, i: int) -> set:
    box = part.subbox(i)
    s = box.N
    m = math.ceil(part.delta * part.parent.N / part.K)
    out = set()
    for x in range(s):
        for y in range(s):
            if min(x, y, s - 1 - x, s - 1 - y) >= m:
                out.add((x + box.origin[0], y + box.origin[1]))
    return out


def test_box_requires_power_of_two():
    with pytest.raises(DomainError):
        BoxSpec(12)
    assert BoxSpec(3, dyadic=False).interior_side == 1
    assert BoxSpec(16).n == 4


def test_boundary_ring_and_interior():
    b = BoxSpec(8)
    assert b.boundary_mask().sum() == 4 * 8 - 4
    assert b.interior_points().shape == (36, 2)
    assert b.is_boundary((0, 3)) and not b.is_boundary((3, 3))


def test_enumerate_counts():
    assert len(enumerate_subboxes(SubBoxPartition(BoxSpec(16), 4))) == 16
    assert all(b.N == 4 for _, b in enumerate_subboxes(SubBoxPartition(BoxSpec(16), 4)))
    (i, only), = enumerate_subboxes(SubBoxPartition(BoxSpec(8), 1))
    assert only == BoxSpec(8)


def test_row_major_order():
    part = SubBoxPartition(BoxSpec(8, (10, 20)), 2)
    origins = [b.origin for _, b in part]
    assert origins == [(10, 20), (10, 24), (14, 20), (14, 24)]


@pytest.mark.parametrize("K", [8, 16, 3])
def test_invalid_partitions(K):
    with pytest.raises(InvalidPartitionError):
        SubBoxPartition(BoxSpec(8), K)


def test_delta_interior_examples():
    part = SubBoxPartition(BoxSpec(16), 4, 0.25)
    for i in range(16):
        pts = {tuple(p) for p in delta_interior(part, i)}
        assert len(pts) == 4
        assert pts == brute_margin_filter(part, i)
    part = SubBoxPartition(BoxSpec(16), 2, 0.25)
    assert part.margin == 2
    assert len(delta_interior(part, 3)) == 16
    part0 = SubBoxPartition(BoxSpec(16), 2, 0.0)
    assert len(delta_interior(part0, 1)) == 64


def test_complement_size_bound():
    for N, K, d in [(64, 4, 0.125), (32, 2, 0.25), (64, 8, 0.25)]:
        part = SubBoxPartition(BoxSpec(N), K, d)
        outside = (~part.delta_mask()).sum()
        assert outside <= 4 * d * N * N + 4 * K * N


@pytest.mark.parametrize("N,K,d", [(8, 2, 0.25), (16, 4, 0.125), (32, 2, 0.125), (64, 8, 0.25)])
def test_partition_exhaustive(N, K, d):
    part = SubBoxPartition(BoxSpec(N), K, d)
    cover = np.zeros((N, N), dtype=int)
    for i, b in part:
        cover[b.origin[0]:b.origin[0] + b.N, b.origin[1]:b.origin[1] + b.N] += 1
        for p in delta_interior(part, i):
            assert not b.is_boundary(p)
            assert part.index_of(p) == i
    assert np.all(cover == 1)


def test_torus_distance_examples():
    assert torus_distance((0, 0), (7, 0), 8) == 1
    assert torus_distance((0, 0), (4, 4), 8) == pytest.approx(math.sqrt(32))
    assert torus_distance((3, 5), (3, 5), 8) == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.data())
def test_torus_metric(logn, data):
    N = 1 << logn
    pt = st.tuples(st.integers(0, N - 1), st.integers(0, N - 1))
    u, v, w = data.draw(pt), data.draw(pt), data.draw(pt)
    duv = torus_distance(u, v, N)
    assert duv == torus_distance(v, u, N)
    assert duv <= torus_distance(u, w, N) + torus_distance(w, v, N) + 1e-12
    shifts = [torus_distance(u, (v[0] + a * N, v[1] + b * N), N) for a in (-1, 0, 1) for b in (-1, 0, 1)]
    direct = min(math.hypot(u[0] - v[0] - a * N, u[1] - v[1] - b * N) for a in (-1, 0, 1) for b in (-1, 0, 1))
    assert duv == pytest.approx(direct)
    assert max(shifts) == pytest.approx(duv)


def test_dyadic_boxes_examples():
    assert dyadic_boxes_containing((3, 3), 0, 8)[0].corner == (3, 3)
    assert len(dyadic_boxes_containing((3, 3), 1, 8)) == 4
    boxes = dyadic_boxes_containing((5, 5), 2, 16)
    scan = {(a, b) for a in range(2, 6) for b in range(2, 6)}
    assert {b.corner for b in boxes} == scan
    assert all(b.contains((5, 5)) for b in boxes)


def test_dyadic_count_exhaustive():
    N = 16
    for j in range(5):
        for x in range(N):
            for y in range(N):
                bs = dyadic_boxes_containing((x, y), j, N)
                assert len(bs) == 4 ** j
                anc = dyadic_ancestor((x, y), j)
                assert anc.is_aligned and anc.contains((x, y))
                assert sum(b.is_aligned for b in bs) == 1


def test_centered_box_mask():
    m = centered_box_mask(32, 0.125)
    assert m.sum() == 24 * 24
    assert m[4, 4] and not m[3, 4] and m[27, 27] and not m[28, 27]
