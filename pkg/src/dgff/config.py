"""Numerical tolerances and physical constants used across the package."""

from __future__ import annotations

import math
from dataclasses import dataclass

# variance of one BRW level / MBRW level-0 box
LEVEL_VARIANCE = 2.0 * math.log(2.0) / math.pi
# decay rate of the right tail of the recentered maximum
TAIL_RATE = math.sqrt(2.0 * math.pi)
# m_N - m_{N/K} ~ C_STAR * log2(K)
C_STAR = 2.0 * math.log(2.0) * math.sqrt(2.0 / math.pi)
EULER_GAMMA = 0.57721566490153286061


@dataclass(frozen=True)
class Tolerances:
    harmonicity: float = 1e-10
    green_relative: float = 1e-8
    measure_sum: float = 1e-12
    reconstruction: float = 1e-10
    dense_max_side: int = 64
    psd_jitter: float = 1e-10
    y_bisection: float = 1e-10
    potential_max_radius: int = 400


TOL = Tolerances()
