"""Centering, ensembles of maxima, empirical laws and tail estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import lambertw

from . import io
from .config import TAIL_RATE
from .errors import DomainError, StatisticsError
from .hierarchical import sample_batch
from .seeds import derive_seed, map_chunks, rng_for

C_LEAD = 2.0 * math.sqrt(2.0 / math.pi)
# Additive shift of z in the tail prefactor, log[P(>= z) / (z + shift)];
# calibrated on the synthetic exact-tail oracle (see calibrate_prefactor_shift).
PREFACTOR_SHIFT = 1.0
MIN_EXCEEDANCES = 50


def centering(N) -> float:
    """``2 sqrt(2/pi) (log N - 3/8 log log N)``, natural logarithms."""
    if N <= 2:
        raise DomainError(f"centering needs N >= 3, got {N}")
    return C_LEAD * (math.log(N) - 0.375 * math.log(math.log(N)))


# ---------------------------------------------------------------------------
# empirical laws


@dataclass(frozen=True)
class EmpiricalLaw:
    samples: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if s.size == 0:
            raise StatisticsError("empty law")
        object.__setattr__(self, "samples", s)

    @property
    def reps(self) -> int:
        return int(self.samples.size)

    def cdf(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.reps

    def survival(self, x):
        """``P(X >= x)``."""
        return 1.0 - np.searchsorted(self.samples, x, side="left") / self.reps

    def quantile(self, p):
        """Left-continuous inverse ``inf{x : F(x) >= p}``."""
        p = np.asarray(p, dtype=float)
        k = np.clip(np.ceil(p * self.reps).astype(int) - 1, 0, self.reps - 1)
        return self.samples[k]

    def mean(self) -> float:
        return float(self.samples.mean())

    def std(self) -> float:
        return float(self.samples.std(ddof=1)) if self.reps > 1 else 0.0

    def iqr(self) -> float:
        q1, q3 = self.quantile([0.25, 0.75])
        return float(q3 - q1)

    def shifted(self, c: float) -> "EmpiricalLaw":
        return EmpiricalLaw(self.samples + c, dict(self.meta, shift=c))

    def save(self, path, force: bool = False):
        return io.write_samples_csv(path, self.samples, self.meta, force=force)

    @classmethod
    def load(cls, path) -> "EmpiricalLaw":
        samples, meta = io.read_samples_csv(path)
        return cls(samples, meta)


@dataclass(frozen=True)
class ArgmaxDensity:
    """Rescaled argmax locations ``v*/N`` and their histogram on the unit square."""

    points: np.ndarray = field(repr=False)
    bins: int = 16

    @property
    def reps(self) -> int:
        return int(len(self.points))

    def histogram(self, bins: int | None = None) -> np.ndarray:
        b = bins or self.bins
        h, _, _ = np.histogram2d(self.points[:, 0], self.points[:, 1], bins=b, range=[[0, 1], [0, 1]])
        return h

    def density(self, bins: int | None = None) -> np.ndarray:
        b = bins or self.bins
        return self.histogram(b) * (b * b) / self.reps

    def boundary_fraction(self, width: float = 0.05) -> float:
        p = self.points
        near = np.minimum(np.minimum(p[:, 0], 1 - p[:, 0]), np.minimum(p[:, 1], 1 - p[:, 1])) < width
        return float(near.mean())


# ---------------------------------------------------------------------------
# ensembles


def _max_chunk(start, stop, model, N, master_seed, region, scale):
    seeds = [derive_seed(master_seed, r) for r in range(start, stop)]
    X = sample_batch(model, N, seeds, scale).reshape(len(seeds), -1)
    if region is not None:
        X = np.where(region.ravel()[None, :], X, -np.inf)
    mx = X.max(axis=1)
    arg = X.argmax(axis=1)
    for i in range(len(seeds)):
        ties = np.flatnonzero(X[i] == mx[i])
        if ties.size > 1:
            arg[i] = rng_for(derive_seed(master_seed, start + i, 1)).choice(ties)
    return mx, arg


def max_ensemble(model: str, N: int, reps: int, master_seed: int, region=None,
                 workers: int | None = None, center: bool = True,
                 scale: float = 1.0) -> tuple[EmpiricalLaw, ArgmaxDensity]:
    """Law of ``max - m_N`` (or of the raw max) over ``reps`` replications.

    Replication ``r`` uses seed ``derive_seed(master_seed, r)``. ``region``
    restricts the maximum to a boolean mask.
    """
    if reps < 1:
        raise StatisticsError("need at least one replication")
    region = None if region is None else np.asarray(region, dtype=bool)
    parts = map_chunks(_max_chunk, reps, (model, N, master_seed, region, scale), workers)
    mx = np.concatenate([p[0] for p in parts])
    arg = np.concatenate([p[1] for p in parts])
    shift = centering(N) if center else 0.0
    meta = {"model": model, "N": N, "reps": reps, "master_seed": master_seed,
            "centered": center, "m_N": centering(N) if N > 2 else None, "scale": scale,
            "region": None if region is None else int(region.sum())}
    pts = np.stack([arg // N, arg % N], axis=1) / N
    return EmpiricalLaw(mx - shift, meta), ArgmaxDensity(pts)


def ensemble_maxima(model: str, N: int, reps: int, master_seed: int, workers: int | None = None):
    """Raw maxima in replication order (not sorted)."""
    parts = map_chunks(_max_chunk, reps, (model, N, master_seed, None, 1.0), workers)
    return np.concatenate([p[0] for p in parts])


# ---------------------------------------------------------------------------
# tail estimation


@dataclass(frozen=True)
class TailFit:
    z: np.ndarray
    counts: np.ndarray
    reps: int
    slope: float
    slope_se: float
    intercept: float
    plateau: np.ndarray
    plateau_ci: np.ndarray
    alpha_star: float
    alpha_star_ci: tuple[float, float]
    prefactor_shift: float

    def to_dict(self) -> dict:
        return {"z": self.z.tolist(), "counts": self.counts.tolist(), "reps": self.reps,
                "slope": self.slope, "slope_se": self.slope_se, "intercept": self.intercept,
                "plateau": self.plateau.tolist(), "plateau_ci": self.plateau_ci.tolist(),
                "alpha_star": self.alpha_star, "alpha_star_ci": list(self.alpha_star_ci),
                "prefactor_shift": self.prefactor_shift}


def max_usable_z(law: EmpiricalLaw, min_exceed: int = MIN_EXCEEDANCES) -> float:
    if law.reps < min_exceed:
        return float("-inf")
    return float(law.samples[law.reps - min_exceed])


def _wls(z, y, w):
    W = w.sum()
    zb = (w * z).sum() / W
    yb = (w * y).sum() / W
    szz = (w * (z - zb) ** 2).sum()
    slope = (w * (z - zb) * (y - yb)).sum() / szz
    return slope, yb - slope * zb


def _fit_counts(z, counts, n, shift):
    p = counts / n
    y = np.log(p / (z + shift))
    w = counts / np.maximum(1.0 - p, 1.0 / n)
    return _wls(z, y, w)


def tail_fit(law: EmpiricalLaw, z_min: float = 1.0, z_max: float = 3.5, spacing: float = 0.25,
             prefactor_shift: float = PREFACTOR_SHIFT, n_boot: int = 400, seed: int = 0,
             rate: float = TAIL_RATE, min_exceed: int = MIN_EXCEEDANCES) -> TailFit:
    """Weighted least-squares slope of ``log[P(X >= z) / (z + shift)]`` in ``z``.

    Weights are inverse binomial variances of ``log P``; the standard error
    and confidence intervals come from a multinomial bootstrap of the bin
    counts. The plateau is ``z^-1 e^(rate z) P(X >= z)`` and ``alpha_star`` its
    median over the upper half of the grid.
    """
    n = law.reps
    usable = max_usable_z(law, min_exceed)
    if z_min > law.samples[-1] or z_max > usable:
        raise StatisticsError(f"fewer than {min_exceed} exceedances at z_max={z_max}", usable)
    z = np.arange(z_min, z_max + 1e-9, spacing)
    if z.size < 2:
        raise StatisticsError("tail grid needs at least two points", usable)
    counts = n - np.searchsorted(law.samples, z, side="left")
    slope, icpt = _fit_counts(z, counts, n, prefactor_shift)
    plateau = np.exp(rate * z) * (counts / n) / z
    top = z >= z[0] + 0.5 * (z[-1] - z[0])

    # multinomial bootstrap over the cells cut by the grid
    bs = np.full(0, np.nan)
    bp = np.full((0, z.size), np.nan)
    if n_boot >= 2:
        cells = -np.diff(np.concatenate([[n], counts, [0]]))
        rng = rng_for(derive_seed(seed, 7))
        boot = rng.multinomial(n, cells / n, size=n_boot)
        bc = n - np.cumsum(boot, axis=1)[:, :-1]
        bs = np.array([_fit_counts(z, c, n, prefactor_shift)[0] if np.all(c > 0) else np.nan for c in bc])
        bp = np.exp(rate * z) * (bc / n) / z
    if bs.size >= 2 and np.isfinite(bs).sum() >= 2:
        slope_se = float(np.nanstd(bs, ddof=1))
        plateau_ci = np.quantile(bp, [0.025, 0.975], axis=0).T
        ba = np.median(bp[:, top], axis=1)
        alpha_ci = tuple(float(q) for q in np.quantile(ba, [0.025, 0.975]))
    else:
        slope_se = float("nan")
        plateau_ci = np.full((z.size, 2), np.nan)
        alpha_ci = (float("nan"), float("nan"))
    return TailFit(
        z=z, counts=counts, reps=n, slope=float(slope), slope_se=slope_se,
        intercept=float(icpt), plateau=plateau,
        plateau_ci=plateau_ci,
        alpha_star=float(np.median(plateau[top])),
        alpha_star_ci=alpha_ci,
        prefactor_shift=prefactor_shift,
    )


def synthetic_tail_samples(n: int, seed: int, rate: float = TAIL_RATE) -> np.ndarray:
    """Exact draws from ``P(X >= x) = (1 + x) e^(-rate x)``, ``x >= 0``.

    With ``t = 1 + x`` the survival equation reads ``-rate t e^(-rate t) =
    -rate u e^(-rate)``, solved on the lower Lambert branch.
    """
    if rate <= 1:
        raise ValueError("survival is monotone only for rate > 1")
    u = 1.0 - rng_for(seed).random(n)  # (0, 1]
    t = -lambertw(-rate * u * math.exp(-rate), k=-1).real / rate
    return t - 1.0


def calibrate_prefactor_shift(samples, z_min: float = 1.0, z_max: float = 3.5,
                              target: float = -TAIL_RATE, shifts=None) -> tuple[float, float]:
    """Shift whose fitted slope is closest to ``target`` on oracle data; returns (shift, slope)."""
    law = samples if isinstance(samples, EmpiricalLaw) else EmpiricalLaw(samples)
    shifts = np.arange(0.0, 3.001, 0.05) if shifts is None else np.asarray(shifts)
    slopes = [tail_fit(law, z_min, z_max, prefactor_shift=s, n_boot=0).slope for s in shifts]
    i = int(np.argmin(np.abs(np.asarray(slopes) - target)))
    return float(shifts[i]), float(slopes[i])


# ---------------------------------------------------------------------------
# distances


def _as_sorted(law) -> np.ndarray:
    if isinstance(law, EmpiricalLaw):
        return law.samples
    return np.sort(np.asarray(law, dtype=float).ravel())


def ks_distance(a, b) -> float:
    a, b = _as_sorted(a), _as_sorted(b)
    x = np.concatenate([a, b])
    fa = np.searchsorted(a, x, side="right") / a.size
    fb = np.searchsorted(b, x, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def _levy_one_sided(a: np.ndarray, b: np.ndarray) -> float:
    """Least ``eps >= 0`` with ``F_b(x) <= F_a(x + eps) + eps`` for all x."""
    n = a.size
    xb = np.unique(b)
    L = np.searchsorted(b, xb, side="right") / b.size
    k = np.arange(1, n + 1)
    s = a + k / n  # strictly increasing in k
    ks = np.searchsorted(s, L + xb, side="left") + 1  # first k with a_k - x >= L - k/n
    best = np.full(xb.size, np.inf)
    for kk in (ks, ks - 1):
        valid = (kk >= 0) & (kk <= n)
        kc = np.clip(kk, 1, n)
        f2 = np.where(kk >= 1, a[kc - 1] - xb, -np.inf)
        val = np.maximum(np.maximum(L - np.clip(kk, 0, n) / n, f2), 0.0)
        best = np.where(valid, np.minimum(best, val), best)
    return float(best.max())


def levy_distance(a, b) -> float:
    """Exact Levy distance between two empirical CDFs."""
    a, b = _as_sorted(a), _as_sorted(b)
    return max(_levy_one_sided(a, b), _levy_one_sided(b, a))


def distance(law_a, law_b, kind: str = "KS") -> float:
    kind = kind.lower()
    if kind == "ks":
        return ks_distance(law_a, law_b)
    if kind == "levy":
        return levy_distance(law_a, law_b)
    raise ValueError(f"unknown distance {kind!r}")


# ---------------------------------------------------------------------------
# perturbation robustness


def perturbation_draws(shape, seed: int) -> np.ndarray:
    """``N(0, 1/2)`` draws, which satisfy ``P(phi >= 1 + y) <= e^(-y^2)`` for y >= 0."""
    return rng_for(seed).standard_normal(shape) * math.sqrt(0.5)


def _perturb_chunk(start, stop, N, master_seed, eps):
    seeds = [derive_seed(master_seed, r) for r in range(start, stop)]
    X = sample_batch("gff", N, seeds).reshape(len(seeds), -1)
    phi = np.stack([perturbation_draws(N * N, derive_seed(master_seed, r, 2)) for r in range(start, stop)])
    return np.stack([(X + e * phi).max(axis=1) for e in eps], axis=1)


def _bound_shape(e: float) -> float:
    return math.sqrt(e) + (e ** 2 if e >= 1 else 0.0)


def perturbation_check(N: int, epsilons, reps: int, master_seed: int,
                       fit_eps=(0.01, 0.04, 0.16), workers: int | None = None) -> dict:
    """Expected-maximum shift under ``eta + eps phi`` with common random numbers.

    ``C_fit`` is the largest ``shift / sqrt(eps)`` over ``fit_eps`` and each
    row is compared against ``C_fit (sqrt(eps) + eps^2 1{eps >= 1})``.
    ``C_all`` is the smallest constant making that bound hold at every
    epsilon; the bound's constant is uniform in ``N``, so ``C_all`` should
    be stable across box sizes.
    """
    eps = sorted(set([0.0, *map(float, epsilons), *map(float, fit_eps)]))
    parts = map_chunks(_perturb_chunk, reps, (N, master_seed, eps), workers)
    M = np.concatenate(parts)
    base = M[:, 0]
    diffs = M - base[:, None]
    shift = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(len(eps))
    C = float(max(shift[eps.index(e)] / math.sqrt(e) for e in fit_eps))
    C_all = float(max(s / _bound_shape(e) for e, s in zip(eps, shift) if e > 0))
    rows = [{"epsilon": e, "shift": float(s), "se": float(q), "bound": C * _bound_shape(e),
             "ok": bool(s - 3 * q <= C * _bound_shape(e))} for e, s, q in zip(eps, shift, se)]
    return {"N": N, "reps": reps, "master_seed": master_seed, "C_fit": C, "C_all": C_all,
            "fit_eps": list(fit_eps), "rows": rows,
            "monotone": bool(np.all(np.diff(shift) >= -3 * np.maximum(se[1:], se[:-1]))),
            "zero_at_zero": bool(shift[0] == 0.0)}
