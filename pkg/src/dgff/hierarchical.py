"""Branching random walk (BRW) and its stationary modification (MBRW).

Both fields live on an ``N x N`` box with ``N = 2^n`` and sum ``n + 1``
levels. At level ``j`` the BRW attaches one ``N(0, s2)`` variable to every
aligned box of side ``2^j``; the MBRW attaches ``N(0, s2 4^-j)`` variables to
all boxes of side ``2^j`` (corners anywhere, identified modulo ``N``), and a
site collects every box containing it. Here ``s2 = 2 log 2 / pi``.

MBRW levels are circular window sums of an ``N x N`` grid of normals. The
normals are rounded to a fixed-point grid (``2^-32``) and summed in int64,
so the prefix-sum path and the naive summation produce bitwise equal fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import LEVEL_VARIANCE
from .green import green_tensor
from .lattice import BoxSpec, centered_box_mask, is_power_of_two
from .sampler import FieldSample, gff_from_normals, gff_normals
from .seeds import rng_for

FIXED_POINT = 2.0 ** 32
MODELS = ("gff", "brw", "mbrw")


@dataclass(frozen=True)
class HierarchicalSpec:
    box: BoxSpec
    kind: str = "MBRW"
    scale: float = 1.0  # multiplies every level variance

    def __post_init__(self):
        if self.kind not in ("BRW", "MBRW"):
            raise ValueError(f"kind must be BRW or MBRW, got {self.kind}")

    @property
    def levels(self) -> int:
        return self.box.n + 1

    def level_variance(self, j: int) -> float:
        """Variance of one level-j variable."""
        v = LEVEL_VARIANCE * self.scale
        return v if self.kind == "BRW" else v * 4.0 ** (-j)

    def point_variance(self) -> float:
        return self.levels * LEVEL_VARIANCE * self.scale


def _levels(N: int) -> int:
    if not is_power_of_two(N):
        raise ValueError(f"N={N} is not a power of 2")
    return N.bit_length()


# ---------------------------------------------------------------------------
# BRW


def brw_normals(N: int, seed: int) -> list[np.ndarray]:
    rng = rng_for(seed)
    return [rng.standard_normal((N >> j, N >> j)) for j in range(_levels(N))]


def brw_from_normals(levels: list[np.ndarray], N: int, scale: float = 1.0) -> np.ndarray:
    """Arrays in ``levels`` may carry leading batch axes."""
    out = 0.0
    for j, z in enumerate(levels):
        s = 1 << j
        out = out + np.repeat(np.repeat(z, s, axis=-2), s, axis=-1)
    return np.asarray(out) * np.sqrt(LEVEL_VARIANCE * scale)


def sample_brw(box: BoxSpec, seed: int, scale: float = 1.0) -> FieldSample:
    vals = brw_from_normals(brw_normals(box.N, seed), box.N, scale)
    return FieldSample(box, vals, "BRW", int(seed))


def brw_covariance(u, v, N: int, scale: float = 1.0):
    """Exact BRW covariance: shared aligned ancestors times the level variance."""
    u = np.asarray(u)
    v = np.asarray(v)
    shared = 0
    for j in range(_levels(N)):
        same = np.all((u >> j) == (v >> j), axis=-1)
        shared = shared + same.astype(int)
    return LEVEL_VARIANCE * scale * shared


# ---------------------------------------------------------------------------
# MBRW


def mbrw_normals(N: int, seed: int) -> list[np.ndarray]:
    """Fixed-point level grids (int64, units of 2^-32)."""
    rng = rng_for(seed)
    return [np.rint(rng.standard_normal((N, N)) * FIXED_POINT).astype(np.int64)
            for _ in range(_levels(N))]


def _circular_window_sum(q: np.ndarray, w: int, axis: int) -> np.ndarray:
    """``out[v] = sum_{c = v-w+1}^{v} q[c mod N]`` along ``axis``."""
    N = q.shape[axis]
    q = np.moveaxis(q, axis, -1)
    ext = np.concatenate([q[..., N - w + 1:], q], axis=-1) if w > 1 else q
    P = np.concatenate([np.zeros(q.shape[:-1] + (1,), q.dtype), np.cumsum(ext, axis=-1)], axis=-1)
    out = P[..., w:w + N] - P[..., :N]
    return np.moveaxis(out, -1, axis)


def mbrw_level_sums(levels: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for j, q in enumerate(levels):
        w = 1 << j
        out.append(_circular_window_sum(_circular_window_sum(q, w, -2), w, -1))
    return out


def _combine_mbrw(sums: list[np.ndarray], scale: float) -> np.ndarray:
    out = 0.0
    for j, s in enumerate(sums):
        out = out + s * (np.sqrt(LEVEL_VARIANCE * scale * 4.0 ** (-j)) / FIXED_POINT)
    return np.asarray(out)


def mbrw_from_normals(levels: list[np.ndarray], N: int, scale: float = 1.0) -> np.ndarray:
    return _combine_mbrw(mbrw_level_sums(levels), scale)


def mbrw_naive_from_normals(levels: list[np.ndarray], N: int, scale: float = 1.0) -> np.ndarray:
    """Direct O(N^2 4^j) summation over every box containing each site."""
    sums = []
    for j, q in enumerate(levels):
        w = 1 << j
        s = np.zeros((N, N), dtype=np.int64)
        for x in range(N):
            for y in range(N):
                acc = 0
                for a in range(w):
                    for b in range(w):
                        acc += int(q[(x - a) % N, (y - b) % N])
                s[x, y] = acc
        sums.append(s)
    return _combine_mbrw(sums, scale)


def sample_mbrw(box: BoxSpec, seed: int, scale: float = 1.0) -> FieldSample:
    vals = mbrw_from_normals(mbrw_normals(box.N, seed), box.N, scale)
    return FieldSample(box, vals, "MBRW", int(seed))


def _overlap(d, w: int, N: int):
    """Number of shared window corners on the cycle for offset ``d``."""
    d = np.abs(np.asarray(d)) % N
    if w >= N:
        return np.full(np.shape(d), N)
    return np.maximum(0, w - d) + np.maximum(0, w - (N - d))


def mbrw_covariance(u, v, N: int, scale: float = 1.0):
    """Exact MBRW covariance by window-overlap counting."""
    u = np.asarray(u)
    v = np.asarray(v)
    dx = (v[..., 0] - u[..., 0]) % N
    dy = (v[..., 1] - u[..., 1]) % N
    total = 0.0
    for j in range(_levels(N)):
        w = 1 << j
        total = total + 4.0 ** (-j) * _overlap(dx, w, N) * _overlap(dy, w, N)
    return LEVEL_VARIANCE * scale * np.asarray(total, dtype=float)


# ---------------------------------------------------------------------------
# batched model sampling shared with the ensemble layer


def sample_batch(model: str, N: int, seeds, scale: float = 1.0) -> np.ndarray:
    """Fields of shape (len(seeds), N, N) for ``model`` in gff/brw/mbrw."""
    model = model.lower()
    if model == "gff":
        M = max(N - 2, 0)
        z = np.empty((len(seeds), M, M))
        for i, s in enumerate(seeds):
            z[i] = gff_normals(N, s)
        return gff_from_normals(z, N) * np.sqrt(scale)
    if model == "brw":
        per = [brw_normals(N, s) for s in seeds]
        levels = [np.stack([p[j] for p in per]) for j in range(_levels(N))]
        return brw_from_normals(levels, N, scale)
    if model == "mbrw":
        per = [mbrw_normals(N, s) for s in seeds]
        levels = [np.stack([p[j] for p in per]) for j in range(_levels(N))]
        return mbrw_from_normals(levels, N, scale)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def model_covariance(model: str, N: int, pts: np.ndarray) -> np.ndarray:
    """Exact covariance matrix of ``model`` on the point list ``pts`` (k, 2)."""
    model = model.lower()
    u = pts[:, None, :]
    v = pts[None, :, :]
    if model == "brw":
        return brw_covariance(u, v, N)
    if model == "mbrw":
        return mbrw_covariance(u, v, N)
    if model == "gff":
        xs = np.unique(pts[:, 0])
        ys = np.unique(pts[:, 1])
        T = green_tensor(N, xs, ys)
        ix = np.searchsorted(xs, pts[:, 0])
        iy = np.searchsorted(ys, pts[:, 1])
        return T[ix[:, None], iy[:, None], ix[None, :], iy[None, :]]
    raise ValueError(f"unknown model {model!r}")


# ---------------------------------------------------------------------------
# covariance sandwich


def log_profile(N: int, d) -> np.ndarray:
    """``s2 (n - log2 d)`` with the log clipped at 0 (so d <= 1 gives ``s2 n``)."""
    n = N.bit_length() - 1
    d = np.asarray(d, dtype=float)
    return LEVEL_VARIANCE * (n - np.log2(np.maximum(d, 1.0)))


def mbrw_offset_table(N: int) -> np.ndarray:
    """Exact MBRW covariance as a function of the torus offset (dx, dy)."""
    d = np.arange(N)
    total = np.zeros((N, N))
    for j in range(_levels(N)):
        c = _overlap(d, 1 << j, N) * 2.0 ** (-j)
        total += np.outer(c, c)
    return LEVEL_VARIANCE * total


def verify_covariance_sandwich(N: int, sample_pairs=None, delta: float = 0.125) -> dict:
    """Deviation of exact covariances from the ``s2 (n - log2 d)`` profile.

    MBRW uses torus distance over all offsets (every pair of sites is one of
    these by stationarity) unless ``sample_pairs`` is given. The GFF uses
    Euclidean distance and pairs inside the centred box of side about
    ``(1 - 2 delta) N``.
    """
    if sample_pairs is not None:
        pairs = np.asarray(sample_pairs)
        u, v = pairs[:, 0], pairs[:, 1]
        d = np.abs(u - v) % N
        d = np.minimum(d, N - d)
        dt = np.sqrt(np.sum(d.astype(float) ** 2, axis=-1))
        mb = np.abs(mbrw_covariance(u, v, N) - log_profile(N, dt))
        mbrw_dev = float(mb.max())
    else:
        d = np.arange(N)
        d = np.minimum(d, N - d).astype(float)
        dt = np.sqrt(d[:, None] ** 2 + d[None, :] ** 2)
        mbrw_dev = float(np.max(np.abs(mbrw_offset_table(N) - log_profile(N, dt))))
    mask = centered_box_mask(N, delta)
    idx = np.flatnonzero(mask.any(axis=1))
    T = green_tensor(N, idx, idx)
    a = idx.astype(float)
    dx = a[:, None] - a[None, :]
    de = np.sqrt(dx[:, None, :, None] ** 2 + dx[None, :, None, :] ** 2)
    gff_dev = float(np.max(np.abs(T - log_profile(N, de))))
    return {"N": N, "delta": delta, "mbrw_max_deviation": mbrw_dev,
            "gff_max_deviation": gff_dev, "gff_box_side": int(idx.size)}


# ---------------------------------------------------------------------------
# comparison inequalities


def _increment_variance(C: np.ndarray) -> np.ndarray:
    d = np.diag(C)
    return d[:, None] + d[None, :] - 2.0 * C


def empirical_comparison_checks(N: int, reps: int, master_seed: int, delta: float = 0.125,
                                workers: int | None = None, min_reps: int = 10_000,
                                n_sites: int = 400) -> dict:
    """Expected maxima of GFF, BRW and MBRW on the centred box, with orderings.

    For each ordered pair (X, Y), ``lam^2 = max E(Y_a - Y_b)^2 / E(X_a - X_b)^2``
    over a grid of ``n_sites`` sites makes the increment condition hold for
    ``lam X``, so the expected-maximum comparison gives ``lam E max X >=
    E max Y`` (up to the grid restriction). Tail dominance is checked only for
    pairs with identical pointwise variance and ordered covariances.
    """
    from .errors import StatisticsError
    from .extremes import max_ensemble

    if reps < min_reps:
        raise StatisticsError(f"{reps} replications, need at least {min_reps}")
    mask = centered_box_mask(N, delta)
    laws = {}
    for m in MODELS:
        law, _ = max_ensemble(m, N, reps, master_seed, region=mask, workers=workers, center=False)
        laws[m] = law
    summary = {m: {"mean": law.mean(), "se": law.std() / np.sqrt(law.reps),
                   "ci95": [law.mean() - 1.96 * law.std() / np.sqrt(law.reps),
                            law.mean() + 1.96 * law.std() / np.sqrt(law.reps)]}
               for m, law in laws.items()}

    idx = np.flatnonzero(mask.any(axis=1))
    k = max(2, int(np.sqrt(n_sites)))
    sub = idx[np.linspace(0, idx.size - 1, k).round().astype(int)]
    xs, ys = np.meshgrid(sub, sub, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    cov = {m: model_covariance(m, N, pts) for m in MODELS}
    inc = {m: _increment_variance(c) for m, c in cov.items()}
    off = ~np.eye(len(pts), dtype=bool)

    orderings = []
    for a in MODELS:
        for b in MODELS:
            if a == b:
                continue
            lam = float(np.sqrt(np.max(inc[b][off] / inc[a][off])))
            se = np.hypot(lam * summary[a]["se"], summary[b]["se"])
            lhs, rhs = lam * summary[a]["mean"], summary[b]["mean"]
            orderings.append({"X": a, "Y": b, "lambda": lam, "lhs": lhs, "rhs": rhs,
                              "ok": bool(lhs + 3.0 * se >= rhs)})

    tails = []
    for a in MODELS:
        for b in MODELS:
            if a == b:
                continue
            va, vb = np.diag(cov[a]), np.diag(cov[b])
            if not np.allclose(va, vb, rtol=0, atol=1e-12):
                continue
            if not np.all(cov[a] <= cov[b] + 1e-12):
                continue
            # smaller covariances: max of X stochastically dominates max of Y
            qs = laws[b].quantile(np.array([0.5, 0.9, 0.99]))
            pa, pb = laws[a].survival(qs), laws[b].survival(qs)
            se = np.sqrt(pa * (1 - pa) / laws[a].reps + pb * (1 - pb) / laws[b].reps)
            tails.append({"X": a, "Y": b, "levels": qs.tolist(), "P_X": pa.tolist(),
                          "P_Y": pb.tolist(), "ok": bool(np.all(pa + 3 * se >= pb))})

    return {"N": N, "reps": reps, "master_seed": master_seed, "delta": delta,
            "expected_max": summary, "sudakov_fernique": orderings, "slepian": tails}
