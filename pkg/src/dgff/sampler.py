"""Exact DGFF samplers and the coarse/fine decomposition.

The spectral sampler draws one standard normal per Dirichlet eigenmode
(product sine basis, ``theta_a = pi a / (N - 1)``), divides by the square
root of the eigenvalue ``1 - (cos theta_a + cos theta_b)/2`` of ``I - P``,
and applies an orthonormal type-I sine transform. The result has covariance
exactly ``(I - P)^-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.fft import dstn

from . import io
from .config import TOL
from .errors import SizeError, StatisticsError
from .green import green_function
from .lattice import BoxSpec, SubBoxPartition
from .seeds import rng_for

MODEL_TAGS = ("GFF", "BRW", "MBRW", "COARSE", "FINE")


@dataclass(frozen=True)
class FieldSample:
    box: BoxSpec
    values: np.ndarray = field(repr=False)
    model_tag: str = "GFF"
    seed: int | None = None

    def __post_init__(self):
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {self.model_tag}")

    def meta(self) -> dict:
        return {"model_tag": self.model_tag, "seed": self.seed, "N": self.box.N,
                "origin": list(self.box.origin)}

    def save(self, path, force: bool = False) -> Path:
        return io.write_dgfg(path, self.values, self.meta(), force=force)

    @classmethod
    def load(cls, path) -> "FieldSample":
        arr, meta = io.read_dgfg(path)
        N = arr.shape[0]
        box = BoxSpec(N, tuple(meta.get("origin", (0, 0))), dyadic=False)
        return cls(box, arr, meta.get("model_tag", "GFF"), meta.get("seed"))

    def to_csv(self, path, force: bool = False) -> Path:
        path = Path(path)
        if path.exists() and not force:
            raise FileExistsError(f"{path} exists")
        ox, oy = self.box.origin
        N = self.box.N
        lines = ["x,y,value"]
        for x in range(N):
            for y in range(N):
                lines.append(f"{x + ox},{y + oy},{self.values[x, y]:.17g}")
        path.write_text("\n".join(lines) + "\n")
        return path


@lru_cache(maxsize=16)
def _inv_sqrt_eigs(N: int) -> np.ndarray:
    M = N - 2
    theta = np.pi * np.arange(1, M + 1) / (N - 1)
    c = np.cos(theta)
    lam = 1.0 - 0.5 * (c[:, None] + c[None, :])
    return 1.0 / np.sqrt(lam)


@lru_cache(maxsize=16)
def _eigs(N: int) -> np.ndarray:
    M = N - 2
    theta = np.pi * np.arange(1, M + 1) / (N - 1)
    c = np.cos(theta)
    return 1.0 - 0.5 * (c[:, None] + c[None, :])


def gff_normals(N: int, seed: int) -> np.ndarray:
    M = max(N - 2, 0)
    return rng_for(seed).standard_normal((M, M))


def gff_from_normals(z: np.ndarray, N: int) -> np.ndarray:
    """Map mode normals of shape (..., N-2, N-2) to fields of shape (..., N, N)."""
    out = np.zeros(z.shape[:-2] + (N, N))
    if N >= 3:
        out[..., 1:-1, 1:-1] = dstn(z * _inv_sqrt_eigs(N), type=1, axes=(-2, -1), norm="ortho")
    return out


def sample_gff_batch(N: int, seeds) -> np.ndarray:
    """Independent spectral samples, one per seed; shape (len(seeds), N, N)."""
    M = max(N - 2, 0)
    z = np.empty((len(seeds), M, M))
    for i, s in enumerate(seeds):
        z[i] = gff_normals(N, s)
    return gff_from_normals(z, N)


def sample_gff_spectral(box: BoxSpec, seed: int) -> FieldSample:
    return FieldSample(box, sample_gff_batch(box.N, [seed])[0], "GFF", int(seed))


@lru_cache(maxsize=4)
def _cholesky_factor(N: int) -> np.ndarray:
    G = green_function(BoxSpec(N, dyadic=False)).values
    idx = np.flatnonzero(BoxSpec(N, dyadic=False).interior_mask().ravel())
    return scipy.linalg.cholesky(G[np.ix_(idx, idx)], lower=True)


def sample_gff_cholesky(box: BoxSpec, seed: int) -> FieldSample:
    """Oracle sampler through the dense Green table; small boxes only."""
    N = box.N
    if N > TOL.dense_max_side:
        raise SizeError(f"Cholesky sampler limited to N<={TOL.dense_max_side}")
    vals = np.zeros((N, N))
    if N >= 3:
        L = _cholesky_factor(N)
        z = gff_normals(N, seed).ravel()
        vals[1:-1, 1:-1] = (L @ z).reshape(N - 2, N - 2)
    return FieldSample(box, vals, "GFF", int(seed))


# ---------------------------------------------------------------------------
# coarse / fine decomposition


def harmonic_extension(values: np.ndarray) -> np.ndarray:
    """Discrete harmonic function on (..., s, s) boxes matching the ring of ``values``."""
    s = values.shape[-1]
    out = values.copy()
    if s < 3:
        return out
    b = np.zeros(values.shape[:-2] + (s - 2, s - 2))
    b[..., 0, :] += values[..., 0, 1:-1]
    b[..., -1, :] += values[..., -1, 1:-1]
    b[..., :, 0] += values[..., 1:-1, 0]
    b[..., :, -1] += values[..., 1:-1, -1]
    b *= 0.25
    hat = dstn(b, type=1, axes=(-2, -1), norm="ortho") / _eigs(s)
    out[..., 1:-1, 1:-1] = dstn(hat, type=1, axes=(-2, -1), norm="ortho")
    return out


def _to_blocks(values: np.ndarray, K: int) -> np.ndarray:
    N = values.shape[-1]
    s = N // K
    lead = values.shape[:-2]
    v = values.reshape(lead + (K, s, K, s))
    return np.moveaxis(v, -3, -2)  # (..., K, K, s, s)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    K, s = blocks.shape[-3], blocks.shape[-1]
    lead = blocks.shape[:-4]
    return np.moveaxis(blocks, -2, -3).reshape(lead + (K * s, K * s))


def decompose_array(values: np.ndarray, partition: SubBoxPartition) -> tuple[np.ndarray, np.ndarray]:
    """Coarse and fine parts of fields of shape (..., N, N)."""
    blocks = _to_blocks(values, partition.K)
    coarse = _from_blocks(harmonic_extension(blocks))
    return coarse, values - coarse


@dataclass(frozen=True)
class Decomposition:
    coarse: FieldSample
    fine: FieldSample
    partition: SubBoxPartition

    def reconstruction_error(self, field_: FieldSample) -> float:
        return float(np.max(np.abs(self.coarse.values + self.fine.values - field_.values)))


def decompose(field_: FieldSample, partition: SubBoxPartition) -> Decomposition:
    coarse, fine = decompose_array(field_.values, partition)
    return Decomposition(
        FieldSample(field_.box, coarse, "COARSE", field_.seed),
        FieldSample(field_.box, fine, "FINE", field_.seed),
        partition,
    )


def _corr(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    return float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b)))


def verify_independence(coarse: np.ndarray, fine: np.ndarray, partition: SubBoxPartition,
                        min_reps: int = 10_000) -> dict:
    """Correlation checks on an ensemble of decompositions.

    ``coarse`` and ``fine`` have shape (reps, N, N). Sites are the sub-box
    centres; the within-box check uses the centre and its right neighbour.
    """
    reps = coarse.shape[0]
    if reps < min_reps:
        raise StatisticsError(f"{reps} decompositions, need at least {min_reps}")
    s = partition.sub_side
    centres = [(box.origin[0] + s // 2, box.origin[1] + s // 2) for _, box in partition]
    bound = 4.0 / np.sqrt(reps)
    fc = [_corr(fine[:, x, y], coarse[:, x, y]) for x, y in centres]
    ff = [_corr(fine[:, a[0], a[1]], fine[:, b[0], b[1]])
          for i, a in enumerate(centres) for b in centres[i + 1:]]
    adj = [_corr(fine[:, x, y], fine[:, x + 1, y]) for x, y in centres]
    return {
        "reps": reps,
        "bound": bound,
        "fine_coarse_max_abs": max(abs(r) for r in fc),
        "fine_fine_cross_max_abs": max((abs(r) for r in ff), default=0.0),
        "fine_adjacent_min": min(adj),
        "fine_coarse_ok": all(abs(r) < bound for r in fc),
        "fine_fine_cross_ok": all(abs(r) < bound for r in ff),
        "fine_adjacent_ok": all(r > bound for r in adj),
    }
