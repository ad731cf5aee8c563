"""The limiting max process built from K^2 cells of the unit square.

Cell ``i`` contributes ``G_i = 1{z_i in W_i^delta} B_i (Y_i + g(K)) + Z(z_i)``
where ``z_i`` is a point of the cell drawn from a rescaled copy of the
argmax density ``psi``, ``B_i`` is Bernoulli with success probability
``alpha* g e^(-sqrt(2 pi) g)``, ``Y_i`` has survival
``((g + x)/g) e^(-sqrt(2 pi) x)`` on ``x >= 0``, and ``Z`` is the continuum
coarse field. The sampled quantity is ``G* = max_i G_i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import io
from .config import C_STAR, TAIL_RATE, TOL
from .errors import CalibrationError, NumericError, ParameterError, StatisticsError
from .extremes import ArgmaxDensity, EmpiricalLaw, centering, levy_distance, ks_distance, max_usable_z, tail_fit
from .green import coarse_covariance_limit, default_reference_side, in_unit_delta_interior
from .lattice import is_power_of_two
from .seeds import derive_seed, map_chunks, rng_for

ALPHA_DEFAULT = C_STAR / (16.0 * math.log(2.0))
# additive part of g(K); keeps g above 1/sqrt(2 pi) for small K
G_OFFSET = 1.0
PSI_BINS = 4


def g_of_K(K: int, alpha: float = ALPHA_DEFAULT, offset: float = G_OFFSET) -> float:
    if K < 2:
        raise ParameterError("g(K) needs K >= 2")
    return offset + alpha * math.log(math.log(K))


def bernoulli_probability(alpha_star: float, gK: float) -> float:
    return alpha_star * gK * math.exp(-TAIL_RATE * gK)


# ---------------------------------------------------------------------------
# Y


def y_survival(x, gK: float):
    x = np.asarray(x, dtype=float)
    return (gK + x) / gK * np.exp(-TAIL_RATE * x)


def _check_g(gK: float) -> None:
    if not gK > 1.0 / TAIL_RATE:
        raise ParameterError(f"g(K)={gK} must exceed 1/sqrt(2 pi) for a monotone survival")


def y_from_uniform(u, gK: float, tol: float = TOL.y_bisection) -> np.ndarray:
    """Invert the survival function by bisection: ``S(Y) = u`` for ``u`` in (0, 1]."""
    _check_g(gK)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    while np.any(y_survival(hi, gK) > u):
        hi = np.where(y_survival(hi, gK) > u, 2 * hi, hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        above = y_survival(mid, gK) > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def sample_Y(gK: float, seed: int) -> float:
    u = 1.0 - rng_for(seed).random()
    return float(y_from_uniform(u, gK)[0])


def y_mean(gK: float) -> float:
    """``E Y = int_0^inf S(x) dx = 1/c + 1/(g c^2)``."""
    return 1.0 / TAIL_RATE + 1.0 / (gK * TAIL_RATE ** 2)


# ---------------------------------------------------------------------------
# parameters


def smooth_psi(hist: np.ndarray) -> np.ndarray:
    """Binomial [1, 2, 1] smoothing with edge replication, renormalized to a density."""
    h = np.asarray(hist, dtype=float)
    k = np.array([0.25, 0.5, 0.25])
    p = np.pad(h, 1, mode="edge")
    p = k[0] * p[:-2, :] + k[1] * p[1:-1, :] + k[2] * p[2:, :]
    p = k[0] * p[:, :-2] + k[1] * p[:, 1:-1] + k[2] * p[:, 2:]
    B = h.shape[0]
    return p * (B * B) / p.sum()


@dataclass
class LimitLawParams:
    K: int
    delta: float
    gK: float
    alpha_star: float
    psi: np.ndarray = field(repr=False)  # density on a B x B grid over the unit square
    n_ref: int | None = None
    coarse_cov: np.ndarray | None = field(default=None, repr=False)  # at grid_sites()
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        if not is_power_of_two(self.K) or self.K < 2:
            raise ParameterError(f"K={self.K} must be a power of 2, at least 2")
        if not 0 < self.delta < 0.5:
            raise ParameterError(f"delta={self.delta} outside (0, 1/2)")
        self.psi = np.asarray(self.psi, dtype=float)
        if self.psi.ndim != 2 or self.psi.shape[0] != self.psi.shape[1] or np.any(self.psi < 0):
            raise ParameterError("psi must be a nonnegative square grid")
        _check_g(self.gK)
        p = self.bernoulli_p
        if not 0 < p < 1:
            raise ParameterError(f"Bernoulli probability {p} outside (0, 1)")
        if self.n_ref is None:
            self.n_ref = default_reference_side(self.K)

    @property
    def bernoulli_p(self) -> float:
        return bernoulli_probability(self.alpha_star, self.gK)

    @property
    def bins(self) -> int:
        return self.psi.shape[0]

    def grid_sites(self) -> np.ndarray:
        """Bin centres of every cell, ordered by (cell, bin); shape (K^2 B^2, 2)."""
        K, B = self.K, self.bins
        c = np.arange(K * K)
        b = np.arange(B * B)
        cx, cy = (c // K)[:, None], (c % K)[:, None]
        bx, by = (b // B)[None, :], (b % B)[None, :]
        x = (cx + (bx + 0.5) / B) / K
        y = (cy + (by + 0.5) / B) / K
        return np.stack([x.ravel(), y.ravel()], axis=1)

    def ensure_covariance(self) -> np.ndarray:
        if self.coarse_cov is None:
            sites = self.grid_sites()
            if not np.all(in_unit_delta_interior(self.K, self.delta, sites)):
                raise ParameterError("psi bin centres fall outside the delta-interior; "
                                     "use more bins or a smaller delta")
            self.coarse_cov = coarse_covariance_limit(self.K, self.delta, sites, self.n_ref).matrix
        return self.coarse_cov

    def to_dict(self) -> dict:
        return {"K": self.K, "delta": self.delta, "gK": self.gK, "alpha_star": self.alpha_star,
                "psi": self.psi.tolist(), "n_ref": self.n_ref, "calibration": self.calibration}

    def save(self, path, force: bool = False) -> Path:
        path = Path(path)
        d = self.to_dict()
        if self.coarse_cov is not None:
            cov_path = path.with_name(path.stem + ".cov.dgfg")
            io.write_dgfg(cov_path, self.coarse_cov, {"role": "coarse covariance at psi bin centres"},
                          force=force)
            d["coarse_cov"] = {"$ref": cov_path.name}
        return io.write_json(path, d, force=force)

    @classmethod
    def load(cls, path) -> "LimitLawParams":
        path = Path(path)
        d = json.loads(path.read_text())
        cov = None
        if isinstance(d.get("coarse_cov"), dict):
            cov, _ = io.read_dgfg(path.with_name(d["coarse_cov"]["$ref"]))
        return cls(int(d["K"]), float(d["delta"]), float(d["gK"]), float(d["alpha_star"]),
                   np.asarray(d["psi"]), d.get("n_ref"), cov, d.get("calibration", {}))


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class LimitSample:
    z: np.ndarray
    in_delta: np.ndarray
    bernoulli: np.ndarray
    Y: np.ndarray
    coarse: np.ndarray
    G: np.ndarray
    G_star: float

    def recompute(self, gK: float) -> float:
        G = np.where(self.in_delta & self.bernoulli, self.Y + gK, 0.0) + self.coarse
        return float(G.max())


def _cholesky(C: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(C, lower=True)
    except np.linalg.LinAlgError:
        pass
    try:
        return scipy.linalg.cholesky(C + TOL.psd_jitter * np.eye(len(C)), lower=True)
    except np.linalg.LinAlgError:
        raise NumericError("coarse covariance is not positive definite after jitter") from None


def _draw_uniforms(rng: np.random.Generator, K2: int):
    return rng.random(K2), rng.random((K2, 2)), rng.random(K2), 1.0 - rng.random(K2)


def _project(params: LimitLawParams, z: np.ndarray) -> np.ndarray:
    """Nearest point of each cell's delta-interior."""
    K, d = params.K, params.delta
    corner = np.floor(z * K) / K
    return np.clip(z, corner + d / K, corner + (1 - d) / K)


def _cells(params: LimitLawParams, u_bin, u_pos):
    """Cell sites placed uniformly inside psi bins, and the bin indices."""
    K, B = params.K, params.bins
    cdf = np.cumsum(params.psi.ravel())
    cdf /= cdf[-1]
    b = np.minimum(np.searchsorted(cdf, u_bin, side="right"), B * B - 1)
    c = np.arange(K * K)
    off = np.stack([b // B, b % B], axis=-1) + u_pos
    corner = np.stack([c // K, c % K], axis=-1)
    return (corner + off / B) / K, b


def _assemble(params, z, bern, Y, coarse) -> LimitSample:
    inside = in_unit_delta_interior(params.K, params.delta, z)
    G = np.where(inside & bern, Y + params.gK, 0.0) + coarse
    return LimitSample(z, inside, bern, Y, coarse, G, float(G.max()))


def sample_limit(params: LimitLawParams, seed: int, mode: str = "exact") -> LimitSample:
    """One draw of the per-cell records and ``G*``.

    Both modes place ``z_i`` uniformly inside its psi bin, so the
    delta-interior indicator is exact. ``exact`` assembles the coarse
    covariance at the realized sites; ``grid`` evaluates the coarse field at
    the bin centre from the cached covariance (snapping radius
    ``sqrt(2)/(2 B K)``).
    """
    K2 = params.K ** 2
    rng = rng_for(seed)
    u_bin, u_pos, u_bern, u_y = _draw_uniforms(rng, K2)
    z, b = _cells(params, u_bin, u_pos)
    bern = u_bern < params.bernoulli_p
    Y = y_from_uniform(u_y, params.gK)
    if mode == "exact":
        C = coarse_covariance_limit(params.K, params.delta, _project(params, z), params.n_ref,
                                    check=False).matrix
        coarse = _cholesky(C) @ rng.standard_normal(K2)
    elif mode == "grid":
        L = _cholesky(params.ensure_covariance())
        full = L @ rng.standard_normal(L.shape[0])
        coarse = full[np.arange(K2) * params.bins ** 2 + b]
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    return _assemble(params, z, bern, Y, coarse)


def _grid_chunk(start, stop, params: LimitLawParams, L: np.ndarray, master_seed: int):
    K2 = params.K ** 2
    n = stop - start
    ub = np.empty((n, K2))
    upos = np.empty((n, K2, 2))
    ubern = np.empty((n, K2))
    uy = np.empty((n, K2))
    normals = np.empty((n, L.shape[0]))
    for r in range(n):
        rng = rng_for(derive_seed(master_seed, start + r))
        ub[r], upos[r], ubern[r], uy[r] = _draw_uniforms(rng, K2)
        normals[r] = rng.standard_normal(L.shape[0])
    z, b = _cells(params, ub, upos)
    inside = in_unit_delta_interior(params.K, params.delta, z.reshape(-1, 2)).reshape(n, K2)
    full = normals @ L.T
    coarse = np.take_along_axis(full, np.arange(K2)[None, :] * params.bins ** 2 + b, axis=1)
    Y = y_from_uniform(uy.ravel(), params.gK).reshape(n, K2)
    gate = inside & (ubern < params.bernoulli_p)
    G = np.where(gate, Y + params.gK, 0.0) + coarse
    return G.max(axis=1)


def _exact_chunk(start, stop, params: LimitLawParams, master_seed: int):
    return np.array([sample_limit(params, derive_seed(master_seed, r), "exact").G_star
                     for r in range(start, stop)])


def sample_limit_law(params: LimitLawParams, draws: int, master_seed: int, mode: str = "grid",
                     workers: int | None = None) -> EmpiricalLaw:
    """Law of ``G*`` over ``draws`` draws; draw ``r`` is seeded by ``(master_seed, r)``."""
    if mode == "grid":
        sites = params.grid_sites()
        if not np.all(in_unit_delta_interior(params.K, params.delta, sites)):
            raise ParameterError("grid mode needs every psi bin centre inside the delta-interior")
        L = _cholesky(params.ensure_covariance())
        parts = map_chunks(_grid_chunk, draws, (params, L, master_seed), workers, chunk_size=256)
    elif mode == "exact":
        parts = map_chunks(_exact_chunk, draws, (params, master_seed), workers)
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    meta = {"model": "limit", "K": params.K, "delta": params.delta, "gK": params.gK,
            "alpha_star": params.alpha_star, "draws": draws, "master_seed": master_seed, "mode": mode}
    return EmpiricalLaw(np.concatenate(parts), meta)


# ---------------------------------------------------------------------------
# calibration and comparison


def calibrate(ensembles, K: int, delta: float = 0.125, alpha: float = ALPHA_DEFAULT,
              g_offset: float = G_OFFSET, bins: int = PSI_BINS, z_min: float = 1.0,
              z_max: float = 3.5, min_reps: int = 10_000, max_rel_ci: float = 0.5,
              n_ref: int | None = None) -> LimitLawParams:
    """Estimate ``alpha*`` and ``psi`` from GFF ensembles.

    ``ensembles`` is a sequence of ``(EmpiricalLaw, ArgmaxDensity)`` pairs at
    distinct N. ``alpha*`` and ``psi`` come from the largest N; the other
    ensembles are reported for stability.
    """
    ensembles = list(ensembles)
    Ns = [law.meta.get("N") for law, _ in ensembles]
    if len(ensembles) < 2 or len(set(Ns)) < len(Ns):
        raise CalibrationError("need ensembles at two or more distinct N")
    for law, _ in ensembles:
        if law.reps < min_reps:
            raise CalibrationError(f"ensemble with {law.reps} reps; need {min_reps}")
    per_N = {}
    for law, arg in ensembles:
        top = min(z_max, math.floor(max_usable_z(law) * 4) / 4)
        if top < z_min + 0.5:
            raise StatisticsError("tail too thin for calibration", max_usable_z(law))
        fit = tail_fit(law, z_min, top)
        per_N[law.meta.get("N")] = {"alpha_star": fit.alpha_star, "ci": list(fit.alpha_star_ci),
                                    "slope": fit.slope, "z_max": top}
    law, arg = max(ensembles, key=lambda e: e[0].meta.get("N") or 0)
    best = per_N[law.meta.get("N")]
    lo, hi = best["ci"]
    if not (hi - lo) <= max_rel_ci * best["alpha_star"]:
        raise CalibrationError(f"alpha* CI [{lo:.3g}, {hi:.3g}] wider than {max_rel_ci:.0%}")
    psi = smooth_psi(arg.histogram(bins))
    return LimitLawParams(K, delta, g_of_K(K, alpha, g_offset), best["alpha_star"], psi, n_ref,
                          calibration={"per_N": per_N, "alpha": alpha, "g_offset": g_offset,
                                       "source_N": law.meta.get("N")})


def limit_offset(K: int, N: int | None = None) -> float:
    """``m_N - m_{N/K}`` when N is known (and N/K >= 3), else ``c* log2 K``."""
    if N is not None and N // K >= 3:
        return centering(N) - centering(N // K)
    return C_STAR * math.log2(K)


def compare(mu_N: EmpiricalLaw, limit: EmpiricalLaw, K: int, N: int | None = None,
            n_boot: int = 200, seed: int = 0, min_reps: int = 10_000) -> dict:
    """Levy and KS distances between ``mu_N`` and ``G* - (m_N - m_{N/K})``, with bootstrap CIs."""
    if mu_N.reps < min_reps or limit.reps < min_reps:
        raise StatisticsError(f"both laws need at least {min_reps} samples")
    N = N if N is not None else mu_N.meta.get("N")
    off = limit_offset(K, N)
    a = mu_N.samples
    b = limit.samples - off
    out = {"K": K, "N": N, "offset": off, "levy": levy_distance(a, b), "ks": ks_distance(a, b)}
    if n_boot >= 2:
        rng = rng_for(derive_seed(seed, 11))
        lv, kv = [], []
        for _ in range(n_boot):
            ra = np.sort(rng.choice(a, a.size))
            rb = np.sort(rng.choice(b, b.size))
            lv.append(levy_distance(ra, rb))
            kv.append(ks_distance(ra, rb))
        out["levy_ci"] = np.quantile(lv, [0.025, 0.975]).tolist()
        out["ks_ci"] = np.quantile(kv, [0.025, 0.975]).tolist()
    return out
