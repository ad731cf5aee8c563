"""Potential kernel, Green functions, harmonic measure and coarse covariances.

This is the exact (non-sampled) layer every sampler is checked against.

Three independent routes to the Dirichlet Green function are provided:

* :func:`green_function` - dense inverse of ``I - P`` (small boxes only);
* :func:`green_entries` - sine-mode expansion along one axis combined with
  the closed-form 1D Green function along the other, for arbitrary sides;
* :func:`green_from_potential` - harmonic measure against the potential
  kernel, ``G(v, w) = sum_z H_v(z) a(z - w) - a(w - v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import mpmath
import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import io
from .config import EULER_GAMMA, TOL
from .errors import DomainError, PrecisionError, RefinementError, SizeError
from .lattice import BoxSpec, SubBoxPartition

# ---------------------------------------------------------------------------
# potential kernel


@dataclass(frozen=True)
class PotentialKernelTable:
    """Values of a(x) for ``|x|_inf <= radius``; ``values[x + R, y + R]``."""

    radius: int
    values: np.ndarray = field(repr=False)

    def __call__(self, x, y=None):
        if y is None:
            x = np.asarray(x)
            x, y = x[..., 0], x[..., 1]
        x = np.abs(np.asarray(x))
        y = np.abs(np.asarray(y))
        if np.any(x > self.radius) or np.any(y > self.radius):
            raise DomainError(f"offset outside tabulated radius {self.radius}")
        return self.values[x + self.radius, y + self.radius]

    def save(self, path, force: bool = False):
        return io.write_dgfg(path, self.values, {"table": "potential_kernel", "radius": self.radius,
                                                 "index": "values[x + R, y + R]"}, force=force)

    def harmonicity_residual(self) -> np.ndarray:
        """Neighbour average minus a(x) (minus 1 at the origin), on |x|_inf < R."""
        a = self.values
        avg = 0.25 * (a[2:, 1:-1] + a[:-2, 1:-1] + a[1:-1, 2:] + a[1:-1, :-2])
        res = avg - a[1:-1, 1:-1]
        c = self.radius - 1
        res[c, c] -= 1.0
        return res


def potential_kernel_asymptotic(r):
    """Leading terms (2/pi) log r + (2 gamma + log 8)/pi."""
    return (2.0 / math.pi) * np.log(r) + (2.0 * EULER_GAMMA + math.log(8.0)) / math.pi


def _octant_coefficients(R: int) -> list[list[tuple[Fraction, Fraction]]]:
    """a(m, k) = p + q/pi for 0 <= k <= m <= R, exactly.

    The diagonal is known in closed form, a(m, m) = (4/pi) sum_{j<=m} 1/(2j-1);
    every other value follows from harmonicity and the lattice symmetries.
    """
    zero = (Fraction(0), Fraction(0))
    rows: list[list[tuple[Fraction, Fraction]]] = [[zero]]
    if R == 0:
        return rows
    rows.append([(Fraction(1), Fraction(0)), (Fraction(0), Fraction(4))])
    diag = Fraction(4)
    for m in range(1, R):
        cur, prev = rows[m], rows[m - 1]

        def at(row, k):
            return row[abs(k)]

        new = []
        for k in range(m):
            up = cur[k + 1]
            down = at(cur, k - 1)
            left = prev[k]
            p = 4 * cur[k][0] - left[0] - up[0] - down[0]
            q = 4 * cur[k][1] - left[1] - up[1] - down[1]
            new.append((p, q))
        # harmonicity on the diagonal: a(m+1, m) = 2 a(m, m) - a(m, m-1)
        new.append((2 * cur[m][0] - cur[m - 1][0], 2 * cur[m][1] - cur[m - 1][1]))
        diag += Fraction(4, 2 * (m + 1) - 1)
        new.append((Fraction(0), diag))
        rows.append(new)
    return rows


@lru_cache(maxsize=8)
def potential_kernel(R: int) -> PotentialKernelTable:
    """Potential kernel of planar simple random walk on ``|x|_inf <= R``.

    Values are exact rationals in the basis {1, 1/pi}, converted to floats
    with enough working precision to absorb the cancellation.
    """
    if R < 1:
        raise DomainError("radius must be at least 1")
    if R > TOL.potential_max_radius:
        raise PrecisionError(f"radius {R} beyond supported {TOL.potential_max_radius}")
    rows = _octant_coefficients(R)
    with mpmath.workdps(40 + R):
        inv_pi = 1 / mpmath.pi
        oct_vals = [[float(mpmath.mpf(p.numerator) / p.denominator
                           + inv_pi * mpmath.mpf(q.numerator) / q.denominator)
                     for p, q in row] for row in rows]
    vals = np.empty((2 * R + 1, 2 * R + 1))
    for x in range(-R, R + 1):
        for y in range(-R, R + 1):
            m, k = max(abs(x), abs(y)), min(abs(x), abs(y))
            vals[x + R, y + R] = oct_vals[m][k]
    table = PotentialKernelTable(R, vals)
    if R >= 2 and np.max(np.abs(table.harmonicity_residual())) > TOL.harmonicity:
        raise PrecisionError("potential kernel lost harmonicity")
    return table


# ---------------------------------------------------------------------------
# dense Green function


def _interior_operator(N: int) -> scipy.sparse.csc_matrix:
    """Sparse ``I - P`` on the (N-2)^2 interior points, row-major local order."""
    M = N - 2
    one = scipy.sparse.identity(M, format="csr")
    off = scipy.sparse.diags([np.ones(M - 1), np.ones(M - 1)], [-1, 1], format="csr")
    A = scipy.sparse.kron(one, one) - 0.25 * (scipy.sparse.kron(off, one) + scipy.sparse.kron(one, off))
    return A.tocsc()


@dataclass(frozen=True)
class GreenTable:
    """Dense covariance over all N*N points (flat index ``x*N + y``)."""

    box: BoxSpec
    values: np.ndarray = field(repr=False)

    def __call__(self, u, v) -> float:
        N = self.box.N
        ux, uy = self.box.local(u)
        vx, vy = self.box.local(v)
        return float(self.values[ux * N + uy, vx * N + vy])

    def variance(self) -> np.ndarray:
        return np.diag(self.values).reshape(self.box.shape)

    def save(self, path, force: bool = False):
        return io.write_dgfg(path, self.values, {"table": "green", "N": self.box.N,
                                                 "origin": list(self.box.origin),
                                                 "index": "flat x*N + y", "tolerances": vars(TOL)},
                             force=force)


def green_function(box: BoxSpec, max_side: int | None = None) -> GreenTable:
    """Dense inverse of ``I - P`` with the random walk killed on the ring."""
    N = box.N
    max_side = TOL.dense_max_side if max_side is None else max_side
    if N > max_side:
        raise SizeError(f"dense Green table for N={N} exceeds budget N<={max_side}")
    full = np.zeros((N * N, N * N))
    if N >= 3:
        A = _interior_operator(N).toarray()
        c = scipy.linalg.cho_factor(A, lower=True)
        inv = scipy.linalg.cho_solve(c, np.eye(A.shape[0]))
        inv = 0.5 * (inv + inv.T)
        idx = np.flatnonzero(box.interior_mask().ravel())
        full[np.ix_(idx, idx)] = inv
    return GreenTable(box, full)


# ---------------------------------------------------------------------------
# spectral Green entries (any N)


def _modes(N: int, coords) -> np.ndarray:
    """Normalized Dirichlet sine modes phi_a(x), shape (len(coords), N-2)."""
    a = np.arange(1, N - 1)
    return math.sqrt(2.0 / (N - 1)) * np.sin(np.pi * np.outer(np.asarray(coords, float), a) / (N - 1))


def _line_green(N: int, y1, y2, a0: int = 0, a1: int | None = None) -> np.ndarray:
    """1D Green functions g_a(y1, y2) for modes a0+1..a1; shape (len(y1), len(y2), a1-a0).

    g_a is the inverse of ``(1 - cos(theta_a)/2) - (shift + shift^-1)/4`` on
    {0..N-1} with zero values at both ends.
    """
    L = N - 1
    a1 = N - 2 if a1 is None else a1
    theta = np.pi * np.arange(a0 + 1, a1 + 1) / L
    mu = np.arccosh(2.0 - np.cos(theta))
    y1 = np.asarray(y1, float)[:, None, None]
    y2 = np.asarray(y2, float)[None, :, None]
    lo = np.minimum(y1, y2)
    hi = np.maximum(y1, y2)
    # sinh(mu lo) sinh(mu (L - hi)) / sinh(mu L), written with nonpositive exponents
    num = (np.exp(mu * (lo - hi)) - np.exp(mu * (lo + hi - 2 * L))
           - np.exp(-mu * (lo + hi)) + np.exp(mu * (hi - lo - 2 * L)))
    return (2.0 / np.sinh(mu)) * num / (1.0 - np.exp(-2.0 * mu * L))


def green_entries(N: int, us, vs) -> np.ndarray:
    """G_N(u, v) for all u in ``us`` and v in ``vs`` (local coordinates)."""
    us = np.atleast_2d(np.asarray(us))
    vs = np.atleast_2d(np.asarray(vs))
    out = np.zeros((len(us), len(vs)))
    if N < 3 or len(us) == 0 or len(vs) == 0:
        return out
    xs = np.unique(np.concatenate([us[:, 0], vs[:, 0]]))
    ys = np.unique(np.concatenate([us[:, 1], vs[:, 1]]))
    if len(xs) * len(ys) <= 2 * max(len(us), len(vs)) and len(xs) * len(ys) <= 8192:
        T = green_tensor(N, xs, ys)
        ix_u, iy_u = np.searchsorted(xs, us[:, 0]), np.searchsorted(ys, us[:, 1])
        ix_v, iy_v = np.searchsorted(xs, vs[:, 0]), np.searchsorted(ys, vs[:, 1])
        return T[ix_u[:, None], iy_u[:, None], ix_v[None, :], iy_v[None, :]]
    phi_u = _modes(N, us[:, 0])
    phi_v = _modes(N, vs[:, 0])
    step = max(1, 4_000_000 // max(1, len(us) * len(vs)))
    for a0 in range(0, N - 2, step):
        a1 = min(a0 + step, N - 2)
        g = _line_green(N, us[:, 1], vs[:, 1], a0, a1)
        out += np.einsum("ia,ja,ija->ij", phi_u[:, a0:a1], phi_v[:, a0:a1], g)
    inside_u = _inside(N, us)
    inside_v = _inside(N, vs)
    out[~inside_u, :] = 0.0
    out[:, ~inside_v] = 0.0
    return out


def _inside(N: int, pts) -> np.ndarray:
    pts = np.asarray(pts)
    return np.all((pts >= 1) & (pts <= N - 2), axis=-1)


def green_tensor(N: int, xs, ys) -> np.ndarray:
    """G_N over the grid ``xs x ys``; result ``T[i, j, k, l] = G((xs_i, ys_j), (xs_k, ys_l))``."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    X, Y = len(xs), len(ys)
    if N < 3:
        return np.zeros((X, Y, X, Y))
    phi = _modes(N, xs)
    A = (phi[:, None, :] * phi[None, :, :]).reshape(X * X, N - 2)
    B = _line_green(N, ys, ys).reshape(Y * Y, N - 2)
    T = (A @ B.T).reshape(X, X, Y, Y).transpose(0, 2, 1, 3)
    ix = (xs >= 1) & (xs <= N - 2)
    iy = (ys >= 1) & (ys <= N - 2)
    mask = ix[:, None] & iy[None, :]
    T = T * mask[:, :, None, None] * mask[None, None, :, :]
    return np.ascontiguousarray(T)


# ---------------------------------------------------------------------------
# harmonic measure and the potential-kernel representation


@dataclass(frozen=True)
class HarmonicMeasure:
    """Exit distribution of the walk from ``source`` on the ring of ``box``."""

    source: tuple[int, int]
    box: BoxSpec
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    degenerate: bool = False

    def side_weight(self, side: str) -> float:
        """Total weight on one side: 'left' (x=0), 'right', 'bottom' (y=0), 'top'."""
        N = self.box.N
        loc = self.points - np.asarray(self.box.origin)
        sel = {"left": loc[:, 0] == 0, "right": loc[:, 0] == N - 1,
               "bottom": loc[:, 1] == 0, "top": loc[:, 1] == N - 1}[side]
        return float(self.weights[sel].sum())


@lru_cache(maxsize=8)
def _factorized(N: int):
    return scipy.sparse.linalg.splu(_interior_operator(N))


def _boundary_weights(N: int, g_int: np.ndarray) -> np.ndarray:
    """Map interior Green rows (..., M, M) to exit weights on the N x N ring."""
    M = N - 2
    g = np.zeros(g_int.shape[:-2] + (N, N))
    g[..., 1:-1, 1:-1] = g_int.reshape(g_int.shape[:-2] + (M, M)) if g_int.ndim >= 2 else g_int
    w = np.zeros_like(g)
    w[..., 0, 1:-1] = 0.25 * g[..., 1, 1:-1]
    w[..., -1, 1:-1] = 0.25 * g[..., -2, 1:-1]
    w[..., 1:-1, 0] = 0.25 * g[..., 1:-1, 1]
    w[..., 1:-1, -1] = 0.25 * g[..., 1:-1, -2]
    return w


def harmonic_measure(box: BoxSpec, source) -> HarmonicMeasure:
    """Solve the discrete Dirichlet problem for the exit law from ``source``."""
    N = box.N
    mask = box.boundary_mask()
    pts = box.points()[mask.ravel()]
    src = tuple(int(c) for c in source)
    if not box.contains(src):
        raise DomainError(f"source {src} outside box")
    sx, sy = box.local(src)
    if box.is_boundary(src):
        w = np.zeros(len(pts))
        w[np.flatnonzero(np.all(pts == np.asarray(src), axis=1))] = 1.0
        return HarmonicMeasure(src, box, pts, w, degenerate=True)
    M = N - 2
    rhs = np.zeros(M * M)
    rhs[(sx - 1) * M + (sy - 1)] = 1.0
    row = _factorized(N).solve(rhs).reshape(M, M)
    w = _boundary_weights(N, row[None])[0]
    return HarmonicMeasure(src, box, pts, w[mask])


def green_from_potential(box: BoxSpec, us=None, kernel: PotentialKernelTable | None = None) -> np.ndarray:
    """Green function rows G(u, .) over the whole box via the potential kernel.

    Returns an array of shape (len(us), N, N); ``us`` defaults to all interior
    points.
    """
    N = box.N
    if us is None:
        us = box.interior_points()
    us = np.atleast_2d(np.asarray(us))
    kernel = kernel or potential_kernel(max(N, 2))
    mask = box.boundary_mask()
    bpts = box.points()[mask.ravel()] - np.asarray(box.origin)
    allp = box.points() - np.asarray(box.origin)
    # a(z - w) for boundary z and every point w
    diff = bpts[:, None, :] - allp[None, :, :]
    a_zw = kernel(diff)
    out = np.zeros((len(us), N, N))
    M = N - 2
    lu = _factorized(N) if N >= 3 else None
    for r, u in enumerate(us):
        lx, ly = box.local(u)
        if box.is_boundary(u) or N < 3:
            continue
        rhs = np.zeros(M * M)
        rhs[(lx - 1) * M + (ly - 1)] = 1.0
        hv = _boundary_weights(N, lu.solve(rhs).reshape(1, M, M))[0][mask]
        a_uw = kernel(allp - np.array([lx, ly]))
        g = hv @ a_zw - a_uw
        g = g.reshape(N, N)
        g[mask] = 0.0
        out[r] = g
    return out


# ---------------------------------------------------------------------------
# coarse covariance


@dataclass(frozen=True)
class CoarseCovariance:
    """Covariance of the coarse field at ``sites``.

    For the continuum version ``sites`` are in the unit square and
    ``error`` holds the last refinement difference.
    """

    partition: SubBoxPartition
    sites: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)
    error: float | None = None
    level_errors: tuple = ()


def _coarse_lattice(partition: SubBoxPartition, pts: np.ndarray) -> np.ndarray:
    """C(u, v) = G_N(u, v) - [same sub-box] G_{N/K}(u - o, v - o), local coords."""
    N = partition.parent.N
    s = partition.sub_side
    G = green_entries(N, pts, pts)
    box_id = (pts[:, 0] // s) * partition.K + (pts[:, 1] // s)
    same = box_id[:, None] == box_id[None, :]
    loc = pts % s
    Gs = green_entries(s, loc, loc)
    return G - np.where(same, Gs, 0.0)


def coarse_covariance(partition: SubBoxPartition, sites) -> CoarseCovariance:
    sites = np.atleast_2d(np.asarray(sites, dtype=int))
    mask = partition.delta_mask()
    loc = sites - np.asarray(partition.parent.origin)
    N = partition.parent.N
    ok = np.all((loc >= 0) & (loc < N), axis=1)
    if not np.all(ok) or not np.all(mask[loc[:, 0], loc[:, 1]]):
        raise DomainError("coarse covariance requested outside the delta-interior")
    C = _coarse_lattice(partition, loc)
    return CoarseCovariance(partition, sites, 0.5 * (C + C.T))


def in_unit_delta_interior(K: int, delta: float, x, slack: float = 1e-12) -> np.ndarray:
    """Whether unit-square points lie at distance >= delta/K from their cell boundary."""
    x = np.atleast_2d(np.asarray(x, float))
    f = (x * K) % 1.0
    d = np.minimum(f, 1.0 - f)
    inside = np.all((x >= 0) & (x < 1), axis=1)
    return inside & np.all(d >= delta - slack, axis=1)


def _bilinear(sites_unit: np.ndarray, N: int):
    """Lattice points and weights so that x maps to the dual point x*N - 1/2."""
    t = sites_unit * N - 0.5
    base = np.floor(t).astype(int)
    f = t - base
    offs = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    pts = base[:, None, :] + offs[None, :, :]
    wx = np.stack([1 - f[:, 0], f[:, 0], 1 - f[:, 0], f[:, 0]], axis=1)
    wy = np.stack([1 - f[:, 1], 1 - f[:, 1], f[:, 1], f[:, 1]], axis=1)
    return pts, wx * wy


def _coarse_at_unit_sites(K: int, sites_unit: np.ndarray, N: int) -> np.ndarray:
    partition = SubBoxPartition(BoxSpec(N), K)
    pts, w = _bilinear(sites_unit, N)
    flat = pts.reshape(-1, 2)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.ravel()
    ring = partition.ring_distance()[uniq[:, 0], uniq[:, 1]] == 0
    wflat = w.ravel()
    if np.any(ring[inv] & (wflat > 0)):
        raise DomainError(f"site too close to a sub-box boundary for resolution N={N}")
    C = _coarse_lattice(partition, uniq)
    W = np.zeros((len(sites_unit), len(uniq)))
    np.add.at(W, (np.repeat(np.arange(len(sites_unit)), 4), inv), wflat)
    out = W @ C @ W.T
    return 0.5 * (out + out.T)


def default_reference_side(K: int) -> int:
    return max(128, 64 * K)


def coarse_covariance_limit(K: int, delta: float, sites_unit, n_ref: int | None = None,
                            check: bool = True) -> CoarseCovariance:
    """Continuum coarse covariance at unit-square sites, by lattice refinement.

    The value reported is the one at resolution ``n_ref``; the refinement
    error is the largest entrywise change from ``n_ref/2``. With ``check``
    the change from ``n_ref/4`` to ``n_ref/2`` is computed as well, and a
    growing error raises :class:`RefinementError`.
    """
    sites_unit = np.atleast_2d(np.asarray(sites_unit, float))
    if not np.all(in_unit_delta_interior(K, delta, sites_unit)):
        raise DomainError("sites must lie in the unit-square delta-interior")
    n_ref = default_reference_side(K) if n_ref is None else n_ref
    part = SubBoxPartition(BoxSpec(n_ref), K, delta)
    fine = _coarse_at_unit_sites(K, sites_unit, n_ref)
    if not check:
        return CoarseCovariance(part, sites_unit, fine)
    mid = _coarse_at_unit_sites(K, sites_unit, n_ref // 2)
    coarse = _coarse_at_unit_sites(K, sites_unit, n_ref // 4)
    e_fine = float(np.max(np.abs(fine - mid)))
    e_coarse = float(np.max(np.abs(mid - coarse)))
    if e_fine > e_coarse and e_fine > 1e-12:
        raise RefinementError(f"refinement error grew from {e_coarse:.3g} to {e_fine:.3g}")
    return CoarseCovariance(part, sites_unit, fine, e_fine, (e_coarse, e_fine))


def coarse_increment_constant(partition: SubBoxPartition, pairs) -> float:
    """Smallest c with E(X_u - X_v)^2 <= c |u - v| / (N/K) over ``pairs``."""
    pairs = np.asarray(pairs, dtype=int)
    u, v = pairs[:, 0], pairs[:, 1]
    pts = np.concatenate([u, v])
    cov = coarse_covariance(partition, pts).matrix
    n = len(u)
    i = np.arange(n)
    inc = cov[i, i] + cov[n + i, n + i] - 2 * cov[i, n + i]
    dist = np.linalg.norm((u - v).astype(float), axis=1)
    return float(np.max(inc * partition.sub_side / dist))
