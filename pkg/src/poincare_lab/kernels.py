"""Singular-kernel sums on grids: Gagliardo forms, annulus averages and
Riesz potentials.

The Gagliardo form treats f as a sample of a function that is smooth at
cell scale. Pairs of distinct cells use center-to-center distances; the
pairs inside one cell are integrated analytically against the local linear
model f(y) - f(x) = grad f . (y - x), which contributes

    h^(p(1-delta)) |grad f(x)|^p S(grad f / |grad f|)

per cell, with S the closed-form angular factor built in ``self_factor``.
Without that term the discrete form loses the part of the energy that
concentrates at scale h, which dominates as delta -> 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate as spi
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve

from ._parallel import KahanArray, chunk_ranges, det_sum, pmap
from .lattice import (Cube, Grid, CellMeasure, CellSet, ScalarField, gradient,
                      restrict)

OFFSET_CHUNK = 256


@dataclass(frozen=True)
class KernelJob:
    f: ScalarField
    delta: float
    p: float = 1.0
    domain: Cube | None = None
    outer: ScalarField | np.ndarray | None = None
    near_field: str = "gradient"

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.near_field not in ("gradient", "none"):
            raise ValueError("near_field must be 'gradient' or 'none'")


# -- angular factor of the same-cell integral --------------------------------


def _elementary(a: np.ndarray) -> list[np.ndarray]:
    """Elementary symmetric polynomials e_0..e_n of the last axis."""
    n = a.shape[-1]
    e = [np.ones(a.shape[:-1])] + [np.zeros(a.shape[:-1]) for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, 0, -1):
            e[j] = e[j] + a[..., i] * e[j - 1]
    return e


def _radial_weight(omega: np.ndarray, s: float) -> np.ndarray:
    """int_0^R rho^(s-1) prod_i (1 - rho |omega_i|) d rho, R = 1/max|omega_i|."""
    a = np.abs(omega)
    R = 1.0 / a.max(axis=-1)
    e = _elementary(a)
    return sum((-1) ** j * e[j] * R ** (s + j) / (s + j) for j in range(len(e)))


@lru_cache(maxsize=64)
def _factor_table(n: int, p: float, s: float):
    """Angular factor S(e) on a table over the directions of e in the first orthant."""
    if n == 1:
        return 2.0 / (s * (s + 1.0))
    if n == 2:
        K = 4096
        theta = (np.arange(K) + 0.5) * (2 * np.pi / K)
        omega = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        W = _radial_weight(omega, s) * (2 * np.pi / K)
        phi = np.linspace(0.0, np.pi / 2, 257)
        e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        vals = (np.abs(e @ omega.T) ** p) @ W
        return phi, vals
    # n == 3: Gauss-Legendre in cos(polar angle) times midpoints in azimuth
    z, wz = np.polynomial.legendre.leggauss(96)
    K = 192
    az = (np.arange(K) + 0.5) * (2 * np.pi / K)
    zz, aa = np.meshgrid(z, az, indexing="ij")
    rr = np.sqrt(1 - zz**2)
    omega = np.stack([rr * np.cos(aa), rr * np.sin(aa), zz], axis=-1).reshape(-1, 3)
    W = (_radial_weight(omega, s).reshape(zz.shape) * wz[:, None] * (2 * np.pi / K)).ravel()
    th = np.linspace(0.0, np.pi / 2, 33)
    ph = np.linspace(0.0, np.pi / 2, 33)
    T, P = np.meshgrid(th, ph, indexing="ij")
    e = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    vals = ((np.abs(e @ omega.T) ** p) @ W).reshape(T.shape)
    return RegularGridInterpolator((th, ph), vals)


def self_factor(direction: Sequence[np.ndarray], p: float, s: float) -> np.ndarray:
    """S(e) per cell for unit directions given as per-axis component arrays."""
    n = len(direction)
    table = _factor_table(n, float(p), float(s))
    if n == 1:
        return np.full(np.shape(direction[0]), table)
    comps = [np.abs(c) for c in direction]
    if n == 2:
        phi = np.arctan2(comps[1], comps[0])
        return np.interp(phi, table[0], table[1])
    theta = np.arccos(np.clip(comps[2], 0.0, 1.0))
    phi = np.arctan2(comps[1], comps[0])
    pts = np.stack([theta.ravel(), phi.ravel()], axis=-1)
    return table(pts).reshape(comps[0].shape)


def self_cell_term(f: ScalarField, delta: float, p: float) -> np.ndarray:
    """Same-cell contribution to the inner integral, per cell."""
    if f.grid.N < 2:
        return np.zeros(f.grid.shape)
    comps = gradient(f)
    mag = np.sqrt(sum(c * c for c in comps))
    s = p * (1.0 - delta)
    safe = np.where(mag > 0, mag, 1.0)
    factor = self_factor([c / safe for c in comps], p, s)
    return np.where(mag > 0, f.grid.h**s * mag**p * factor, 0.0)


# -- Gagliardo form ----------------------------------------------------------


def positive_offsets(n: int, N: int) -> list[tuple[int, ...]]:
    """Nonzero offsets with |d_i| < N whose first nonzero entry is positive."""
    out = []
    for d in itertools.product(range(-(N - 1), N), repeat=n):
        first = next((x for x in d if x != 0), 0)
        if first > 0:
            out.append(d)
    return out


def _pair_slices(d: Sequence[int], N: int):
    a, b = [], []
    for di in d:
        if di >= 0:
            a.append(slice(0, N - di))
            b.append(slice(di, N))
        else:
            a.append(slice(-di, N))
            b.append(slice(0, N + di))
    return tuple(a), tuple(b)


def inner_integral(f: ScalarField, delta: float, p: float = 1.0,
                   near_field: str = "gradient") -> np.ndarray:
    """Phi(x) = int_Q |f(x)-f(y)|^p / |x-y|^(n+delta p) dy at every cell of f's grid."""
    grid = f.grid
    n, N, h = grid.n, grid.N, grid.h
    vals = np.asarray(f.values, dtype=float)
    expo = -(n + delta * p)
    offsets = positive_offsets(n, N)

    def run(bounds):
        lo, hi = bounds
        acc = np.zeros(grid.shape)
        for d in offsets[lo:hi]:
            a, b = _pair_slices(d, N)
            diff = np.abs(vals[a] - vals[b])
            if p != 1:
                diff = diff**p
            k = (h * math.sqrt(sum(x * x for x in d))) ** expo * h**n
            term = diff * k
            acc[a] += term
            acc[b] += term
        return acc

    partials = pmap(run, chunk_ranges(len(offsets), OFFSET_CHUNK))
    total = KahanArray(grid.shape)
    for part in partials:
        total.add(Ellipsis, part)
    phi = total.value()
    if near_field == "gradient":
        phi = phi + self_cell_term(f, delta, p)
    if not np.all(np.isfinite(phi)):
        raise ArithmeticError("non-finite Gagliardo accumulation")
    return phi


def _outer_array(job: KernelJob, grid: Grid, sl) -> np.ndarray:
    if job.outer is None:
        return np.ones(grid.shape)
    g = job.outer
    if isinstance(g, ScalarField):
        if g.grid != job.f.grid:
            raise ValueError("outer density lives on a different grid")
        g = g.values
    g = np.asarray(g, dtype=float)
    if g.shape != job.f.grid.shape:
        raise ValueError("outer density has the wrong shape")
    g = g[sl]
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("outer density must be finite and nonnegative")
    return g


def _domain_block(f: ScalarField, domain: Cube | None):
    if domain is None or domain == f.grid.cube:
        return f, tuple(slice(None) for _ in range(f.grid.n))
    start, w = f.grid.cube_block(domain)
    return restrict(f, start, w), f.grid.block_slices(start, w)


def gagliardo_form(job: KernelJob) -> float:
    """sum_x g(x) Phi(x) h^n over the cells of the domain."""
    fq, sl = _domain_block(job.f, job.domain)
    g = _outer_array(job, fq.grid, sl)
    phi = inner_integral(fq, job.delta, job.p, job.near_field)
    total = det_sum(g * phi) * fq.grid.cell_volume
    if not math.isfinite(total):
        raise ArithmeticError("non-finite Gagliardo form")
    return total


def gagliardo_forms(f: ScalarField, delta: float, p: float, outers: Sequence, domain: Cube | None = None,
                    near_field: str = "gradient") -> list[float]:
    """Several outer densities against one inner integral."""
    fq, sl = _domain_block(f, domain)
    phi = inner_integral(fq, delta, p, near_field)
    out = []
    for g in outers:
        arr = _outer_array(KernelJob(f, delta, p, domain, g), fq.grid, sl)
        out.append(det_sum(arr * phi) * fq.grid.cell_volume)
    return out


def bbm_probe(f: ScalarField, deltas: Sequence[float], p: float = 1.0, domain: Cube | None = None,
              near_field: str = "gradient") -> list[tuple[float, float]]:
    """(delta, (1 - delta) * form) for each delta."""
    return [(d, (1 - d) * gagliardo_form(KernelJob(f, d, p, domain, None, near_field))) for d in deltas]


# -- annulus averages ---------------------------------------------------------


def _annulus_stencil(n: int, h: float, r: float) -> np.ndarray:
    R = int(math.ceil(r / h))
    ax = np.arange(-R, R + 1) * h
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    dist = np.sqrt(sum(g * g for g in grids))
    return ((dist >= r / 2) & (dist < r)).astype(float)


def _correlate_counts(indicator: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    full = fftconvolve(indicator, stencil, mode="same")
    return np.rint(full)


def _direct_counts(indicator: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    n = indicator.ndim
    N = indicator.shape[0]
    R = stencil.shape[0] // 2
    out = np.zeros(indicator.shape)
    for off in zip(*np.nonzero(stencil)):
        d = [o - R for o in off]
        src, dst = [], []
        for di in d:
            if abs(di) >= N:
                break
            if di >= 0:
                src.append(slice(di, N))
                dst.append(slice(0, N - di))
            else:
                src.append(slice(0, N + di))
                dst.append(slice(-di, N))
        else:
            out[tuple(dst)] += indicator[tuple(src)]
    return out


def annulus_counts(member: np.ndarray, h: float, r: float, method: str = "fft") -> tuple[np.ndarray, np.ndarray]:
    """Cells of the block and of the set inside r/2 <= |y - x| < r, for each x."""
    n = member.ndim
    stencil = _annulus_stencil(n, h, r)
    ones = np.ones(member.shape)
    if method == "fft":
        return _correlate_counts(ones, stencil), _correlate_counts(member.astype(float), stencil)
    if method == "direct":
        return _direct_counts(ones, stencil), _direct_counts(member.astype(float), stencil)
    raise ValueError(f"unknown method {method!r}")


def annulus_average(E: CellSet, Q: Cube | None, k: int, method: str = "fft") -> float:
    """avg over x in Q of avg over y in the k-th annulus of x of |1_E(x) - 1_E(y)|."""
    grid = E.grid
    Q = grid.cube if Q is None else Q
    start, w = grid.cube_block(Q)
    member = np.asarray(E.member)[grid.block_slices(start, w)]
    r = Q.side / 2**k
    if r / 2 < 2 * grid.h * (1 - 1e-12):
        raise ValueError("unresolved annulus: inner radius must span at least two cells")
    total, inside = annulus_counts(member, grid.h, r, method)
    frac = np.where(member, (total - inside) / total, inside / total)
    return det_sum(frac) / member.size


def annulus_form(E: CellSet, Q: Cube | None, k: int, s: float = 0.0, method: str = "fft") -> float:
    """2^(k+s) times the annulus average."""
    if s < 0:
        raise ValueError("s must be >= 0")
    return 2.0 ** (k + s) * annulus_average(E, Q, k, method)


# -- Riesz potential ----------------------------------------------------------


@lru_cache(maxsize=64)
def self_kernel_constant(n: int, alpha: float) -> float:
    """int over [-1/2, 1/2]^n of |u|^(alpha - n) du."""
    if not 0 < alpha < n:
        raise ValueError("alpha must lie in (0, n)")
    lead = 2 * n * 0.5**alpha / alpha
    e = (alpha - n) / 2
    if n == 1:
        return lead
    if n == 2:
        G, _ = spi.quad(lambda v: (1 + v * v) ** e, -1, 1, epsabs=1e-14, epsrel=1e-13)
    else:
        G, _ = spi.dblquad(lambda v, u: (1 + u * u + v * v) ** e, -1, 1, -1, 1, epsabs=1e-13, epsrel=1e-12)
    return lead * G


def riesz_kernel(grid: Grid, alpha: float) -> np.ndarray:
    n, N, h = grid.n, grid.N, grid.h
    ax = np.arange(-(N - 1), N) * h
    grids = np.meshgrid(*([ax] * n), indexing="ij")
    dist = np.sqrt(sum(g * g for g in grids))
    centre = (N - 1,) * n
    dist[centre] = 1.0
    ker = dist ** (alpha - n)
    ker[centre] = h ** (alpha - n) * self_kernel_constant(n, alpha)
    return ker


def riesz_potential(mu: CellMeasure, Q: Cube | None, alpha: float) -> ScalarField:
    """I_alpha(1_Q mu) at every cell center of the measure's grid."""
    grid = mu.grid
    if not 0 < alpha < grid.n:
        raise ValueError("alpha must lie in (0, n)")
    mass = np.array(mu.mass, dtype=float)
    if Q is not None and Q != grid.cube:
        start, w = grid.cube_block(Q)
        keep = np.zeros(grid.shape, dtype=bool)
        keep[grid.block_slices(start, w)] = True
        mass = np.where(keep, mass, 0.0)
    if not np.any(mass):
        return ScalarField(grid, np.zeros(grid.shape))
    ker = riesz_kernel(grid, alpha)
    N = grid.N
    full = fftconvolve(mass, ker, mode="full")
    sl = tuple(slice(N - 1, 2 * N - 1) for _ in range(grid.n))
    vals = np.maximum(full[sl], 0.0)
    return ScalarField(grid, vals)


def riesz_potential_direct(mu: CellMeasure, Q: Cube | None, alpha: float) -> np.ndarray:
    """Cell-by-cell summation of the same discrete potential (reference path)."""
    grid = mu.grid
    mass = np.array(mu.mass, dtype=float)
    if Q is not None and Q != grid.cube:
        start, w = grid.cube_block(Q)
        keep = np.zeros(grid.shape, dtype=bool)
        keep[grid.block_slices(start, w)] = True
        mass = np.where(keep, mass, 0.0)
    centers = np.stack([np.broadcast_to(c, grid.shape).ravel() for c in grid.centers()], axis=-1)
    flat = mass.ravel()
    self_k = grid.h ** (alpha - grid.n) * self_kernel_constant(grid.n, alpha)
    out = np.empty(flat.size)
    for i, c in enumerate(centers):
        d = np.sqrt(((centers - c) ** 2).sum(axis=1))
        d[i] = 1.0
        k = d ** (alpha - grid.n)
        k[i] = self_k
        out[i] = math.fsum((flat * k).tolist())
    return out.reshape(grid.shape)


def riesz_bound_constant(n: int, alpha: float) -> float:
    return 2.0 ** (n - alpha) * n / alpha
