"""Perimeters and isoperimetric-type ratios for cell sets.

Every report carries the left side, the constant-free right side and their
ratio, which is the empirical value of the unknown dimensional constant.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._parallel import det_sum
from .dyadic import CubeFamily, count_pyramid
from .kernels import annulus_average
from .lattice import Cube, Grid, CellSet


@dataclass
class IsoReport:
    lhs: float
    rhs_core: float
    params: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return safe_ratio(self.lhs, self.rhs_core)


def safe_ratio(lhs: float, rhs: float) -> float:
    """lhs/rhs with 0/0 = 0 and positive/0 = inf."""
    if rhs == 0:
        return 0.0 if lhs == 0 else math.inf
    return lhs / rhs


@dataclass(frozen=True)
class CellCube:
    """A cube made of whole cells: start index per axis and width in cells."""

    start: tuple[int, ...]
    width: int

    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(s, s + self.width) for s in self.start)

    def cube(self, grid: Grid) -> Cube:
        corner = tuple(grid.cube.corner[a] + self.start[a] * grid.h for a in range(grid.n))
        return Cube(grid.n, corner, self.width * grid.h)

    def overlaps(self, other: "CellCube") -> bool:
        return all(a < b + other.width and b < a + self.width for a, b in zip(self.start, other.start))


def _block(E: CellSet, Q: Cube | None) -> tuple[np.ndarray, tuple[int, ...], int]:
    grid = E.grid
    Q = grid.cube if Q is None else Q
    start, w = grid.cube_block(Q)
    return np.asarray(E.member)[grid.block_slices(start, w)], start, w


def _power(x: float, e: float) -> float:
    return 0.0 if x == 0 else x**e


def discrete_perimeter(E: CellSet, Q: Cube | None = None) -> float:
    """Interior faces of Q separating a member cell from a non-member, times h^(n-1)."""
    member, _, _ = _block(E, Q)
    faces = 0
    for ax in range(member.ndim):
        faces += int(np.count_nonzero(np.diff(member.astype(np.int8), axis=ax)))
    return faces * E.grid.h ** (E.grid.n - 1)


def relative_isoperimetric_ratio(E: CellSet, Q: Cube | None = None) -> IsoReport:
    member, _, w = _block(E, Q)
    n = E.grid.n
    inside = int(np.count_nonzero(member))
    vol = E.grid.cell_volume
    small = min(inside, member.size - inside) * vol
    return IsoReport(_power(small, (n - 1) / n), discrete_perimeter(E, Q), {"n": n, "m": E.grid.m})


def annulus_deviation(E: CellSet, Q0: Cube, Q: Cube, a: float, density_epsilon: float = 0.25) -> IsoReport:
    """|Q| against the integral over Q of |1_E(x) - E-density of A(x)|,
    A(x) = Q0 ∩ B(x, a) minus B(x, a/2).

    Flags record the density window of E in Q and the explicit-constant
    outcome |Q| <= (4/eps) * rhs.
    """
    grid = E.grid
    n, h = grid.n, grid.h
    if not 0 < density_epsilon < 0.5:
        raise ValueError("density epsilon must lie in (0, 1/2)")
    if a > Q0.side / 2 * (1 + 1e-12):
        raise ValueError("annulus radius must be at most side(Q0)/2")
    if Q.side > a * math.sqrt(math.pi) / (2 ** (n + 4) * n) * (1 + 1e-12):
        raise ValueError("side(Q) exceeds a sqrt(pi) / (2^(n+4) n)")
    if a / 2 < 2 * h * (1 - 1e-12):
        raise ValueError("unresolved annulus: inner radius must span at least two cells")
    s0, w0 = grid.cube_block(Q0)
    sq, wq = grid.cube_block(Q)
    if any(b < a0 or b + wq > a0 + w0 for a0, b in zip(s0, sq)):
        raise ValueError("Q must lie inside Q0")
    member = np.asarray(E.member)
    R = int(math.ceil(a / h))
    offs = np.arange(-R, R + 1) * h
    dist = np.sqrt(sum(g * g for g in np.meshgrid(*([offs] * n), indexing="ij")))
    ring = (dist >= a / 2) & (dist < a)
    dev = []
    for cell in itertools.product(*[range(s, s + wq) for s in sq]):
        lo = [max(c - R, s) for c, s in zip(cell, s0)]
        hi = [min(c + R + 1, s + w0) for c, s in zip(cell, s0)]
        win = tuple(slice(l, u) for l, u in zip(lo, hi))
        st = tuple(slice(l - c + R, u - c + R) for l, u, c in zip(lo, hi, cell))
        mask = ring[st]
        total = int(np.count_nonzero(mask))
        hit = int(np.count_nonzero(mask & member[win]))
        dev.append(abs(float(member[cell]) - hit / total))
    rhs = det_sum(np.asarray(dev)) * grid.cell_volume
    lhs = Q.volume
    count = int(np.count_nonzero(member[grid.block_slices(sq, wq)]))
    dens = count / wq**n
    in_window = density_epsilon <= dens <= 1 - density_epsilon
    const = 4.0 / density_epsilon
    return IsoReport(
        lhs, rhs,
        {"n": n, "m": grid.m, "a": a, "epsilon": density_epsilon},
        {"density": dens, "density_window": in_window, "explicit_constant": const,
         "pass_explicit": lhs <= const * rhs},
    )


def one_scale_decompose(E: CellSet, Q0: Cube | None, k: int) -> tuple[CubeFamily, IsoReport]:
    """Disjoint cubes of side 2^-k side(Q0) on which E has intermediate density.

    When the union A of generation-k cubes with density >= 2^-(n+2) fills at
    most 3/4 of Q0, each such cube with a low-density face neighbour P is slid
    towards P one cell at a time and stopped at the last position whose
    density is still >= 2^-(n+2); the slid cubes are then thinned greedily to
    a disjoint collection. Otherwise the dyadic cubes with density in
    [2^-(n+2), 3/4] are returned. Densities land in the band
    [2^-(n+2), 3/4 + kappa] with kappa = 1/(cells per cube side).
    """
    grid = E.grid
    n = grid.n
    Q0 = grid.cube if Q0 is None else Q0
    member, start, W = _block(E, Q0)
    depth = W.bit_length() - 1
    if 2**depth != W:
        raise ValueError("Q0 must span a power-of-two number of cells")
    if not 0 <= k <= depth - 1:
        raise ValueError("k must lie in [0, depth - 1]")
    total = int(np.count_nonzero(member))
    dens0 = Fraction(total, W**n)
    if not Fraction(1, 2 ** (n + 1)) <= dens0 <= Fraction(1, 2):
        raise ValueError("density of E in Q0 must lie in [2^-(n+1), 1/2]")
    c = W >> k
    cells = c**n
    low = Fraction(cells, 2 ** (n + 2))
    counts = count_pyramid(member.astype(np.int64), depth)[k]
    good = counts * 2 ** (n + 2) >= cells
    M = 2**k
    picked: list[CellCube] = []
    if 4 * int(np.count_nonzero(good)) <= 3 * M**n:
        candidates = []
        for idx in itertools.product(range(M), repeat=n):
            if not good[idx]:
                continue
            nb = None
            for ax in range(n):
                for step in (-1, 1):
                    j = list(idx)
                    j[ax] += step
                    if 0 <= j[ax] < M and not good[tuple(j)]:
                        nb = (ax, step)
                        break
                if nb:
                    break
            if nb is None:
                continue
            ax, step = nb
            base = [i * c for i in idx]
            last = None
            for t in range(c + 1):
                pos = list(base)
                pos[ax] += step * t
                box = CellCube(tuple(pos), c)
                if int(np.count_nonzero(member[box.slices()])) >= low:
                    last = box
                else:
                    break
            if last is None:
                raise RuntimeError("sliding construction failed")
            candidates.append(last)
        for cand in candidates:
            if not any(cand.overlaps(p) for p in picked):
                picked.append(cand)
        route = "slide"
    else:
        for idx in itertools.product(range(M), repeat=n):
            if good[idx] and 4 * int(counts[idx]) <= 3 * cells:
                picked.append(CellCube(tuple(i * c for i in idx), c))
        route = "dyadic"
    picked = [CellCube(tuple(s + o for s, o in zip(p.start, start)), p.width) for p in picked]
    vol = cells * grid.cell_volume
    dens = [int(np.count_nonzero(np.asarray(E.member)[p.slices()])) / cells for p in picked]
    kappa = 1.0 / c
    report = IsoReport(
        2.0**-k * Q0.volume, len(picked) * vol,
        {"n": n, "m": grid.m, "k": k},
        {"route": route, "kappa": kappa, "densities": dens,
         "band_ok": all(2.0 ** -(n + 2) - kappa <= d <= 0.75 + kappa for d in dens)},
    )
    return CubeFamily(picked, disjoint=True), report


def frac_isoperimetric_ratio(E: CellSet, Q: Cube | None, k: int, s: float = 0.0) -> IsoReport:
    """(|Q∩E|/|Q|)^((n-1)/n) against 2^(k+s) times the annulus average."""
    member, _, w = _block(E, Q)
    n = E.grid.n
    if k < 1:
        raise ValueError("k must be >= 1")
    if s < 0:
        raise ValueError("s must be >= 0")
    count = int(np.count_nonzero(member))
    dens = count / member.size
    floor = 2.0 ** (-(k + s) * n)
    if not (dens >= floor and 2 * count <= member.size):
        raise ValueError("density of E in Q must lie in [2^-(k+s)n, 1/2]")
    Qc = E.grid.cube if Q is None else Q
    rhs = 2.0 ** (k + s) * annulus_average(E, Qc, k)
    return IsoReport(_power(dens, (n - 1) / n), rhs, {"n": n, "m": E.grid.m, "k": k, "s": s})


def remark_ratio(E: CellSet, Q: Cube | None, k: int) -> IsoReport:
    """2^k times the annulus average against perimeter / |Q|^((n-1)/n)."""
    n = E.grid.n
    Qc = E.grid.cube if Q is None else Q
    lhs = 2.0**k * annulus_average(E, Qc, k)
    rhs = discrete_perimeter(E, Qc) / Qc.volume ** ((n - 1) / n)
    return IsoReport(lhs, rhs, {"n": n, "m": E.grid.m, "k": k})
