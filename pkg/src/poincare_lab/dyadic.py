"""Dyadic cubes, the Calderón–Zygmund stopping-time decomposition, and
fractional maximal functions (dyadic, exhaustive and shifted-dyadic).

Dyadic cubes are addressed by ``(generation, index)`` relative to a root
cube that is aligned with the grid cells and spans a power-of-two number of
cells. Density comparisons are carried out on integer cell counts with
rational thresholds, so stopping decisions never depend on rounding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d

from .lattice import Cube, Grid, CellMeasure, CellSet, ScalarField

BRUTE_LIMIT = 2**16


@dataclass(frozen=True)
class DyadicCube:
    root: Cube
    k: int
    index: tuple[int, ...]

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("generation must be >= 0")
        index = tuple(int(i) for i in self.index)
        if len(index) != self.root.dim or any(not 0 <= i < 2**self.k for i in index):
            raise ValueError("index out of range for generation")
        object.__setattr__(self, "index", index)

    @property
    def side(self) -> float:
        return self.root.side / 2**self.k

    @property
    def cube(self) -> Cube:
        corner = tuple(self.root.corner[a] + self.index[a] * self.side for a in range(self.root.dim))
        return Cube(self.root.dim, corner, self.side)

    @property
    def volume(self) -> float:
        return self.side**self.root.dim

    def parent(self) -> "DyadicCube":
        if self.k == 0:
            raise ValueError("the root has no parent")
        return DyadicCube(self.root, self.k - 1, tuple(i // 2 for i in self.index))

    def children(self) -> list["DyadicCube"]:
        n = self.root.dim
        return [
            DyadicCube(self.root, self.k + 1, tuple(2 * i + b for i, b in zip(self.index, bits)))
            for bits in itertools.product((0, 1), repeat=n)
        ]

    def contains(self, other: "DyadicCube") -> bool:
        if other.root != self.root or other.k < self.k:
            return False
        shift = other.k - self.k
        return all(j >> shift == i for i, j in zip(self.index, other.index))

    def block(self, grid: Grid) -> tuple[tuple[int, ...], int]:
        """Cell start indices and width of this cube inside ``grid``."""
        start, width = grid.cube_block(self.root)
        w = width >> self.k
        if w << self.k != width or w < 1:
            raise ValueError("cube is finer than the grid")
        return tuple(s + i * w for s, i in zip(start, self.index)), w

    def slices(self, grid: Grid) -> tuple[slice, ...]:
        start, w = self.block(grid)
        return tuple(slice(s, s + w) for s in start)


@dataclass
class CubeFamily:
    """A list of cubes; ``disjoint`` records that interiors do not overlap."""

    members: list = field(default_factory=list)
    disjoint: bool = True

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def enumerate_dyadic(root: Cube, k: int) -> list[DyadicCube]:
    if k < 0:
        raise ValueError("generation must be >= 0")
    return [DyadicCube(root, k, idx) for idx in itertools.product(range(2**k), repeat=root.dim)]


def _root_block(grid: Grid, root: Cube | None) -> tuple[tuple[slice, ...], int, int]:
    """Slices, width in cells and depth of a power-of-two root block."""
    if root is None:
        return tuple(slice(0, grid.N) for _ in range(grid.n)), grid.N, grid.m
    start, w = grid.cube_block(root)
    depth = w.bit_length() - 1
    if 2**depth != w:
        raise ValueError("root must span a power-of-two number of cells")
    return tuple(slice(s, s + w) for s in start), w, depth


def count_pyramid(values: np.ndarray, depth: int) -> list[np.ndarray]:
    """Sums over every dyadic generation: entry g has shape (2^g,)*n."""
    n = values.ndim
    levels = [None] * (depth + 1)
    cur = values
    levels[depth] = cur
    for g in range(depth - 1, -1, -1):
        side = 2**g
        shape = []
        for _ in range(n):
            shape += [side, 2]
        cur = cur.reshape(shape).sum(axis=tuple(range(1, 2 * n, 2)))
        levels[g] = cur
    return levels


def cz_decompose(E: CellSet, root: Cube | None, lam: float) -> CubeFamily:
    """Calderón–Zygmund cubes of E in ``root`` at level ``lam``.

    Starting from the root, a cube is selected as soon as its E-density
    exceeds 2^-n lam; otherwise it is split and its children are examined.
    Cubes without E cells are never selected and need no further splitting.
    """
    if not 0 < lam < 1:
        raise ValueError("level must lie in (0, 1)")
    grid = E.grid
    root = grid.cube if root is None else root
    sl, width, depth = _root_block(grid, root)
    n = grid.n
    counts = count_pyramid(np.asarray(E.member[sl], dtype=np.int64), depth)
    level = Fraction(lam)
    total_cells = width**n
    if Fraction(int(counts[0].reshape(-1)[0])) > level * total_cells:
        raise ValueError("precondition |Q ∩ E| <= lam |Q| fails on the root")

    selected = []
    frontier = [tuple([0] * n)]
    for g in range(depth + 1):
        cells = (width >> g) ** n
        threshold = level * cells / 2**n
        nxt = []
        for idx in frontier:
            c = int(counts[g][idx])
            if c == 0:
                continue
            if c > threshold:
                selected.append(DyadicCube(root, g, idx))
            elif g < depth:
                for bits in itertools.product((0, 1), repeat=n):
                    nxt.append(tuple(2 * i + b for i, b in zip(idx, bits)))
        frontier = nxt
    return CubeFamily(selected, disjoint=True)


def cube_count(E: CellSet, q: DyadicCube) -> int:
    return int(np.count_nonzero(E.member[q.slices(E.grid)]))


def _expand(values: np.ndarray, reps: int) -> np.ndarray:
    out = values
    for ax in range(values.ndim):
        out = np.repeat(out, reps, axis=ax)
    return out


def dyadic_fractional_maximal(mu: CellMeasure, root: Cube | None, alpha: float,
                              max_generation: int | None = None) -> ScalarField:
    """Largest side^alpha mu(Q)/|Q| over the dyadic ancestors Q of each cell.

    The result lives on the grid of ``root`` (the measure's grid when the
    root is the whole grid cube).
    """
    grid = mu.grid
    n = grid.n
    if not 0 <= alpha <= n:
        raise ValueError("alpha must lie in [0, n]")
    root = grid.cube if root is None else root
    sl, width, depth = _root_block(grid, root)
    top = depth if max_generation is None else min(depth, max_generation)
    masses = count_pyramid(np.asarray(mu.mass[sl], dtype=float), depth)
    best = np.zeros((width,) * n)
    for g in range(top + 1):
        side = root.side / 2**g
        val = masses[g] * side ** (alpha - n)
        best = np.maximum(best, _expand(val, width >> g))
    sub = grid if width == grid.N else grid.subgrid(tuple(s.start for s in sl), width)
    return ScalarField(sub, best)


# -- exhaustive and shifted maximal functions --------------------------------


def window_sums(values: np.ndarray, t: int, axes: Sequence[int]) -> np.ndarray:
    """Sums over every window of ``t`` consecutive cells along each axis."""
    out = np.asarray(values, dtype=np.longdouble)
    for ax in axes:
        c = np.cumsum(out, axis=ax)
        pad = [(0, 0)] * out.ndim
        pad[ax] = (1, 0)
        c = np.pad(c, pad)
        hi = [slice(None)] * out.ndim
        lo = [slice(None)] * out.ndim
        hi[ax] = slice(t, None)
        lo[ax] = slice(None, -t)
        out = c[tuple(hi)] - c[tuple(lo)]
    return np.maximum(out, 0).astype(float)


def spread_max(values: np.ndarray, t: int, axes: Sequence[int]) -> np.ndarray:
    """Given window values at the N-t+1 starts, the max over windows covering each cell."""
    out = values
    for ax in axes:
        if t == 1:
            continue
        pad = [(0, 0)] * out.ndim
        pad[ax] = (t - 1, t - 1)
        padded = np.pad(out, pad, constant_values=-np.inf)
        filt = maximum_filter1d(padded, size=t, axis=ax, mode="constant", cval=-np.inf)
        keep = [slice(None)] * out.ndim
        # filt[i] covers padded[i - t//2 .. i - t//2 + t - 1]
        keep[ax] = slice(t // 2, t // 2 + out.shape[ax] + t - 1)
        out = filt[tuple(keep)]
    return out


def brute_maximal_array(mass: np.ndarray, h: float, alpha: float, batch: bool = False) -> np.ndarray:
    """Exhaustive sup over grid-aligned cubes inside the array's cube.

    With ``batch`` the leading axis indexes independent problems.
    """
    n = mass.ndim - (1 if batch else 0)
    axes = tuple(range(mass.ndim - n, mass.ndim))
    N = mass.shape[-1]
    best = np.zeros(mass.shape)
    for t in range(1, N + 1):
        sums = window_sums(mass, t, axes)
        scale = (t * h) ** (alpha - n)
        best = np.maximum(best, spread_max(sums, t, axes) * scale)
    return best


def _shift_blocks(N: int, side: int, shift: int) -> tuple[np.ndarray, int]:
    """Start cell and width of the outward-rounded shifted dyadic interval
    containing each cell.

    The shifted grid has intervals [o + j side, o + (j+1) side) with
    o = shift N / 3 cells. Rounding outward gives side + 1 cells when o is
    not an integer. Starts may be negative or overshoot; callers slide them.
    """
    frac = (shift * N) % 3 != 0
    width = side + (1 if frac else 0)
    centers6 = 6 * np.arange(N) + 3  # 6 * (i + 1/2)
    off6 = 2 * shift * N  # 6 * o
    j = np.floor_divide(centers6 - off6, 6 * side)
    start = np.floor_divide(off6 + 6 * side * j, 6)
    return start.astype(np.int64), width


def shifted_maximal_array(mass: np.ndarray, h: float, alpha: float) -> np.ndarray:
    """Max over the dyadic grid and its translates by thirds of the side.

    Each cell takes, per translate and generation, the value of the (rounded,
    clamped) shifted cube containing it; every such cube is a genuine cube
    inside the grid that contains the cell, so the result is a lower bound
    of the exhaustive supremum.
    """
    n = mass.ndim
    N = mass.shape[0]
    m = N.bit_length() - 1
    pref = np.asarray(mass, dtype=np.longdouble)
    for ax in range(n):
        pref = np.cumsum(pref, axis=ax)
        pad = [(0, 0)] * n
        pad[ax] = (1, 0)
        pref = np.pad(pref, pad)
    best = np.zeros(mass.shape)
    for shifts in itertools.product(range(3), repeat=n):
        for g in range(m + 1):
            side = N >> g
            raw = [_shift_blocks(N, side, shifts[ax]) for ax in range(n)]
            # one common width keeps every box a cube; sliding it inside the
            # grid keeps the cell covered
            w = min(N, max(r[1] for r in raw))
            starts = [np.clip(r[0], 0, N - w) for r in raw]
            # box sums by inclusion-exclusion on the prefix array
            total = np.zeros(mass.shape, dtype=np.longdouble)
            for corner in itertools.product((0, 1), repeat=n):
                idx = []
                for ax in range(n):
                    pos = starts[ax] + (w if corner[ax] else 0)
                    shape = [1] * n
                    shape[ax] = N
                    idx.append(pos.reshape(shape))
                sign = (-1) ** (n - sum(corner))
                total = total + sign * pref[tuple(idx)]
            val = np.maximum(total, 0).astype(float) * (w * h) ** (alpha - n)
            best = np.maximum(best, val)
    return best


def global_fractional_maximal(mu: CellMeasure, grid: Grid | None = None, alpha: float = 0.0,
                              mode: str = "brute", force: bool = False) -> ScalarField:
    """sup of side^alpha mu(Q)/|Q| over cubes Q containing each cell.

    ``brute`` searches every cube with grid-aligned corners inside the grid
    cube; ``shifted`` uses the dyadic grid and its 3^n one-third translates.
    """
    grid = mu.grid if grid is None else grid
    if grid != mu.grid:
        raise ValueError("measure lives on a different grid")
    n = grid.n
    if not 0 <= alpha <= n:
        raise ValueError("alpha must lie in [0, n]")
    mass = np.asarray(mu.mass)
    if mode == "brute":
        if grid.size > BRUTE_LIMIT and not force:
            raise ValueError(f"brute mode limited to {BRUTE_LIMIT} cells (grid has {grid.size})")
        vals = brute_maximal_array(mass, grid.h, alpha)
    elif mode == "shifted":
        vals = shifted_maximal_array(mass, grid.h, alpha)
    else:
        raise ValueError(f"unknown maximal mode {mode!r}")
    return ScalarField(grid, vals)


def shift_bound(n: int, alpha: float) -> float:
    """Factor by which the exhaustive maximal function can exceed the shifted one."""
    return 6.0 ** (n - alpha)
