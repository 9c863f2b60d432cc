"""Uniform dyadic grids on cubes and the cell-based objects that live on them.

Every object is sampled at cell centers: a field holds one value per cell, a
measure one mass per cell, a set one flag per cell. Arrays use ``ij``
indexing, axis ``i`` running along coordinate ``x_{i+1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from ._parallel import det_sum

MAX_DEPTH = 14


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


@dataclass(frozen=True)
class Cube:
    dim: int
    corner: tuple[float, ...]
    side: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        corner = tuple(float(c) for c in np.atleast_1d(self.corner))
        if len(corner) != self.dim:
            raise ValueError("corner length does not match dim")
        if not all(math.isfinite(c) for c in corner):
            raise ValueError("corner must be finite")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise ValueError("side must be positive and finite")
        object.__setattr__(self, "corner", corner)
        object.__setattr__(self, "side", float(self.side))

    @classmethod
    def unit(cls, dim: int) -> "Cube":
        return cls(dim, (0.0,) * dim, 1.0)

    @classmethod
    def centered(cls, dim: int, side: float, center: Sequence[float] | None = None) -> "Cube":
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(dim, tuple(c - side / 2), side)

    @property
    def volume(self) -> float:
        return self.side**self.dim

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.corner) + self.side / 2

    def dilate(self, t: float) -> "Cube":
        """Image under x -> t x."""
        return Cube(self.dim, tuple(t * c for c in self.corner), t * self.side)


@dataclass(frozen=True)
class Grid:
    cube: Cube
    m: int

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or not 0 <= self.m <= MAX_DEPTH:
            raise ValueError(f"depth m must be an integer in [0, {MAX_DEPTH}], got {self.m}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def n(self) -> int:
        return self.cube.dim

    @property
    def N(self) -> int:
        return 2**self.m

    @property
    def h(self) -> float:
        return self.cube.side / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.cube.corner[axis] + (np.arange(self.N) + 0.5) * self.h

    def centers(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for ax in range(self.n):
            shape = [1] * self.n
            shape[ax] = self.N
            out.append(self.axis_centers(ax).reshape(shape))
        return out

    def radius(self, center: Sequence[float] | None = None) -> np.ndarray:
        """|x - center| at every cell center."""
        c = np.zeros(self.n) if center is None else np.asarray(center, dtype=float)
        sq = np.zeros(self.shape)
        for ax, xs in enumerate(self.centers()):
            sq = sq + (xs - c[ax]) ** 2
        return np.sqrt(sq)

    def subgrid(self, start: Sequence[int], cells: int) -> "Grid":
        """The grid on the block of ``cells`` cells per axis starting at ``start``."""
        depth = int(round(math.log2(cells))) if cells > 0 else -1
        if cells <= 0 or 2**depth != cells:
            raise ValueError("sub-block size must be a power of two")
        if any(s < 0 or s + cells > self.N for s in start):
            raise ValueError("sub-block leaves the grid")
        corner = tuple(self.cube.corner[a] + start[a] * self.h for a in range(self.n))
        return Grid(Cube(self.n, corner, cells * self.h), depth)

    def block_slices(self, start: Sequence[int], cells: int) -> tuple[slice, ...]:
        return tuple(slice(s, s + cells) for s in start)

    def cube_block(self, cube: Cube, tol: float = 1e-9) -> tuple[tuple[int, ...], int]:
        """Cell start indices and width of a grid-aligned cube inside this grid."""
        if cube.dim != self.n:
            raise ValueError("dimension mismatch")
        width = cube.side / self.h
        w = int(round(width))
        if w < 1 or abs(width - w) > tol * max(1.0, width):
            raise ValueError("cube is not aligned with the grid cells")
        start = []
        for a in range(self.n):
            pos = (cube.corner[a] - self.cube.corner[a]) / self.h
            s = int(round(pos))
            if abs(pos - s) > tol * max(1.0, abs(pos)):
                raise ValueError("cube is not aligned with the grid cells")
            if s < 0 or s + w > self.N:
                raise ValueError("cube is not inside the grid cube")
            start.append(s)
        return tuple(start), w


def make_grid(cube: Cube, m: int) -> Grid:
    return Grid(cube, m)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_shape(grid: Grid, a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a)
    if a.shape != grid.shape:
        if a.size == grid.size:
            a = a.reshape(grid.shape)
        else:
            raise ValueError(f"{what} has {a.size} entries, grid has {grid.size} cells")
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _check_shape(self.grid, self.values, "field")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.grid, fn(np.asarray(self.values)))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def scaled(self, t: float) -> "ScalarField":
        return ScalarField(self.grid, t * self.values)

    def shifted(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values + c)


@dataclass(frozen=True, eq=False)
class CellMeasure:
    grid: Grid
    mass: np.ndarray

    def __post_init__(self):
        v = _check_shape(self.grid, self.mass, "measure")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("cell masses must be finite and nonnegative")
        object.__setattr__(self, "mass", _frozen(v))

    @property
    def total(self) -> float:
        return det_sum(self.mass)

    @property
    def density(self) -> np.ndarray:
        return self.mass / self.grid.cell_volume

    def scaled(self, t: float) -> "CellMeasure":
        return CellMeasure(self.grid, t * self.mass)

    @classmethod
    def lebesgue(cls, grid: Grid) -> "CellMeasure":
        return cls(grid, np.full(grid.shape, grid.cell_volume))


@dataclass(frozen=True, eq=False)
class WeightField:
    grid: Grid
    density: np.ndarray

    def __post_init__(self):
        v = _check_shape(self.grid, self.density, "weight")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("weight densities must be finite and strictly positive")
        object.__setattr__(self, "density", _frozen(v))

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.grid.cell_volume

    @property
    def total(self) -> float:
        return det_sum(self.mass)

    def as_measure(self) -> CellMeasure:
        return CellMeasure(self.grid, self.mass)

    def scaled(self, t: float) -> "WeightField":
        return WeightField(self.grid, t * self.density)


@dataclass(frozen=True, eq=False)
class CellSet:
    grid: Grid
    member: np.ndarray

    def __post_init__(self):
        v = _check_shape(self.grid, self.member, "set")
        v = np.array(v, dtype=bool, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "member", v)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.member))

    @property
    def volume(self) -> float:
        return self.count * self.grid.cell_volume

    @property
    def density(self) -> float:
        return self.count / self.grid.size

    def complement(self) -> "CellSet":
        return CellSet(self.grid, ~self.member)

    @classmethod
    def full(cls, grid: Grid) -> "CellSet":
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def empty(cls, grid: Grid) -> "CellSet":
        return cls(grid, np.zeros(grid.shape, dtype=bool))


@dataclass(frozen=True)
class InequalityParams:
    delta: float | None = None
    p: float = 1.0
    q: float | None = None
    alpha: float | None = None
    r: float | None = None
    s: float | None = None
    epsilon: float = 0.0

    def replace(self, **kw) -> "InequalityParams":
        d = dict(self.__dict__)
        d.update(kw)
        return InequalityParams(**d)


@dataclass(frozen=True)
class ProbeParams:
    k: int = 1
    level: float = 0.0
    annulus_radius: float | None = None
    density_epsilon: float = 0.25
    center: float = 0.0
    growth_constant: float = 0.0


def restrict(obj, start: Sequence[int], cells: int):
    """Restriction of a field, measure, weight or set to a cell block."""
    sub = obj.grid.subgrid(start, cells)
    sl = obj.grid.block_slices(start, cells)
    if isinstance(obj, ScalarField):
        return ScalarField(sub, obj.values[sl])
    if isinstance(obj, CellMeasure):
        return CellMeasure(sub, obj.mass[sl])
    if isinstance(obj, WeightField):
        return WeightField(sub, obj.density[sl])
    if isinstance(obj, CellSet):
        return CellSet(sub, obj.member[sl])
    raise TypeError(f"cannot restrict {type(obj).__name__}")


# -- sampling catalogs --------------------------------------------------------


def _center(spec: Mapping[str, Any], grid: Grid) -> np.ndarray:
    c = spec.get("center")
    if c is None:
        return np.zeros(grid.n)
    if isinstance(c, str):
        if c == "grid":
            return grid.cube.center
        raise ValueError(f"unknown center keyword {c!r}")
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.size == 1 and grid.n > 1:
        c = np.full(grid.n, float(c[0]))
    if c.size != grid.n:
        raise ValueError("center has wrong dimension")
    return c


def _vector(value, n: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if v.size == 1 and n > 1:
        return np.full(n, float(v[0]))
    if v.size != n:
        raise ValueError("vector parameter has wrong dimension")
    return v


def _indicator(spec: Mapping[str, Any], grid: Grid) -> np.ndarray:
    shape = spec.get("shape", "halfspace")
    width = float(spec.get("smoothing", 0.0))
    if shape == "halfspace":
        normal = _vector(spec.get("normal", 1.0 if grid.n == 1 else [1.0] + [0.0] * (grid.n - 1)), grid.n)
        normal = normal / np.linalg.norm(normal)
        offset = float(spec.get("offset", 0.5))
        signed = sum(normal[a] * xs for a, xs in enumerate(grid.centers())) - offset
        signed = np.broadcast_to(signed, grid.shape)
    elif shape == "ball":
        signed = float(spec["radius"]) - grid.radius(_center(spec, grid))
    elif shape == "box":
        lo = _vector(spec["lower"], grid.n)
        hi = _vector(spec["upper"], grid.n)
        signed = np.full(grid.shape, np.inf)
        for a, xs in enumerate(grid.centers()):
            signed = np.minimum(signed, np.minimum(xs - lo[a], hi[a] - xs))
    else:
        raise ValueError(f"unknown indicator shape {shape!r}")
    if width > 0:
        return np.clip(signed / width + 0.5, 0.0, 1.0)
    return (signed > 0).astype(float)


def sample_field(spec: Mapping[str, Any], grid: Grid) -> ScalarField:
    """Evaluate a catalog function at cell centers.

    Kinds: ``linear`` (a.x + b), ``quadratic`` (sum a_i x_i^2), ``log_radial``
    (min(-log|x-c|, k)), ``radial_power`` (|x-c|^beta), ``indicator``
    (halfspace/ball/box, optional linear ramp of width ``smoothing``),
    ``trig`` (sum of amp*sin(2 pi k.x + phase)), ``constant``, ``tabulated``.
    """
    kind = spec.get("kind")
    xs = grid.centers()
    if kind == "linear":
        a = _vector(spec.get("a", 1.0), grid.n)
        vals = float(spec.get("b", 0.0)) + sum(a[i] * xs[i] for i in range(grid.n))
    elif kind == "quadratic":
        a = _vector(spec.get("a", 1.0), grid.n)
        vals = sum(a[i] * xs[i] ** 2 for i in range(grid.n))
    elif kind == "log_radial":
        with np.errstate(divide="ignore"):
            vals = -np.log(grid.radius(_center(spec, grid)))
        if spec.get("k") is not None:
            vals = np.minimum(vals, float(spec["k"]))
    elif kind == "radial_power":
        with np.errstate(divide="ignore"):
            vals = grid.radius(_center(spec, grid)) ** float(spec["beta"])
    elif kind == "indicator":
        vals = _indicator(spec, grid)
    elif kind == "trig":
        vals = np.zeros(grid.shape)
        for mode in spec["modes"]:
            kv = _vector(mode.get("k", 1.0), grid.n)
            phase = sum(kv[i] * xs[i] for i in range(grid.n))
            vals = vals + float(mode.get("amp", 1.0)) * np.sin(2 * np.pi * phase + float(mode.get("phase", 0.0)))
    elif kind == "constant":
        vals = np.full(grid.shape, float(spec.get("value", 0.0)))
    elif kind == "tabulated":
        vals = np.asarray(spec["values"], dtype=float)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    vals = np.broadcast_to(vals, grid.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"field {kind!r} is not finite at some cell center")
    return ScalarField(grid, vals)


def sample_measure(spec: Mapping[str, Any], grid: Grid) -> CellMeasure:
    """Cell masses from a catalog density, evaluated at cell centers.

    Kinds: ``lebesgue``, ``ball`` (normalized Lebesgue on B(c, radius)),
    ``power`` (density |x-c|^-beta), ``single_cell`` (by ``index`` or
    ``point``), ``random`` (seeded uniform densities), ``tabulated``.
    Every kind accepts a ``scale`` factor.
    """
    kind = spec.get("kind")
    vol = grid.cell_volume
    if kind == "lebesgue":
        mass = np.full(grid.shape, vol)
    elif kind == "ball":
        rho = float(spec["radius"])
        if not rho > 0:
            raise ValueError("ball radius must be positive")
        if rho < grid.h:
            raise ValueError("unresolved measure: ball radius below one cell width")
        inside = grid.radius(_center(spec, grid)) < rho
        norm = unit_ball_volume(grid.n) * rho**grid.n if spec.get("normalized", True) else 1.0
        mass = np.where(inside, vol / norm, 0.0)
    elif kind == "power":
        beta = float(spec["beta"])
        if beta >= grid.n:
            raise ValueError("power density |x|^-beta needs beta < n")
        with np.errstate(divide="ignore"):
            mass = grid.radius(_center(spec, grid)) ** (-beta) * vol
    elif kind == "single_cell":
        mass = np.zeros(grid.shape)
        if "index" in spec:
            idx = tuple(int(i) for i in np.atleast_1d(spec["index"]))
        else:
            pt = _vector(spec["point"], grid.n)
            idx = tuple(
                int(min(grid.N - 1, max(0, math.floor((pt[a] - grid.cube.corner[a]) / grid.h))))
                for a in range(grid.n)
            )
        mass[idx] = float(spec.get("mass", 1.0))
    elif kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        lo, hi = float(spec.get("low", 0.0)), float(spec.get("high", 1.0))
        mass = rng.uniform(lo, hi, size=grid.shape) * vol
    elif kind == "tabulated":
        mass = np.asarray(spec["masses"], dtype=float)
    else:
        raise ValueError(f"unknown measure kind {kind!r}")
    mass = mass * float(spec.get("scale", 1.0))
    if not np.all(np.isfinite(mass)):
        raise ValueError(f"measure {kind!r} is not finite at some cell center")
    return CellMeasure(grid, mass)


# -- integrals, averages, medians, norms ---------------------------------------


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise ValueError("objects live on different grids")


def _masses(grid: Grid, against) -> np.ndarray:
    if against is None:
        return np.full(grid.shape, grid.cell_volume)
    _same_grid(grid, against.grid)
    return np.asarray(against.mass)


def integrate(f: ScalarField, against: CellMeasure | WeightField | None = None,
              region: CellSet | None = None) -> float:
    """Sum of value x mass over the region (Lebesgue when ``against`` is None)."""
    w = _masses(f.grid, against)
    vals = np.asarray(f.values) * w
    if region is not None:
        _same_grid(f.grid, region.grid)
        vals = np.where(region.member, vals, 0.0)
    total = det_sum(vals)
    if not math.isfinite(total):
        raise ArithmeticError("non-finite integral")
    return total


def average(f: ScalarField, region: CellSet | None = None) -> float:
    vol = f.grid.cube.volume if region is None else region.volume
    if vol == 0:
        raise ValueError("average over an empty region")
    return integrate(f, None, region) / vol


def gradient(f: ScalarField) -> tuple[np.ndarray, ...]:
    """Central differences inside, one-sided differences on boundary cells."""
    if f.grid.N < 2:
        raise ValueError("gradient needs at least two cells per axis")
    g = np.gradient(np.asarray(f.values), f.grid.h, edge_order=1)
    return (g,) if f.grid.n == 1 else tuple(g)


def gradient_magnitude(f: ScalarField) -> ScalarField:
    comps = gradient(f)
    return ScalarField(f.grid, np.sqrt(sum(c * c for c in comps)))


def level_set(f: ScalarField, lam: float, direction: str = "above") -> CellSet:
    if not math.isfinite(lam):
        raise ValueError("level must be finite")
    v = np.asarray(f.values)
    if direction == "above":
        return CellSet(f.grid, v > lam)
    if direction == "below":
        return CellSet(f.grid, v < lam)
    raise ValueError("direction must be 'above' or 'below'")


def maximal_median(f: ScalarField, region: CellSet | None = None) -> float:
    """inf{a : |{f > a}| < |A|/2}, exact over the finite set of cell values."""
    v = np.asarray(f.values)
    v = v.ravel() if region is None else v[region.member]
    if v.size == 0:
        raise ValueError("maximal median over an empty region")
    vals = np.sort(v)[::-1]
    K = vals.size
    # strictly-greater counts at each distinct value, scanned from the top
    distinct, first = np.unique(-vals, return_index=True)
    best = None
    for neg_u, greater in zip(distinct, first):
        if 2 * greater < K:
            best = -neg_u
        else:
            break
    return float(best)


def _levels(f: ScalarField, center: float, w: np.ndarray):
    """Distinct deviation levels t_1 > t_2 > ... and the mass of {|f-c| >= t_j}."""
    dev = np.abs(np.asarray(f.values).ravel() - center)
    wv = np.asarray(w).ravel()
    order = np.argsort(-dev, kind="stable")
    dev, wv = dev[order], wv[order]
    levels, idx = np.unique(-dev, return_index=True)
    levels = -levels
    cum = np.cumsum(wv)
    ends = np.r_[idx[1:], dev.size] - 1
    upper = cum[ends]
    keep = levels > 0
    return levels[keep], upper[keep]


def lp_norm(f: ScalarField, p: float, measure: CellMeasure | WeightField | None = None,
            center: float = 0.0, normalized: bool = False) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    w = _masses(f.grid, measure)
    total = det_sum(np.abs(np.asarray(f.values) - center) ** p * w)
    if normalized:
        wt = det_sum(w)
        if wt <= 0:
            raise ValueError("normalizing measure has zero total")
        total /= wt
    return total ** (1.0 / p)


def weak_norm(f: ScalarField, q: float, weight: CellMeasure | WeightField | None = None,
              center: float = 0.0) -> float:
    """sup_lambda lambda (w(|f-c| > lambda)/w(Q))^(1/q), exact over cell levels."""
    if q < 1:
        raise ValueError("q must be >= 1")
    w = _masses(f.grid, weight)
    wt = det_sum(w)
    if wt <= 0:
        raise ValueError("normalizing weight has zero total")
    levels, upper = _levels(f, center, w)
    if levels.size == 0:
        return 0.0
    return float(np.max(levels * (upper / wt) ** (1.0 / q)))


def lorentz_norm(f: ScalarField, q: float, measure: CellMeasure | WeightField | None = None,
                 center: float = 0.0) -> float:
    """q * int_0^inf mu(|f-c| > lambda)^(1/q) d lambda, exact piecewise sum."""
    if q < 1:
        raise ValueError("q must be >= 1")
    w = _masses(f.grid, measure)
    levels, upper = _levels(f, center, w)
    if levels.size == 0:
        return 0.0
    gaps = levels - np.r_[levels[1:], 0.0]
    return q * math.fsum((gaps * upper ** (1.0 / q)).tolist())


def norm(f: ScalarField, kind: str, exponent: float,
         measure: CellMeasure | WeightField | None = None, center: float = 0.0) -> float:
    if kind == "lp":
        return lp_norm(f, exponent, measure, center)
    if kind == "weak_lq":
        return weak_norm(f, exponent, measure, center)
    if kind == "lorentz_q1":
        return lorentz_norm(f, exponent, measure, center)
    raise ValueError(f"unknown norm kind {kind!r}")
