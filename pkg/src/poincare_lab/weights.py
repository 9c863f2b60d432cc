"""Weight construction, Muckenhoupt constant estimates and the D_p / SD_p^s
functional conditions.

Suprema over "all cubes" are taken over one fixed search family: the
dyadic cubes of the grid together with their translates by thirds of the
side (rounded outward to cell boundaries and slid inside the grid). Every
estimate is therefore a lower bound of the continuum constant, but all
estimates share the same family, so orderings between them are exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ._parallel import det_sum
from .dyadic import (BRUTE_LIMIT, DyadicCube, _shift_blocks, brute_maximal_array,
                     count_pyramid, dyadic_fractional_maximal, enumerate_dyadic,
                     shifted_maximal_array, spread_max, window_sums, cz_decompose)
from .kernels import KernelJob, gagliardo_form
from .lattice import (Cube, Grid, CellMeasure, CellSet, ScalarField, WeightField,
                      level_set, restrict)


@dataclass
class WeightReport:
    a1: float
    ap: dict = field(default_factory=dict)
    ainf: float = math.nan
    method: dict = field(default_factory=dict)


def make_weight(spec: Mapping, grid: Grid, measure: CellMeasure | None = None) -> WeightField:
    """Weights from a catalog: ``constant``, ``power`` |x - c|^beta (c defaults
    to the grid center), ``maximal`` (M^d_alpha mu)^t and ``tabulated``."""
    kind = spec.get("kind")
    if kind == "constant":
        dens = np.full(grid.shape, float(spec.get("value", 1.0)))
    elif kind == "power":
        beta = float(spec["beta"])
        if beta <= -grid.n:
            raise ValueError("power weight needs beta > -n")
        c = spec.get("center")
        c = grid.cube.center if c is None else np.asarray(c, dtype=float)
        r = grid.radius(np.broadcast_to(c, (grid.n,)))
        if np.any(r == 0) and beta < 0:
            raise ValueError("power weight is infinite at a cell center")
        dens = r**beta
    elif kind == "maximal":
        if measure is None:
            raise ValueError("maximal weight needs a measure")
        if measure.total == 0:
            raise ValueError("maximal weight of the zero measure")
        t = float(spec.get("exponent", 1.0))
        if not 0 < t <= 1:
            raise ValueError("maximal weight exponent must lie in (0, 1]")
        M = dyadic_fractional_maximal(measure, None, float(spec.get("alpha", 0.0)))
        dens = np.asarray(M.values) ** t
    elif kind == "two_valued":
        x0 = grid.centers()[0]
        cut = float(spec.get("cut", grid.cube.center[0]))
        dens = np.broadcast_to(np.where(x0 < cut, float(spec.get("low", 1.0)), float(spec.get("high", 4.0))),
                               grid.shape)
    elif kind == "tabulated":
        dens = np.asarray(spec["values"], dtype=float)
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    return WeightField(grid, np.broadcast_to(dens, grid.shape))


def _normalized(w: WeightField) -> np.ndarray:
    """Density divided by its geometric mean; every estimate is scale invariant."""
    d = np.asarray(w.density, dtype=float)
    return d / math.exp(det_sum(np.log(d)) / d.size)


# -- the search family --------------------------------------------------------


@dataclass(frozen=True)
class BoxFamily:
    """Cubes as (per-axis start arrays, width), grouped by shift and generation."""

    groups: tuple

    def __iter__(self):
        return iter(self.groups)


def search_family(N: int, n: int) -> BoxFamily:
    """Dyadic cubes and their one-third translates, each group a product of
    per-axis start lists with a common width."""
    m = N.bit_length() - 1
    groups = []
    seen = set()
    for shifts in itertools.product(range(3), repeat=n):
        for g in range(m + 1):
            side = N >> g
            raw = [_shift_blocks(N, side, s) for s in shifts]
            w = min(N, max(r[1] for r in raw))
            starts = tuple(tuple(np.unique(np.clip(r[0], 0, N - w)).tolist()) for r in raw)
            key = (starts, w)
            if key in seen:
                continue
            seen.add(key)
            groups.append((tuple(np.asarray(s, dtype=np.int64) for s in starts), w))
    return BoxFamily(tuple(groups))


def _prefix(values: np.ndarray) -> np.ndarray:
    pref = np.asarray(values, dtype=np.longdouble)
    for ax in range(values.ndim):
        pref = np.cumsum(pref, axis=ax)
        pad = [(0, 0)] * values.ndim
        pad[ax] = (1, 0)
        pref = np.pad(pref, pad)
    return pref


def _group_sums(pref: np.ndarray, starts: Sequence[np.ndarray], w: int) -> np.ndarray:
    """Box sums for the product of start lists (shape len(starts[0]) x ...)."""
    n = len(starts)
    total = None
    for corner in itertools.product((0, 1), repeat=n):
        idx = []
        for ax in range(n):
            shape = [1] * n
            shape[ax] = len(starts[ax])
            idx.append((starts[ax] + (w if corner[ax] else 0)).reshape(shape))
        term = pref[tuple(idx)] * (-1) ** (n - sum(corner))
        total = term if total is None else total + term
    return total


def ap_estimate(w: WeightField, p: float, family: BoxFamily | None = None) -> float:
    """sup over the family of avg(w) * avg(w^(1-p'))^(p-1), for p > 1."""
    if p <= 1:
        raise ValueError("the A_p product form needs p > 1")
    d = _normalized(w)
    n, N = w.grid.n, w.grid.N
    family = search_family(N, n) if family is None else family
    e = 1.0 - p / (p - 1.0)
    # w^(1-p') in extended precision, shifted so its largest value is 1
    logs = np.log(d).astype(np.longdouble) * e
    shift = logs.max()
    v = np.exp(logs - shift)
    pw, pv = _prefix(d), _prefix(v)
    best = 1.0
    for starts, width in family:
        cells = width**n
        aw = _group_sums(pw, starts, width) / cells
        av = _group_sums(pv, starts, width) / cells
        with np.errstate(divide="ignore"):
            logprod = np.log(aw) + (p - 1) * (np.log(av) + shift)
        best = max(best, float(np.exp(np.max(logprod))))
    return best


def a1_estimate(w: WeightField, mode: str = "auto") -> float:
    """max over cells of M w / w, with the exhaustive or shifted maximal function."""
    d = _normalized(w)
    if mode == "auto":
        mode = "brute" if w.grid.size <= BRUTE_LIMIT else "shifted"
    mass = d * w.grid.cell_volume
    if mode == "brute":
        M = brute_maximal_array(mass, w.grid.h, 0.0)
    elif mode == "shifted":
        M = shifted_maximal_array(mass, w.grid.h, 0.0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return max(1.0, float(np.max(M / d)))


def _window_set(width: int, exhaustive: bool) -> list[int]:
    if exhaustive:
        return list(range(1, width + 1))
    out = set()
    t = 1
    while t <= width:
        out.add(t)
        if t + t // 2 <= width:
            out.add(t + t // 2)
        t *= 2
    out.add(width)
    return sorted(out)


def ainf_estimate(w: WeightField, family: BoxFamily | None = None, exhaustive_cells: int = 4096) -> float:
    """sup over the family of (1/w(Q)) int_Q M(1_Q w), Fujii–Wilson form.

    Inside cubes with at most ``exhaustive_cells`` cells the maximal function
    uses every sub-cube; larger cubes use sub-cubes whose sides form a
    geometric ladder (1, 1.5, 2, 3, 4, 6, ... cells), a lower bound.
    """
    d = _normalized(w)
    n, N = w.grid.n, w.grid.N
    family = search_family(N, n) if family is None else family
    best = 1.0
    for starts, width in family:
        windows = _window_set(width, width**n <= exhaustive_cells)
        blocks = []
        for corner in itertools.product(*starts):
            sl = tuple(slice(int(s), int(s) + width) for s in corner)
            blocks.append(d[sl])
        stack = np.stack(blocks)
        M = _batched_maximal(stack, windows)
        axes = tuple(range(1, n + 1))
        ratio = M.sum(axis=axes) / stack.sum(axis=axes)
        best = max(best, float(ratio.max()))
    return best


def _batched_maximal(stack: np.ndarray, windows: Sequence[int]) -> np.ndarray:
    n = stack.ndim - 1
    axes = tuple(range(1, n + 1))
    best = np.zeros(stack.shape)
    for t in windows:
        sums = window_sums(stack, t, axes) / t**n
        best = np.maximum(best, spread_max(sums, t, axes))
    return best


def ap_constant(w: WeightField, root: Cube | None = None, ps: Sequence[float] = (2.0,),
                a1_mode: str = "auto", with_ainf: bool = True) -> WeightReport:
    """A_1, A_p for each p in ``ps`` and A_inf estimates over one search family."""
    if root is not None and root != w.grid.cube:
        start, width = w.grid.cube_block(root)
        w = restrict(w, start, width)
    family = search_family(w.grid.N, w.grid.n)
    rep = WeightReport(
        a1=a1_estimate(w, a1_mode),
        ap={float(p): ap_estimate(w, p, family) for p in ps},
        ainf=ainf_estimate(w, family) if with_ainf else math.nan,
        method={"family": "dyadic+third-shifts", "groups": len(family.groups), "a1_mode": a1_mode},
    )
    return rep


# -- cube functionals ---------------------------------------------------------


def functional_af(f: ScalarField, w: WeightField, Q: Cube | None, delta: float, p: float = 1.0,
                  form: float | None = None) -> float:
    """(1-delta)^(1/p) delta^(1/p-1) side^delta ((1/w(Q)) weighted form)^(1/p)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    grid = f.grid
    Q = grid.cube if Q is None else Q
    start, width = grid.cube_block(Q)
    wq = restrict(w, start, width)
    if form is None:
        form = gagliardo_form(KernelJob(f, delta, p, Q, ScalarField(grid, w.density)))
    return ((1 - delta) ** (1 / p) * delta ** (1 / p - 1) * Q.side**delta
            * (form / wq.total) ** (1 / p))


def dyadic_functional(f: ScalarField, w: WeightField, root: Cube | None, delta: float, p: float,
                      max_generation: int) -> dict:
    """a_f on every dyadic cube of the root up to ``max_generation``."""
    grid = f.grid
    root = grid.cube if root is None else root
    out = {}
    for k in range(max_generation + 1):
        for q in enumerate_dyadic(root, k):
            out[(k, q.index)] = functional_af(f, w, q.cube, delta, p)
    return out


def _cube_weights(w: WeightField, root: Cube, max_generation: int) -> list[np.ndarray]:
    grid = w.grid
    start, width = grid.cube_block(root)
    depth = width.bit_length() - 1
    if max_generation > depth:
        raise ValueError("max generation finer than the grid")
    block = np.asarray(w.mass)[grid.block_slices(start, width)]
    return count_pyramid(block, depth)[: max_generation + 1]


def _family_ratio(members, a, wq, w_root, a_root, p, mode, s, n):
    num = math.fsum(a[(k, idx)] ** p * wq[k][idx] for k, idx in members) / w_root
    val = num ** (1 / p)
    if mode == "SDp":
        vol = math.fsum(2.0 ** (-k * n) for k, _ in members)
        if vol == 0:
            return 0.0
        val /= vol ** (1 / s)
    if a_root == 0:
        if val > 0:
            raise ValueError("a(root) = 0 with a nonzero family sum")
        return 0.0
    return val / a_root


def _children(idx, n):
    return [tuple(2 * i + b for i, b in zip(idx, bits)) for bits in itertools.product((0, 1), repeat=n)]


def _exhaustive(a, wq, w_root, a_root, p, mode, s, n, max_gen):
    """Exact supremum over all disjoint dyadic families down to ``max_gen``."""
    if mode == "Dp":
        best = {}
        for k in range(max_gen, -1, -1):
            for idx in itertools.product(range(2**k), repeat=n):
                own = a[(k, idx)] ** p * wq[k][idx]
                if k < max_gen:
                    own = max(own, math.fsum(best[(k + 1, c)] for c in _children(idx, n)))
                best[(k, idx)] = own
        total = best[(0, (0,) * n)]
        if a_root == 0:
            if total > 0:
                raise ValueError("a(root) = 0 with a nonzero family sum")
            return 0.0
        return (total / w_root) ** (1 / p) / a_root
    # SDp: knapsack over the union volume, in units of the finest cube
    units = 2 ** (max_gen * n)
    if units > 4096:
        raise ValueError("exhaustive SD search limited to 4096 volume units")
    neg = -math.inf
    tables = {}
    for k in range(max_gen, -1, -1):
        size = 2 ** ((max_gen - k) * n)
        for idx in itertools.product(range(2**k), repeat=n):
            tab = np.full(size + 1, neg)
            tab[0] = 0.0
            if k < max_gen:
                acc = np.array([0.0])
                for c in _children(idx, n):
                    child = tables.pop((k + 1, c))
                    merged = np.full(acc.size + child.size - 1, neg)
                    for v, val in enumerate(acc):
                        if val == neg:
                            continue
                        merged[v:v + child.size] = np.maximum(merged[v:v + child.size], val + child)
                    acc = merged
                tab[: acc.size] = np.maximum(tab[: acc.size], acc)
            tab[size] = max(tab[size], a[(k, idx)] ** p * wq[k][idx])
            tables[(k, idx)] = tab
    tab = tables[(0, (0,) * n)]
    best = 0.0
    for v in range(1, units + 1):
        if tab[v] == neg:
            continue
        val = (tab[v] / w_root) ** (1 / p) / (v / units) ** (1 / s)
        if a_root == 0:
            if val > 0:
                raise ValueError("a(root) = 0 with a nonzero family sum")
            continue
        best = max(best, val / a_root)
    return best


def dp_sd_constant(a_values: Mapping | Callable, w: WeightField, root: Cube | None, mode: str = "Dp",
                   p: float = 1.0, s: float = 1.0, source: Mapping | None = None) -> float:
    """Largest ratio (sum a(Q_i)^p w(Q_i)/w(Q))^(1/p) / a(Q) over generated
    disjoint dyadic families (divided further by the union's relative volume
    to the power 1/s in SD mode). A lower bound of the true constant.

    ``a_values`` maps (generation, index) to a(Q), or is a callable on a
    DyadicCube. ``source`` selects the families:
    {"kind": "coarseExhaustive", "max_generation": g},
    {"kind": "randomFamilies", "count": c, "seed": s, "max_generation": g},
    {"kind": "czFamilies", "f": ScalarField, "levels": [...], "max_generation": g}.
    """
    if mode not in ("Dp", "SDp"):
        raise ValueError("mode must be 'Dp' or 'SDp'")
    grid = w.grid
    n = grid.n
    root = grid.cube if root is None else root
    source = {"kind": "coarseExhaustive", "max_generation": 2} if source is None else source
    max_gen = int(source.get("max_generation", 2))
    wq = _cube_weights(w, root, max_gen)
    if callable(a_values):
        fn = a_values
        a = {}
        for k in range(max_gen + 1):
            for q in enumerate_dyadic(root, k):
                a[(k, q.index)] = float(fn(q))
    else:
        a = {key: float(v) for key, v in a_values.items()}
    w_root = float(wq[0].reshape(-1)[0])
    a_root = a[(0, (0,) * n)]
    kind = source["kind"]
    if kind == "coarseExhaustive":
        return _exhaustive(a, wq, w_root, a_root, p, mode, s, n, max_gen)
    families = []
    if kind == "randomFamilies":
        rng = np.random.default_rng(int(source.get("seed", 0)))
        for _ in range(int(source.get("count", 100))):
            fam = []
            stack = [(0, (0,) * n)]
            while stack:
                k, idx = stack.pop()
                r = rng.random()
                if k < max_gen and r < 0.5:
                    stack.extend((k + 1, c) for c in _children(idx, n))
                elif r < 0.85 or k == 0:
                    fam.append((k, idx))
            families.append(fam)
    elif kind == "czFamilies":
        f = source["f"]
        for lam in source["levels"]:
            E = level_set(f, float(lam), "above")
            start, width = grid.cube_block(root)
            member = np.asarray(E.member)[grid.block_slices(start, width)]
            if member.mean() > 0.5 or not member.any():
                continue
            fam = []
            for q in cz_decompose(E, root, 0.5):
                k = min(q.k, max_gen)
                idx = tuple(i >> (q.k - k) for i in q.index)
                if (k, idx) not in fam:
                    fam.append((k, idx))
            # coarsening can nest cubes; keep the outermost ones
            fam = [c for c in fam if not any(o != c and o[0] < c[0] and
                                             all(j >> (c[0] - o[0]) == i for i, j in zip(o[1], c[1]))
                                             for o in fam)]
            families.append(fam)
    else:
        raise ValueError(f"unknown family source {kind!r}")
    best = 0.0
    for fam in families:
        if fam:
            best = max(best, _family_ratio(fam, a, wq, w_root, a_root, p, mode, s, n))
    return best


def family_ratio(a_values: Mapping | Callable, w: WeightField, root: Cube | None,
                 family: Sequence[DyadicCube], mode: str = "Dp", p: float = 1.0, s: float = 1.0) -> float:
    """The D_p (or SD_p^s) ratio of one given disjoint dyadic family."""
    if mode not in ("Dp", "SDp"):
        raise ValueError("mode must be 'Dp' or 'SDp'")
    grid = w.grid
    n = grid.n
    root = grid.cube if root is None else root
    members = [(q.k, tuple(q.index)) for q in family]
    for i, (k, idx) in enumerate(members):
        for k2, idx2 in members[i + 1:]:
            lo, hi = ((k, idx), (k2, idx2)) if k <= k2 else ((k2, idx2), (k, idx))
            if all(j >> (hi[0] - lo[0]) == c for c, j in zip(lo[1], hi[1])):
                raise ValueError("family is not disjoint")
    max_gen = max([k for k, _ in members], default=0)
    wq = _cube_weights(w, root, max_gen)
    keys = set(members) | {(0, (0,) * n)}
    if callable(a_values):
        a = {}
        for k in range(max_gen + 1):
            for q in enumerate_dyadic(root, k):
                if (k, tuple(q.index)) in keys:
                    a[(k, tuple(q.index))] = float(a_values(q))
    else:
        a = {key: float(v) for key, v in a_values.items()}
    w_root = float(wq[0].reshape(-1)[0])
    return _family_ratio(members, a, wq, w_root, a[(0, (0,) * n)], p, mode, s, n)
