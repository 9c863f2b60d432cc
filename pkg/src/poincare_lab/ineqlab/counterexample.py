"""Blow-up tables for the logarithmic counterexample family.

On the cube Q0 centred at the origin with side 1/sqrt(n), take
f_k = min(-log|x|, k) and mu_k the normalized Lebesgue measure on the ball
B(0, e^-k). Since f_k = k on the support of mu_k, the left side of every
(p, q) inequality equals k - (f_k)_{Q0} exactly. The right sides are bounded
from above through the pointwise estimate

    M_beta mu_k(x) <= C1 / (|x| + e^-k)^(n - beta),
    C1 = (2 sigma_n^(-1/n) + sqrt(n))^(n - beta),

after enlarging Q0 to the unit ball, which leaves one-dimensional radial
integrals of r^gamma over [e^-k, 1]. The ratio column is
(lower bound of lhs) / (upper bound of rhs); it growing without bound in k
shows that no constant can work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .._parallel import det_sum
from ..lattice import Cube, make_grid, sample_measure, unit_ball_volume

FAMILIES = ("PQ-CLASSICAL", "PQ-FRACTIONAL", "ALPHA-CLASSICAL", "ALPHA-FRACTIONAL")
PANELS = 100_000
_GL2 = np.polynomial.legendre.leggauss(2)
_GL32 = np.polynomial.legendre.leggauss(32)


@dataclass
class CounterexampleTable:
    family: str
    engine: str
    params: dict
    c: float
    rows: list[dict] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        r = [row["ratio"] for row in self.rows]
        return all(b > a for a, b in zip(r, r[1:]))

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def growth_exponent(self) -> float:
        """Least-squares slope of log(ratio) against log(k)."""
        k, r = self.column("k"), self.column("ratio")
        keep = r > 0
        if keep.sum() < 2:
            return math.nan
        return float(np.polyfit(np.log(k[keep]), np.log(r[keep]), 1)[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["monotone"] = self.monotone
        return d


# -- parameters -------------------------------------------------------------------------


def _fail(name: str, message: str):
    from .checks import ConstraintError
    raise ConstraintError(name, message)


def family_parameters(family: str, n: int, p: float | None = None, q: float | None = None,
                      delta: float | None = None, epsilon: float | None = None,
                      allow_large_p: bool = False) -> dict:
    """Validate and complete the parameters of a family; returns a dict with alpha."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if n < 2:
        _fail("n", "the counterexample needs n >= 2")
    tol = 1 + 1e-12
    if family == "PQ-CLASSICAL":
        if p is None or not 1 < p < n:
            _fail("p", "must satisfy 1 < p < n")
        q = p if q is None else q
        if not p <= q <= n * p / (n - p) * tol:
            _fail("q", "must satisfy p <= q <= np/(n-p)")
        return {"n": n, "p": p, "q": q, "alpha": n - q / p * (n - p)}
    if family == "PQ-FRACTIONAL":
        if delta is None or not 0 < delta < 1:
            _fail("delta", "must lie in (0, 1)")
        if p is None or not 1 < p < n / delta:
            _fail("p", "must satisfy 1 < p < n/delta")
        if not allow_large_p and not p < 1 / (1 - delta):
            _fail("p", "must satisfy p < 1/(1-delta) (override with allow_large_p)")
        if not (1 - delta) * p < 1:
            _fail("p", "the fractional-to-gradient step needs (1-delta)p < 1")
        q = p if q is None else q
        if not p <= q <= n * p / (n - delta * p) * tol:
            _fail("q", "must satisfy p <= q <= np/(n-delta p)")
        return {"n": n, "p": p, "q": q, "delta": delta, "alpha": n - q / p * (n - delta * p)}
    if epsilon is None or not epsilon > 0:
        _fail("epsilon", "must be > 0")
    if family == "ALPHA-CLASSICAL":
        q = 1.0 if q is None else q
        if not 1 <= q <= n / (n - 1) * tol:
            _fail("q", "must satisfy 1 <= q <= n/(n-1)")
        alpha = n - q * (n - 1)
        out = {"n": n, "q": q, "alpha": alpha, "epsilon": epsilon}
    else:
        if delta is None or not 0 < delta < 1:
            _fail("delta", "must lie in (0, 1)")
        q = 1.0 if q is None else q
        if not 1 <= q <= n / (n - delta) * tol:
            _fail("q", "must satisfy 1 <= q <= n/(n-delta)")
        alpha = n - q * (n - delta)
        out = {"n": n, "q": q, "delta": delta, "alpha": alpha, "epsilon": epsilon}
    if alpha + epsilon > n * tol:
        _fail("epsilon", "alpha + epsilon must not exceed n")
    return out


def maximal_constant(n: int, beta: float) -> float:
    """C1 with M_beta mu_k(x) <= C1 (|x| + e^-k)^(beta - n), for beta <= n."""
    return (2 * unit_ball_volume(n) ** (-1 / n) + math.sqrt(n)) ** (n - beta)


def _bound_terms(prm: dict) -> tuple[float, float, float]:
    """(prefactor P, exponent gamma, outer power e): rhs_upper = (P * int r^gamma dr)^e.

    The prefactor already contains the surface area n sigma_n of the unit sphere.
    """
    n = prm["n"]
    sigma = unit_ball_volume(n)
    side = 1 / math.sqrt(n)
    alpha, q = prm["alpha"], prm["q"]
    fam = prm["family"]
    if fam in ("PQ-CLASSICAL", "PQ-FRACTIONAL"):
        p = prm["p"]
        pref = n * sigma * maximal_constant(n, alpha) ** (p / q)
        gamma = -p + (alpha - n) * p / q + n - 1
        if fam == "PQ-FRACTIONAL":
            d = prm["delta"]
            t = (1 - d) * p
            kern = 2 ** (n - t) * n / t / (1 - t)
            a1 = 15**n * 4 * n / (p * d)
            pref *= (1 - d) * kern * side**t * a1
        return pref, gamma, 1 / p
    eps = prm["epsilon"]
    beta = alpha + eps
    pref = side ** (-eps / q) * n * sigma * maximal_constant(n, beta) ** (1 / q)
    gamma = -1 + (beta - n) / q + n - 1
    if fam == "ALPHA-FRACTIONAL":
        d = prm["delta"]
        t = 1 - d
        kern = 2 ** (n - t) * n / t / (1 - t)
        a1 = 15**n * 4 * n / (d + (n - d) / (n - alpha) * eps)
        pref *= (1 - d) * kern * side**t * a1
    return pref, gamma, 1.0


def power_integral(gamma: float, a: float, b: float) -> float:
    """Closed form of the integral of r^gamma over [a, b]."""
    if abs(gamma + 1) < 1e-14:
        return math.log(b / a)
    return (b ** (gamma + 1) - a ** (gamma + 1)) / (gamma + 1)


# -- radial quadrature --------------------------------------------------------------------------


def _nodes(breaks: list[float], panels: int, graded_from: float = math.inf) -> tuple[np.ndarray, np.ndarray]:
    """Two-point Gauss nodes on panels inside each segment.

    Segments below ``graded_from`` get log-spaced panels. Segments at or above
    it get panels uniform in u under r = lo + (hi - lo)(1 - cos(pi u))/2, which
    clusters nodes at both ends and absorbs square-root kinks there.
    """
    breaks = sorted(set(breaks))
    logs = [math.log(b / a) for a, b in zip(breaks, breaks[1:])]
    total = sum(logs)
    xs, ws = [], []
    for (a, b), L in zip(zip(breaks, breaks[1:]), logs):
        if a >= graded_from:
            cnt = max(16, panels // 8)
            u = np.linspace(0.0, 1.0, cnt + 1)
            mid, half = 0.5 * (u[:-1] + u[1:]), 0.5 * (u[1:] - u[:-1])
            for x, w in zip(*_GL2):
                t = mid + half * x
                xs.append(a + (b - a) * 0.5 * (1 - np.cos(math.pi * t)))
                ws.append(half * w * (b - a) * 0.5 * math.pi * np.sin(math.pi * t))
            continue
        cnt = max(16, int(round(panels * L / total)))
        edges = np.geomspace(a, b, cnt + 1)
        lo, hi = edges[:-1], edges[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        for x, w in zip(*_GL2):
            xs.append(mid + half * x)
            ws.append(half * w)
    return np.concatenate(xs), np.concatenate(ws)


def _square_angle(rho: np.ndarray, a: float) -> np.ndarray:
    """Angle of the circle of radius rho lying inside the square [-a, a]^2."""
    rho = np.asarray(rho, dtype=float)
    out = np.full(rho.shape, 2 * math.pi)
    mid = (rho > a) & (rho <= a * math.sqrt(2))
    out[mid] = 2 * math.pi - 8 * np.arccos(a / rho[mid])
    out[rho > a * math.sqrt(2)] = 0.0
    return out


def sphere_in_cube_area(r: np.ndarray, n: int, a: float) -> np.ndarray:
    """(n-1)-measure of the sphere |x| = r inside [-a, a]^n, for n = 2, 3."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if n == 2:
        return r * _square_angle(r, a)
    if n == 3:
        zx, zw = _GL32
        zmax = np.minimum(r, a)
        # kinks of the slice angle: slice radius equal to a*sqrt(2) and to a
        z2 = np.minimum(np.sqrt(np.maximum(r * r - 2 * a * a, 0.0)), zmax)
        z1 = np.minimum(np.sqrt(np.maximum(r * r - a * a, 0.0)), zmax)
        acc = np.zeros_like(r)
        # cosine map in z clusters nodes at the kinks
        u = 0.5 * (zx + 1)
        s = 0.5 * (1 - np.cos(math.pi * u))
        jac = 0.25 * math.pi * np.sin(math.pi * u) * zw
        for lo, hi in ((np.zeros_like(r), z2), (z2, z1), (z1, zmax)):
            z = lo[:, None] + (hi - lo)[:, None] * s[None, :]
            rho = np.sqrt(np.maximum(r[:, None] ** 2 - z * z, 0.0))
            acc += (hi - lo) * (_square_angle(rho, a) @ jac)
        return 2 * r * acc
    raise ValueError("the radial engine supports n = 2 and n = 3")


class _RadialCube:
    """Integrals of radial functions over Q0 = [-a, a]^n by quadrature in r."""

    R0 = 1e-12
    K_MAX = 600

    def _r0(self, extra: tuple[float, ...]) -> float:
        return min([self.R0] + [1e-3 * e for e in extra])

    def __init__(self, n: int, panels: int = PANELS):
        self.n = n
        self.a = 0.5 / math.sqrt(n)
        self.R = self.a * math.sqrt(n)
        self.panels = panels
        self.volume = (2 * self.a) ** n
        self._cache: dict = {}

    def _grid(self, extra: tuple[float, ...]):
        key = extra
        if key not in self._cache:
            breaks = [self._r0(extra), self.a, self.R] + [e for e in extra if e < self.R]
            if self.n == 3:
                breaks.append(self.a * math.sqrt(2))
            x, w = _nodes(breaks, self.panels, graded_from=self.a)
            self._cache[key] = (x, w * sphere_in_cube_area(x, self.n, self.a))
        return self._cache[key]

    def log_integral(self, k: float | None = None) -> float:
        """Integral over Q0 of -log|x| (of min(-log|x|, k) when k is given)."""
        n = self.n
        if k is not None:
            if k > self.K_MAX:
                raise ValueError(f"the radial engine supports k <= {self.K_MAX}")
            extra = (math.exp(-k),)
            x, w = self._grid(extra)
            g = np.minimum(-np.log(x), k)
            r0 = self._r0(extra)
            head = unit_ball_volume(n) * r0**n * k
        else:
            x, w = self._grid(())
            g = -np.log(x)
            r0 = self.R0
            head = unit_ball_volume(n) * r0**n * (-math.log(r0) + 1 / n)
        return head + det_sum(g * w)


def radial_power_integral(gamma: float, a: float, b: float = 1.0, panels: int = PANELS) -> float:
    x, w = _nodes([a, b], panels)
    return det_sum(x**gamma * w)


# -- grid quadrature ----------------------------------------------------------------------------


def _grid_log_terms(n: int, m: int, k: float):
    a = 0.5 / math.sqrt(n)
    grid = make_grid(Cube.centered(n, 2 * a), m)
    r = grid.radius(np.zeros(n))
    c = det_sum(-np.log(r)) * grid.cell_volume
    f = np.minimum(-np.log(r), k)
    mean = det_sum(f) * grid.cell_volume / grid.cube.volume
    return grid, f, c, mean


def _grid_ball_integral(n: int, m: int, gamma: float, k: float) -> float:
    """Integral of |x|^(gamma - n + 1) over e^-k <= |x| < 1 by midpoint cells of [-1, 1]^n."""
    grid = make_grid(Cube.centered(n, 2.0), m)
    r = grid.radius(np.zeros(n))
    keep = (r >= math.exp(-k)) & (r < 1)
    return det_sum(np.where(keep, r ** (gamma - n + 1), 0.0)) * grid.cell_volume


# -- runner -----------------------------------------------------------------------------------


def run_counterexample(family: str, k_values, n: int = 2, p: float | None = None,
                       q: float | None = None, delta: float | None = None,
                       epsilon: float | None = None, engine: str = "radial", m: int = 10,
                       allow_large_p: bool = False, panels: int = PANELS) -> CounterexampleTable:
    """Table of (k, lhs bounds, rhs upper bound, ratio) for the chosen family.

    ``lhs_exact`` is k - (f_k)_{Q0}; ``lhs_lower`` is k - c/|Q0| with
    c the integral of |log|x|| over Q0; ``lhs_unnormalized`` is k - c.
    """
    prm = family_parameters(family, n, p, q, delta, epsilon, allow_large_p)
    prm["family"] = family
    pref, gamma, power = _bound_terms(prm)
    ks = [float(k) for k in k_values]
    if any(k <= 0 for k in ks):
        raise ValueError("k must be positive")
    vol = n ** (-n / 2)
    rows = []
    if engine == "radial":
        cube = _RadialCube(n, panels)
        c = cube.log_integral()
        for k in ks:
            if math.exp(-k) > 0.5 / math.sqrt(n):
                raise ValueError("the ball B(0, e^-k) must lie inside Q0")
            mean = cube.log_integral(k) / cube.volume
            integral = radial_power_integral(gamma, math.exp(-k), 1.0, panels)
            rows.append(_row(k, k - mean, c, vol, (pref * integral) ** power))
    elif engine == "grid":
        if n > 3:
            raise ValueError("the grid engine supports n <= 3")
        sigma = unit_ball_volume(n)
        h = max(1 / math.sqrt(n), 2.0) / 2**m
        c = None
        for k in ks:
            if math.exp(-k) < 4 * h:
                raise ValueError(f"unresolved ball: e^-{k:g} < 4h at m={m}")
            grid, f, c, mean = _grid_log_terms(n, m, k)
            mu = sample_measure({"kind": "ball", "radius": math.exp(-k), "center": [0.0] * n}, grid)
            mass = np.asarray(mu.mass)
            lhs = (det_sum(np.abs(f - mean) ** prm["q"] * mass)) ** (1 / prm["q"])
            integral = _grid_ball_integral(n, m, gamma, k) / (n * sigma)
            rows.append(_row(k, lhs, c, vol, (pref * integral) ** power))
    else:
        raise ValueError("engine must be 'radial' or 'grid'")
    prm.pop("family")
    prm.update({"gamma": gamma, "prefactor": pref})
    if engine == "grid":
        prm["m"] = m
    return CounterexampleTable(family, engine, prm, c, rows)


def _row(k: float, lhs_exact: float, c: float, vol: float, rhs: float) -> dict:
    lower = k - c / vol
    return {"k": k, "lhs_exact": lhs_exact, "lhs_lower": lower, "lhs_unnormalized": k - c,
            "rhs_upper": rhs, "ratio": lower / rhs}
