import math

import numpy as np
import pytest

from poincare_lab.isoperimetry import (annulus_deviation, discrete_perimeter, frac_isoperimetric_ratio,
                                       one_scale_decompose, relative_isoperimetric_ratio, remark_ratio)
from poincare_lab.kernels import annulus_form
from poincare_lab.lattice import Cube, CellSet, make_grid


def left_half(grid, cut=0.5):
    return CellSet(grid, np.broadcast_to(grid.centers()[0] < cut, grid.shape))


def checkerboard(grid, block):
    idx = np.indices(grid.shape) // block
    return CellSet(grid, idx.sum(axis=0) % 2 == 0)


def deviation_oracle(E, Q0, Q, a):
    """Integral over Q of |1_E(x) - E-density of the annulus of x inside Q0|."""
    g = E.grid
    s0, w0 = g.cube_block(Q0)
    sq, wq = g.cube_block(Q)
    xs = np.stack([np.broadcast_to(c, g.shape).ravel() for c in g.centers()], axis=-1)
    inside = np.zeros(g.shape, dtype=bool)
    inside[g.block_slices(s0, w0)] = True
    inside = inside.ravel()
    member = np.asarray(E.member).ravel()
    sel = np.zeros(g.shape, dtype=bool)
    sel[g.block_slices(sq, wq)] = True
    total = []
    for i in np.flatnonzero(sel.ravel()):
        d = np.sqrt(((xs - xs[i]) ** 2).sum(axis=1))
        ring = inside & (d >= a / 2) & (d < a)
        total.append(abs(float(member[i]) - member[ring].sum() / ring.sum()))
    return math.fsum(total) * g.cell_volume


class TestPerimeter:
    @pytest.mark.parametrize("m", [1, 3, 6])
    def test_left_half(self, m):
        assert discrete_perimeter(left_half(make_grid(Cube.unit(2), m))) == 1.0

    def test_trivial_sets(self):
        g = make_grid(Cube.unit(2), 4)
        assert discrete_perimeter(CellSet.empty(g)) == 0
        assert discrete_perimeter(CellSet.full(g)) == 0

    def test_single_cell(self):
        g = make_grid(Cube.unit(2), 3)
        member = np.zeros(g.shape, dtype=bool)
        member[3, 4] = True
        assert discrete_perimeter(CellSet(g, member)) == 4 * g.h

    def test_complement(self):
        g = make_grid(Cube.unit(3), 3)
        E = CellSet(g, np.random.default_rng(0).random(g.shape) < 0.4)
        assert discrete_perimeter(E) == discrete_perimeter(E.complement())


class TestRelativeRatio:
    def test_left_half(self):
        rep = relative_isoperimetric_ratio(left_half(make_grid(Cube.unit(2), 6)))
        assert rep.lhs == pytest.approx(math.sqrt(0.5), rel=1e-15)
        assert rep.rhs_core == 1.0
        assert rep.ratio == pytest.approx(math.sqrt(0.5), rel=1e-15)

    def test_empty(self):
        rep = relative_isoperimetric_ratio(CellSet.empty(make_grid(Cube.unit(2), 3)))
        assert (rep.lhs, rep.rhs_core, rep.ratio) == (0.0, 0.0, 0.0)

    def test_ball_direct(self):
        g = make_grid(Cube.unit(2), 7)
        E = CellSet(g, g.radius(np.array([0.5, 0.5])) < 0.3)
        rep = relative_isoperimetric_ratio(E)
        member = np.asarray(E.member)
        faces = sum(int(member[i, j] != member[i + 1, j]) for i in range(g.N - 1) for j in range(g.N))
        faces += sum(int(member[i, j] != member[i, j + 1]) for i in range(g.N) for j in range(g.N - 1))
        inside = int(member.sum())
        lhs = (min(inside, g.size - inside) * g.cell_volume) ** 0.5
        assert rep.ratio == pytest.approx(lhs / (faces * g.h), abs=1e-12)

    def test_complement_swap(self):
        g = make_grid(Cube.unit(2), 5)
        E = CellSet(g, np.random.default_rng(2).random(g.shape) < 0.3)
        assert relative_isoperimetric_ratio(E).ratio == relative_isoperimetric_ratio(E.complement()).ratio


class TestAnnulusDeviation:
    def setup_method(self):
        self.g = make_grid(Cube.unit(1), 10)
        self.Q0 = Cube.unit(1)
        self.a = 0.5
        self.Q = Cube(1, (0.5 - 8 * self.g.h,), 16 * self.g.h)

    def test_empty_set(self):
        rep = annulus_deviation(CellSet.empty(self.g), self.Q0, self.Q, self.a)
        assert rep.rhs_core == 0
        assert not rep.flags["density_window"]

    def test_halfspace_through_q(self):
        E = left_half(self.g)
        rep = annulus_deviation(E, self.Q0, self.Q, self.a, 0.25)
        assert rep.flags["density_window"]
        assert rep.rhs_core == pytest.approx(deviation_oracle(E, self.Q0, self.Q, self.a), abs=1e-14)
        assert rep.flags["pass_explicit"]
        assert rep.lhs <= 4 / 0.25 * rep.rhs_core

    def test_shifted_set_leaves_q(self):
        rep = annulus_deviation(left_half(self.g, cut=0.5 - self.a), self.Q0, self.Q, self.a, 0.25)
        assert not rep.flags["density_window"]

    def test_planar_case(self):
        g = make_grid(Cube.unit(2), 9)
        a = 0.5
        Q = Cube(2, (0.5 - g.h, 0.5 - g.h), 2 * g.h)
        E = left_half(g)
        rep = annulus_deviation(E, Cube.unit(2), Q, a, 0.25)
        assert rep.rhs_core == pytest.approx(deviation_oracle(E, Cube.unit(2), Q, a), abs=1e-14)
        assert rep.flags["pass_explicit"]

    def test_preconditions(self):
        with pytest.raises(ValueError):
            annulus_deviation(left_half(self.g), self.Q0, Cube(1, (0.25,), 0.25), self.a)
        with pytest.raises(ValueError):
            annulus_deviation(left_half(self.g), self.Q0, self.Q, 0.75)


class TestOneScale:
    def test_left_half_k2(self):
        g = make_grid(Cube.unit(2), 6)
        fam, rep = one_scale_decompose(left_half(g), None, 2)
        assert rep.flags["route"] == "slide"
        assert len(fam) == 4
        assert all(q.width == 16 for q in fam)
        assert all(d == pytest.approx(1 / 16) for d in rep.flags["densities"])
        assert rep.lhs == 0.25 and rep.rhs_core == 0.25
        assert rep.ratio == 1.0

    def test_dyadic_half_k1(self):
        g = make_grid(Cube.unit(2), 5)
        fam, rep = one_scale_decompose(left_half(g), None, 1)
        assert len(fam) > 0 and rep.flags["band_ok"]

    def test_disjoint_and_band_on_random_sets(self):
        rng = np.random.default_rng(4)
        g = make_grid(Cube.unit(2), 5)
        done = 0
        for _ in range(60):
            member = rng.random(g.shape) < rng.uniform(0.1, 0.5)
            frac = member.mean()
            if not 2 ** -3 <= frac <= 0.5:
                continue
            fam, rep = one_scale_decompose(CellSet(g, member), None, int(rng.integers(1, 4)))
            cubes = list(fam)
            assert all(not a.overlaps(b) for i, a in enumerate(cubes) for b in cubes[i + 1:])
            assert rep.flags["band_ok"]
            done += 1
        assert done > 20

    def test_density_precondition(self):
        g = make_grid(Cube.unit(2), 4)
        member = np.zeros(g.shape, dtype=bool)
        member[0, 0] = True
        with pytest.raises(ValueError):
            one_scale_decompose(CellSet(g, member), None, 1)


class TestFractionalRatio:
    def test_left_half(self):
        g = make_grid(Cube.unit(2), 6)
        E = left_half(g)
        rep = frac_isoperimetric_ratio(E, None, 1)
        assert rep.lhs == pytest.approx(math.sqrt(0.5), rel=1e-15)
        assert rep.rhs_core == annulus_form(E, None, 1)
        assert math.isfinite(rep.ratio)

    def test_quadrant(self):
        g = make_grid(Cube.unit(2), 6)
        member = np.zeros(g.shape, dtype=bool)
        member[:32, :32] = True
        rep = frac_isoperimetric_ratio(CellSet(g, member), None, 2)
        assert rep.lhs == pytest.approx(0.5, rel=1e-15)
        assert 0 < rep.ratio < math.inf

    def test_density_floor(self):
        g = make_grid(Cube.unit(2), 6)
        member = np.zeros(g.shape, dtype=bool)
        member[0, 0] = True
        with pytest.raises(ValueError):
            frac_isoperimetric_ratio(CellSet(g, member), None, 1)

    def test_dilation_invariance(self):
        small = make_grid(Cube.unit(2), 6)
        big = make_grid(Cube(2, (0.0, 0.0), 2.0), 6)
        member = np.random.default_rng(1).random(small.shape) < 0.3
        a = frac_isoperimetric_ratio(CellSet(small, member), None, 2).ratio
        b = frac_isoperimetric_ratio(CellSet(big, member), None, 2).ratio
        assert a == pytest.approx(b, rel=1e-14)
        a = remark_ratio(CellSet(small, member), None, 2).ratio
        b = remark_ratio(CellSet(big, member), None, 2).ratio
        assert a == pytest.approx(b, rel=1e-14)


class TestRemark:
    def test_empty(self):
        rep = remark_ratio(CellSet.empty(make_grid(Cube.unit(2), 5)), None, 1)
        assert rep.lhs == 0 and rep.rhs_core == 0

    def test_left_half_stable(self):
        r = [remark_ratio(left_half(make_grid(Cube.unit(2), m)), None, 1).ratio for m in (5, 6, 7)]
        assert all(0 < v < math.inf for v in r)
        assert abs(r[2] - r[1]) <= abs(r[1] - r[0]) + 1e-3

    def test_checkerboard_scales(self):
        g = make_grid(Cube.unit(2), 6)
        coarse = remark_ratio(checkerboard(g, 8), None, 1)
        fine = remark_ratio(checkerboard(g, 2), None, 1)
        assert fine.rhs_core > coarse.rhs_core
        assert fine.lhs < 2 ** 1
        assert fine.ratio < coarse.ratio
