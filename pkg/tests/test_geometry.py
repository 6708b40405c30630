import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gaussloc.geometry import (
    Box,
    GeometryError,
    GridTooCoarse,
    box_threshold,
    frame_indicator,
    indicator_derivatives,
    indicator_values,
    length_scales,
    mollified_indicator,
    nested_boxes,
    profile,
    profile_derivatives,
    reference_kappas,
    tile_frame,
)
from gaussloc.grid import Grid

# d=1 constants from mpmath quadrature of exp(-1/(t(1-t))) (30 digits):
# kappa1 = 3 f(1/2)/Z, kappa2 = 9 max|f'|/Z, kappa4 = 81 max|(f^2)''|/Z^2.
KAPPA1_D1 = 7.81621954356008317
KAPPA2_D1 = 99.3200863409513820
KAPPA4_D1 = 35189.7338610032227


def test_reference_kappas_d1():
    k = reference_kappas(1)
    assert k.kappa1 == pytest.approx(KAPPA1_D1, rel=1e-12)
    assert k.kappa2 == pytest.approx(KAPPA2_D1, rel=1e-8)
    assert k.kappa4 == pytest.approx(KAPPA4_D1, rel=1e-8)


def test_reference_kappas_grow_with_dimension():
    k1, k2 = reference_kappas(1), reference_kappas(2)
    # a single axis transition dominates the gradient, the Laplacian picks up both axes
    assert k2.kappa1 == pytest.approx(k1.kappa1, rel=1e-9)
    assert k2.kappa2 > k1.kappa2
    assert k2.kappa4 > k1.kappa4


@given(st.floats(-1.0, 2.0))
def test_profile_symmetry_and_range(t):
    s = profile(np.array([t, 1 - t]))
    assert 0.0 <= s[0] <= 1.0
    assert s[0] + s[1] == pytest.approx(1.0, abs=1e-12)


def test_profile_monotone_and_derivative_consistent():
    t = np.linspace(0.02, 0.98, 2001)
    s = profile(t)
    assert np.all(np.diff(s) >= -1e-15)
    d1, d2, _ = profile_derivatives(t)
    fd = np.gradient(s, t)
    assert np.max(np.abs(fd - d1)) < 1e-3 * d1.max()
    fd2 = np.gradient(d1, t)
    assert np.max(np.abs(fd2[5:-5] - d2[5:-5])) < 1e-2 * np.abs(d2).max()


def test_indicator_plateau_and_edge():
    box = Box((0.0,), 10.0, 1.5)
    x = np.array([[0.0], [5 - 1.0], [5 - 0.6], [4.99]])
    v = indicator_values(box, x)
    assert v[0] == 1.0 and v[1] == 1.0
    assert 0 < v[2] < 1
    assert v[3] == 0.0


def test_indicator_derivatives_match_finite_differences_2d():
    box = Box((0.0, 0.0), 6.0, 1.2)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(50, 2))
    der = indicator_derivatives(box, pts)
    e = 1e-5
    for i in range(2):
        step = np.zeros(2)
        step[i] = e
        fd = (indicator_values(box, pts + step) - indicator_values(box, pts - step)) / (2 * e)
        assert np.max(np.abs(fd - der.grad[:, i])) < 1e-5


def test_mollified_indicator_measured_below_reference():
    box = Box((0.0,), 8.0, 1.2)
    grid = Grid.dirichlet_cube((0.0,), 10.0, 0.01)
    ind = mollified_indicator(box, grid)
    for a, b in zip(ind.measured.to_dict().values(), ind.reference.to_dict().values()):
        assert a <= b * (1 + 1e-9)
        assert a > 0.9 * b


def test_mollified_indicator_needs_fine_grid():
    with pytest.raises(GridTooCoarse):
        mollified_indicator(Box((0.0,), 8.0, 1.2), Grid.dirichlet_cube((0.0,), 10.0, 0.2))


def test_frame_indicator_support():
    box = Box((0.0,), 8.0, 1.2)
    grid = Grid.dirichlet_cube((0.0,), 10.0, 0.05)
    f = frame_indicator(box, grid)
    x = grid.points()[:, 0]
    assert np.all(f[np.abs(x) <= 4 - 1.2] == 0)
    assert np.all(f[np.abs(x) >= 4] == 0)
    assert np.all(f >= -1e-15) and f.max() == pytest.approx(1.0)


@given(st.floats(60.0, 400.0), st.sampled_from([4, 5, 6]), st.floats(1.05, 1.5))
def test_nested_boxes_chain(L, N, nu):
    fam = nested_boxes(L, N, nu)
    assert fam.chain_holds()
    assert fam[N].edge == L and fam[N].frame == pytest.approx(L / (4 * N))
    assert fam[0].edge == pytest.approx(L / (4 * N))
    assert fam.above_threshold == (L > box_threshold(N, nu))


def test_nested_boxes_validation():
    with pytest.raises(GeometryError):
        nested_boxes(100.0, 3, 1.1)
    with pytest.raises(GeometryError):
        nested_boxes(100.0, 4, 1.0)
    with pytest.raises(GeometryError):
        nested_boxes(100.0, 4, 1.1, strict=True)


@given(st.sampled_from([4, 6]), st.floats(1.01, 1.5), st.floats(2.0, 1e3), st.integers(0, 4))
def test_length_scales_recursion(N, nu, L0, k_max):
    ls = length_scales(N, nu, L0, k_max)
    v = ls.values
    assert v[0] == pytest.approx(L0)
    for k in range(len(v) - 1):
        assert v[k + 1] == pytest.approx(N * v[k] ** nu, rel=1e-9)
    assert ls.growth_ok == ((nu - 1) * math.log(L0) >= math.log(4))


def test_length_scales_overflow_reported():
    ls = length_scales(4, 1.5, 1e100, 10)
    assert ls.overflow and len(ls.values) < 11


@pytest.mark.parametrize("d", [1, 2])
def test_tiling_covers_frame_and_respects_bound(d):
    fam = nested_boxes(200.0, 4, 1.1, (0.0,) * d)
    for n in (1, 2, 3):
        tiles = tile_frame(fam, n)
        assert tiles.count <= tiles.bound
        box = fam[n]
        b = box.frame
        rng = np.random.default_rng(n)
        pts = rng.uniform(-box.edge / 2, box.edge / 2, size=(4000, d))
        in_frame = np.max(np.abs(pts), axis=1) >= box.edge / 2 - b
        assert np.all(tiles.covers(pts[in_frame]))


def test_tile_frame_range():
    fam = nested_boxes(200.0, 4, 1.1)
    with pytest.raises(GeometryError):
        tile_frame(fam, 0)
    with pytest.raises(GeometryError):
        tile_frame(fam, 4)


def test_box_containment_needs_clearance():
    outer = Box((0.0,), 10.0, 1.0)
    assert Box((0.0,), 7.9) < outer
    assert not Box((0.0,), 8.0) < outer
    assert not Box((1.0,), 7.9) < outer
