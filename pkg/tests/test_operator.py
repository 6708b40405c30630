import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from gaussloc import operator as opm
from gaussloc.geometry import Box
from gaussloc.grid import Grid
from gaussloc.operator import (
    Gauge,
    OperatorError,
    SpectrumHit,
    assemble,
    assemble_on_grid,
    box_indicator,
    box_resolvent_norm,
    counting_function,
    eigenpairs_below,
    frame_operator,
    free_ids,
    full_spectrum,
    geometric_resolvent_residual,
    ids_estimate,
    inertia_count,
    resolvent_apply,
)


def free_eigenvalues_1d(n, h):
    k = np.arange(1, n + 1)
    return np.sort((1 - np.cos(np.pi * k / (n + 1))) / h**2)


def test_free_spectrum_matches_closed_form():
    op = assemble((0.0,), 10.0, 0.0, 0.1)
    n = op.size
    assert np.allclose(full_spectrum(op), free_eigenvalues_1d(n, 0.1), atol=1e-9)


def test_free_spectrum_2d_is_sum_of_1d():
    op = assemble((0.0, 0.0), 3.0, 0.0, 0.25)
    e1 = free_eigenvalues_1d(op.grid.shape[0], 0.25)
    expected = np.sort((e1[:, None] + e1[None, :]).ravel())
    assert np.allclose(full_spectrum(op), expected, atol=1e-9)


@given(st.integers(0, 10_000), st.floats(-3.0, 3.0))
def test_inertia_count_matches_dense(seed, E):
    rng = np.random.default_rng(seed)
    grid = Grid.dirichlet_cube((0.0, 0.0), 2.0, 0.25)
    op = assemble_on_grid(grid, rng.normal(size=grid.size), Gauge("symmetric", rng.uniform(0, 2)))
    w = sla.eigvalsh(op.dense())
    if np.min(np.abs(w - E)) < 1e-8:
        return
    assert inertia_count(op, E) == int(np.sum(w < E))


def test_gauge_choices_are_unitarily_equivalent():
    grid = Grid.dirichlet_cube((0.0, 0.0), 3.0, 0.2)
    v = np.random.default_rng(4).normal(size=grid.size)
    a = full_spectrum(assemble_on_grid(grid, v, Gauge("symmetric", 1.3)))
    b = full_spectrum(assemble_on_grid(grid, v, Gauge("landau", 1.3)))
    assert np.allclose(a, b, atol=1e-9)
    assert not np.allclose(a, full_spectrum(assemble_on_grid(grid, v)), atol=1e-3)


def test_operator_is_hermitian():
    grid = Grid.dirichlet_cube((0.0, 0.0), 2.0, 0.2)
    op = assemble_on_grid(grid, 0.3, Gauge("landau", 2.0))
    M = op.dense()
    assert np.allclose(M, M.conj().T)


def test_magnetic_field_needs_two_dimensions():
    with pytest.raises(OperatorError):
        assemble((0.0,), 2.0, 0.0, 0.1, Gauge("symmetric", 1.0))


def test_counting_and_eigenpairs_agree():
    op = assemble((0.0,), 8.0, lambda p: np.cos(2 * p[:, 0]), 0.05)
    sd = eigenpairs_below(op, 1.0)
    assert sd.eigenvalues.size == counting_function(op, 1.0)
    r = op.matrix @ sd.eigenvectors - sd.eigenvectors * sd.eigenvalues
    assert np.max(np.abs(r)) < 1e-8


def test_resolvent_apply_residual_and_spectrum_hit():
    op = assemble((0.0,), 5.0, 0.0, 0.1)
    f = np.random.default_rng(0).normal(size=op.size)
    x = resolvent_apply(op, -1.0, f)
    assert np.linalg.norm(op.matrix @ x + x - f) <= 1e-10 * np.linalg.norm(f)
    with pytest.raises(SpectrumHit):
        resolvent_apply(op, full_spectrum(op)[3], f)


def _dense_norm(op, outer, inner, E, inner_kind="indicator"):
    """Brute force: dense restriction, dense commutator and a full SVD."""
    sub = op.restrict_box(outer)
    H = sub.dense()
    chi_o = np.diag(box_indicator(outer, sub.grid))
    G = chi_o @ H - H @ chi_o
    X = np.linalg.solve(H - E * np.eye(H.shape[0]), np.diag(box_indicator(inner, sub.grid, inner_kind)))
    return np.linalg.svd(G @ X, compute_uv=False)[0]


@given(st.integers(0, 1000), st.floats(-4.0, -1.0))
def test_box_resolvent_norm_matches_dense_oracle(seed, E):
    grid = Grid.dirichlet_cube((0.0,), 12.0, 0.1)
    op = assemble_on_grid(grid, np.random.default_rng(seed).normal(size=grid.size))
    outer = Box((0.0,), 10.0, 1.5)
    inner = Box((0.5,), 2.0)
    if np.min(np.abs(full_spectrum(op.restrict_box(outer)) - E)) < 1e-6:
        return
    got = box_resolvent_norm(op, outer, inner, E)
    assert got.eta == 0.0
    assert got.value == pytest.approx(_dense_norm(op, outer, inner, E), rel=1e-9)


def test_box_resolvent_norm_power_matches_svd():
    grid = Grid.dirichlet_cube((0.0,), 12.0, 0.1)
    op = assemble_on_grid(grid, np.sin(grid.points()[:, 0]))
    outer, inner = Box((0.0,), 10.0, 1.5), Box((0.0,), 2.0)
    a = box_resolvent_norm(op, outer, inner, -2.0).value
    b = box_resolvent_norm(op, outer, inner, -2.0, method="power").value
    assert b == pytest.approx(a, rel=1e-6)


def test_box_resolvent_norm_on_spectrum_uses_eta_ladder():
    op = assemble((0.0,), 10.0, 0.0, 0.1)
    outer = Box((0.0,), 10.0, 1.5)
    E = full_spectrum(op)[0]
    res = box_resolvent_norm(op, outer, Box((0.0,), 2.0), E)
    assert res.eta > 0 and np.isfinite(res.value)


@given(st.integers(0, 500))
def test_geometric_resolvent_identity(seed):
    rng = np.random.default_rng(seed)
    outer = Grid.dirichlet_cube((0.0,), 12.0, 0.1)
    v = rng.normal(size=outer.size)
    op_out = assemble_on_grid(outer, v)
    op_in = op_out.restrict((0.0,), 8.0)
    res = geometric_resolvent_residual(op_out, op_in, Box((0.0,), 7.0, 1.5), complex(-1.0, 0.3), seed=seed)
    assert res < 1e-10


@pytest.mark.parametrize("B", [0.0, 0.5])
def test_stencil_frame_operator_converges_to_commutator(B):
    errs = []
    for h in (0.2, 0.1, 0.05):
        grid = Grid.dirichlet_cube((0.0, 0.0), 12.0, h)
        op = assemble_on_grid(grid, 0.0, Gauge("symmetric", B))
        box = Box((0.0, 0.0), 10.0, 4.8)
        x = grid.points()
        f = np.exp(-np.sum(x**2, axis=1) / 8) * np.cos(x[:, 0])
        errs.append(np.max(np.abs(frame_operator(op, box) @ f - frame_operator(op, box, "stencil") @ f)))
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(order > 1.7)


def test_frame_operator_rejects_coarse_grid():
    op = assemble((0.0,), 10.0, 0.0, 0.2)
    with pytest.raises(OperatorError):
        frame_operator(op, Box((0.0,), 8.0, 1.2))


def test_phi_functional_uses_positive_part():
    box = Box((0.0,), 8.0, 2.0)
    assert opm.phi_functional(box, np.array([-5.0, -1.0])) == opm.phi_functional(box, np.array([0.0]))
    assert opm.phi_functional(box, np.array([np.inf])) == np.inf


def test_ids_free_operator_approaches_continuum():
    res = ids_estimate(None, [0.5, 1.0, 2.0], [40.0, 80.0], 1, seed=0, h=0.05)
    assert np.allclose(res.mean[-1], free_ids([0.5, 1.0, 2.0]), atol=0.02)


def test_solver_tolerance_is_module_level():
    assert opm.SOLVE_RTOL == 1e-10
