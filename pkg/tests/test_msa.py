import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaussloc.field import bump_spec, gaussian_spec
from gaussloc.geometry import Box
from gaussloc.grid import Grid
from gaussloc.msa import (
    CONSTRAINT_IDS,
    COUPLED_ENTRIES,
    MsaError,
    MsaGeometry,
    MsaParameters,
    ThresholdEvent,
    approximation_defect,
    approximation_probe,
    check_msa_parameters,
    deterministic_implication_check,
    estimate_regularity_probability,
    exclusive_flips,
    frame_regularity_probe,
    gap_probe,
    independence_probe,
    ipr,
    localization_diagnostic,
    nonresonance_probe,
    perturbation_study,
    regularity_probe,
    search_feasible_parameters,
    write_jsonl,
)
from gaussloc.operator import assemble_on_grid, box_indicator, full_spectrum

# a feasible point found by the search for d=1 (N=4, S=2, delta=10, zeta=8.5)
FEASIBLE_D1 = dict(d=1, N=4, S=2, nu=1.0146604938271604, r=4.30111644566377, rho=0.3055555555555556,
                   theta=0.8410493827160493, w=0.6397004595075289, delta=10.0, zeta=8.5,
                   L0=1.0284403483257538e62)


def test_ledger_covers_every_constraint():
    p = check_msa_parameters(MsaParameters(**FEASIBLE_D1))
    assert tuple(e.id for e in p.ledger) == CONSTRAINT_IDS
    assert p.feasible and p.violated == []
    assert all(e.margin > 0 or (e.margin == 0 and e.relation in (">=", "<=")) for e in p.ledger)


def test_small_initial_scale_fails_only_growth():
    p = check_msa_parameters(MsaParameters(**{**FEASIBLE_D1, "L0": 100.0}))
    assert p.violated == ["L0_growth"]


def test_ledger_json_roundtrip():
    p = check_msa_parameters(MsaParameters(**FEASIBLE_D1))
    data = json.loads(p.to_json())
    assert data["feasible"] is True
    again = check_msa_parameters(MsaParameters(**{k: data[k] for k in FEASIBLE_D1}))
    assert again.ledger == p.ledger


@pytest.mark.parametrize("bad", [dict(nu=math.nan), dict(d=0), dict(delta=0.0), dict(N=4.5)])
def test_invalid_parameters_raise(bad):
    with pytest.raises(MsaError):
        check_msa_parameters(MsaParameters(**{**FEASIBLE_D1, **bad}))


@settings(max_examples=8)
@given(st.sampled_from([1, 2, 3]), st.floats(6.0, 20.0))
def test_search_roundtrip(d, delta):
    res = search_feasible_parameters(d, delta=delta)
    if res.feasible:
        again = check_msa_parameters(res.params.with_values())
        assert again.feasible
    else:
        assert res.certificate["violated"]


@given(st.floats(1.001, 1.2), st.floats(3.0, 6.0), st.floats(0.01, 1.0), st.floats(0.5, 1.0),
       st.floats(0.1, 1.5))
def test_feasible_iff_no_violation(nu, r, rho, theta, w):
    p = check_msa_parameters(MsaParameters(1, 4, 2, nu, r, rho, theta, w, 10.0, 8.5, 1e300))
    assert p.feasible == (not p.violated)
    for e in p.ledger:
        assert e.passed == (e.margin > 0) or e.margin == 0 or not e.exact


def test_exclusive_flips_for_uncoupled_entries():
    res = search_feasible_parameters(2)
    ex = exclusive_flips(perturbation_study(res.params))
    for cid in CONSTRAINT_IDS:
        if cid in COUPLED_ENTRIES:
            continue
        assert ex[cid] is not None, cid
        assert ex[cid].flipped == (cid,)


# ---------------------------------------------------------------------------
# probes on a tiny d=1 instance, against a dense brute-force oracle
# ---------------------------------------------------------------------------

GEO = MsaGeometry(4, 1.1)


def _op(seed, L=40.0, h=0.1, scale=1.0):
    grid = Grid.dirichlet_cube((0.0,), L, h)
    v = scale * np.random.default_rng(seed).normal(size=grid.size)
    return assemble_on_grid(grid, v)


def _dense(op, outer, inner, E, kind="indicator"):
    sub = op.restrict_box(outer)
    H = sub.dense()
    chi = np.diag(box_indicator(outer, sub.grid))
    G = chi @ H - H @ chi
    X = np.linalg.solve(H - E * np.eye(H.shape[0]), np.diag(box_indicator(inner, sub.grid, kind)))
    return np.linalg.svd(G @ X, compute_uv=False)[0]


def test_regularity_probe_matches_dense_oracle():
    op = _op(1)
    fam = GEO.family(40.0, (0.0,))
    res = regularity_probe(op, GEO, 3.0, -5.0, 40.0)
    assert res.norms["R_N0"] == pytest.approx(_dense(op, fam[4], fam[0], -5.0), rel=1e-9)
    assert res.consistent()


def test_nonresonance_probe_matches_dense_oracle():
    op = _op(2, L=50.0, h=0.05)
    fam = GEO.family(50.0, (0.0,))
    res = nonresonance_probe(op, GEO, 0.5, -5.0, 50.0)
    assert res.norms["R_20"] == pytest.approx(_dense(op, fam[2], fam[0], -5.0), rel=1e-9)
    ell = fam.subscale
    from gaussloc.geometry import tile_frame

    y = tile_frame(fam, 1).centers[0]
    tile = Box(tuple(y), ell, ell / 16)
    assert res.norms["W_3,1:0"] == pytest.approx(_dense(op, fam[3], tile, -5.0, "frame"), rel=1e-9)
    assert res.consistent()


@given(st.integers(0, 50), st.floats(0.5, 6.0), st.floats(0.0, 2.0))
def test_regularity_monotone_in_r(seed, r, dr):
    """Regular at exponent r + dr implies regular at r."""
    op = _op(seed, L=30.0, scale=2.0)
    E = -1.0
    if np.min(np.abs(full_spectrum(op) - E)) < 1e-6:
        return
    hi = regularity_probe(op, GEO, r + dr, E, 30.0)
    lo = regularity_probe(op, GEO, r, E, 30.0)
    assert hi.norms == lo.norms
    assert (not hi.outcome) or lo.outcome


@settings(max_examples=10)
@given(st.integers(0, 20), st.floats(-0.5, 1.5), st.floats(0.0, 1.0))
def test_nonresonance_monotone_in_w(seed, w, dw):
    op = _op(seed, L=50.0, h=0.05, scale=2.0)
    a = nonresonance_probe(op, GEO, w, -1.5, 50.0)
    b = nonresonance_probe(op, GEO, w + dw, -1.5, 50.0)
    assert (not a.outcome) or b.outcome
    assert a.consistent() and b.consistent()


def test_frame_regularity_groups_consistent():
    op = _op(3, L=50.0, h=0.05)
    res = frame_regularity_probe(op, GEO, 2.0, -6.0, 50.0, 2)
    assert res.consistent()
    assert set(res.groups) == {"shell1", "shell2", "shell3"}
    with pytest.raises(MsaError):
        frame_regularity_probe(op, GEO, 2.0, -6.0, 50.0, 4)


def test_gap_probe():
    op = _op(4)
    E = full_spectrum(op)[10] + 1e-3
    assert not gap_probe(op, E, 0.01).outcome
    assert gap_probe(op, -100.0, 1.0).outcome


def test_approximation_defect_zero_for_identical_potentials():
    op = _op(5)
    d = approximation_defect(op, op, -5.0, 40.0, geometry=GEO)
    assert d.value == 0.0
    assert approximation_probe(op, op, 3.0, -5.0, 40.0, None, GEO).outcome


def test_approximation_defect_below_product_bound():
    grid = Grid.dirichlet_cube((0.0,), 40.0, 0.1)
    rng = np.random.default_rng(6)
    v = rng.normal(size=grid.size)
    a, b = assemble_on_grid(grid, v), assemble_on_grid(grid, v + 1e-3 * rng.normal(size=grid.size))
    d = approximation_defect(a, b, -5.0, 40.0, geometry=GEO)
    assert 0 < d.value <= d.product_bound * (1 + 1e-9)


def test_probe_jsonl(tmp_path):
    op = _op(7)
    res = [regularity_probe(op, GEO, 3.0, -5.0, 40.0), gap_probe(op, -5.0, 0.1)]
    write_jsonl(tmp_path / "p.jsonl", res)
    lines = (tmp_path / "p.jsonl").read_text().splitlines()
    assert [json.loads(s)["event"] for s in lines] == ["regular", "gap"]


def test_regularity_estimate_reproducible():
    spec = gaussian_spec(1)
    a = estimate_regularity_probability(spec, GEO, 3.0, -6.0, 30.0, 30, seed=1, rho=0.3)
    b = estimate_regularity_probability(spec, GEO, 3.0, -6.0, 30.0, 30, seed=1, rho=0.3)
    assert a.norms == b.norms
    assert a.target == pytest.approx(1 - 30.0 ** -0.3)
    with pytest.raises(MsaError):
        estimate_regularity_probability(spec, GEO, 3.0, -6.0, 30.0, 10, seed=1)


def test_implication_check_requires_recursion_condition():
    with pytest.raises(MsaError):
        deterministic_implication_check(gaussian_spec(1), GEO, 1.0, 2.0, 2, -6.0, 50.0, trials=1)


def test_independence_probe_compact_support_factorizes():
    spec = bump_spec(1, radius=0.5)
    L = 80.0
    events = [ThresholdEvent((-12.0,), 4.0, 1.5), ThresholdEvent((12.0,), 4.0, 1.5)]
    rep = independence_probe(spec, 2, L, 0.3, 0.8, events, 2000, seed=3)
    assert rep.compact and rep.product_ok


def test_independence_probe_preconditions():
    spec = bump_spec(1, radius=0.5)
    with pytest.raises(MsaError):
        independence_probe(spec, 2, 80.0, 0.3, 0.8, [((-2.0,), 2.0, 1.0), ((2.0,), 2.0, 1.0)], 100, 0)
    with pytest.raises(MsaError):
        independence_probe(spec, 2, 80.0, 0.3, 0.8, [((-20.0,), 30.0, 1.0), ((20.0,), 2.0, 1.0)], 100, 0)


def test_ipr_extremes():
    e = np.zeros((10, 1))
    e[3] = 1.0
    flat = np.ones((10, 1))
    assert ipr(e)[0] == 1.0
    assert ipr(flat)[0] == pytest.approx(0.1)


def test_localization_diagnostic_validates_beta():
    with pytest.raises(MsaError):
        localization_diagnostic(gaussian_spec(1), -3.0, [20.0], 1, beta=2.5)
