"""Composite Monte-Carlo studies shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gaussloc import bounds
from gaussloc.field import (
    CirculantSampler,
    CovarianceSpec,
    Decomposer,
    LadderSampler,
    empirical_covariance,
    truncation_ladder,
)
from gaussloc.grid import Grid
from gaussloc.operator import assemble_on_grid, full_spectrum, _svd_norm
from gaussloc.stats import trial_rng


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


# ---------------------------------------------------------------------------
# covariance fidelity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceCheck:
    lags: np.ndarray
    empirical: np.ndarray
    exact: np.ndarray
    stderr: np.ndarray
    samples: int

    @property
    def z(self) -> np.ndarray:
        return np.abs(self.empirical - self.exact) / np.maximum(self.stderr, 1e-300)

    @property
    def max_z(self) -> float:
        return float(np.max(self.z))


def covariance_fidelity(spec: CovarianceSpec, points: int, h: float, samples: int, seed: int,
                        max_lag: int | None = None) -> CovarianceCheck:
    """Empirical lag covariance of ``samples`` circulant draws on a ``points^d`` grid against ``sigma^2 C``."""
    grid = Grid((0.0,) * spec.d, h, (points,) * spec.d)
    sampler = CirculantSampler(spec, grid)
    rng = trial_rng(seed, 0)
    vals = sampler.sample_many(samples, rng)
    table = empirical_covariance(vals, max_lag, h)
    lags = table.lag_coords()
    exact = spec.scaled_cov(lags).reshape(table.values.shape)
    return CovarianceCheck(lags, table.values.ravel(), exact.ravel(), table.stderr.ravel(), samples)


# ---------------------------------------------------------------------------
# Wegner estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WegnerCell:
    E: float
    edge: float
    points: int
    mean: float
    stderr: float
    bound: float
    W: float

    @property
    def holds(self) -> bool:
        return self.mean <= self.bound + 3 * self.stderr


def wegner_study(spec: CovarianceSpec, energies, eps: float, edges, trials: int, seed: int,
                 h: float = 0.1) -> list[WegnerCell]:
    """Monte-Carlo ``E[N(E+eps) - N(E)]`` against ``|Lambda| eps W(E+eps)`` on Dirichlet cubes."""
    energies = np.atleast_1d(np.asarray(energies, float))
    c0 = spec.sigma**2 * spec.c0
    W = {float(E): bounds.wegner_constant(float(E) + eps, c0, spec.ell_C, spec.d, covariance=spec.scaled_cov).value
         for E in energies}
    cells = []
    for j, edge in enumerate(edges):
        grid = Grid.dirichlet_cube((0.0,) * spec.d, edge, h)
        vol = ((grid.shape[0] + 1) * h) ** spec.d
        sampler = CirculantSampler(spec, grid)
        inc = np.empty((trials, energies.size))
        for t in range(trials):
            op = assemble_on_grid(grid, sampler.sample(trial_rng(seed, 100_000 * j + t)))
            ev = full_spectrum(op)
            inc[t] = np.searchsorted(ev, energies + eps) - np.searchsorted(ev, energies)
        for i, E in enumerate(energies):
            cells.append(WegnerCell(float(E), vol ** (1 / spec.d), grid.size, float(inc[:, i].mean()),
                                    float(inc[:, i].std(ddof=1) / math.sqrt(trials)),
                                    vol * eps * W[float(E)], W[float(E)]))
    return cells


# ---------------------------------------------------------------------------
# Combes-Thomas estimate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CombesThomasCase:
    gap: float
    delta: float
    measured: float
    bound: float
    deltas: np.ndarray
    norms: np.ndarray
    rate: float

    @property
    def dominated(self) -> bool:
        return self.measured <= self.bound

    @property
    def rate_ratio(self) -> float:
        return self.rate / math.sqrt(2 * self.gap)


def _interval_norm(op, E, a, b, c, e) -> float:
    """``||1_[a,b] (H - E)^-1 1_[c,e]||`` on a 1-D operator."""
    x = op.grid.points()[:, 0]
    rows = np.nonzero((x >= a) & (x <= b))[0]
    cols = np.nonzero((x >= c) & (x <= e))[0]
    A = (op.matrix - E * _identity(op.size)).toarray()
    rhs = np.zeros((op.size, cols.size))
    rhs[cols, np.arange(cols.size)] = 1.0
    X = np.linalg.solve(A, rhs)
    return _svd_norm(X[rows])


def _identity(n):
    import scipy.sparse as sp

    return sp.identity(n, format="csr")


def combes_thomas_study(cases: int, seed: int, h: float = 0.05, width: float = 1.0,
                        gap_range=(0.5, 4.0), delta_range=(2.0, 10.0), fit_points: int = 6) -> list[CombesThomasCase]:
    """Randomized bounded potentials ``v >= v0`` in d=1.

    Each case draws ``v0 - E`` and ``delta``, puts unit-length regions
    ``Lambda_1``, ``Lambda_2`` at distance ``delta`` inside a box, measures
    ``||1_1 (H - E)^-1 1_2||`` and fits the decay rate over a ``delta`` ladder.
    """
    out = []
    for c in range(cases):
        rng = trial_rng(seed, c)
        gap = float(rng.uniform(*gap_range))
        delta = float(rng.uniform(*delta_range))
        dmax = delta_range[1]
        edge = dmax + 2 * width + 4.0
        grid = Grid.dirichlet_cube((0.0,), edge, h)
        x = grid.points()[:, 0]
        v0 = float(rng.uniform(-2, 2))
        # bounded, rough potential above v0: piecewise constant cells plus a smooth bump
        cells = rng.uniform(0, 3, size=int(edge) + 1)
        v = v0 + cells[np.clip(((x + edge / 2)).astype(int), 0, cells.size - 1)]
        v += rng.uniform(0, 1) * np.sin(x) ** 2
        v[rng.integers(0, x.size)] = v0  # attain the infimum
        op = assemble_on_grid(grid, v)
        E = v0 - gap
        a = -edge / 2 + 2.0
        b = a + width

        def norm_at(dl):
            return _interval_norm(op, E, a, b, b + dl, b + dl + width)

        measured = norm_at(delta)
        bound = bounds.combes_thomas_bound(v0, E, delta, width, width, 1).value
        ds = np.linspace(delta_range[0], dmax, fit_points)
        ns = np.array([norm_at(dl) for dl in ds])
        rate = -_fit_slope(ds, np.log(ns))
        out.append(CombesThomasCase(gap, delta, measured, bound, ds, ns, rate))
    return out


# ---------------------------------------------------------------------------
# truncation ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LadderMSE:
    lengths: np.ndarray
    mse: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray | None
    trials: int

    @property
    def slope(self) -> float:
        return _fit_slope(np.log(self.lengths), np.log(self.mse))


def ladder_mse(spec: CovarianceSpec, N: int, nu: float, L0: float, k_max: int, h: float, trials: int, seed: int,
               points: int = 64) -> LadderMSE:
    """Monte-Carlo ``E (V_k - V)^2`` per rung from jointly sampled difference fields."""
    ladder = truncation_ladder(spec, N, nu, L0, k_max)
    grid = Grid((0.0,) * spec.d, h, (points,) * spec.d)
    sampler = LadderSampler(ladder, grid, k_max)
    sq = np.empty((trials, k_max + 1))
    for t in range(trials):
        draw = sampler.sample(trial_rng(seed, t), differences=True)
        for k in range(k_max + 1):
            sq[t, k] = np.mean(draw[("diff", k)] ** 2)
    bound = None
    if spec.zeta is not None and spec.gamma0 is not None:
        bound = np.array([spec.sigma**2 * ladder.mean_square_error_bound(k) for k in range(k_max + 1)])
    return LadderMSE(ladder.lengths[: k_max + 1], sq.mean(axis=0), sq.std(axis=0, ddof=1) / math.sqrt(trials),
                     bound, trials)


# ---------------------------------------------------------------------------
# Fernique tails
# ---------------------------------------------------------------------------


def tail_slope(E: np.ndarray, p_hat: np.ndarray, trials: int, min_hits: int = 30, p_max: float = 0.5) -> tuple[float, np.ndarray]:
    """Slope of ``-ln P`` against ``E^2`` over the window ``min_hits/trials <= P <= p_max``."""
    m = (p_hat >= min_hits / trials) & (p_hat <= p_max)
    if m.sum() < 3:
        return math.nan, m
    return _fit_slope(np.asarray(E)[m] ** 2, -np.log(np.asarray(p_hat)[m])), m


# ---------------------------------------------------------------------------
# one-parameter decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionStats:
    samples: int
    lam_var: float
    lam_var_stderr: float
    u_min: float
    max_abs_corr: float
    corr_stderr: float
    boundary_weight: float
    extra: dict = field(default_factory=dict)


def decomposition_study(spec: CovarianceSpec, points: int, h: float, samples: int, seed: int,
                        centered: bool = True) -> DecompositionStats:
    """Sample ``V``, split ``V = lam u + U`` and check ``Var lam = 1``, ``u > 0``, ``corr(lam, U(x)) = 0``."""
    if centered:
        origin = (-(points - 1) * h / 2,) * spec.d
    else:
        origin = (0.0,) * spec.d
    grid = Grid(origin, h, (points,) * spec.d)
    dec = Decomposer(spec, grid)
    sampler = CirculantSampler(spec, grid)
    rng = trial_rng(seed, 0)
    vals = sampler.sample_many(samples, rng).reshape(samples, -1)
    lam = dec.lam(vals.reshape(samples, *grid.shape))
    U = vals - lam[:, None] * dec.u.ravel()[None, :]
    lam_c = lam - lam.mean()
    Uc = U - U.mean(axis=0)
    sd_U = Uc.std(axis=0)
    ok = sd_U > 1e-12 * max(1.0, float(sd_U.max()))
    corr = (lam_c @ Uc[:, ok]) / samples / (lam_c.std() * sd_U[ok])
    var = float(lam.var(ddof=1))
    # Var of the sample variance of a Gaussian: 2 sigma^4/(n-1)
    var_se = math.sqrt(2.0 / (samples - 1)) * var
    return DecompositionStats(samples, var, var_se, float(dec.u.min()), float(np.max(np.abs(corr))),
                              1.0 / math.sqrt(samples), dec.boundary_weight)
