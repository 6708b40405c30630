"""Homogeneous Gaussian random fields on grids, truncation ladders and field statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.integrate import quad
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.special import beta as beta_fn

from gaussloc import bounds
from gaussloc.geometry import Box, indicator_values, length_scales
from gaussloc.grid import Grid
from gaussloc.stats import trial_rng

EMBED_NEG_TOL = 1e-12
EMBED_MASS_TOL = 1e-6


class FieldError(ValueError):
    pass


class EmbeddingError(FieldError):
    pass


# ---------------------------------------------------------------------------
# covariance specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HolderData:
    """``C(0) - C(x) <= b |x|_inf^beta`` for ``|x|_inf <= theta``."""

    beta: float
    b: float
    theta: float


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Covariance ``sigma^2 C`` of a homogeneous Gaussian field, optionally with ``C = gamma * gamma``.

    ``covariance`` and ``kernel`` take an ``(npts, d)`` array of points.
    ``kernel_radius`` is the sup-norm radius beyond which the kernel is
    treated as zero when convolving; it is exact for compactly supported
    kernels.
    """

    d: int
    covariance: Callable[[np.ndarray], np.ndarray]
    kernel: Callable[[np.ndarray], np.ndarray] | None = None
    sigma: float = 1.0
    zeta: float | None = None
    gamma0: float | None = None
    alpha: float | None = None
    holder: HolderData | None = None
    positive: bool = True
    ell_C: float = 1.0
    kernel_radius: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise FieldError("dimension must be positive")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise FieldError(f"invalid disorder strength sigma={self.sigma}")
        c0 = self.c0
        if not (math.isfinite(c0) and c0 > 0):
            raise FieldError(f"C(0) must be positive and finite, got {c0}")

    @cached_property
    def c0(self) -> float:
        return float(self.covariance(np.zeros((1, self.d)))[0])

    def C(self, x) -> np.ndarray:
        return self.covariance(np.atleast_2d(np.asarray(x, dtype=float)))

    def scaled_cov(self, x) -> np.ndarray:
        return self.sigma**2 * self.C(x)

    def with_sigma(self, sigma: float) -> "CovarianceSpec":
        return _replace(self, sigma=float(sigma))

    def describe(self) -> dict:
        return {"name": self.name, "d": self.d, "sigma": self.sigma, "C(0)": self.c0, "ell_C": self.ell_C,
                **self.params}


def _replace(spec: CovarianceSpec, **changes) -> CovarianceSpec:
    kw = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
    kw.update(changes)
    return CovarianceSpec(**kw)


def gaussian_spec(d: int = 1, corr_length: float = 1.0, c0: float = 1.0, sigma: float = 1.0,
                  ell_C: float = 1.0) -> CovarianceSpec:
    """``C(x) = c0 exp(-|x|^2 / (2 lam^2))`` with kernel ``gamma ~ exp(-|x|^2 / lam^2)``."""
    lam = float(corr_length)
    amp = math.sqrt(c0) * (math.pi * lam**2 / 2) ** (-d / 4)

    def cov(x):
        return c0 * np.exp(-np.sum(x**2, axis=1) / (2 * lam**2))

    def ker(x):
        return amp * np.exp(-np.sum(x**2, axis=1) / lam**2)

    b = c0 * d / (2 * lam**2)
    return CovarianceSpec(
        d, cov, ker, sigma,
        holder=HolderData(1.0, b, min(1.0, (2 * c0 / b))),
        alpha=1.0, ell_C=ell_C, kernel_radius=6.1 * lam, name="gaussian",
        params={"corr_length": lam, "c0": c0},
    )


def _autocorr_1d(values: np.ndarray, h: float) -> np.ndarray:
    n = values.size
    m = sfft.next_fast_len(2 * n)
    F = sfft.rfft(values, m)
    ac = sfft.irfft(np.abs(F) ** 2, m)[:n] * h
    return ac


def bump_spec(d: int = 1, radius: float = 1.0, c0: float = 1.0, sigma: float = 1.0,
              ell_C: float | None = None) -> CovarianceSpec:
    """Product bump kernel ``gamma = A prod exp(-1/(1-(x_i/s)^2))``, supported in ``|x|_inf < s``.

    The covariance is a product of 1-D autocorrelations, tabulated once and
    splined; it vanishes for ``|x|_inf >= 2s``.
    """
    s = float(radius)

    def psi(t):
        u = np.asarray(t) / s
        out = np.zeros_like(u, dtype=float)
        m = np.abs(u) < 1
        out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
        return out

    n = 4001
    ht = 2 * s / (n - 1)
    tab = psi(-s + ht * np.arange(n))
    ac = _autocorr_1d(tab, ht)
    lags = ht * np.arange(n)
    mass = ac[0]
    amp = (c0 / mass**d) ** 0.5
    spline = CubicSpline(lags, ac / mass)

    def c1(t):
        a = np.abs(t)
        out = np.where(a < 2 * s, spline(np.minimum(a, 2 * s)), 0.0)
        return np.clip(out, 0.0, 1.0)

    def cov(x):
        return c0 * np.prod(c1(x), axis=1)

    def ker(x):
        return amp * np.prod(psi(x), axis=1)

    dpsi2 = quad(lambda t: (psi(t) * 2 * (t / s**2) / (1 - (t / s) ** 2) ** 2) ** 2
                 if abs(t) < s else 0.0, -s, s, limit=200)[0]
    grad_sq = d * amp**2 * dpsi2 * mass ** (d - 1)
    b = 0.5 * grad_sq * d
    return CovarianceSpec(
        d, cov, ker, sigma,
        holder=HolderData(1.0, b, min(1.0, 2 * c0 / b)),
        alpha=1.0, ell_C=2 * s if ell_C is None else ell_C, kernel_radius=s, name="bump",
        params={"radius": s, "c0": c0},
    )


def power_law_spec(d: int = 1, zeta: float = 8.0, c0: float = 1.0, sigma: float = 1.0,
                   kernel_radius: float = 50.0, table_h: float = 0.05, ell_C: float = 1.0) -> CovarianceSpec:
    """``gamma(x) = A (1+|x|)^-zeta`` normalized to ``C(0) = c0``; C tabulated by FFT autocorrelation."""
    if not 2 * zeta > d:
        raise FieldError("need 2 zeta > d for a square-integrable kernel")
    S = bounds.sphere_area(d)
    amp = math.sqrt(c0 / (S * beta_fn(d, 2 * zeta - d)))

    def ker(x):
        r = np.sqrt(np.sum(x**2, axis=1))
        return amp * (1 + r) ** (-zeta)

    m = int(math.ceil(kernel_radius / table_h))
    ax = table_h * np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    vals = ker(np.stack([g.ravel() for g in mesh], axis=1)).reshape(mesh[0].shape)
    shape = [sfft.next_fast_len(2 * n) for n in vals.shape]
    F = sfft.rfftn(vals, shape)
    ac = sfft.irfftn(np.abs(F) ** 2, shape) * table_h**d
    # keep lags 0..2m in each axis and mirror (the kernel is even)
    sl = tuple(slice(0, 2 * m + 1) for _ in range(d))
    ac = ac[sl]
    # truncation of the kernel tail makes the table's C(0) slightly smaller than c0
    ac = ac * (c0 / ac[(0,) * d])
    lag_ax = table_h * np.arange(2 * m + 1)
    interp = RegularGridInterpolator([lag_ax] * d, ac, bounds_error=False, fill_value=0.0)

    def cov(x):
        return np.maximum(interp(np.abs(x)), 0.0)

    grad_sq = amp**2 * zeta**2 * S * beta_fn(d, 2 * zeta + 2 - d)
    b = 0.5 * grad_sq * d
    return CovarianceSpec(
        d, cov, ker, sigma, zeta=zeta, gamma0=amp,
        holder=HolderData(1.0, b, min(1.0, 2 * c0 / b)),
        alpha=1.0, ell_C=ell_C, kernel_radius=kernel_radius, name="power-law",
        params={"zeta": zeta, "c0": c0, "kernel_radius": kernel_radius},
    )


def verified_positive_radius(spec: CovarianceSpec, r_max: float, n: int = 201) -> float:
    """Largest cube edge ``ell <= r_max`` on a radial scan with ``C > 0`` on ``Lambda_ell(0)``."""
    ts = np.linspace(0, r_max / 2, n)
    best = 0.0
    for t in ts[1:]:
        ax = np.linspace(-t, t, 9)
        mesh = np.meshgrid(*([ax] * spec.d), indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        if np.min(spec.C(pts)) <= 0:
            break
        best = 2 * t
    return best


# ---------------------------------------------------------------------------
# covariance tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceTable:
    """Values on integer lags ``-K..K`` per axis (centered array), spacing ``h``."""

    h: float
    values: np.ndarray
    stderr: np.ndarray | None = None
    samples: int | None = None

    @property
    def max_lag(self) -> tuple[int, ...]:
        return tuple((n - 1) // 2 for n in self.values.shape)

    def at(self, lag) -> float:
        lag = np.atleast_1d(lag)
        idx = tuple(int(l) + k for l, k in zip(lag, self.max_lag))
        return float(self.values[idx])

    def lag_coords(self) -> np.ndarray:
        axes = [self.h * np.arange(-k, k + 1) for k in self.max_lag]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def autocovariance_from_kernel(gamma: np.ndarray, grid: Grid) -> CovarianceTable:
    """``C(x) = sum_y gamma(x+y) gamma(y) h^d`` for all grid lags."""
    gamma = np.asarray(gamma, dtype=float).reshape(grid.shape)
    if gamma.size == 0:
        raise FieldError("empty kernel grid")
    if not np.all(np.isfinite(gamma)):
        raise FieldError("kernel has non-finite values")
    shape = [sfft.next_fast_len(2 * n) for n in gamma.shape]
    F = sfft.rfftn(gamma, shape)
    ac = sfft.irfftn(np.abs(F) ** 2, shape) * grid.cell_volume
    # reorder to centered lags -(n-1)..(n-1)
    for axis, n in enumerate(gamma.shape):
        ac = np.concatenate([np.take(ac, np.arange(-(n - 1), 0), axis=axis),
                             np.take(ac, np.arange(0, n), axis=axis)], axis=axis)
    ac = 0.5 * (ac + ac[tuple(slice(None, None, -1) for _ in gamma.shape)])
    return CovarianceTable(grid.h, ac)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSample:
    grid: Grid
    values: np.ndarray
    seed: int | None
    k: int | str = "infinity"

    def to_binary(self, path) -> Path:
        path = Path(path)
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path)
        hdr = self.grid.header()
        lines = [f"d = {hdr['d']}", f"shape = {' '.join(map(str, hdr['shape']))}",
                 f"origin = {' '.join(repr(o) for o in hdr['origin'])}", f"h = {self.grid.h!r}",
                 f"seed = {self.seed}", f"k = {self.k}", "dtype = float64 little-endian row-major"]
        path.with_suffix(path.suffix + ".hdr").write_text("\n".join(lines) + "\n")
        return path

    def to_csv(self, path) -> Path:
        if self.grid.d > 2:
            raise FieldError("CSV export supports d <= 2")
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*[f"x{i}" for i in range(self.grid.d)], "V"])
            for p, v in zip(self.grid.points(), self.values.ravel()):
                w.writerow([*map(repr, p), repr(float(v))])
        return path


def read_binary(path) -> FieldSample:
    path = Path(path)
    meta = {}
    for line in path.with_suffix(path.suffix + ".hdr").read_text().splitlines():
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    shape = tuple(int(s) for s in meta["shape"].split())
    origin = tuple(float(s) for s in meta["origin"].split())
    grid = Grid(origin, float(meta["h"]), shape)
    vals = np.fromfile(path, dtype="<f8").reshape(shape)
    seed = None if meta["seed"] == "None" else int(meta["seed"])
    k = meta["k"] if meta["k"] == "infinity" else int(meta["k"])
    return FieldSample(grid, vals, seed, k)


def _signed_lags(m: int) -> np.ndarray:
    j = np.arange(m)
    return np.where(j <= m // 2, j, j - m)


class CirculantSampler:
    """Exact sampler of ``sigma^2 C`` on ``grid`` by circulant embedding on a padded torus.

    Negative embedding eigenvalues below ``-1e-12`` (relative to the largest)
    are clipped and their mass reported; more than ``1e-6`` of the total
    aborts, unless ``allow_fallback`` lets the padding double (up to 8x).
    """

    def __init__(self, spec: CovarianceSpec, grid: Grid, padding: int = 2, allow_fallback: bool = True):
        if grid.d != spec.d:
            raise FieldError("grid dimension does not match the covariance")
        self.spec, self.grid = spec, grid
        pad = padding
        while True:
            try:
                self._setup(pad)
                break
            except EmbeddingError:
                if not allow_fallback or pad >= 8:
                    raise
                pad *= 2
        self.padding = pad

    def _setup(self, pad: int):
        spec, grid = self.spec, self.grid
        self.mshape = tuple(sfft.next_fast_len(pad * n) for n in grid.shape)
        axes = [grid.h * _signed_lags(m) for m in self.mshape]
        mesh = np.meshgrid(*axes, indexing="ij")
        c = spec.C(np.stack([g.ravel() for g in mesh], axis=1)).reshape(self.mshape)
        lam = sfft.fftn(c).real
        top = float(np.max(np.abs(lam))) if lam.size else 0.0
        neg = lam < -EMBED_NEG_TOL * top
        total = float(np.sum(np.abs(lam)))
        self.clipped_mass = float(-np.sum(lam[neg])) / total if total > 0 else 0.0
        if self.clipped_mass > EMBED_MASS_TOL:
            raise EmbeddingError(f"clipped negative spectral mass {self.clipped_mass:.3g} exceeds {EMBED_MASS_TOL}")
        lam = np.maximum(lam, 0.0)
        self._amp = spec.sigma * np.sqrt(lam / np.prod(self.mshape))

    def _draw_complex(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.mshape) + 1j * rng.standard_normal(self.mshape)
        y = sfft.fftn(self._amp * z)
        return y[tuple(slice(0, n) for n in self.grid.shape)]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self._draw_complex(rng).real.copy()

    def sample_many(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """``count`` independent samples; each FFT yields two (real and imaginary parts)."""
        out = np.empty((count, *self.grid.shape))
        i = 0
        while i < count:
            y = self._draw_complex(rng)
            out[i] = y.real
            if i + 1 < count:
                out[i + 1] = y.imag
            i += 2
        return out


def sample_field(spec: CovarianceSpec, grid: Grid, seed: int, allow_fallback: bool = True) -> FieldSample:
    sampler = CirculantSampler(spec, grid, allow_fallback=allow_fallback)
    return FieldSample(grid, sampler.sample(np.random.default_rng(seed)), seed)


def sample_fields(spec: CovarianceSpec, grid: Grid, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise FieldError("need at least one sample")
    return CirculantSampler(spec, grid).sample_many(count, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# truncation ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruncationLadder:
    """Kernels ``gamma_k = gamma chi_{B_k}``, ``B_k = (Lambda_{L_k/(4N)}(0), frame)``."""

    spec: CovarianceSpec
    N: int
    nu: float
    L0: float
    lengths: np.ndarray
    frame: float = 1.0

    def __post_init__(self):
        if self.spec.kernel is None:
            raise FieldError("truncation ladder needs a factorization kernel")

    @property
    def k_max(self) -> int:
        return len(self.lengths) - 1

    def box(self, k: int) -> Box:
        return Box((0.0,) * self.spec.d, self.lengths[k] / (4 * self.N), self.frame)

    def kernel_values(self, k, points: np.ndarray) -> np.ndarray:
        g = self.spec.kernel(points)
        if k == "infinity" or k is None:
            return g
        return g * indicator_values(self.box(k), points)

    def _kernel_grid(self, h: float) -> Grid:
        radius = self.spec.kernel_radius
        if radius is None:
            raise FieldError("spec needs a kernel_radius")
        m = int(math.ceil(radius / h))
        return Grid((-m * h,) * self.spec.d, h, (2 * m + 1,) * self.spec.d)

    def covariance_at_zero(self, k, h: float) -> float:
        """Grid quadrature ``h^d sum gamma_k^2`` of ``C_k(0)``."""
        g = self.kernel_values(k, self._kernel_grid(h).points())
        return float(np.sum(g**2) * h**self.spec.d)

    def truncated_covariance(self, k, h: float) -> CovarianceTable:
        grid = self._kernel_grid(h)
        return autocovariance_from_kernel(self.kernel_values(k, grid.points()), grid)

    def mean_square_error_bound(self, k: int) -> float:
        """``(tilde gamma/200) L_k^(d - 2 zeta)`` for kernels with power-law data."""
        if self.spec.zeta is None or self.spec.gamma0 is None:
            raise FieldError("need zeta and gamma0 for the pointwise bound")
        gt = bounds.pointwise_constant(self.spec.gamma0, self.spec.zeta, self.spec.d, self.N).value
        return gt / 200 * self.lengths[k] ** (self.spec.d - 2 * self.spec.zeta)


def truncation_ladder(spec: CovarianceSpec, N: int, nu: float, L0: float, k_max: int,
                      frame: float = 1.0) -> TruncationLadder:
    ls = length_scales(N, nu, L0, k_max)
    if ls.overflow:
        raise FieldError("length scales overflow before k_max")
    return TruncationLadder(spec, N, nu, L0, ls.values, frame)


class LadderSampler:
    """Joint sampler of ``V_0..V_kmax`` and ``V`` from one white-noise field.

    ``V_k(x) = h^(d/2) sum_y gamma_k(x - y) xi_y`` on a torus large enough
    that no kernel wraps onto the field grid.
    """

    def __init__(self, ladder: TruncationLadder, grid: Grid, k_max: int | None = None):
        k_max = ladder.k_max if k_max is None else k_max
        if k_max > ladder.k_max or k_max < 0:
            raise FieldError(f"k_max={k_max} exceeds the available length scales (0..{ladder.k_max})")
        spec = ladder.spec
        if spec.kernel_radius is None:
            raise FieldError("spec needs a kernel_radius")
        self.ladder, self.grid, self.k_max = ladder, grid, k_max
        h = grid.h
        r = int(math.ceil(spec.kernel_radius / h))
        self.mshape = tuple(sfft.next_fast_len(n + 2 * r + 1) for n in grid.shape)
        axes = [h * _signed_lags(m) for m in self.mshape]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        inside = np.max(np.abs(pts), axis=1) <= spec.kernel_radius
        scale = spec.sigma * h ** (spec.d / 2)
        self.kernels = {}
        for k in [*range(k_max + 1), "infinity"]:
            v = np.zeros(pts.shape[0])
            v[inside] = ladder.kernel_values(k, pts[inside])
            self.kernels[k] = scale * v.reshape(self.mshape)
        self._hat = {k: sfft.rfftn(v) for k, v in self.kernels.items()}
        self._diff_hat = {k: sfft.rfftn(self.kernels[k] - self.kernels["infinity"]) for k in range(k_max + 1)}

    def cross_covariance_discrepancy(self, tol: float = 1e-10) -> dict:
        """``max | |g_k||g_k'| - Re(g_k conj g_k') |`` per pair, kept when above ``tol``."""
        keys = list(self._hat)
        out = {}
        for i, a in enumerate(keys):
            for b in keys[i + 1:]:
                ga, gb = self._hat[a], self._hat[b]
                disc = float(np.max(np.abs(np.abs(ga) * np.abs(gb) - (ga * np.conj(gb)).real)))
                if disc > tol:
                    out[f"{a},{b}"] = disc
        return out

    def _convolve(self, hat: np.ndarray, noise_hat: np.ndarray) -> np.ndarray:
        y = sfft.irfftn(hat * noise_hat, self.mshape)
        return y[tuple(slice(0, n) for n in self.grid.shape)]

    def sample(self, rng: np.random.Generator, differences: bool = False) -> dict:
        """Dict ``k -> V_k`` (and ``"infinity" -> V``); with ``differences`` also ``("diff", k) -> V_k - V``."""
        xi_hat = sfft.rfftn(rng.standard_normal(self.mshape))
        out = {k: self._convolve(hat, xi_hat) for k, hat in self._hat.items()}
        if differences:
            for k, hat in self._diff_hat.items():
                out[("diff", k)] = self._convolve(hat, xi_hat)
        return out


def sample_ladder(ladder: TruncationLadder, grid: Grid, seed: int, k_max: int) -> list[FieldSample]:
    sampler = LadderSampler(ladder, grid, k_max)
    draws = sampler.sample(np.random.default_rng(seed))
    return [FieldSample(grid, draws[k], seed, k) for k in [*range(k_max + 1), "infinity"]]


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def empirical_covariance(samples, max_lag: int | Sequence[int] | None = None, h: float | None = None,
                         batch: int = 64) -> CovarianceTable:
    """Lag-averaged covariance estimate (zero mean known) with per-lag Monte-Carlo stderr."""
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], FieldSample):
        grids = {s.grid for s in samples}
        if len(grids) != 1:
            raise FieldError("samples live on different grids")
        h = samples[0].grid.h
        arr = np.stack([s.values for s in samples])
    else:
        arr = np.asarray(samples, dtype=float)
    if arr.shape[0] < 2:
        raise FieldError("need at least two samples")
    shape = arr.shape[1:]
    d = len(shape)
    if max_lag is None:
        max_lag = [max(0, n // 4) for n in shape]
    max_lag = [int(max_lag)] * d if np.isscalar(max_lag) else [int(m) for m in max_lag]
    pshape = [sfft.next_fast_len(2 * n) for n in shape]

    def centered(ac):
        idx = [np.r_[np.arange(-m, 0), np.arange(0, m + 1)] for m in max_lag]
        return ac[(Ellipsis, *np.ix_(*idx))]

    ones = sfft.irfftn(np.abs(sfft.rfftn(np.ones(shape), pshape)) ** 2, pshape)
    count = np.rint(centered(ones))
    if np.any(count <= 0):
        raise FieldError("max_lag exceeds the grid")
    s1 = np.zeros(count.shape)
    s2 = np.zeros(count.shape)
    axes = tuple(range(1, d + 1))
    for start in range(0, arr.shape[0], batch):
        chunk = arr[start : start + batch]
        F = sfft.rfftn(chunk, pshape, axes=axes)
        ac = sfft.irfftn(np.abs(F) ** 2, pshape, axes=axes)
        a = centered(ac) / count
        s1 += a.sum(axis=0)
        s2 += (a**2).sum(axis=0)
    n = arr.shape[0]
    mean = s1 / n
    var = np.maximum(s2 / n - mean**2, 0.0) * n / (n - 1)
    return CovarianceTable(h if h is not None else 1.0, mean, np.sqrt(var / n), n)


@dataclass(frozen=True)
class ExceedanceResult:
    ell: float
    E: np.ndarray
    p_hat: np.ndarray
    low: np.ndarray
    high: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    ell_H: float
    trials: int
    h: float

    @property
    def in_regime(self) -> bool:
        return self.ell >= self.ell_H


def fernique_ell_H(spec: CovarianceSpec) -> float:
    if spec.holder is None:
        return math.inf
    hd = spec.holder
    c0 = spec.sigma**2 * spec.c0
    return bounds.fernique_regime(c0, hd.beta, spec.sigma**2 * hd.b, hd.theta).value


def sup_norm_exceedance(spec: CovarianceSpec, ell: float, E, trials: int, seed: int,
                        h: float = 0.1) -> ExceedanceResult:
    """Monte-Carlo ``P{max_grid |V| >= E}`` on the closed cube ``Lambda_ell(0)`` with Wilson intervals."""
    from gaussloc.stats import wilson_interval

    if trials < 1:
        raise FieldError("need at least one trial")
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if np.any(E < 0):
        raise FieldError("thresholds must be nonnegative")
    grid = Grid.closed_cube((0.0,) * spec.d, ell, h)
    sampler = CirculantSampler(spec, grid)
    rng = np.random.default_rng(seed)
    maxima = np.empty(trials)
    done = 0
    while done < trials:
        n = min(256, trials - done)
        batch = sampler.sample_many(n, rng)
        maxima[done : done + n] = np.max(np.abs(batch.reshape(n, -1)), axis=1)
        done += n
    hits = (maxima[None, :] >= E[:, None]).sum(axis=1)
    est = [wilson_interval(int(k), trials) for k in hits]
    c0 = spec.sigma**2 * spec.c0
    bound = np.array([bounds.fernique_rhs(ell, e, c0, spec.d).value for e in E])
    return ExceedanceResult(
        ell, E, hits / trials, np.array([e.low for e in est]), np.array([e.high for e in est]),
        np.array([e.stderr for e in est]), bound, fernique_ell_H(spec), trials, h,
    )


# ---------------------------------------------------------------------------
# one-parameter decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Decomposition:
    u: np.ndarray
    lam: float
    U: np.ndarray
    norm: float
    boundary_weight: float


class Decomposer:
    """``V = lam u + U`` with ``lam = N^-1/2 sum w g V`` and ``u = N^-1/2 sum w g sigma^2 C(. - y)``.

    ``g(y) = exp(-|y|^2/2)`` with trapezoid weights ``w`` on the grid, zeroed
    where ``g < 1e-12``. All sums use the exact grid covariance, so
    ``Var lam = 1`` and ``E[lam U(x)] = 0`` hold exactly in population.
    """

    def __init__(self, spec: CovarianceSpec, grid: Grid):
        if not spec.positive:
            raise FieldError("decomposition requires a nonnegative covariance")
        self.spec, self.grid = spec, grid
        w = np.ones(grid.shape) * grid.cell_volume
        for axis, n in enumerate(grid.shape):
            edge = np.ones(n)
            if n > 1:
                edge[[0, -1]] = 0.5
            shape = [1] * grid.d
            shape[axis] = n
            w = w * edge.reshape(shape)
        r2 = sum(c**2 for c in grid.coords())
        g = np.exp(-r2 / 2)
        self.boundary_weight = float(max(np.max(np.abs(np.take(g, [0, -1], axis=a))) for a in range(grid.d)))
        g[g < 1e-12] = 0.0
        self.wg = w * g
        lags = [grid.h * np.arange(-(n - 1), n) for n in grid.shape]
        mesh = np.meshgrid(*lags, indexing="ij")
        ctab = spec.scaled_cov(np.stack([m.ravel() for m in mesh], axis=1)).reshape(mesh[0].shape)
        full = fftconvolve(self.wg, ctab, mode="full")
        sl = tuple(slice(n - 1, 2 * n - 1) for n in grid.shape)
        conv = full[sl]
        self.norm = float(np.sum(self.wg * conv))
        if not self.norm > 0:
            raise FieldError(f"normalization {self.norm} <= 0")
        self.u = conv / math.sqrt(self.norm)

    def lam(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values).reshape(-1, *self.grid.shape)
        axes = tuple(range(1, self.grid.d + 1))
        return np.sum(v * self.wg, axis=axes) / math.sqrt(self.norm)

    def decompose(self, values: np.ndarray) -> Decomposition:
        values = np.asarray(values).reshape(self.grid.shape)
        lam = float(self.lam(values)[0])
        return Decomposition(self.u, lam, values - lam * self.u, self.norm, self.boundary_weight)


def one_parameter_decompose(sample: FieldSample, spec: CovarianceSpec) -> Decomposition:
    return Decomposer(spec, sample.grid).decompose(sample.values)


def ladder_trial_rng(seed: int, index: int) -> np.random.Generator:
    return trial_rng(seed, index)
