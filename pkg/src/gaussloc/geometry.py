"""Boxes with frames, smooth cutoffs, frame tilings and the length-scale recursion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from gaussloc.grid import Grid

# Below this value of t(1-t) the bump factor exp(-1/(t(1-t))) is < 1e-434,
# so the profile derivatives are set to exactly zero.
_P_FLOOR = 1e-3
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_GL_U = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


class GridTooCoarse(ValueError):
    pass


class GeometryError(ValueError):
    pass


# ---------------------------------------------------------------------------
# transition profile
# ---------------------------------------------------------------------------


def _bump(t: np.ndarray) -> np.ndarray:
    p = t * (1.0 - t)
    out = np.zeros_like(t, dtype=float)
    m = p > _P_FLOOR
    out[m] = np.exp(-1.0 / p[m])
    return out


@lru_cache(maxsize=None)
def _bump_mass() -> float:
    return float(np.sum(_GL_W * _bump(_GL_U)))


def profile(t) -> np.ndarray:
    """Normalized antiderivative ``s`` of ``exp(-1/(t(1-t)))``: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    out = np.empty_like(flat)
    inner = (flat > 0) & (flat < 1)
    out[flat <= 0] = 0.0
    out[flat >= 1] = 1.0
    ti = flat[inner]
    if ti.size:
        # s(t) = t * int_0^1 f(t u) du / Z, evaluated in chunks to bound memory.
        vals = np.empty_like(ti)
        for s in range(0, ti.size, 65536):
            chunk = ti[s : s + 65536]
            vals[s : s + 65536] = chunk * (_bump(chunk[:, None] * _GL_U[None, :]) @ _GL_W)
        out[inner] = np.clip(vals / _bump_mass(), 0.0, 1.0)
    return out.reshape(t.shape)


def profile_derivatives(t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic ``(s', s'', s''')`` of the profile."""
    t = np.asarray(t, dtype=float)
    p = t * (1.0 - t)
    d1 = np.zeros_like(t)
    d2 = np.zeros_like(t)
    d3 = np.zeros_like(t)
    m = p > _P_FLOOR
    if np.any(m):
        pm = p[m]
        pp = 1.0 - 2.0 * t[m]
        f = np.exp(-1.0 / pm) / _bump_mass()
        q = pp / pm**2
        dq = -2.0 / pm**2 - 2.0 * pp**2 / pm**3
        d1[m] = f
        d2[m] = f * q
        d3[m] = f * (q * q + dq)
    return d1, d2, d3


# ---------------------------------------------------------------------------
# boxes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Open cube ``Lambda_edge(center)`` with frame width ``frame``."""

    center: tuple[float, ...]
    edge: float
    frame: float = 0.0

    def __post_init__(self):
        c = tuple(float(x) for x in np.atleast_1d(self.center))
        object.__setattr__(self, "center", c)
        if not (self.edge > 0 and math.isfinite(self.edge)):
            raise GeometryError(f"box edge must be positive, got {self.edge}")
        if not (self.frame >= 0 and math.isfinite(self.frame)):
            raise GeometryError(f"frame width must be nonnegative, got {self.frame}")
        if self.frame > self.edge / 2:
            raise GeometryError("frame wider than half the box")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return self.edge**self.d

    def contained_in(self, other: "Box") -> bool:
        """``self < other``: cube inside and ``dist_inf(self, boundary(other)) > other.frame``."""
        if other.d != self.d:
            return False
        c, co = np.asarray(self.center), np.asarray(other.center)
        gap = other.edge / 2 - (np.abs(c - co) + self.edge / 2)
        return bool(np.all(gap > other.frame))

    def __lt__(self, other: "Box") -> bool:
        return self.contained_in(other)

    def shifted(self, center) -> "Box":
        return Box(tuple(np.atleast_1d(center)), self.edge, self.frame)


@dataclass(frozen=True)
class BoxFamily:
    """The nested boxes ``B_0 < ... < B_N`` at scale ``L`` around ``x``."""

    x: tuple[float, ...]
    L: float
    N: int
    nu: float
    boxes: tuple[Box, ...]
    above_threshold: bool

    @property
    def d(self) -> int:
        return len(self.x)

    @property
    def subscale(self) -> float:
        return (self.L / self.N) ** (1.0 / self.nu)

    def __getitem__(self, n: int) -> Box:
        return self.boxes[n]

    def chain_holds(self) -> bool:
        return all(self.boxes[n] < self.boxes[n + 1] for n in range(self.N))


def box_threshold(N: int, nu: float) -> float:
    return 2.0 ** (2 * nu / (nu - 1)) * N


def nested_boxes(L: float, N: int, nu: float, x=(0.0,), strict: bool = False) -> BoxFamily:
    """Build ``B_n^L(x)``, n = 0..N.

    The scale condition ``L > 2^(2 nu/(nu-1)) N`` is recorded in
    ``above_threshold``; it is astronomically large for nu near 1, so it only
    raises when ``strict``. The containment chain is checked unconditionally.
    """
    if N < 4 or int(N) != N:
        raise GeometryError("N must be an integer >= 4")
    if not nu > 1:
        raise GeometryError("nu must exceed 1")
    x = tuple(float(v) for v in np.atleast_1d(x))
    above = L > box_threshold(N, nu)
    if strict and not above:
        raise GeometryError(f"L={L} below threshold {box_threshold(N, nu):.4g}")
    sub = (L / N) ** (1.0 / nu)
    boxes = [Box(x, L / (4 * N), 0.0)]
    boxes += [Box(x, n * L / N, sub / (4 * N)) for n in range(1, N)]
    boxes.append(Box(x, L, L / (4 * N)))
    fam = BoxFamily(x, float(L), int(N), float(nu), tuple(boxes), bool(above))
    if not fam.chain_holds():
        raise GeometryError("containment chain fails; L too small relative to the sub-scale")
    return fam


# ---------------------------------------------------------------------------
# length scales
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LengthScales:
    values: np.ndarray
    overflow: bool
    growth_ok: bool = True


def length_scales(N: int, nu: float, L0: float, k_max: int, strict: bool = False) -> LengthScales:
    """``L_k = N^((nu^k - 1)/(nu - 1)) L0^(nu^k)`` for k = 0..k_max, evaluated in log space.

    ``L0^(nu-1) >= 4`` is reported in ``growth_ok`` and enforced only when ``strict``.
    Past the float range the prefix is returned with ``overflow`` set.
    """
    if N < 4 or int(N) != N:
        raise GeometryError("N must be an integer >= 4")
    if not nu > 1:
        raise GeometryError("nu must exceed 1")
    if not L0 > 1:
        raise GeometryError("L0 must exceed 1")
    growth_ok = (nu - 1) * math.log(L0) >= math.log(4)
    if strict and not growth_ok:
        raise GeometryError("need L0^(nu-1) >= 4")
    if k_max < 0:
        raise GeometryError("k_max must be nonnegative")
    logmax = math.log(np.finfo(float).max)
    out = []
    for k in range(k_max + 1):
        lg = (nu**k - 1) / (nu - 1) * math.log(N) + nu**k * math.log(L0)
        if lg >= logmax:
            return LengthScales(np.array(out), True, growth_ok)
        out.append(math.exp(lg))
    return LengthScales(np.array(out), False, growth_ok)


# ---------------------------------------------------------------------------
# smooth indicators
# ---------------------------------------------------------------------------


def _check_resolution(box: Box, grid: Grid | None):
    if box.frame <= 0:
        raise GeometryError("smooth indicators need a positive frame width")
    if grid is not None and grid.h > box.frame / 12 * (1 + 1e-12):
        raise GridTooCoarse(f"h={grid.h} exceeds b/12={box.frame / 12}")


def _factor(r: np.ndarray, start: float, width: float, order: int):
    """1-D cutoff ``1 - s((r - start)/width)`` of distance ``r >= 0`` and its radial derivatives."""
    t = (r - start) / width
    val = 1.0 - profile(t)
    if order == 0:
        return (val,)
    d1, d2, d3 = profile_derivatives(t)
    return val, -d1 / width, -d2 / width**2, -d3 / width**3


def _axis_factors(box: Box, points: np.ndarray, start: float, width: float, order: int):
    rel = points - np.asarray(box.center)[None, :]
    r = np.abs(rel)
    sg = np.sign(rel)
    out = []
    for i in range(box.d):
        f = _factor(r[:, i], start, width, order)
        if order == 0:
            out.append((f[0],))
        else:
            # odd derivatives pick up the sign of (x_i - c_i)
            out.append((f[0], sg[:, i] * f[1], f[2], sg[:, i] * f[3]))
    return out


def indicator_values(box: Box, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    if box.frame == 0:
        return np.all(np.abs(points - np.asarray(box.center)) < box.edge / 2, axis=1).astype(float)
    fac = _axis_factors(box, points, box.edge / 2 - 2 * box.frame / 3, box.frame / 3, 0)
    return np.prod([f[0] for f in fac], axis=0)


@dataclass(frozen=True)
class IndicatorDerivatives:
    value: np.ndarray
    grad: np.ndarray  # (npts, d)
    laplacian: np.ndarray
    lap_grad_sq: np.ndarray  # Laplacian of |grad chi|^2


def _product_derivatives(fac) -> IndicatorDerivatives:
    d = len(fac)
    phi = np.array([f[0] for f in fac])
    d1 = np.array([f[1] for f in fac])
    d2 = np.array([f[2] for f in fac])
    d3 = np.array([f[3] for f in fac])

    def prod_except(arr, skip):
        out = np.ones(arr.shape[1])
        for j in range(d):
            if j not in skip:
                out = out * arr[j]
        return out

    value = prod_except(phi, ())
    grad = np.stack([d1[i] * prod_except(phi, (i,)) for i in range(d)], axis=1)
    lap = sum(d2[i] * prod_except(phi, (i,)) for i in range(d))
    phi2 = phi**2
    g2 = d1**2
    g2pp = 2 * d2**2 + 2 * d1 * d3  # (phi'^2)''
    phi2pp = 2 * d1**2 + 2 * phi * d2  # (phi^2)''
    lg = np.zeros_like(value)
    for i in range(d):
        lg += g2pp[i] * prod_except(phi2, (i,))
        for k in range(d):
            if k != i:
                lg += g2[i] * phi2pp[k] * prod_except(phi2, (i, k))
    return IndicatorDerivatives(value, grad, lap, lg)


def indicator_derivatives(box: Box, points: np.ndarray) -> IndicatorDerivatives:
    _check_resolution(box, None)
    pts = np.atleast_2d(points)
    fac = _axis_factors(box, pts, box.edge / 2 - 2 * box.frame / 3, box.frame / 3, 3)
    return _product_derivatives(fac)


@dataclass(frozen=True)
class Kappas:
    kappa1: float
    kappa2: float
    kappa4: float

    def to_dict(self) -> dict:
        return {"kappa1": self.kappa1, "kappa2": self.kappa2, "kappa4": self.kappa4}


def _kappa_terms(d: int, t: np.ndarray) -> np.ndarray:
    """Scaled |grad chi|, |lap chi|, |lap |grad chi|^2| at transition coordinates ``t`` (npts, d).

    ``t < 0`` means the coordinate sits on the plateau. Unit frame width.
    """
    box = Box((0.0,) * d, 10.0, 1.0)
    start = box.edge / 2 - 2.0 / 3.0
    pts = start + np.maximum(t, -1.0) / 3.0
    der = indicator_derivatives(box, pts)
    return np.stack(
        [np.linalg.norm(der.grad, axis=1), np.abs(der.laplacian), np.abs(der.lap_grad_sq)], axis=1
    )


@lru_cache(maxsize=None)
def reference_kappas(d: int) -> Kappas:
    """Continuum suprema of ``b|grad chi|``, ``b^2|lap chi|``, ``b^4|lap |grad chi|^2|``.

    Each supremum is located on a tensor grid over the transition layer (plus
    a plateau value per coordinate) and then polished with a bounded local
    search; the result does not depend on the box.
    """
    from scipy.optimize import minimize

    n = {1: 20001, 2: 401}.get(d, 61)
    r = np.concatenate([[-1.0], np.linspace(0.0, 1.0, n)])
    mesh = np.meshgrid(*([r] * d), indexing="ij")
    t = np.stack([m.ravel() for m in mesh], axis=1)
    vals = _kappa_terms(d, t)
    out = []
    for j in range(3):
        best = float(vals[:, j].max())
        if d > 1:
            for start in t[np.argsort(vals[:, j])[-4:]]:
                res = minimize(
                    lambda z: -_kappa_terms(d, z[None, :])[0, j],
                    start,
                    method="L-BFGS-B",
                    bounds=[(-1.0, 1.0)] * d,
                )
                best = max(best, float(-res.fun))
        out.append(best)
    return Kappas(*out)


@dataclass(frozen=True)
class MollifiedIndicator:
    box: Box
    grid: Grid
    values: np.ndarray  # flat, grid order
    measured: Kappas
    reference: Kappas

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


def mollified_indicator(box: Box, grid: Grid) -> MollifiedIndicator:
    """Smooth indicator of ``box`` sampled on ``grid`` with κ constants measured there."""
    _check_resolution(box, grid)
    if grid.d != box.d:
        raise GeometryError("grid and box dimension differ")
    der = indicator_derivatives(box, grid.points())
    b = box.frame
    measured = Kappas(
        float(np.max(np.linalg.norm(der.grad, axis=1), initial=0.0)) * b,
        float(np.max(np.abs(der.laplacian), initial=0.0)) * b**2,
        float(np.max(np.abs(der.lap_grad_sq), initial=0.0)) * b**4,
    )
    return MollifiedIndicator(box, grid, der.value, measured, reference_kappas(box.d))


def frame_indicator_values(box: Box, points: np.ndarray) -> np.ndarray:
    """Indicator of the frame: 1 on ``l/2-2b/3 <= |x-y| <= l/2-b/3``, 0 off ``(l/2-b, l/2)``."""
    _check_resolution(box, None)
    points = np.atleast_2d(points)
    b = box.frame
    outer = _axis_factors(box, points, box.edge / 2 - b / 3, b / 3, 0)
    inner = _axis_factors(box, points, box.edge / 2 - b, b / 3, 0)
    return np.prod([f[0] for f in outer], axis=0) - np.prod([f[0] for f in inner], axis=0)


def frame_indicator(box: Box, grid: Grid) -> np.ndarray:
    _check_resolution(box, grid)
    return frame_indicator_values(box, grid.points())


# ---------------------------------------------------------------------------
# frame tilings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameTiling:
    family: BoxFamily
    n: int
    centers: np.ndarray  # (tau, d)
    tile_edge: float
    bound: float

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    def covers(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Boolean mask: point lies in some closed tile."""
        points = np.atleast_2d(points)
        hit = np.zeros(points.shape[0], dtype=bool)
        half = self.tile_edge / 2 * (1 + tol)
        for c in self.centers:
            hit |= np.all(np.abs(points - c) <= half, axis=1)
        return hit

    def min_separation(self) -> float:
        if self.count < 2:
            return math.inf
        c = self.centers
        diff = np.max(np.abs(c[:, None, :] - c[None, :, :]), axis=2)
        return float(np.min(diff[np.triu_indices(self.count, 1)]))


def tiling_bound(L: float, N: int, nu: float, n: int, d: int) -> float:
    return 2 * d * (4 * n * L * (N / L) ** (1 / nu) + 1) ** (d - 1)


def tile_frame(family: BoxFamily, n: int) -> FrameTiling:
    """Centres of edge-``l/(4N)`` tiles covering the frame of ``B_n``, ``1 <= n <= N-1``.

    Each of the 2d faces of the frame shell is a slab of width exactly one
    tile edge; tiles sit at the slab's mid-plane and on a spacing-``b``
    lattice along the other axes, the last tile overhanging when the box
    edge is not a multiple of ``b``.
    """
    if not 1 <= n <= family.N - 1:
        raise GeometryError(f"tiling needs 1 <= n <= N-1, got n={n}")
    box = family[n]
    b = box.frame  # equals l/(4N)
    d = family.d
    ln = box.edge
    m = int(math.ceil(ln / b - 1e-9))
    lattice = -ln / 2 + b / 2 + b * np.arange(m)
    a = ln / 2 - b / 2
    centers = []
    for axis in range(d):
        others = [lattice] * (d - 1)
        grids = np.meshgrid(*others, indexing="ij") if d > 1 else []
        flat = [g.ravel() for g in grids]
        k = flat[0].size if flat else 1
        for sign in (-1.0, 1.0):
            cols = []
            j = 0
            for ax in range(d):
                if ax == axis:
                    cols.append(np.full(k, sign * a))
                else:
                    cols.append(flat[j])
                    j += 1
            centers.append(np.stack(cols, axis=1))
    c = np.concatenate(centers) + np.asarray(family.x)[None, :]
    c = np.unique(np.round(c / b, 9), axis=0) * b
    return FrameTiling(family, n, c, b, tiling_bound(family.L, family.N, family.nu, n, d))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_boxes_csv(family: BoxFamily, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", *[f"x{i}" for i in range(family.d)], "edge", "frame"])
        for n, bx in enumerate(family.boxes):
            w.writerow([n, *bx.center, repr(bx.edge), repr(bx.frame)])
    return path


def export_indicator_csv(ind: MollifiedIndicator, path) -> Path:
    if ind.grid.d > 2:
        raise GeometryError("CSV export supports d <= 2")
    path = Path(path)
    pts = ind.grid.points()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*[f"x{i}" for i in range(ind.grid.d)], "chi"])
        for p, v in zip(pts, ind.values):
            w.writerow([*map(repr, p), repr(float(v))])
    return path
