"""Finite-difference magnetic Schrödinger operators with Dirichlet boundary conditions.

``H = 1/2 (i grad + a)^2 + v`` on the interior points of a cube; the
magnetic field enters through Peierls phases ``exp(-i int a.dl)`` on links.
Operators on sub-cubes are principal submatrices of the parent matrix, so
restriction keeps potential, gauge and phases consistent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gaussloc import bounds
from gaussloc.geometry import (
    Box,
    Kappas,
    frame_indicator_values,
    indicator_derivatives,
    indicator_values,
    reference_kappas,
)
from gaussloc.grid import Grid

MAX_UNKNOWNS = 5_000_000
DENSE_LIMIT = 4000
SOLVE_RTOL = 1e-10


class OperatorError(RuntimeError):
    pass


class GridTooLarge(OperatorError):
    pass


class SpectrumHit(OperatorError):
    """Factorization at E is numerically singular: E sits on the spectrum."""


class SolverError(OperatorError):
    pass


# ---------------------------------------------------------------------------
# gauges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gauge:
    """Constant field ``B`` in the (x0, x1) plane; ``kind`` is none, symmetric or landau."""

    kind: str = "none"
    B: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "symmetric", "landau"):
            raise OperatorError(f"unknown gauge {self.kind!r}")

    @property
    def trivial(self) -> bool:
        return self.kind == "none" or self.B == 0.0

    def potential(self, points: np.ndarray) -> np.ndarray:
        a = np.zeros_like(points, dtype=float)
        if self.trivial:
            return a
        if self.kind == "symmetric":
            a[:, 0] = -self.B / 2 * points[:, 1]
            a[:, 1] = self.B / 2 * points[:, 0]
        else:
            a[:, 0] = -self.B * points[:, 1]
        return a

    def link_phase(self, points: np.ndarray, axis: int, h: float) -> np.ndarray:
        """``int_x^{x+h e_axis} a.dl``; exact because ``a_axis`` does not vary along ``e_axis``."""
        if self.trivial or axis > 1:
            return np.zeros(points.shape[0])
        return self.potential(points)[:, axis] * h

    def gauge_function(self, points: np.ndarray) -> np.ndarray:
        """``phi`` with ``a_symmetric - a_landau = grad phi``."""
        return self.B / 2 * points[:, 0] * points[:, 1]


def default_gauge(d: int, B: float = 0.0) -> Gauge:
    if d == 1 or B == 0.0:
        return Gauge("none", 0.0)
    return Gauge("symmetric", B)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    grid: Grid  # interior (Dirichlet) points
    v: np.ndarray  # flat, grid order
    gauge: Gauge
    matrix: sp.csr_matrix

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def cube(self) -> Box:
        center = tuple(o + (n - 1) * self.grid.h / 2 for o, n in zip(self.grid.origin, self.grid.shape))
        return Box(center, (self.grid.shape[0] + 1) * self.grid.h)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix.data)

    def restrict(self, center, edge: float) -> "DiscreteOperator":
        """Principal submatrix on the grid points strictly inside ``Lambda_edge(center)``."""
        sub, sl = self.grid.subgrid_strictly_inside(center, edge)
        idx = self.grid.flat_indices(sl)
        if sub.shape == self.grid.shape:
            return self
        m = self.matrix[idx][:, idx].tocsr()
        return DiscreteOperator(sub, self.v[idx], self.gauge, m)

    def restrict_box(self, box: Box) -> "DiscreteOperator":
        c = self.cube
        if not (np.all(np.abs(np.asarray(box.center) - np.asarray(c.center)) + box.edge / 2
                       <= c.edge / 2 + 1e-9 * c.edge)):
            raise OperatorError("box not inside the operator's cube")
        return self.restrict(box.center, box.edge)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def header(self) -> dict:
        c = self.cube
        return {"d": self.d, "h": self.grid.h, "cube_center": list(c.center), "cube_edge": c.edge,
                "gauge": self.gauge.kind, "B": self.gauge.B, "unknowns": self.size}


def assemble_on_grid(grid: Grid, v, gauge: Gauge | None = None) -> DiscreteOperator:
    """Assemble ``H`` on the interior points ``grid`` of a Dirichlet cube."""
    if grid.size > MAX_UNKNOWNS:
        raise GridTooLarge(f"{grid.size} unknowns exceed the budget of {MAX_UNKNOWNS} "
                           f"(~{grid.size * (2 * grid.d + 1) * 28 / 1e6:.0f} MB sparse)")
    gauge = gauge or default_gauge(grid.d)
    if grid.d == 1 and not gauge.trivial:
        raise OperatorError("magnetic fields need d >= 2")
    pts = grid.points()
    if callable(v):
        v = v(pts)
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = np.full(grid.size, float(v))
    v = v.ravel()
    if v.size != grid.size:
        raise OperatorError(f"potential has {v.size} values for {grid.size} grid points")
    if not np.all(np.isfinite(v)):
        raise OperatorError("potential has non-finite values")
    h = grid.h
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    complex_ = not gauge.trivial
    for axis in range(grid.d):
        lo = [slice(None)] * grid.d
        hi = [slice(None)] * grid.d
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a = idx[tuple(lo)].ravel()
        b = idx[tuple(hi)].ravel()
        if a.size == 0:
            continue
        t = -1.0 / (2 * h * h)
        if complex_:
            hop = t * np.exp(-1j * gauge.link_phase(pts[a], axis, h))
        else:
            hop = np.full(a.size, t)
        rows += [a, b]
        cols += [b, a]
        vals += [hop, np.conj(hop)]
    diag = grid.d / (h * h) + v
    rows.append(np.arange(grid.size))
    cols.append(np.arange(grid.size))
    vals.append(diag.astype(complex) if complex_ else diag)
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    )
    m.sum_duplicates()
    return DiscreteOperator(grid, v, gauge, m)


def assemble(center, edge: float, v, h: float, gauge: Gauge | None = None) -> DiscreteOperator:
    """Assemble on the open cube ``Lambda_edge(center)`` (edge snapped to a multiple of ``h``)."""
    if not h > 0:
        raise OperatorError("grid spacing must be positive")
    grid = Grid.dirichlet_cube(center, edge, h)
    return assemble_on_grid(grid, v, gauge)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralData:
    cutoff: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None

    def count(self, E) -> np.ndarray:
        """``N(E) = #{lambda < E}``; valid for ``E <= cutoff``."""
        return np.searchsorted(self.eigenvalues, np.asarray(E, dtype=float), side="left")


def _tridiagonal(op: DiscreteOperator):
    m = op.matrix
    return np.real(m.diagonal()), np.real(m.diagonal(1))


def full_spectrum(op: DiscreteOperator) -> np.ndarray:
    """All eigenvalues (dense, or tridiagonal in d = 1)."""
    if op.d == 1 and op.is_real:
        dg, off = _tridiagonal(op)
        return sla.eigvalsh_tridiagonal(dg, off)
    if op.size > DENSE_LIMIT:
        raise OperatorError("full spectrum only for dense-solvable grids")
    return sla.eigvalsh(op.dense())


def _block_structure(op: DiscreteOperator):
    n0 = op.grid.shape[0]
    bs = op.size // n0
    m = op.matrix.tocsr()
    blocks = [m[k * bs:(k + 1) * bs, k * bs:(k + 1) * bs].toarray() for k in range(n0)]
    coup = [m[k * bs:(k + 1) * bs, (k + 1) * bs:(k + 2) * bs].toarray() for k in range(n0 - 1)]
    return blocks, coup


def inertia_count(op: DiscreteOperator, E: float, rtol: float = 1e-12) -> int:
    """Number of eigenvalues below ``E`` from the inertia of ``H - E`` (Sylvester's law).

    Block elimination along axis 0: ``S_0 = A_0 - E``,
    ``S_{k+1} = A_{k+1} - E - B_k^* S_k^{-1} B_k``; the count is the number of
    negative eigenvalues of all ``S_k``. A near-singular pivot raises
    ``SpectrumHit``.
    """
    blocks, coup = _block_structure(op)
    scale = max(1.0, float(np.max(np.abs(op.matrix.data))))
    count = 0
    prev_inv = None
    for k, A in enumerate(blocks):
        S = A - E * np.eye(A.shape[0])
        if k > 0:
            Bk = coup[k - 1]
            S = S - Bk.conj().T @ prev_inv @ Bk
        S = 0.5 * (S + S.conj().T)
        w, Q = sla.eigh(S)
        if np.min(np.abs(w)) < rtol * scale:
            raise SpectrumHit(f"E={E} is numerically on the spectrum (pivot {np.min(np.abs(w)):.3g})")
        count += int(np.sum(w < 0))
        prev_inv = (Q / w) @ Q.conj().T
    return count


def counting_function(op: DiscreteOperator, E):
    """``N_Lambda(E)``: eigenvalues strictly below ``E``, with multiplicity."""
    Es = np.atleast_1d(np.asarray(E, dtype=float))
    if not np.all(np.isfinite(Es)):
        raise OperatorError("energy must be finite")
    if (op.d == 1 and op.is_real) or op.size <= DENSE_LIMIT:
        out = np.searchsorted(full_spectrum(op), Es, side="left")
    else:
        out = np.array([inertia_count(op, e) for e in Es])
    return int(out[0]) if np.ndim(E) == 0 else out


def eigenpairs_below(op: DiscreteOperator, E: float, vectors: bool = True, max_count: int = 2000) -> SpectralData:
    if not math.isfinite(E):
        raise OperatorError("energy must be finite")
    if op.size <= DENSE_LIMIT:
        if vectors:
            w, Q = sla.eigh(op.dense())
            m = w < E
            return SpectralData(E, w[m], Q[:, m])
        w = full_spectrum(op)
        return SpectralData(E, w[w < E])
    if op.d == 1 and op.is_real:
        dg, off = _tridiagonal(op)
        if not vectors:
            w = sla.eigvalsh_tridiagonal(dg, off)
            return SpectralData(E, w[w < E])
        w, Q = sla.eigh_tridiagonal(dg, off, select="v", select_range=(-np.inf, E))
        m = w < E
        return SpectralData(E, w[m], Q[:, m])
    n = inertia_count(op, E)
    if n == 0:
        return SpectralData(E, np.array([]), np.zeros((op.size, 0)) if vectors else None)
    if n > max_count:
        raise OperatorError(f"{n} eigenvalues below E exceed max_count={max_count}")
    k = min(op.size - 2, n + 5)
    w, Q = spla.eigsh(op.matrix, k=k, sigma=E - 1e-3 * max(1.0, abs(E)), which="LM")
    order = np.argsort(w)
    w, Q = w[order], Q[:, order]
    m = w < E
    if int(m.sum()) != n:
        raise SolverError(f"Lanczos found {int(m.sum())} eigenvalues below E, inertia says {n}")
    return SpectralData(E, w[m], Q[:, m] if vectors else None)


def spectral_distance(op: DiscreteOperator, E: float) -> float:
    if (op.d == 1 and op.is_real) or op.size <= DENSE_LIMIT:
        return float(np.min(np.abs(full_spectrum(op) - E)))
    w = spla.eigsh(op.matrix, k=1, sigma=E, which="LM", return_eigenvectors=False)
    return float(np.min(np.abs(w - E)))


# ---------------------------------------------------------------------------
# resolvents
# ---------------------------------------------------------------------------


class Resolvent:
    """Sparse LU of ``H - z`` with residual-checked solves."""

    def __init__(self, op: DiscreteOperator, z: complex):
        self.op, self.z = op, complex(z)
        real = op.is_real and self.z.imag == 0.0
        A = op.matrix - (self.z.real if real else self.z) * sp.identity(op.size, format="csr")
        self.A = A.tocsc()
        # ||A||_1 bounds ||A||_2 for the (shifted) Hermitian matrix
        self.norm_A = float(abs(self.A).sum(axis=0).max()) if op.size else 0.0
        try:
            self.lu = spla.splu(self.A)
        except RuntimeError as exc:
            raise SpectrumHit(f"factorization of H - z failed at z={z}: {exc}") from exc

    def _raw(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        if np.iscomplexobj(rhs) and not np.iscomplexobj(self.A.data):
            re = self.lu.solve(np.ascontiguousarray(rhs.real), trans=trans)
            im = self.lu.solve(np.ascontiguousarray(rhs.imag), trans=trans)
            return re + 1j * im
        dtype = np.result_type(rhs.dtype, self.A.dtype)
        return self.lu.solve(np.ascontiguousarray(rhs, dtype=dtype), trans=trans)

    def solve(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        rhs = np.asarray(rhs)
        x = self._raw(rhs)
        if check:
            # normwise backward error ||r|| / (||A|| ||x|| + ||b||)
            bn = np.linalg.norm(rhs, axis=0)

            def backward_error(x):
                rn = np.linalg.norm(self.A @ x - rhs, axis=0)
                return rn / np.maximum(self.norm_A * np.linalg.norm(x, axis=0) + bn, 1e-300)

            err = backward_error(x)
            if np.any(err > SOLVE_RTOL):
                x = x - self._raw(self.A @ x - rhs)  # one refinement step
                err = backward_error(x)
                if np.any(err > SOLVE_RTOL):
                    raise SolverError(f"backward error {np.max(err):.3g} above tolerance")
        return x

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        return self._raw(np.asarray(rhs), trans="H" if np.iscomplexobj(self.A.data) else "T")


def resolvent_apply(op: DiscreteOperator, z: complex, rhs: np.ndarray, certify: bool = True) -> np.ndarray:
    """``(H - z)^-1 rhs`` with normwise backward error at most ``SOLVE_RTOL``.

    For real ``z`` the energy is first certified off the spectrum.
    """
    z = complex(z)
    if z.imag == 0 and certify:
        dist = spectral_distance(op, z.real)
        if dist < 1e-12 * max(1.0, abs(z.real)):
            raise SpectrumHit(f"E={z.real} lies on the spectrum (distance {dist:.3g})")
    return Resolvent(op, z).solve(rhs)


# ---------------------------------------------------------------------------
# indicators on operator grids and the frame operator
# ---------------------------------------------------------------------------


def box_indicator(box: Box, grid: Grid, kind: str = "indicator") -> np.ndarray:
    pts = grid.points()
    if kind == "indicator":
        return indicator_values(box, pts)
    if kind == "frame":
        return frame_indicator_values(box, pts)
    raise OperatorError(f"unknown indicator kind {kind!r}")


def frame_operator(op: DiscreteOperator, box: Box, kind: str = "commutator") -> sp.csr_matrix:
    """Frame operator ``Gamma_B`` on the operator's grid.

    ``commutator``: ``chi H - H chi``, the exact discrete counterpart, for
    which the geometric resolvent identity holds to roundoff.
    ``stencil``: ``1/2 (lap chi) psi - (i grad chi).(i D_a) psi`` with
    analytic derivatives of chi and gauge-covariant central differences;
    agrees with the commutator up to O(h^2) on smooth functions.
    """
    if box.frame <= 0:
        raise OperatorError("frame operator needs a positive frame width")
    grid = op.grid
    if grid.h > box.frame / 12 * (1 + 1e-12):
        raise OperatorError(f"grid spacing {grid.h} too coarse for frame width {box.frame}")
    if kind == "commutator":
        chi = sp.diags(indicator_values(box, grid.points()))
        return (chi @ op.matrix - op.matrix @ chi).tocsr()
    if kind != "stencil":
        raise OperatorError(f"unknown frame operator kind {kind!r}")
    pts = grid.points()
    der = indicator_derivatives(box, pts)
    h = grid.h
    idx = np.arange(grid.size).reshape(grid.shape)
    n = grid.size
    out = sp.diags(0.5 * der.laplacian).astype(complex)
    for axis in range(grid.d):
        # (i d_axis + a_axis) psi ~ i D_axis psi, D_axis psi(x) = (e^{-i th+} psi(x+e) - e^{i th-} psi(x-e)) / 2h
        lo = [slice(None)] * grid.d
        hi = [slice(None)] * grid.d
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        p = idx[tuple(lo)].ravel()
        q = idx[tuple(hi)].ravel()
        th = op.gauge.link_phase(pts[p], axis, h)
        fwd = sp.csr_matrix((np.exp(-1j * th) / (2 * h), (p, q)), shape=(n, n))
        bwd = sp.csr_matrix((np.exp(1j * th) / (2 * h), (q, p)), shape=(n, n))
        D = fwd - bwd  # covariant: approximates (d_axis - i a_axis) psi
        out = out - sp.diags(1j * der.grad[:, axis]) @ (1j * D)
    return out.tocsr()


# ---------------------------------------------------------------------------
# box-localized resolvent norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormResult:
    value: float
    eta: float
    spectral_distance: float
    method: str
    rows: int = 0
    cols: int = 0
    extra: dict = field(default_factory=dict)


def _eta_ladder(op: DiscreteOperator, E: float, energy_scale: float | None):
    dist = spectral_distance(op, E)
    scale = energy_scale if energy_scale is not None else max(1.0, abs(E))
    if dist > 1e-9 * scale:
        return dist, [0.0]
    return dist, [1e-2 * scale, 1e-4 * scale, 1e-6 * scale]


def _svd_norm(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    if min(M.shape) <= 1500:
        return float(sla.svdvals(M)[0]) if min(M.shape) else 0.0
    return float(spla.svds(M, k=1, return_singular_vectors=False)[0])


def _reduced_matrix(op, res, gamma, chi_in):
    cols = np.nonzero(chi_in)[0]
    rows = np.unique(gamma.nonzero()[0])
    if cols.size == 0 or rows.size == 0:
        return None, rows, cols
    rhs = np.zeros((op.size, cols.size), dtype=res.A.dtype)
    rhs[cols, np.arange(cols.size)] = chi_in[cols]
    X = res.solve(rhs)
    M = gamma[rows] @ X
    return np.asarray(M), rows, cols


def box_resolvent_norm(
    op: DiscreteOperator,
    outer: Box,
    inner: Box,
    E: float,
    eta: float | None = None,
    inner_kind: str = "indicator",
    frame_kind: str = "commutator",
    method: str = "svd",
    energy_scale: float | None = None,
) -> NormResult:
    """``||Gamma_{B'} (H_{Lambda'} - z)^-1 chi_B||`` with ``H_{Lambda'}`` the restriction to ``outer``'s cube.

    With ``eta=None`` the supremum over ``eta > 0`` is taken per the policy:
    ``eta = 0`` when ``E`` is off the spectrum, else the max over an
    ``eta`` ladder. ``method='svd'`` forms the reduced matrix on the frame
    rows and indicator columns exactly; ``method='power'`` runs Lanczos on
    ``R* R`` with matrix-free solves.
    """
    sub = op.restrict_box(outer)
    gamma = frame_operator(sub, outer, frame_kind)
    chi_in = box_indicator(inner, sub.grid, inner_kind)
    if eta is None:
        dist, etas = _eta_ladder(sub, E, energy_scale)
    else:
        dist, etas = float("nan"), [float(eta)]
    best, best_eta = 0.0, etas[0]
    for et in etas:
        res = Resolvent(sub, complex(E, et))
        if method == "svd":
            M, rows, cols = _reduced_matrix(sub, res, gamma, chi_in)
            val = 0.0 if M is None else _svd_norm(M)
        elif method == "power":
            val = _power_norm(sub, res, gamma, chi_in)
            rows, cols = np.unique(gamma.nonzero()[0]), np.nonzero(chi_in)[0]
        else:
            raise OperatorError(f"unknown method {method!r}")
        if val >= best:
            best, best_eta = val, et
    return NormResult(best, best_eta, dist, method, int(len(rows)), int(len(cols)))


def _power_norm(op, res, gamma, chi_in, tol: float = 1e-10) -> float:
    if not np.any(chi_in) or gamma.nnz == 0:
        return 0.0
    gH = gamma.conj().T.tocsr()
    n = op.size
    dtype = np.result_type(res.A.dtype, gamma.dtype)

    def rr(x):
        y = res.solve(chi_in * x, check=False)
        y = gamma @ y
        y = gH @ y
        return chi_in * res.solve_adjoint(y)

    lin = spla.LinearOperator((n, n), matvec=rr, dtype=dtype)
    w = spla.eigsh(lin, k=1, which="LA", tol=tol, return_eigenvectors=False,
                   v0=chi_in.astype(dtype) + 0.1, maxiter=10 * n)
    return float(math.sqrt(max(float(np.real(w[0])), 0.0)))


def geometric_resolvent_residual(
    op_outer: DiscreteOperator,
    op_inner: DiscreteOperator,
    box: Box,
    z: complex,
    probes: np.ndarray | None = None,
    n_probes: int = 4,
    seed: int = 0,
    frame_kind: str = "commutator",
) -> float:
    """Max relative residual of the geometric resolvent identity over probe vectors.

    ``(H'-z)^-1 chi_B f = chi_B (H-z)^-1 f + (H'-z)^-1 Gamma_B (H-z)^-1 f``
    for ``f`` on the inner grid (extended by zero). Default probes are
    random combinations of low sine modes on the inner cube.
    """
    if box.frame <= 0:
        raise OperatorError("need b > 0")
    if not op_outer.grid.contains_grid(op_inner.grid):
        raise OperatorError("inner operator is not a restriction of the outer one")
    ci, co = op_inner.cube, op_outer.cube
    if not (np.all(np.abs(np.asarray(ci.center) - np.asarray(co.center)) + ci.edge / 2 < co.edge / 2)):
        raise OperatorError("inner cube must lie strictly inside the outer cube")
    if not np.all(np.abs(np.asarray(box.center) - np.asarray(ci.center)) + box.edge / 2 <= ci.edge / 2 + 1e-12):
        raise OperatorError("box cube must lie in the inner cube")
    off = op_outer.grid.offset_of(op_inner.grid)
    sl = tuple(slice(o, o + n) for o, n in zip(off, op_inner.grid.shape))
    emb = op_outer.grid.flat_indices(sl)
    if probes is None:
        probes = smooth_probes(op_inner, n_probes, seed)
    probes = np.asarray(probes).reshape(op_inner.size, -1)
    chi_outer = indicator_values(box, op_outer.grid.points())
    if not np.any(chi_outer):
        return 0.0
    gamma = frame_operator(op_outer, box, frame_kind)
    r_out = Resolvent(op_outer, z)
    r_in = Resolvent(op_inner, z)

    def extend(x):
        out = np.zeros((op_outer.size, x.shape[1]), dtype=complex)
        out[emb] = x
        return out

    fe = extend(probes)
    lhs = r_out.solve(chi_outer[:, None] * fe)
    phi = extend(r_in.solve(probes.astype(complex)))
    rhs = chi_outer[:, None] * phi + r_out.solve(gamma @ phi)
    num = np.linalg.norm(lhs - rhs, axis=0)
    den = np.maximum(np.linalg.norm(lhs, axis=0), 1e-300)
    return float(np.max(num / den))


def smooth_probes(op: DiscreteOperator, count: int, seed: int = 0, modes: int = 3) -> np.ndarray:
    """Random combinations of the lowest Dirichlet sine modes of the cube."""
    rng = np.random.default_rng(seed)
    c = op.cube
    lo = np.asarray(c.center) - c.edge / 2
    pts = op.grid.points()
    out = np.zeros((op.size, count))
    for j in range(count):
        for mi in np.ndindex(*([modes] * op.d)):
            k = np.asarray(mi) + 1
            f = np.prod(np.sin(np.pi * k[None, :] * (pts - lo) / c.edge), axis=1)
            out[:, j] += rng.standard_normal() * f
    return out


def phi_functional(box: Box, f: np.ndarray, kappas: Kappas | None = None) -> float:
    """Frame functional of ``box`` applied to the grid function ``f``."""
    f = np.asarray(f, dtype=float)
    if f.size and not np.all(np.isfinite(f)):
        return math.inf
    sup = float(np.max(np.maximum(f, 0.0), initial=0.0))
    return bounds.phi_functional(box.frame, sup, kappas or reference_kappas(box.d))


# ---------------------------------------------------------------------------
# integrated density of states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IDSResult:
    energies: np.ndarray
    sizes: np.ndarray
    mean: np.ndarray  # (sizes, energies): E N(E)/|Lambda|
    stderr: np.ndarray
    trials: int
    h: float
    convergence: float  # max |difference| between the two largest sizes


def ids_estimate(spec, energies, sizes, trials: int, seed: int, h: float = 0.1,
                 gauge: Gauge | None = None) -> IDSResult:
    """Monte-Carlo ``E N_Lambda(E)/|Lambda|`` for cubes of the given edges (``spec=None``: v = 0)."""
    from gaussloc.field import CirculantSampler
    from gaussloc.stats import trial_rng

    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    sizes = np.atleast_1d(np.asarray(sizes, dtype=float))
    if np.any(np.diff(sizes) <= 0):
        raise OperatorError("sizes must increase")
    if trials < 1:
        raise OperatorError("need at least one trial")
    d = spec.d if spec is not None else 1
    mean = np.zeros((sizes.size, energies.size))
    err = np.zeros_like(mean)
    for i, ell in enumerate(sizes):
        grid = Grid.dirichlet_cube((0.0,) * d, ell, h)
        vol = ((grid.shape[0] + 1) * h) ** d
        sampler = CirculantSampler(spec, grid) if spec is not None else None
        counts = np.empty((trials, energies.size))
        for t in range(trials):
            v = sampler.sample(trial_rng(seed, 1000 * i + t)) if sampler else np.zeros(grid.shape)
            op = assemble_on_grid(grid, v, gauge)
            counts[t] = counting_function(op, energies) / vol
        mean[i] = counts.mean(axis=0)
        err[i] = counts.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.nan
    conv = float(np.max(np.abs(mean[-1] - mean[-2]))) if sizes.size > 1 else float("nan")
    return IDSResult(energies, sizes, mean, err, trials, h, conv)


def free_ids(E, d: int = 1) -> np.ndarray:
    """IDS of ``-Delta/2`` on R^d: ``|B_1| (2E)^{d/2} / (2 pi)^d``."""
    E = np.asarray(E, dtype=float)
    ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return np.where(E > 0, ball * np.maximum(2 * E, 0) ** (d / 2) / (2 * math.pi) ** d, 0.0)


def write_spectrum_csv(path, op: DiscreteOperator, eigenvalues: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    hdr = {**op.header(), **(meta or {})}
    with path.open("w", newline="") as fh:
        for k in sorted(hdr):
            fh.write(f"# {k} = {hdr[k]}\n")
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, e in enumerate(eigenvalues):
            w.writerow([i, repr(float(e))])
    return path
