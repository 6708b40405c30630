"""Regular grids on axis-aligned cubes.

Points are stored in row-major ("ij") order; the flat index of a point is
``np.ravel_multi_index(idx, shape)``. All lengths are in continuum units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``origin + h * i`` for multi-indices ``0 <= i < shape``."""

    origin: tuple[float, ...]
    h: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if len(self.origin) != len(self.shape):
            raise ValueError("origin and shape must have the same length")
        if any(n < 1 for n in self.shape):
            raise ValueError(f"empty grid shape {self.shape}")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))

    @classmethod
    def dirichlet_cube(cls, center, edge: float, h: float) -> "Grid":
        """Interior points of the open cube of side ``edge`` (Dirichlet nodes dropped).

        The edge is snapped to a multiple of ``h`` so the boundary sits on the
        lattice; the cube is then ``center +- m h / 2`` with ``m = round(edge/h)``.
        """
        center = np.atleast_1d(np.asarray(center, dtype=float))
        m = int(round(edge / h))
        if m < 2:
            raise ValueError(f"cube edge {edge} too small for spacing {h}")
        origin = tuple(center - m * h / 2 + h)
        return cls(origin, h, (m - 1,) * center.size)

    @classmethod
    def closed_cube(cls, center, edge: float, h: float) -> "Grid":
        """All lattice points of the closed cube, boundary included."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        m = int(round(edge / h))
        origin = tuple(center - m * h / 2)
        return cls(origin, h, (m + 1,) * center.size)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axes(self) -> list[np.ndarray]:
        return [o + self.h * np.arange(n) for o, n in zip(self.origin, self.shape)]

    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """(size, d) array of point coordinates in flat order."""
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def contains_grid(self, other: "Grid", tol: float = 1e-9) -> bool:
        if other.d != self.d or abs(other.h - self.h) > tol * self.h:
            return False
        off = self.offset_of(other, tol)
        return off is not None and all(
            o >= 0 and o + n <= N for o, n, N in zip(off, other.shape, self.shape)
        )

    def offset_of(self, other: "Grid", tol: float = 1e-6):
        """Integer index offset of ``other``'s origin inside this lattice, or None."""
        off = (np.asarray(other.origin) - np.asarray(self.origin)) / self.h
        r = np.round(off)
        if np.any(np.abs(off - r) > tol):
            return None
        return tuple(int(x) for x in r)

    def subgrid_strictly_inside(self, center, edge: float) -> tuple["Grid", tuple[slice, ...]]:
        """Points with ``|p - center|_inf < edge/2`` and the index slices selecting them."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        slices = []
        eps = 1e-9 * self.h
        for ax, c in zip(self.axes(), center):
            sel = np.nonzero(np.abs(ax - c) < edge / 2 - eps)[0]
            if sel.size == 0:
                raise ValueError("cube contains no grid points")
            if np.any(np.diff(sel) != 1):
                raise ValueError("non-contiguous selection")
            slices.append(slice(int(sel[0]), int(sel[-1]) + 1))
        sl = tuple(slices)
        origin = tuple(ax[s.start] for ax, s in zip(self.axes(), sl))
        shape = tuple(s.stop - s.start for s in sl)
        return Grid(origin, self.h, shape), sl

    def flat_indices(self, slices: tuple[slice, ...]) -> np.ndarray:
        idx = np.arange(self.size).reshape(self.shape)
        return idx[slices].ravel()

    def header(self) -> dict:
        return {"d": self.d, "origin": list(self.origin), "h": self.h, "shape": list(self.shape)}
