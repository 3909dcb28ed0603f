"""Uniform masked grid, cell/face field containers and quadrature.

Scalars live at cell centres, velocities on the faces of a MAC layout.
Arrays are indexed ``[j, i]`` with ``j`` along y and ``i`` along x:

* cell arrays have shape ``(ny, nx)``,
* x-face arrays ``(ny, nx + 1)``; entry ``[j, i]`` separates cells
  ``(j, i - 1)`` and ``(j, i)``,
* y-face arrays ``(ny + 1, nx)``; entry ``[j, i]`` separates cells
  ``(j - 1, i)`` and ``(j, i)``.

Inactive cells keep storage but are never read: every operation first
replaces them by zero, so arbitrary garbage there cannot leak.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

from ksns.errors import ConfigError

NEUMANN = "neumann_zero"
DIRICHLET = "dirichlet_zero"
NO_SLIP = "no_slip"


class Grid:
    """Immutable isotropic grid on ``[0, Lx] x [0, Ly]`` with a cell mask."""

    def __init__(self, Lx: float, Ly: float, nx: int, ny: int, mask=None):
        if nx < 2 or ny < 2:
            raise ConfigError(f"need nx >= 2 and ny >= 2, got nx={nx}, ny={ny}")
        if not (Lx > 0 and Ly > 0):
            raise ConfigError(f"domain lengths must be positive, got Lx={Lx}, Ly={Ly}")
        hx, hy = Lx / nx, Ly / ny
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise ConfigError(f"anisotropic spacing: Lx/nx={hx!r} vs Ly/ny={hy!r}")
        if mask is None:
            mask = np.ones((ny, nx), dtype=bool)
        mask = np.array(mask, dtype=bool)
        if mask.shape != (ny, nx):
            raise ConfigError(f"mask shape {mask.shape} does not match (ny, nx)=({ny}, {nx})")
        if not mask.any():
            raise ConfigError("mask has no active cell")
        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise ConfigError(f"active region must be edge-connected, found {ncomp} components")
        mask.setflags(write=False)
        self.Lx = float(Lx)
        self.Ly = float(Ly)
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(hx)
        self.mask = mask

    def __repr__(self):
        return f"Grid(Lx={self.Lx}, Ly={self.Ly}, nx={self.nx}, ny={self.ny}, active={self.n_active})"

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and (self.Lx, self.Ly, self.nx, self.ny) == (other.Lx, other.Ly, other.nx, other.ny)
            and np.array_equal(self.mask, other.mask)
        )

    def __hash__(self):
        return hash((self.Lx, self.Ly, self.nx, self.ny, self.mask.tobytes()))

    @property
    def shape(self):
        return (self.ny, self.nx)

    @cached_property
    def n_active(self) -> int:
        return int(self.mask.sum())

    @cached_property
    def area(self) -> float:
        return self.n_active * self.h**2

    @cached_property
    def _padded(self):
        return np.pad(self.mask, 1, constant_values=False)

    @cached_property
    def open_x(self) -> np.ndarray:
        """x-faces with active cells on both sides."""
        m = self._padded[1:-1]
        return m[:, :-1] & m[:, 1:]

    @cached_property
    def open_y(self) -> np.ndarray:
        m = self._padded[:, 1:-1]
        return m[:-1, :] & m[1:, :]

    @cached_property
    def boundary_x(self) -> np.ndarray:
        """x-faces with exactly one active neighbour cell."""
        m = self._padded[1:-1]
        return m[:, :-1] ^ m[:, 1:]

    @cached_property
    def boundary_y(self) -> np.ndarray:
        m = self._padded[:, 1:-1]
        return m[:-1, :] ^ m[1:, :]

    @cached_property
    def boundary_faces(self) -> list[tuple[str, int, int]]:
        xs = [("x", int(j), int(i)) for j, i in zip(*np.nonzero(self.boundary_x))]
        ys = [("y", int(j), int(i)) for j, i in zip(*np.nonzero(self.boundary_y))]
        return xs + ys

    @cached_property
    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.h

    @cached_property
    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.h

    @cached_property
    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yc)

    @cached_property
    def xface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(np.arange(self.nx + 1) * self.h, self.yc)

    @cached_property
    def yface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, np.arange(self.ny + 1) * self.h)

    @cached_property
    def _rim_cells(self) -> np.ndarray:
        # inactive cells touching an active one (8-neighbourhood)
        near = ndimage.binary_dilation(self.mask, structure=np.ones((3, 3), dtype=bool))
        j, i = np.nonzero(near & ~self.mask)
        return np.stack([i * self.h, (i + 1) * self.h, j * self.h, (j + 1) * self.h], axis=1)

    def wall_distance(self, x, y) -> np.ndarray:
        """Euclidean distance from points to the staircase boundary of the active region."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = np.minimum(np.minimum(x, self.Lx - x), np.minimum(y, self.Ly - y))
        rim = self._rim_cells
        if len(rim):
            flat_x = x.reshape(-1, 1)
            flat_y = y.reshape(-1, 1)
            dx = np.maximum(np.maximum(rim[:, 0] - flat_x, flat_x - rim[:, 1]), 0.0)
            dy = np.maximum(np.maximum(rim[:, 2] - flat_y, flat_y - rim[:, 3]), 0.0)
            d = np.minimum(d, np.sqrt(dx * dx + dy * dy).min(axis=1).reshape(x.shape))
        return np.maximum(d, 0.0)

    @cached_property
    def wall_distance_xfaces(self) -> np.ndarray:
        return self.wall_distance(*self.xface_centers)

    @cached_property
    def wall_distance_yfaces(self) -> np.ndarray:
        return self.wall_distance(*self.yface_centers)

    @cached_property
    def wall_distance_cells(self) -> np.ndarray:
        return self.wall_distance(*self.cell_centers)

    def zeros(self, bc: str = NEUMANN) -> "ScalarField":
        return ScalarField(self, np.zeros(self.shape), bc)

    def cell_field(self, fn, bc: str = NEUMANN) -> "ScalarField":
        """Sample ``fn(x, y)`` at cell centres."""
        X, Y = self.cell_centers
        vals = np.broadcast_to(np.asarray(fn(X, Y), dtype=float), self.shape)
        return ScalarField(self, vals, bc)

    def face_field(self, fx, fy) -> "VectorField":
        """Sample component functions at x- and y-face centres."""
        ux = np.broadcast_to(np.asarray(fx(*self.xface_centers), dtype=float), (self.ny, self.nx + 1))
        uy = np.broadcast_to(np.asarray(fy(*self.yface_centers), dtype=float), (self.ny + 1, self.nx))
        return VectorField(self, ux, uy)


def l_shape_mask(nx: int, ny: int) -> np.ndarray:
    mask = np.ones((ny, nx), dtype=bool)
    mask[ny // 2 :, nx // 2 :] = False
    return mask


def make_grid(Lx: float, Ly: float, nx: int, ny: int, mask_kind="full") -> Grid:
    """Build a grid. ``mask_kind`` is ``"full"``, ``"l_shape"`` or an
    explicit ``(ny, nx)`` array-like of active flags."""
    if nx < 2 or ny < 2:
        raise ConfigError(f"need nx >= 2 and ny >= 2, got nx={nx}, ny={ny}")
    if isinstance(mask_kind, str):
        if mask_kind == "full":
            mask = None
        elif mask_kind == "l_shape":
            mask = l_shape_mask(nx, ny)
        else:
            raise ConfigError(f"unknown mask kind {mask_kind!r}")
    else:
        mask = np.asarray(mask_kind, dtype=bool)
    return Grid(Lx, Ly, nx, ny, mask)


def _clean(grid: Grid, values: np.ndarray) -> np.ndarray:
    return np.where(grid.mask, values, 0.0)


@dataclass(eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    bc: str = NEUMANN

    def __post_init__(self):
        if self.bc not in (NEUMANN, DIRICHLET):
            raise ConfigError(f"unknown scalar boundary condition {self.bc!r}")
        self.values = _clean(self.grid, np.asarray(self.values, dtype=float))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.bc)

    def active(self) -> np.ndarray:
        """Values of the active cells in row-major order."""
        return self.values[self.grid.mask]

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.bc)

    def __add__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        other = other.values if isinstance(other, ScalarField) else other
        return self.with_values(self.values - other)

    def __mul__(self, a):
        a = a.values if isinstance(a, ScalarField) else a
        return self.with_values(self.values * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


@dataclass(eq=False)
class VectorField:
    grid: Grid
    ux: np.ndarray
    uy: np.ndarray
    bc: str = field(default=NO_SLIP)

    def __post_init__(self):
        g = self.grid
        self.ux = np.where(g.open_x, np.asarray(self.ux, dtype=float), 0.0)
        self.uy = np.where(g.open_y, np.asarray(self.uy, dtype=float), 0.0)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.ny, grid.nx + 1)), np.zeros((grid.ny + 1, grid.nx)))

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.ux.copy(), self.uy.copy())

    def __add__(self, other):
        return VectorField(self.grid, self.ux + other.ux, self.uy + other.uy)

    def __sub__(self, other):
        return VectorField(self.grid, self.ux - other.ux, self.uy - other.uy)

    def __mul__(self, a):
        return VectorField(self.grid, self.ux * a, self.uy * a)

    __rmul__ = __mul__

    def dot(self, other) -> float:
        """Face inner product with ``h^2`` weights."""
        h2 = self.grid.h**2
        return h2 * (float(np.sum(self.ux * other.ux)) + float(np.sum(self.uy * other.uy)))

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.ux)), np.max(np.abs(self.uy))))

    def cell_components(self) -> tuple[np.ndarray, np.ndarray]:
        """Face values averaged to cell centres (zero on inactive cells)."""
        cx = 0.5 * (self.ux[:, :-1] + self.ux[:, 1:])
        cy = 0.5 * (self.uy[:-1, :] + self.uy[1:, :])
        m = self.grid.mask
        return np.where(m, cx, 0.0), np.where(m, cy, 0.0)

    def finite(self) -> bool:
        return bool(np.isfinite(self.ux).all() and np.isfinite(self.uy).all())


def inner(f: ScalarField, g: ScalarField) -> float:
    """Cell inner product with ``h^2`` weights."""
    m = f.grid.mask
    return f.grid.h**2 * float(np.sum(f.values[m] * g.values[m]))


def integrate(f: ScalarField) -> float:
    """Midpoint quadrature over the active cells."""
    return f.grid.h**2 * float(np.sum(f.values[f.grid.mask]))


def lp_norm(f: ScalarField, p) -> float:
    """Discrete ``L^p`` norm; ``p`` may be ``inf``."""
    if p in ("inf", "infinity"):
        p = np.inf
    p = float(p)
    if not p >= 1.0:
        raise ConfigError(f"lp_norm needs p >= 1 or p = inf, got {p}")
    a = np.abs(f.values[f.grid.mask])
    if np.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p == 1.0:
        return f.grid.h**2 * float(a.sum())
    if p == 2.0:
        return float(np.sqrt(f.grid.h**2 * np.sum(a * a)))
    # scale by the max to avoid overflow of |f|^p
    top = float(a.max()) if a.size else 0.0
    if top == 0.0:
        return 0.0
    return top * float(f.grid.h**2 * np.sum((a / top) ** p)) ** (1.0 / p)
