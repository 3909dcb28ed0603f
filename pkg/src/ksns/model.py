"""Coefficients and right-hand sides of the regularised system.

The cell density obeys ``n_t + u.grad n = Delta (n+eps)^m - div(n S_eps grad c)``,
the signal ``c_t + u.grad c = Delta c - c + n`` and the fluid
``u_t + grad P = Delta u - kappa (Y_eps u . grad) u + n grad phi`` with
``div u = 0``. ``S_eps = rho_eps(x) chi_eps(n) S(x, n, c)`` where ``rho_eps``
vanishes near the wall and ``chi_eps`` cuts off large densities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ksns.errors import ConfigError
from ksns.grid import Grid, ScalarField, VectorField
from ksns.linalg import PROJECTION_TOL, yosida_apply
from ksns.ops import advect_upwind, advect_vector, laplacian, porous_rhs, tensor_flux_div, vector_laplacian

SENSITIVITY_KINDS = ("scalar_identity", "rotation", "saturating", "custom_table")


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass
class SensitivityTensor:
    """Chemotactic sensitivity ``S(x, n, c)`` plus its two cutoffs.

    ``boundary_cutoff_width`` is the width ``w`` of the wall cutoff in
    domain units; ``None`` means ``2h`` and ``0`` disables it.
    ``magnitude_cutoff`` is the density threshold of the large-``n``
    cutoff (``None`` disables it): factor 1 below the threshold, smooth
    decay to 0 at twice the threshold.
    """

    kind: str = "scalar_identity"
    chi: float = 1.0
    theta: float = 0.0
    n_half: float = 1.0
    table: object = None
    boundary_cutoff_width: float | None = None
    magnitude_cutoff: float | None = None

    def __post_init__(self):
        if self.kind not in SENSITIVITY_KINDS:
            raise ConfigError(f"unknown sensitivity kind {self.kind!r}")
        if self.kind == "saturating" and self.n_half <= 0:
            raise ConfigError("saturating sensitivity needs n_half > 0")
        if self.kind == "custom_table" and self.table is None:
            raise ConfigError("custom_table sensitivity needs a table")

    def bound(self) -> float:
        """Supremum of the operator norm over all arguments."""
        if self.kind == "custom_table":
            if callable(self.table):
                return float("nan")
            return float(np.linalg.norm(np.asarray(self.table, dtype=float), 2))
        return abs(self.chi)

    def base(self, x, y, n, c):
        """Entries ``(s11, s12, s21, s22)`` of ``S`` before cutoffs."""
        shape = np.broadcast(x, y, n, c).shape
        one = np.ones(shape)
        if self.kind == "scalar_identity":
            return self.chi * one, 0.0 * one, 0.0 * one, self.chi * one
        if self.kind == "rotation":
            co, si = np.cos(self.theta), np.sin(self.theta)
            return self.chi * co * one, self.chi * si * one, -self.chi * si * one, self.chi * co * one
        if self.kind == "saturating":
            f = self.chi * self.n_half / (self.n_half + np.maximum(n, 0.0)) * one
            return f, 0.0 * one, 0.0 * one, f
        if callable(self.table):
            mat = np.broadcast_to(np.asarray(self.table(x, y, n, c), dtype=float), shape + (2, 2))
        else:
            mat = np.broadcast_to(np.asarray(self.table, dtype=float), shape + (2, 2))
        return mat[..., 0, 0], mat[..., 0, 1], mat[..., 1, 0], mat[..., 1, 1]

    def wall_width(self, grid: Grid) -> float:
        return 2.0 * grid.h if self.boundary_cutoff_width is None else float(self.boundary_cutoff_width)

    def rho(self, grid: Grid, dist):
        """Wall cutoff: 0 within one cell of the wall, 1 beyond the width."""
        w = self.wall_width(grid)
        dist = np.asarray(dist, dtype=float)
        if w <= 0.0:
            return np.ones_like(dist)
        h = grid.h
        if w <= h:
            return (dist > h).astype(float)
        return np.where(dist <= h, 0.0, smoothstep((dist - h) / (w - h)))

    def chi_cut(self, n):
        n = np.asarray(n, dtype=float)
        if self.magnitude_cutoff is None:
            return np.ones_like(n)
        t = self.magnitude_cutoff
        return 1.0 - smoothstep((n - t) / t)

    def evaluate(self, grid: Grid, x, y, n, c) -> np.ndarray:
        """Cut-off tensor at arbitrary points, shape ``(..., 2, 2)``."""
        s11, s12, s21, s22 = self.base(x, y, n, c)
        f = self.rho(grid, grid.wall_distance(x, y)) * self.chi_cut(n)
        out = np.stack([np.stack([s11, s12], -1), np.stack([s21, s22], -1)], -2)
        return out * np.asarray(f)[..., None, None]

    def on_faces(self, grid: Grid, axis: str, n_face, c_face):
        """Cut-off entries on the x- or y-faces."""
        if axis == "x":
            x, y = grid.xface_centers
            dist = grid.wall_distance_xfaces
        else:
            x, y = grid.yface_centers
            dist = grid.wall_distance_yfaces
        f = self.rho(grid, dist) * self.chi_cut(n_face)
        s11, s12, s21, s22 = self.base(x, y, n_face, c_face)
        return s11 * f, s12 * f, s21 * f, s22 * f


def operator_norm(mats) -> np.ndarray:
    """Spectral norm of each 2x2 matrix in a stack."""
    return np.linalg.norm(np.asarray(mats), ord=2, axis=(-2, -1))


def eval_sensitivity(S: SensitivityTensor, grid: Grid, x, y, n, c) -> np.ndarray:
    return S.evaluate(grid, x, y, n, c)


@dataclass
class Potential:
    """Gravitational potential; ``linear_gravity`` has ``grad phi = g``."""

    kind: str = "linear_gravity"
    g: tuple = (0.0, -1.0)
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear_gravity", "custom_field"):
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom_field" and self.values is None:
            raise ConfigError("custom_field potential needs values")

    def field(self, grid: Grid) -> ScalarField:
        if self.kind == "linear_gravity":
            gx, gy = self.g
            return grid.cell_field(lambda X, Y: gx * X + gy * Y)
        return ScalarField(grid, self.values)

    def face_gradient(self, grid: Grid) -> VectorField:
        if self.kind == "linear_gravity":
            gx, gy = self.g
            return VectorField(grid, np.full((grid.ny, grid.nx + 1), float(gx)),
                               np.full((grid.ny + 1, grid.nx), float(gy)))
        from ksns.ops import gradient_faces

        return gradient_faces(self.field(grid))


@dataclass
class ModelParams:
    m: float = 1.5
    kappa: float = 1.0
    C_S: float = 1.0
    eps: float = 0.0
    sensitivity: SensitivityTensor = field(default_factory=SensitivityTensor)
    phi: Potential = field(default_factory=Potential)
    yosida_eps: float | None = None
    advection_scheme: str = "upwind"

    def __post_init__(self):
        if not self.m >= 1.0:
            raise ConfigError(f"diffusion exponent m must be >= 1, got {self.m}", key="model.m")
        if not self.C_S >= 0.0:
            raise ConfigError(f"C_S must be >= 0, got {self.C_S}", key="model.C_S")
        if not 0.0 <= self.eps < 1.0:
            raise ConfigError(f"eps must lie in [0, 1), got {self.eps}", key="model.eps")
        b = self.sensitivity.bound()
        if np.isfinite(b) and b > self.C_S * (1 + 1e-12):
            raise ConfigError(f"sensitivity bound {b} exceeds C_S={self.C_S}", key="model.C_S")
        if self.yosida_eps is not None and self.yosida_eps < 0:
            raise ConfigError("yosida_eps must be >= 0", key="model.yosida_eps")
        if self.advection_scheme not in ("upwind", "minmod"):
            raise ConfigError(f"unknown advection scheme {self.advection_scheme!r}")

    @property
    def smoothing(self) -> float:
        return self.eps if self.yosida_eps is None else self.yosida_eps


def rhs_n(n: ScalarField, c: ScalarField, u: VectorField, p: ModelParams) -> ScalarField:
    out = porous_rhs(n, p.eps, p.m) - tensor_flux_div(n, c, p.sensitivity) - advect_upwind(u, n, p.advection_scheme)
    return out


def rhs_c(n: ScalarField, c: ScalarField, u: VectorField, scheme: str = "upwind") -> ScalarField:
    return laplacian(c) - c + n - advect_upwind(u, c, scheme)


def buoyancy(n: ScalarField, phi: Potential) -> VectorField:
    """``n grad phi`` on faces, ``n`` averaged arithmetically."""
    from ksns.ops import cell_to_faces

    g = n.grid
    nx_, ny_ = cell_to_faces(n)
    gp = phi.face_gradient(g)
    return VectorField(g, nx_ * gp.ux, ny_ * gp.uy)


def convection(u: VectorField, p: ModelParams, tol: float = PROJECTION_TOL,
               assume_solenoidal: bool = False) -> VectorField:
    """``kappa (Y_eps u . grad) u``."""
    if p.kappa == 0.0:
        return VectorField.zeros(u.grid)
    w = yosida_apply(u, p.smoothing, tol, assume_solenoidal=assume_solenoidal)
    return advect_vector(w, u) * p.kappa


def rhs_u(n: ScalarField, u: VectorField, p: ModelParams, tol: float = PROJECTION_TOL) -> VectorField:
    """Momentum right-hand side before projection."""
    return vector_laplacian(u) - convection(u, p, tol) + buoyancy(n, p.phi)
