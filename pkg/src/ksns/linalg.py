"""Symmetric positive (semi-)definite solves: Neumann Poisson, Helmholtz,
variable-coefficient Helmholtz, the discrete Leray projection and the
Yosida-type smoothing of the velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ksns import kernels
from ksns.errors import CompatibilityError, ConfigError, SolverError
from ksns.grid import NEUMANN, Grid, ScalarField, VectorField
from ksns.ops import Stencil, _div_arrays, diffusion_stencil, gradient_faces, velocity_stencil

PROJECTION_TOL = 1e-10
DIFFUSION_TOL = 1e-8

KINDS = ("poisson_neumann", "helmholtz", "variable_coeff_helmholtz")


@dataclass
class LinearSolveSpec:
    """What to solve and how accurately.

    ``helmholtz`` means ``alpha f - Delta f``; ``variable_coeff_helmholtz``
    means ``alpha f - div(coeff grad f)`` with the cell coefficient
    averaged arithmetically to faces.
    """

    operator_kind: str
    alpha: float = 0.0
    bc: str = NEUMANN
    coeff: ScalarField | None = None
    tol: float = DIFFUSION_TOL
    max_iter: int = 20000
    atol: float = 0.0
    auto_project: bool = False

    def __post_init__(self):
        if self.operator_kind not in KINDS:
            raise ConfigError(f"unknown operator kind {self.operator_kind!r}")
        if not 0.0 < self.tol < 1.0:
            raise ConfigError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.operator_kind == "variable_coeff_helmholtz" and self.coeff is None:
            raise ConfigError("variable_coeff_helmholtz needs a coefficient field")


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: np.ndarray = field(repr=False)


@lru_cache(maxsize=64)
def _constant_stencil(grid: Grid, bc: str) -> Stencil:
    return diffusion_stencil(grid, bc=bc)


@lru_cache(maxsize=16)
def _velocity_stencil(grid: Grid, component: str) -> Stencil:
    return velocity_stencil(grid, component)


def build_stencil(spec: LinearSolveSpec, grid: Grid) -> Stencil:
    if spec.operator_kind == "poisson_neumann":
        return _constant_stencil(grid, NEUMANN)
    if spec.operator_kind == "helmholtz":
        return _constant_stencil(grid, spec.bc).shifted(spec.alpha, 1.0)
    c = np.where(grid.mask, spec.coeff.values, 0.0)
    kx = np.zeros((grid.ny, grid.nx + 1))
    ky = np.zeros((grid.ny + 1, grid.nx))
    kx[:, 1:-1] = 0.5 * (c[:, 1:] + c[:, :-1])
    ky[1:-1, :] = 0.5 * (c[1:, :] + c[:-1, :])
    return diffusion_stencil(grid, kx, ky, spec.bc).shifted(spec.alpha, 1.0)


def krylov_solve(A: Stencil, b: np.ndarray, x0=None, tol=DIFFUSION_TOL, atol=0.0,
                 max_iter=20000, restarts=4):
    """Solve ``A x = b`` to ``max|b - A x| <= max(tol * max|b|, atol)``.

    Returns ``(x, SolveInfo)``. Restarts from the smoothed iterate when the
    recursively updated residual has drifted from the true one.
    """
    act = A.active
    b = np.ascontiguousarray(np.where(act, b, 0.0))
    threshold = max(tol * float(np.max(np.abs(b))), atol)
    x = np.zeros_like(b) if x0 is None else np.ascontiguousarray(np.where(act, x0, 0.0))
    inv_m = np.ascontiguousarray(1.0 / A.diag)
    histories = []
    iters = 0
    for _ in range(restarts + 1):
        x, k, hist = kernels.pcg_smoothed(A.diag, A.wx, A.wy, b, x, inv_m, threshold, max_iter - iters)
        iters += k
        histories.append(hist)
        res = float(np.max(np.abs(b - A.apply(x))))
        if res <= threshold or iters >= max_iter:
            break
    info = SolveInfo(iters, res, np.concatenate(histories))
    if res > threshold:
        raise SolverError("Krylov solve did not converge", residual=res, iterations=iters)
    return x, info


def solve_with_info(spec: LinearSolveSpec, rhs: ScalarField, x0: ScalarField | None = None):
    grid = rhs.grid
    A = build_stencil(spec, grid)
    b = np.where(grid.mask, rhs.values, 0.0)
    if A.singular:
        mean = float(np.sum(b[grid.mask])) / grid.n_active
        scale = max(1.0, float(np.max(np.abs(b))))
        if abs(mean) > 1e-12 * scale and not spec.auto_project:
            raise CompatibilityError("Neumann right-hand side is not mean-zero", mean=mean)
        b = np.where(grid.mask, b - mean, 0.0)
    if not np.any(b) and spec.atol >= 0.0:
        return ScalarField(grid, np.zeros(grid.shape), rhs.bc), SolveInfo(0, 0.0, np.zeros(1))
    x, info = krylov_solve(A, b, None if x0 is None else x0.values, spec.tol, spec.atol, spec.max_iter)
    if A.singular:
        x = x - float(np.sum(x[grid.mask])) / grid.n_active
    return ScalarField(grid, x, rhs.bc), info


def solve(spec: LinearSolveSpec, rhs: ScalarField, x0: ScalarField | None = None) -> ScalarField:
    """Solve the configured SPD system; Neumann Poisson solutions are mean-zero."""
    return solve_with_info(spec, rhs, x0)[0]


def helmholtz_project(v: VectorField, tol: float = PROJECTION_TOL, P0: ScalarField | None = None):
    """Discrete Leray projection.

    Returns ``(w, P)`` with ``w = v - grad P``, ``max|div w| <= tol`` and
    ``P`` mean-zero.
    """
    g = v.grid
    rhs = ScalarField(g, -_div_arrays(g, v.ux, v.uy))
    spec = LinearSolveSpec("poisson_neumann", tol=1e-14, atol=tol, auto_project=True, max_iter=50000)
    P, _ = solve_with_info(spec, rhs, P0)
    return v - gradient_faces(P), P


def vector_helmholtz_solve(rhs: VectorField, alpha: float, beta: float, tol: float = 1e-12,
                           x0: VectorField | None = None) -> VectorField:
    """Solve ``alpha u - beta Delta_h u = rhs`` component-wise (no-slip)."""
    g = rhs.grid
    out = []
    for comp, b, guess in (("x", rhs.ux, None if x0 is None else x0.ux),
                           ("y", rhs.uy, None if x0 is None else x0.uy)):
        A = _velocity_stencil(g, comp).shifted(alpha, beta)
        if not np.any(b):
            out.append(np.zeros_like(b))
            continue
        x, _ = krylov_solve(A, b, b / alpha if guess is None else guess, tol=tol)
        out.append(x)
    return VectorField(g, out[0], out[1])


def yosida_apply(v: VectorField, eps: float, tol: float = PROJECTION_TOL,
                 assume_solenoidal: bool = False) -> VectorField:
    """Smoothed velocity ``(I + eps A_h)^{-1} P v`` realised as project-solve-project.

    With ``assume_solenoidal`` the first projection is skipped (``v`` must
    already be discretely divergence-free).
    """
    if eps < 0:
        raise ConfigError(f"Yosida parameter must be >= 0, got {eps}")
    pv = v if assume_solenoidal else helmholtz_project(v, tol)[0]
    if eps == 0.0:
        return pv
    z = vector_helmholtz_solve(pv, 1.0, eps)
    return helmholtz_project(z, tol)[0]
