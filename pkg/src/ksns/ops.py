"""Second-order finite-volume operators on the masked MAC grid.

Gradient (cells -> faces) and divergence (faces -> cells) form an exact
adjoint pair under the ``h^2``-weighted inner products, which makes the
Neumann Laplacian ``D G`` symmetric and every face-flux divergence
conservative. No-flux conditions are imposed by zeroing fluxes on
boundary faces, never by ghost extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ksns import kernels
from ksns.errors import StateError
from ksns.grid import DIRICHLET, Grid, ScalarField, VectorField


@dataclass
class Stencil:
    """Symmetric five-point operator ``(A x)_p = diag_p x_p - sum_q w_pq x_q``.

    ``wx[j, i]`` couples unknowns ``(j, i-1)`` and ``(j, i)``; ``wy[j, i]``
    couples ``(j-1, i)`` and ``(j, i)``. Inactive unknowns carry an identity
    row so the operator can act on full rectangular arrays.
    """

    diag: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    active: np.ndarray
    singular: bool = False

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.where(self.active, x, 0.0))
        return kernels.stencil_apply(self.diag, self.wx, self.wy, x)

    def shifted(self, alpha: float, beta: float) -> "Stencil":
        """Return ``alpha I + beta A`` (identity kept on inactive unknowns)."""
        diag = np.where(self.active, alpha + beta * self.diag, 1.0)
        return Stencil(np.ascontiguousarray(diag), beta * self.wx, beta * self.wy, self.active,
                       singular=self.singular and alpha == 0.0)


def _boundary_face_count(grid: Grid) -> np.ndarray:
    bx, by = grid.boundary_x, grid.boundary_y
    return (bx[:, :-1].astype(int) + bx[:, 1:] + by[:-1, :] + by[1:, :]) * grid.mask


def diffusion_stencil(grid: Grid, kx=None, ky=None, bc: str = "neumann_zero") -> Stencil:
    """Stencil of ``-div(k grad .)`` for face coefficients ``kx``, ``ky``.

    With ``bc='dirichlet_zero'`` a mirrored ghost ``-f`` is placed across
    every boundary face (coefficient 1 there).
    """
    h2 = grid.h**2
    ox, oy = grid.open_x, grid.open_y
    kx = np.where(ox, 1.0 if kx is None else kx, 0.0) / h2
    ky = np.where(oy, 1.0 if ky is None else ky, 0.0) / h2
    diag = kx[:, :-1] + kx[:, 1:] + ky[:-1, :] + ky[1:, :]
    if bc == DIRICHLET:
        diag = diag + 2.0 * _boundary_face_count(grid) / h2
    diag = np.where(grid.mask, diag, 1.0)
    return Stencil(np.ascontiguousarray(diag), np.ascontiguousarray(kx), np.ascontiguousarray(ky),
                   grid.mask, singular=bc != DIRICHLET)


def velocity_stencil(grid: Grid, component: str) -> Stencil:
    """Stencil of ``-Delta`` for one MAC velocity component with no-slip walls.

    Along the component's own axis the neighbouring face always exists
    (open, or a wall face holding exactly 0). Across it, a missing
    neighbour is replaced by the mirrored ghost ``-u`` (wall half a cell away).
    """
    h2 = grid.h**2
    if component == "x":
        act = grid.open_x
    elif component == "y":
        act = grid.open_y.T
    else:
        raise ValueError(component)
    a, b = act.shape
    # couplings along the component axis (axis 1 after transposition)
    wa = np.zeros((a, b + 1))
    wa[:, 1:-1] = (act[:, :-1] & act[:, 1:]) / h2
    # couplings across it
    wc = np.zeros((a + 1, b))
    wc[1:-1, :] = (act[:-1, :] & act[1:, :]) / h2
    pad = np.pad(act, ((1, 1), (0, 0)), constant_values=False)
    across = np.where(pad[:-2], 1.0, 2.0) + np.where(pad[2:], 1.0, 2.0)
    diag = np.where(act, 2.0 / h2 + across / h2, 1.0)
    if component == "y":
        return Stencil(np.ascontiguousarray(diag.T), np.ascontiguousarray(wc.T),
                       np.ascontiguousarray(wa.T), grid.open_y)
    return Stencil(np.ascontiguousarray(diag), wa, wc, act)


def _clean(f: ScalarField) -> np.ndarray:
    return np.where(f.grid.mask, f.values, 0.0)


def gradient_faces(f: ScalarField) -> VectorField:
    """Face differences ``(f_right - f_left) / h``; zero on boundary faces."""
    g = f.grid
    v = _clean(f)
    ux = np.zeros((g.ny, g.nx + 1))
    uy = np.zeros((g.ny + 1, g.nx))
    ux[:, 1:-1] = (v[:, 1:] - v[:, :-1]) / g.h
    uy[1:-1, :] = (v[1:, :] - v[:-1, :]) / g.h
    return VectorField(g, ux, uy)


def _div_arrays(g: Grid, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    d = (fx[:, 1:] - fx[:, :-1] + fy[1:, :] - fy[:-1, :]) / g.h
    return np.where(g.mask, d, 0.0)


def divergence(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, _div_arrays(v.grid, v.ux, v.uy))


def laplacian(f: ScalarField) -> ScalarField:
    """Five-point Laplacian with Neumann-mirror or Dirichlet-odd ghosts."""
    lap = divergence(gradient_faces(f)).values
    if f.bc == DIRICHLET:
        g = f.grid
        lap = lap - 2.0 * _boundary_face_count(g) * _clean(f) / g.h**2
    return ScalarField(f.grid, lap, f.bc)


def _minmod(a, b):
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _limited_faces(g: Grid, v: np.ndarray):
    """Left/right reconstructed face states with minmod slopes (axis 1 and 0)."""
    ox, oy = g.open_x, g.open_y
    dx = np.where(ox, np.pad(v, ((0, 0), (1, 1)), mode="edge")[:, 1:] - np.pad(v, ((0, 0), (1, 1)), mode="edge")[:, :-1], 0.0)
    dy = np.where(oy, np.pad(v, ((1, 1), (0, 0)), mode="edge")[1:, :] - np.pad(v, ((1, 1), (0, 0)), mode="edge")[:-1, :], 0.0)
    sx = _minmod(dx[:, :-1], dx[:, 1:])
    sy = _minmod(dy[:-1, :], dy[1:, :])
    return v + 0.5 * sx, v - 0.5 * sx, v + 0.5 * sy, v - 0.5 * sy


def advective_flux(v: VectorField, f: ScalarField, scheme: str = "upwind"):
    """Face fluxes ``u f`` with upwinded ``f``."""
    g = f.grid
    q = np.ascontiguousarray(_clean(f))
    if scheme == "upwind":
        return (kernels.upwind_flux(np.ascontiguousarray(v.ux), q, 1),
                kernels.upwind_flux(np.ascontiguousarray(v.uy), q, 0))
    if scheme != "minmod":
        raise ValueError(f"unknown advection scheme {scheme!r}")
    east, west, north, south = _limited_faces(g, q)
    fx = np.zeros_like(v.ux)
    fy = np.zeros_like(v.uy)
    a = v.ux[:, 1:-1]
    fx[:, 1:-1] = np.where(a > 0, a * east[:, :-1], a * west[:, 1:])
    b = v.uy[1:-1, :]
    fy[1:-1, :] = np.where(b > 0, b * north[:-1, :], b * south[1:, :])
    return fx, fy


def advect_upwind(v: VectorField, f: ScalarField, scheme: str = "upwind") -> ScalarField:
    """Conservative transport term ``div(u f)``."""
    fx, fy = advective_flux(v, f, scheme)
    return ScalarField(f.grid, _div_arrays(f.grid, fx, fy), f.bc)


def cell_to_faces(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Arithmetic mean of the two adjacent cells on open faces."""
    g = f.grid
    v = _clean(f)
    fx = np.zeros((g.ny, g.nx + 1))
    fy = np.zeros((g.ny + 1, g.nx))
    fx[:, 1:-1] = 0.5 * (v[:, 1:] + v[:, :-1])
    fy[1:-1, :] = 0.5 * (v[1:, :] + v[:-1, :])
    return np.where(g.open_x, fx, 0.0), np.where(g.open_y, fy, 0.0)


def cross_components(v: VectorField) -> tuple[np.ndarray, np.ndarray]:
    """y-component averaged onto x-faces and x-component onto y-faces."""
    g = v.grid
    uy_c = 0.5 * (v.uy[:-1, :] + v.uy[1:, :])
    ux_c = 0.5 * (v.ux[:, :-1] + v.ux[:, 1:])
    on_x = np.zeros_like(v.ux)
    on_y = np.zeros_like(v.uy)
    on_x[:, 1:-1] = 0.5 * (uy_c[:, :-1] + uy_c[:, 1:])
    on_y[1:-1, :] = 0.5 * (ux_c[:-1, :] + ux_c[1:, :])
    return np.where(g.open_x, on_x, 0.0), np.where(g.open_y, on_y, 0.0)


def chemotactic_velocity(n: ScalarField, c: ScalarField, S) -> VectorField:
    """Face drift ``S grad c``, with ``S`` sampled at face centres.

    ``S`` must provide ``on_faces(grid, axis, n_face, c_face)`` returning the
    four matrix entries as arrays of the face shape.
    """
    g = c.grid
    grad = gradient_faces(c)
    gy_on_x, gx_on_y = cross_components(grad)
    nfx, nfy = cell_to_faces(n)
    cfx, cfy = cell_to_faces(c)
    s11, s12, _, _ = S.on_faces(g, "x", nfx, cfx)
    _, _, s21, s22 = S.on_faces(g, "y", nfy, cfy)
    ax = s11 * grad.ux + s12 * gy_on_x
    ay = s21 * gx_on_y + s22 * grad.uy
    return VectorField(g, ax, ay)


def tensor_flux_div(n: ScalarField, c: ScalarField, S) -> ScalarField:
    """``div(n S grad c)`` with ``n`` upwinded along the drift direction."""
    if np.min(n.values[n.grid.mask]) < -1e-12:
        raise StateError("tensor_flux_div requires n >= 0")
    return advect_upwind(chemotactic_velocity(n, c, S), n)


def porous_rhs(n: ScalarField, eps: float, m: float) -> ScalarField:
    """``Delta (n + eps)^m`` with zero-flux boundary faces."""
    vals = n.values[n.grid.mask]
    low = float(vals.min())
    if low < -1e-12:
        raise StateError(f"porous_rhs: negative density {low:.3e}")
    if m == 1.0:
        w = n.values + eps
    else:
        w = (np.maximum(n.values, 0.0) + eps) ** m
    return laplacian(ScalarField(n.grid, w))


def vector_laplacian(u: VectorField) -> VectorField:
    """Component-wise MAC Laplacian with no-slip ghosts."""
    g = u.grid
    lx = -velocity_stencil(g, "x").apply(u.ux)
    ly = -velocity_stencil(g, "y").apply(u.uy)
    return VectorField(g, lx, ly)


def _upwind_derivatives(q, act, vel_a, vel_c, h):
    """Upwind ``vel_a dq/da + vel_c dq/dc`` for face unknowns ``q``.

    Axis 1 is the component's own axis (neighbours are open faces or
    zero-valued wall faces), axis 0 the cross axis (missing neighbours are
    mirrored ghosts ``-q``).
    """
    qa = np.pad(q, ((0, 0), (1, 1)))
    back_a = (q - qa[:, :-2]) / h
    fwd_a = (qa[:, 2:] - q) / h
    pad = np.pad(act, ((1, 1), (0, 0)), constant_values=False)
    qc = np.pad(q, ((1, 1), (0, 0)))
    below = np.where(pad[:-2], qc[:-2], -q)
    above = np.where(pad[2:], qc[2:], -q)
    back_c = (q - below) / h
    fwd_c = (above - q) / h
    da = np.where(vel_a > 0, back_a, fwd_a)
    dc = np.where(vel_c > 0, back_c, fwd_c)
    return np.where(act, vel_a * da + vel_c * dc, 0.0)


def advect_vector(w: VectorField, u: VectorField) -> VectorField:
    """First-order upwind ``(w . grad) u`` on the MAC faces."""
    g = u.grid
    wy_on_x, wx_on_y = cross_components(w)
    ax = _upwind_derivatives(u.ux, g.open_x, w.ux, wy_on_x, g.h)
    ay = _upwind_derivatives(u.uy.T, g.open_y.T, w.uy.T, wx_on_y.T, g.h).T
    return VectorField(g, ax, ay)


def velocity_gradient_energy(u: VectorField) -> float:
    """Discrete Dirichlet energy ``int |grad u|^2 = -<u, Delta_h u>``."""
    g = u.grid
    ex = float(np.sum(u.ux * velocity_stencil(g, "x").apply(u.ux)))
    ey = float(np.sum(u.uy * velocity_stencil(g, "y").apply(u.uy)))
    return g.h**2 * (ex + ey)
