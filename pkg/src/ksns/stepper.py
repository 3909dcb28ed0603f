"""IMEX time integration of the coupled system.

One step, in order:

1. signal: ``(1 + dt) c - dt Delta c = c^k + dt (n^k - div(u^k c^k))``;
2. cells: lagged-coefficient implicit porous diffusion with the chemotactic
   flux (built from the fresh signal) and transport explicit, then
   negative-part truncation with a mass-restoring rescale;
3. fluid: explicit buoyancy and convection, projection, implicit viscous
   solve, projection.

Diffusion is implicit throughout, so the step size is limited only by the
explicit fluxes: ``dt (max|a_x| + max|a_y|) / h <= cfl_target`` where ``a``
is chemotactic drift plus fluid velocity. This keeps the explicit upwind
update of ``n`` and ``c`` nonnegative.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ksns import diagnostics as dg
from ksns.errors import ConfigError, SolverError, StepError
from ksns.fieldio import write_snapshot
from ksns.grid import ScalarField, VectorField, integrate
from ksns.linalg import PROJECTION_TOL, _constant_stencil, helmholtz_project, krylov_solve, vector_helmholtz_solve
from ksns.model import ModelParams, buoyancy, convection
from ksns.ops import _div_arrays, advective_flux, chemotactic_velocity, diffusion_stencil

log = logging.getLogger(__name__)

SCHEMES = ("imex_euler", "imex_bdf2")


@dataclass
class SimState:
    t: float
    n: ScalarField
    c: ScalarField
    u: VectorField
    P: ScalarField
    step_index: int = 0
    dt: float = 0.0
    truncation_mass: float = 0.0
    # previous level, used by the two-step scheme
    prev: "SimState | None" = field(default=None, repr=False)
    # projection potentials from the last step (warm starts)
    warm: dict = field(default_factory=dict, repr=False)

    def copy(self) -> "SimState":
        return replace(self, n=self.n.copy(), c=self.c.copy(), u=self.u.copy(), P=self.P.copy(),
                       warm=dict(self.warm))


@dataclass
class StepControl:
    dt: float = 1e-3
    cfl_target: float = 0.5
    dt_min: float = 1e-7
    dt_max: float = 1e-2
    scheme: str = "imex_euler"
    projection_tol: float = PROJECTION_TOL
    diffusion_tol: float = 1e-10
    growth: float = 1.5
    # False: every step uses dt unless the CFL bound forces a smaller one
    adaptive: bool = True
    # False: the chemotactic drift uses the old signal instead of the fresh one
    signal_first: bool = True

    def __post_init__(self):
        if not 0 < self.cfl_target <= 0.5:
            raise ConfigError(f"cfl_target must lie in (0, 0.5], got {self.cfl_target}", key="step.cfl")
        if not 0 < self.dt_min <= self.dt <= self.dt_max:
            raise ConfigError(f"need 0 < dt_min <= dt <= dt_max, got {self.dt_min}, {self.dt}, {self.dt_max}",
                              key="step.dt")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}", key="step.scheme")


def initial_state(n0: ScalarField, c0: ScalarField, u0: VectorField, p: ModelParams,
                  tol: float = PROJECTION_TOL) -> SimState:
    """State at ``t = 0``; ``u0`` is projected and the pressure balances the
    initial buoyancy."""
    u, _ = helmholtz_project(u0, tol)
    # the pressure is only reported, so it gets a relative tolerance
    f = buoyancy(n0, p.phi)
    scale = float(np.abs(_div_arrays(n0.grid, f.ux, f.uy)).max())
    _, P = helmholtz_project(f, max(tol, 1e-12 * scale))
    return SimState(0.0, n0.copy(), c0.copy(), u, P)


def drift_speed(n: ScalarField, c: ScalarField, u: VectorField, p: ModelParams) -> float:
    """``max|a_x| + max|a_y|`` of chemotactic drift plus fluid velocity."""
    a = chemotactic_velocity(n, c, p.sensitivity)
    return float(np.max(np.abs(a.ux) + np.abs(u.ux)) + np.max(np.abs(a.uy) + np.abs(u.uy)))


def _face_mean(grid, D):
    kx = np.zeros((grid.ny, grid.nx + 1))
    ky = np.zeros((grid.ny + 1, grid.nx))
    kx[:, 1:-1] = 0.5 * (D[:, 1:] + D[:, :-1])
    ky[1:-1, :] = 0.5 * (D[1:, :] + D[:-1, :])
    return kx, ky


def _mass_exact_solve(A, b, x0, tol, alpha=1.0):
    """Solve ``A x = b`` where every column of ``A`` sums to ``alpha``, then
    remove the mean residual so that ``alpha sum x == sum b`` to rounding."""
    x, _ = krylov_solve(A, b, x0, tol=tol)
    act = A.active
    r = np.where(act, b - A.apply(x), 0.0)
    return np.where(act, x + float(r[act].sum()) / (alpha * int(act.sum())), 0.0)


def _truncate(values, grid, target_mass):
    """Clip negatives and rescale the positive part to ``target_mass``."""
    h2 = grid.h**2
    neg = np.minimum(values, 0.0)
    removed = -h2 * float(neg[grid.mask].sum())
    if removed == 0.0:
        return values, 0.0
    pos = np.maximum(values, 0.0)
    total = h2 * float(pos[grid.mask].sum())
    if total > 0:
        pos = pos * (target_mass / total)
    return pos, removed


def _coefficients(ctl: StepControl, state: SimState, dt: float):
    """BDF weights ``(a0, a1, a2, e1, e2)``: ``a0 y^{k+1} = a1 y^k - a2 y^{k-1}
    + dt (e1 F^k - e2 F^{k-1})`` for variable steps."""
    if ctl.scheme == "imex_bdf2" and state.prev is not None and state.dt > 0:
        w = dt / state.dt
        return (1 + 2 * w) / (1 + w), 1 + w, w * w / (1 + w), 1 + w, w
    return 1.0, 1.0, 0.0, 1.0, 0.0


def _explicit_terms(state: SimState, c_new: ScalarField | None, p: ModelParams):
    """Explicit parts of the c and n updates at one time level."""
    n, c, u = state.n, state.c, state.u
    g = n.grid
    cfx, cfy = advective_flux(u, c, p.advection_scheme)
    c_expl = np.where(g.mask, n.values, 0.0) - _div_arrays(g, cfx, cfy)
    n_expl = None
    if c_new is not None:
        drift = chemotactic_velocity(n, c_new, p.sensitivity)
        dfx, dfy = advective_flux(drift, n)
        afx, afy = advective_flux(u, n, p.advection_scheme)
        n_expl = -_div_arrays(g, dfx + afx, dfy + afy)
    return c_expl, n_expl


def advance(state: SimState, p: ModelParams, ctl: StepControl, t_stop: float | None = None) -> SimState:
    """One accepted step; raises ``StepError`` if ``dt`` must drop below ``dt_min``."""
    g = state.n.grid
    if ctl.adaptive and state.dt > 0:
        dt = min(ctl.dt_max, state.dt * ctl.growth)
    else:
        dt = ctl.dt
    speed = drift_speed(state.n, state.c, state.u, p)
    if speed > 0:
        dt = min(dt, ctl.cfl_target * g.h / speed)
    if t_stop is not None and state.t + dt > t_stop:
        dt = t_stop - state.t
    last_exc = None
    for _ in range(12):
        if dt < ctl.dt_min * (1 - 1e-12) and not (t_stop is not None and abs(state.t + dt - t_stop) < 1e-14):
            raise StepError(f"time step {dt:.3e} below dt_min={ctl.dt_min:.3e} at t={state.t:.6g}",
                            t=state.t, dt=dt)
        try:
            new = _try_step(state, p, ctl, dt)
        except _Reject as r:
            log.debug("step rejected at t=%.6g: dt %.3e -> %.3e", state.t, dt, r.dt)
            dt = r.dt
            continue
        except SolverError as e:  # stiffness shows up as non-convergence
            log.debug("solver failure at t=%.6g, dt=%.3e: %s", state.t, dt, e)
            last_exc = e
            dt *= 0.5
            continue
        return new
    if last_exc is not None:
        raise last_exc
    raise StepError(f"could not find an admissible step at t={state.t:.6g}", t=state.t, dt=dt)


class _Reject(Exception):
    def __init__(self, dt):
        self.dt = dt


def _try_step(state: SimState, p: ModelParams, ctl: StepControl, dt: float) -> SimState:
    g = state.n.grid
    mask = g.mask
    h2 = g.h**2
    a0, a1, a2, e1, e2 = _coefficients(ctl, state, dt)
    prev = state.prev if a2 else None

    # signal
    c_expl, _ = _explicit_terms(state, None, p)
    rhs_c = a1 * state.c.values + dt * e1 * c_expl
    if prev is not None:
        c_expl_prev, _ = _explicit_terms(prev, None, p)
        rhs_c = rhs_c - a2 * prev.c.values - dt * e2 * c_expl_prev
    Ac = _constant_stencil(g, "neumann_zero").shifted(a0 + dt, dt)
    c_vals, _ = krylov_solve(Ac, rhs_c, state.c.values, tol=ctl.diffusion_tol)
    c_new = ScalarField(g, np.maximum(c_vals, 0.0))

    # cells
    c_drift = c_new if ctl.signal_first else state.c
    speed = drift_speed(state.n, c_drift, state.u, p)
    if speed * dt > ctl.cfl_target * g.h * (1 + 1e-9):
        raise _Reject(0.95 * ctl.cfl_target * g.h / speed)
    _, n_expl = _explicit_terms(state, c_drift, p)
    rhs_n = a1 * state.n.values + dt * e1 * n_expl
    n_star = state.n.values
    if prev is not None:
        _, n_expl_prev = _explicit_terms(prev, c_drift if ctl.signal_first else prev.c, p)
        rhs_n = rhs_n - a2 * prev.n.values - dt * e2 * n_expl_prev
        n_star = np.maximum(e1 * state.n.values - e2 * prev.n.values, 0.0)
    rhs_n = np.where(mask, rhs_n, 0.0)
    D = p.m * (np.maximum(n_star, 0.0) + p.eps) ** (p.m - 1.0) if p.m != 1.0 else np.ones(g.shape)
    kx, ky = _face_mean(g, np.where(mask, D, 0.0))
    An = diffusion_stencil(g, kx, ky).shifted(a0, dt)
    n_vals = _mass_exact_solve(An, rhs_n, state.n.values, ctl.diffusion_tol, a0)
    n_vals, removed = _truncate(n_vals, g, h2 * float(n_vals[mask].sum()))
    n_new = ScalarField(g, n_vals)

    # fluid
    forcing = buoyancy(n_new, p.phi)
    conv = convection(state.u, p, ctl.projection_tol, assume_solenoidal=True)
    u_rhs = state.u * a1 + (forcing - conv) * (dt * e1)
    if prev is not None:
        conv_prev = convection(prev.u, p, ctl.projection_tol, assume_solenoidal=True)
        # buoyancy uses the new density, so only convection is extrapolated
        u_rhs = u_rhs - prev.u * a2 - (forcing - conv_prev) * (dt * e2)
    w1, P1 = helmholtz_project(u_rhs, ctl.projection_tol, state.warm.get("P1"))
    u_star = vector_helmholtz_solve(w1, a0, dt, x0=state.u)
    u_new, P2 = helmholtz_project(u_star, ctl.projection_tol, state.warm.get("P2"))
    P = ScalarField(g, (P1.values * (1.0 / dt) + P2.values * (a0 / dt)))

    new = SimState(
        t=state.t + dt, n=n_new, c=c_new, u=u_new, P=P, step_index=state.step_index + 1, dt=dt,
        truncation_mass=removed, prev=_strip(state) if ctl.scheme == "imex_bdf2" else None,
        warm={"P1": P1, "P2": P2},
    )
    if not is_finite(new):
        raise _Reject(0.5 * dt)
    return new


def _strip(state: SimState) -> SimState:
    return replace(state, prev=None, warm={})


def mass(state: SimState) -> float:
    return integrate(state.n)


def is_finite(state: SimState) -> bool:
    return bool(np.isfinite(state.n.values).all() and np.isfinite(state.c.values).all() and state.u.finite())


# --- run driver -------------------------------------------------------------

STEP_FIELDS = ("t", "dt", "mass_n", "mass_c", "min_n", "min_c", "div_u_max", "truncation_mass")


@dataclass
class RunResult:
    state: SimState
    termination: str  # "completed" | "completed-with-growth" | "dt_collapse"
    diagnostics_path: str | None
    records: list = field(default_factory=list, repr=False)
    steps: dict = field(default_factory=dict, repr=False)  # per accepted step, keys STEP_FIELDS
    windows: object = field(default=None, repr=False)
    indicator: object = None
    failures: list = field(default_factory=list)
    trajectory: list | None = field(default=None, repr=False)
    initial_mass: tuple = (0.0, 0.0)
    message: str = ""

    @property
    def ok(self) -> bool:
        return not self.failures


def _step_row(state: SimState) -> tuple:
    g = state.n.grid
    act = g.mask
    return (state.t, state.dt, integrate(state.n), integrate(state.c),
            float(state.n.values[act].min()), float(state.c.values[act].min()),
            float(np.abs(_div_arrays(g, state.u.ux, state.u.uy)).max()), state.truncation_mass)


def check_invariants(steps: dict, suites, mass0: float, cmass0: float, div_tol: float) -> list[str]:
    """Inline invariant suites over per-step statistics; returns failure messages."""
    out = []
    arr = {k: np.asarray(v, dtype=float) for k, v in steps.items()}
    if "finite" in suites and not all(np.isfinite(a).all() for a in arr.values()):
        out.append("finite: non-finite diagnostics")
    if "positivity" in suites:
        lo = min(arr["min_n"].min(), arr["min_c"].min())
        if lo < -1e-12:
            out.append(f"positivity: minimum {lo:.3e} < -1e-12")
    if "divergence" in suites and arr["div_u_max"].max() > div_tol:
        out.append(f"divergence: max|div u| {arr['div_u_max'].max():.3e} > {div_tol:.1e}")
    scale = max(abs(mass0), 1e-300)
    if "mass" in suites:
        err = np.abs(arr["mass_n"] - mass0).max() / scale
        if err > 1e-10:
            out.append(f"mass: relative drift {err:.3e} > 1e-10")
    if "c_mass" in suites:
        cap = max(mass0, cmass0) * (1 + 1e-8)
        if arr["mass_c"].max() > cap + 1e-14:
            out.append(f"c_mass: {arr['mass_c'].max():.17g} > {cap:.17g}")
    if "truncation" in suites and arr["truncation_mass"].max() > 1e-8 * scale:
        out.append(f"truncation: {arr['truncation_mass'].max():.3e} > 1e-8 * mass")
    return out


def run(config, keep_states: bool = False, quiet: bool = False, write: bool = True) -> RunResult:
    """Advance a configured scenario to ``config.T``.

    ``config`` is a :class:`ksns.config.SimConfig`. Records are taken at
    ``t = 0``, whenever a multiple of ``record_interval`` is crossed, and at
    the end. With ``write`` the diagnostics, per-step statistics, window
    integrals and snapshots go to ``config.output_dir``.
    """
    sc = config.build_scenario()
    p = sc.params
    ctl = config.step
    T = float(config.T)
    state = initial_state(sc.n0, sc.c0, sc.u0, p, ctl.projection_tol)
    out = config.output_dir
    if write:
        os.makedirs(out, exist_ok=True)
        if config.snapshot_interval is not None:
            os.makedirs(os.path.join(out, "snapshots"), exist_ok=True)

    records = [dg.compute_record(state, p)]
    windows = dg.WindowIntegrals(dg.WindowIntegrals.default_tau(T))
    windows.append(0.0, dg.window_integrands(state, p))
    steps = {k: [v] for k, v in zip(STEP_FIELDS, _step_row(state))}
    trajectory = [state] if keep_states else None
    mass0, cmass0 = integrate(sc.n0), integrate(sc.c0)
    next_record = config.record_interval
    snap_every = config.snapshot_interval
    next_snap = 0.0
    snap_no = 0

    def snapshot(st):
        nonlocal snap_no, next_snap
        if write and snap_every is not None:
            base = os.path.join(out, "snapshots", f"{snap_no:05d}")
            write_snapshot(base + "_n.bin", st.n)
            write_snapshot(base + "_c.bin", st.c)
            snap_no += 1
            next_snap += snap_every

    def progress(r):
        if not quiet:
            print(f"[{sc.name}] t={r.t:.5g} step={r.step} dt={r.dt:.3e} |n|inf={r.n_linf:.6g} "
                  f"F={r.F_key:.6g} |u|inf={r.u_inf:.3e}", flush=True)

    snapshot(state)
    progress(records[0])
    termination = "completed"
    message = ""
    while state.t < T * (1 - 1e-14) and T - state.t > 1e-14:
        try:
            state = advance(state, p, ctl, t_stop=T)
        except StepError as e:
            termination = "dt_collapse"
            message = str(e)
            break
        if abs(T - state.t) <= 1e-12 * max(1.0, T):
            state.t = T
        for k, v in zip(STEP_FIELDS, _step_row(state)):
            steps[k].append(v)
        windows.append(state.t, dg.window_integrands(state, p))
        if keep_states:
            trajectory.append(_strip(state))
        if state.t >= next_record * (1 - 1e-12) or state.t >= T:
            records.append(dg.compute_record(state, p))
            progress(records[-1])
            while next_record <= state.t * (1 + 1e-12):
                next_record += config.record_interval
        if snap_every is not None and state.t >= next_snap * (1 - 1e-12):
            snapshot(state)
    if termination == "dt_collapse" and records[-1].step != state.step_index:
        records.append(dg.compute_record(state, p))

    indicator = None
    if termination == "dt_collapse":
        indicator = dg.blowup_indicator(records, terminated_by_step_error=True)
    elif len(records) >= 10:
        indicator = dg.blowup_indicator(records)
        if indicator.kind == "growing":
            termination = "completed-with-growth"
    failures = check_invariants(steps, config.verify, mass0, cmass0, max(ctl.projection_tol, 1e-9))

    diag_path = None
    if write:
        diag_path = os.path.join(out, "diagnostics.csv")
        dg.write_records_csv(diag_path, records)
        windows.write_csv(os.path.join(out, "windows.csv"))
        _write_steps(os.path.join(out, "steps.csv"), steps)
    return RunResult(state, termination, diag_path, records, steps, windows, indicator, failures,
                     trajectory, (mass0, cmass0), message)


def _write_steps(path, steps):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_FIELDS)
        for row in zip(*(steps[k] for k in STEP_FIELDS)):
            w.writerow([f"{v:.17g}" for v in row])

