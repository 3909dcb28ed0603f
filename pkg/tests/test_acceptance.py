"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The long simulations are shared through module-scoped caches; the whole
module takes roughly a quarter of an hour on one core.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_scalar, random_vector, record_criterion
from oracles import gronwall_batch, key_functional_loops
from ksns import cli, scenarios
from ksns import config as cfgmod
from ksns import diagnostics as dg
from ksns.grid import VectorField, integrate, lp_norm, make_grid
from ksns.linalg import helmholtz_project
from ksns.model import ModelParams, Potential, SensitivityTensor
from ksns.ops import advect_upwind, divergence, gradient_faces, laplacian, tensor_flux_div
from ksns.stepper import StepControl, _strip, advance, initial_state, run

pytestmark = pytest.mark.slow

BOUNDED = ("bounded_m15", "rotational_flux", "nonconvex_L")
FINE = 128
AGG_NX = 64

_cache = {}


def _config(text, out):
    return cfgmod.parse_text(text + f'output.dir = "{out}"\n')


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def long_run(name, outdir):
    """``name`` at 128^2 to its preset horizon with adaptive steps."""
    if name not in _cache:
        cfg = _config(f'scenario = "{name}"\ngrid.nx = {FINE}\n', outdir / name)
        _cache[name] = run(cfg, quiet=True)
    return _cache[name]


def aggregation_run(outdir):
    if "agg" not in _cache:
        cfg = _config(f'scenario = "aggregation_m1"\ngrid.nx = {AGG_NX}\noutput.record_interval = 0.001\n',
                      outdir / "aggregation_m1")
        _cache["agg"] = run(cfg, quiet=True)
    return _cache["agg"]


def series(res, key):
    return [r.t for r in res.records], [getattr(r, key) for r in res.records]


# --- 1, 2: mass identities ---------------------------------------------------


def test_criterion_01_mass_identity(outdir):
    res = long_run("bounded_m15", outdir)
    m0 = res.initial_mass[0]
    drift = max(abs(r.mass_n - m0) for r in res.records) / m0
    trunc = max(res.steps["truncation_mass"]) / m0
    ok = res.termination == "completed" and drift <= 1e-8 and trunc <= 1e-8
    record_criterion(1, ok, f"bounded_m15 {FINE}^2 T={res.state.t:g}: mass drift {drift:.2e}, "
                            f"max truncation {trunc:.2e} (x mass), {len(res.steps['t']) - 1} steps")
    assert ok


def test_criterion_02_c_mass_bound(outdir):
    res = long_run("bounded_m15", outdir)
    m0, c0 = res.initial_mass
    cap = max(m0, c0) * (1 + 1e-6)
    worst = max(r.mass_c for r in res.records)
    ok = worst <= cap and max(res.steps["mass_c"]) <= cap
    record_criterion(2, ok, f"max int c = {worst:.10g} <= {cap:.10g}")
    assert ok


# --- 3, 4: plateaus ------------------------------------------------------------


def test_criterion_03_key_functional_plateau(outdir):
    parts, ok = [], True
    for name in BOUNDED:
        t, v = series(long_run(name, outdir), "F_key")
        good = dg.plateau(t, v, 1.2)
        ok &= good
        mid = 0.5 * t[-1]
        late = max(x for s, x in zip(t, v) if s >= mid)
        early = max(x for s, x in zip(t, v) if s <= mid)
        parts.append(f"{name} {late / early:.3f}")
    record_criterion(3, ok, "F_key late/early max: " + ", ".join(parts))
    assert ok


def test_criterion_04_uniform_bounds(outdir):
    parts, ok = [], True
    for name in BOUNDED:
        res = long_run(name, outdir)
        flags = {key: dg.plateau(*series(res, key), 1.2) for key in ("n_linf", "c_max", "grad_c_max", "u_inf")}
        kind = res.indicator.kind
        good = all(flags.values()) and kind == "bounded"
        ok &= good
        bad = [k for k, f in flags.items() if not f]
        parts.append(f"{name} {kind}" + (f" (no plateau: {bad})" if bad else ""))
    record_criterion(4, ok, "; ".join(parts))
    assert ok


# --- 5: blow-up contrast ------------------------------------------------------


def test_criterion_05_blowup_contrast(outdir):
    agg = aggregation_run(outdir)
    ref = long_run("bounded_m15", outdir)
    ind = agg.indicator
    contrast = ind.kind in ("growing", "dt_collapse") and ind.growth >= 10.0
    bounded = ref.termination == "completed" and ref.indicator.kind == "bounded"

    cfg = _config(f'scenario = "aggregation_m1"\ngrid.nx = {AGG_NX}\nsweep.m = [1.25, 1.5, 2.0]\n'
                  'output.record_interval = 0.001\n', outdir / "m_sweep")
    report = cli.run_sweep(cfg)
    rows = sorted(report.rows, key=lambda r: r.m)
    peaks = [r.max_n_linf for r in rows]
    monotone = all(b <= a for a, b in zip(peaks, peaks[1:])) and all(not r.error for r in rows)
    ok = contrast and bounded and monotone
    record_criterion(5, ok, f"aggregation_m1 {AGG_NX}^2: {ind.kind}, |n|inf grew {ind.growth:.1f}x "
                            f"({agg.termination}); bounded_m15: {ref.indicator.kind}; max|n|inf over m "
                            + ", ".join(f"{r.m:g}->{r.max_n_linf:.1f}" for r in rows))
    assert ok


# --- 6: Gronwall ---------------------------------------------------------------


def test_criterion_06_gronwall_suite():
    start = time.perf_counter()
    probs = gronwall_batch(np.random.default_rng(2024), 1000)
    reports = [dg.verify_gronwall(p) for p in probs]
    elapsed = time.perf_counter() - start
    hand = dg.gronwall_bound(1, 1, 1, 1) == 3.0 and dg.gronwall_bound(0, 2, 4, 0.5) == 12.0
    held = sum(r.holds for r in reports)
    ok = held == 1000 and hand and elapsed <= 30.0
    record_criterion(6, ok, f"{held}/1000 RK4 problems hold (min margin/bound "
                            f"{min(r.margin / r.bound for r in reports):.3g}), hand bounds 3 and 12 "
                            f"{'match' if hand else 'differ'}, {elapsed:.1f} s")
    assert ok


# --- 7: incompressibility ------------------------------------------------------


def test_criterion_07_incompressibility(outdir):
    worst = max(max(long_run(name, outdir).steps["div_u_max"]) for name in BOUNDED)
    rng = np.random.default_rng(7)
    idem = annih = 0.0
    for kind in ("full", "l_shape"):
        g = make_grid(1, 1, 64, 64, kind)
        for _ in range(5):
            v = random_vector(g, rng)
            w, _ = helmholtz_project(v)
            ww, _ = helmholtz_project(w)
            idem = max(idem, (ww - w).norm() / w.norm())
            grad = gradient_faces(random_scalar(g, rng))
            annih = max(annih, helmholtz_project(grad)[0].norm() / grad.norm())
    ok = worst <= 1e-9 and idem <= 1e-10 and annih <= 1e-10
    record_criterion(7, ok, f"max|div u| over accepted {FINE}^2 steps {worst:.2e}; "
                            f"idempotence {idem:.1e}; gradient annihilation {annih:.1e}")
    assert ok


# --- 8: epsilon limit ----------------------------------------------------------


def test_criterion_08_epsilon_study(outdir):
    # a fixed step keeps every run on the same time grid, so the differences
    # measure the eps dependence rather than step-size selection noise
    cfg = _config('scenario = "bounded_m15"\nrun.T = 1.0\nstep.adaptive = false\nstep.dt = 2e-3\n'
                  'sweep.eps = [0.1, 0.05, 0.025, 0.0125]\n', outdir / "eps_study")
    report = cli.run_sweep(cfg)
    ratios = report.cauchy.get(1.5, {})
    ok = bool(ratios) and all(r < 1.0 for key in "ncu" for r in ratios[key])
    text = "; ".join(f"{k}: " + ", ".join(f"{r:.3f}" for r in ratios.get(k, [])) for k in "ncu")
    record_criterion(8, ok, f"bounded_m15 64^2 Cauchy ratios at t=1: {text}")
    assert ok


# --- 9: weak residuals ---------------------------------------------------------

HEAT = ModelParams(m=1.0, C_S=0.0, kappa=0.0, sensitivity=SensitivityTensor(chi=0.0),
                   phi=Potential("linear_gravity", (0.0, 0.0)))


def _decoupled_trajectory(nx, dt, fluid, T=0.1):
    g = make_grid(1, 1, nx, nx)
    if fluid:
        n0, c0, u0 = g.zeros(), g.zeros(), scenarios.vortex(g, 1.0)
    else:
        n0 = g.cell_field(lambda x, y: np.exp(0.5 * np.cos(np.pi * x) * np.cos(np.pi * y) + 0.3 * np.cos(np.pi * x)))
        c0 = g.cell_field(lambda x, y: np.exp(0.4 * np.cos(np.pi * y)
                                              + 0.2 * np.cos(2 * np.pi * x) * np.cos(np.pi * y)))
        u0 = VectorField.zeros(g)
    s = initial_state(n0, c0, u0, HEAT)
    ctl = StepControl(dt=dt, adaptive=False, scheme="imex_bdf2")
    out = [s]
    while s.t < T - 1e-14:
        s = advance(s, HEAT, ctl, t_stop=T)
        out.append(_strip(s))
    return out


def test_criterion_09_weak_residuals():
    levels = ((16, 4e-3), (32, 2e-3), (64, 1e-3))
    family = dg.default_test_family()
    res = {i: [] for i in range(len(family))}
    for nx, dt in levels:
        heat = _decoupled_trajectory(nx, dt, fluid=False)
        stokes = _decoupled_trajectory(nx, dt, fluid=True)
        for i, f in enumerate(family):
            r = dg.weak_residual(stokes if f.kind == "stream" else heat, f, HEAT)
            res[i].append((abs(r.n), abs(r.c)) if f.kind == "cosine" else (abs(r.u),))
    worst = math.inf
    for vals in res.values():
        arr = np.array(vals)
        worst = min(worst, float((arr[:-1] / arr[1:]).min()))
    ok = worst >= 2.5
    record_criterion(9, ok, f"{len(family)} test functions x 3 refinements: smallest reduction {worst:.2f}x")
    assert ok


# --- 10: operator oracles ------------------------------------------------------


def _lp_loops(values, mask, h, p):
    acc = 0.0
    for j in range(values.shape[0]):
        for i in range(values.shape[1]):
            if mask[j, i]:
                acc += h * h * abs(values[j, i]) ** p
    return acc ** (1.0 / p)


def test_criterion_10_operator_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    worst = {"adjoint": 0.0, "conservative": 0.0, "lp": 0.0, "F_key": 0.0}
    for kind in ("full", "l_shape"):
        g = make_grid(1, 1, 24, 24, kind)
        for _ in range(100):
            f, v = random_scalar(g, rng), random_vector(g, rng)
            lhs = gradient_faces(f).dot(v)
            rhs = -g.h**2 * float(np.sum((f.values * divergence(v).values)[g.mask]))
            worst["adjoint"] = max(worst["adjoint"], abs(lhs - rhs) / max(abs(lhs), 1e-300))
        for _ in range(20):
            n, c = random_scalar(g, rng, 0, 2), random_scalar(g, rng, 0, 2)
            u = helmholtz_project(random_vector(g, rng))[0]
            S = SensitivityTensor("rotation", theta=rng.uniform(-3, 3))
            for out in (tensor_flux_div(n, c, S), advect_upwind(u, n)):
                scale = max(1.0, float(np.abs(out.values).max()))
                worst["conservative"] = max(worst["conservative"], abs(integrate(out)) / scale)
            ref = _lp_loops(n.values, g.mask, g.h, 4)
            worst["lp"] = max(worst["lp"], abs(lp_norm(n, 4) - ref) / ref)
            p = ModelParams(m=rng.uniform(1, 3), eps=rng.uniform(0, 0.1))
            s = initial_state(n, c, VectorField.zeros(g), p)
            F = dg.compute_record(s, p).F_key
            ref = key_functional_loops(n.values, c.values, g.h, g.mask, p.m, p.eps)
            worst["F_key"] = max(worst["F_key"], abs(F - ref) / ref)

    def lap_error(nx):
        g = make_grid(1, 1, nx, nx)
        f = g.cell_field(lambda x, y: np.cos(np.pi * x) * np.cos(2 * np.pi * y))
        exact = -5 * np.pi**2 * f.values
        return float(np.abs(laplacian(f).values - exact).max())

    errs = [lap_error(nx) for nx in (16, 32, 64, 128)]
    order = min(math.log2(a / b) for a, b in zip(errs, errs[1:]))
    elapsed = time.perf_counter() - start
    ok = (worst["adjoint"] <= 1e-12 and worst["conservative"] <= 1e-12 and worst["lp"] <= 1e-13
          and worst["F_key"] <= 1e-12 and order >= 1.9 and elapsed <= 60.0)
    record_criterion(10, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
                     + f", laplacian order {order:.2f}, {elapsed:.1f} s")
    assert ok
