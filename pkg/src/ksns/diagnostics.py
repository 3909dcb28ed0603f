"""Runtime functionals, window integrals, Gronwall checks, weak-form
residuals and the blow-up indicator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from ksns.errors import ConfigError, HypothesisError
from ksns.grid import ScalarField, integrate, lp_norm
from ksns.ops import divergence, gradient_faces, velocity_gradient_energy


@dataclass
class DiagnosticsRecord:
    t: float = 0.0
    step: int = 0
    dt: float = 0.0
    mass_n: float = 0.0
    mass_c: float = 0.0
    F_key: float = 0.0
    E_base: float = 0.0
    enstrophy: float = 0.0
    grad_c_2m: float = 0.0
    n_l2: float = 0.0
    n_l2m: float = 0.0
    n_linf: float = 0.0
    c_max: float = 0.0
    grad_c_max: float = 0.0
    u_inf: float = 0.0
    div_u_max: float = 0.0
    truncation_mass: float = 0.0

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return list(astuple(self))

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.row())


def _squared_gradient_cells(f: ScalarField) -> np.ndarray:
    """``|grad f|^2`` per cell: mean of squared face differences per axis."""
    g = gradient_faces(f)
    sq = 0.5 * (g.ux[:, :-1] ** 2 + g.ux[:, 1:] ** 2) + 0.5 * (g.uy[:-1, :] ** 2 + g.uy[1:, :] ** 2)
    return np.where(f.grid.mask, sq, 0.0)


def _gradient_magnitude_cells(f: ScalarField) -> np.ndarray:
    """``|grad f|`` per cell from face differences averaged to the centre."""
    gx, gy = gradient_faces(f).cell_components()
    return np.sqrt(gx * gx + gy * gy)


def _power(n: np.ndarray, eps: float, q: float) -> np.ndarray:
    base = np.maximum(n, 0.0) + eps
    if q >= 0:
        return base**q
    with np.errstate(divide="ignore"):
        return np.where(base > 0, base ** np.where(base > 0, q, 0.0), 0.0)


def compute_record(state, p) -> DiagnosticsRecord:
    """All monitored functionals of one state."""
    n, c, u = state.n, state.c, state.u
    grid = n.grid
    h2 = grid.h**2
    m, eps = p.m, p.eps
    mask = grid.mask
    nv = n.values[mask]
    dirichlet_c = h2 * float(np.sum(_squared_gradient_cells(c)))
    gmag = ScalarField(grid, _gradient_magnitude_cells(c))
    ucx, ucy = u.cell_components()
    return DiagnosticsRecord(
        t=float(state.t),
        step=int(state.step_index),
        dt=float(getattr(state, "dt", 0.0)),
        mass_n=integrate(n),
        mass_c=integrate(c),
        F_key=h2 * float(np.sum(_power(nv, eps, m))) + dirichlet_c,
        E_base=integrate(n) + h2 * float(np.sum(_power(nv, eps, m - 1.0)))
        + h2 * float(np.sum(c.values[mask] ** 2)) + u.dot(u),
        enstrophy=velocity_gradient_energy(u),
        grad_c_2m=lp_norm(gmag, 2.0 * m),
        n_l2=lp_norm(n, 2),
        n_l2m=lp_norm(n, 2.0 * m),
        n_linf=lp_norm(n, np.inf),
        c_max=lp_norm(c, np.inf),
        grad_c_max=float(gmag.values[mask].max()),
        u_inf=float(np.sqrt(ucx * ucx + ucy * ucy).max()),
        div_u_max=float(np.abs(divergence(u).values).max()),
        truncation_mass=float(getattr(state, "truncation_mass", 0.0)),
    )


WINDOW_KEYS = ("porous_dissipation", "grad_c_sq", "grad_u_sq", "n_power_2m")


def window_integrands(state, p) -> dict[str, float]:
    """Instantaneous spatial integrals whose time windows are monitored."""
    n, c = state.n, state.c
    grid = n.grid
    h2 = grid.h**2
    mask = grid.mask
    weight = _power(n.values, p.eps, 2.0 * p.m - 4.0)
    return {
        "porous_dissipation": h2 * float(np.sum((weight * _squared_gradient_cells(n))[mask])),
        "grad_c_sq": h2 * float(np.sum(_squared_gradient_cells(c))),
        "grad_u_sq": velocity_gradient_energy(state.u),
        "n_power_2m": h2 * float(np.sum(_power(n.values[mask], p.eps, 2.0 * p.m))),
    }


class WindowIntegrals:
    """Rolling time integrals of the window integrands.

    Samples are accumulated with the trapezoid rule; a window integral is a
    difference of the cumulative integral (linearly interpolated between
    samples), so windows are exactly additive.
    """

    def __init__(self, tau: float, keys=WINDOW_KEYS):
        if not tau > 0:
            raise ConfigError(f"window length must be positive, got {tau}")
        self.tau = float(tau)
        self.keys = tuple(keys)
        self.t: list[float] = []
        self.values: dict[str, list[float]] = {k: [] for k in self.keys}
        self.cumulative: dict[str, list[float]] = {k: [] for k in self.keys}

    @staticmethod
    def default_tau(T: float) -> float:
        return min(1.0, T / 6.0) if T > 0 else 1.0

    def append(self, t: float, sample: dict[str, float]) -> None:
        if self.t and not t > self.t[-1]:
            raise ConfigError("window samples must have increasing times")
        for k in self.keys:
            v = float(sample[k])
            if self.t:
                prev = self.cumulative[k][-1] + 0.5 * (t - self.t[-1]) * (v + self.values[k][-1])
            else:
                prev = 0.0
            self.values[k].append(v)
            self.cumulative[k].append(prev)
        self.t.append(float(t))

    def integral(self, key: str, t0: float, t1: float) -> float:
        cum = self.cumulative[key]
        return float(np.interp(t1, self.t, cum) - np.interp(t0, self.t, cum))

    def window(self, key: str, t0: float) -> float:
        return self.integral(key, t0, t0 + self.tau)

    def max_window(self, key: str) -> float:
        """Largest integral over ``[t, t + tau]`` for sample starts ``t``."""
        t = np.asarray(self.t)
        if len(t) < 2:
            return 0.0
        starts = t[t + self.tau <= t[-1] + 1e-12]
        if len(starts) == 0:
            return self.integral(key, t[0], t[-1])
        cum = np.asarray(self.cumulative[key])
        ends = np.interp(np.minimum(starts + self.tau, t[-1]), t, cum)
        return float(np.max(ends - np.interp(starts, t, cum)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"{k}" for k in self.keys] + [f"cum_{k}" for k in self.keys])
            for i, t in enumerate(self.t):
                w.writerow([repr(t)] + [repr(self.values[k][i]) for k in self.keys]
                           + [repr(self.cumulative[k][i]) for k in self.keys])


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DiagnosticsRecord.header())
        for r in records:
            w.writerow([v if isinstance(v, int) else f"{v:.17g}" for v in r.row()])


def read_records_csv(path) -> list[DiagnosticsRecord]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        types = {f.name: f.type for f in fields(DiagnosticsRecord)}
        for row in rd:
            kw = {k: (int(v) if types[k] in (int, "int") else float(v)) for k, v in zip(header, row)}
            out.append(DiagnosticsRecord(**kw))
    return out


# --- uniform Gronwall bound -------------------------------------------------


def gronwall_bound(y0: float, A: float, B: float, sigma: float) -> float:
    """``max{y0 + B, B / (A sigma) + 2 B}``."""
    if not A > 0:
        raise ConfigError(f"Gronwall decay rate A must be positive, got {A}")
    if not sigma > 0:
        raise ConfigError(f"Gronwall window sigma must be positive, got {sigma}")
    if B < 0:
        raise ConfigError(f"Gronwall window bound B must be >= 0, got {B}")
    return max(y0 + B, B / (A * sigma) + 2.0 * B)


@dataclass
class GronwallProblem:
    y0: float
    A: float
    B: float
    sigma: float
    t: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if not (self.t.shape == self.y.shape == self.h.shape) or self.t.ndim != 1 or len(self.t) < 3:
            raise ConfigError("t, y, h must be 1-D arrays of equal length >= 3")
        if np.any(np.diff(self.t) <= 0):
            raise ConfigError("sample times must be strictly increasing")


@dataclass
class GronwallReport:
    holds: bool
    margin: float
    bound: float
    max_y: float


def _interval_integrals(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Integral of ``f`` over each ``[t_k, t_k+1]`` from the cubic through
    four neighbouring samples (centred where possible), evaluated with
    3-point Gauss-Legendre, which is exact for the cubic."""
    n = len(t)
    deg = min(3, n - 1)
    k = np.arange(n - 1)
    s = np.clip(k - (deg - 1) // 2, 0, n - 1 - deg)  # first node of the stencil
    nodes = s[:, None] + np.arange(deg + 1)[None, :]
    xs, fs = t[nodes], f[nodes]
    a, b = t[k], t[k + 1]
    gx, gw = np.polynomial.legendre.leggauss(3)
    pts = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * gx[None, :]
    vals = np.zeros_like(pts)
    for i in range(deg + 1):
        li = np.ones_like(pts)
        for j in range(deg + 1):
            if j != i:
                li *= (pts - xs[:, j:j + 1]) / (xs[:, i:i + 1] - xs[:, j:j + 1])
        vals += fs[:, i:i + 1] * li
    return 0.5 * (b - a) * (vals @ gw)


def _hermite_cumulative(t, cum, f, x):
    """Cumulative integral at ``x`` by cubic Hermite (derivative = ``f``)."""
    i = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
    dt = t[i + 1] - t[i]
    s = (x - t[i]) / dt
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * cum[i] + h10 * dt * f[i] + h01 * cum[i + 1] + h11 * dt * f[i + 1]


def verify_gronwall(prob: GronwallProblem, slack: float = 1e-6, check_hypothesis: bool = True) -> GronwallReport:
    """Check the Gronwall bound along a sampled trajectory.

    With ``check_hypothesis`` the premises are verified first at sample
    resolution (``y >= 0``, ``h >= 0``, ``y' + A y <= h`` in integrated form
    on every sample interval, and ``int_t^{t+sigma} h <= B``), each with
    relative slack ``slack``; a violation raises ``HypothesisError``.
    """
    t, y, h = prob.t, prob.y, prob.h
    bound = gronwall_bound(prob.y0, prob.A, prob.B, prob.sigma)
    if check_hypothesis:
        scale = max(prob.A * float(np.max(np.abs(y))), float(np.max(np.abs(h))), prob.B / prob.sigma, 1e-300)
        if np.min(y) < -slack * scale or np.min(h) < -slack * scale:
            raise HypothesisError("y and h must be nonnegative")
        dt = np.diff(t)
        lhs = np.diff(y) + prob.A * _interval_integrals(t, y)
        rhs = _interval_integrals(t, h)
        excess = lhs - rhs - slack * scale * dt
        if np.any(excess > 0):
            k = int(np.argmax(excess))
            raise HypothesisError(f"y' + A y <= h violated on [{t[k]:.6g}, {t[k + 1]:.6g}]")
        if t[-1] - t[0] > prob.sigma:
            cum = np.concatenate([[0.0], np.cumsum(rhs)])
            starts = t[t + prob.sigma <= t[-1]]
            win = _hermite_cumulative(t, cum, h, starts + prob.sigma) - _hermite_cumulative(t, cum, h, starts)
            if np.max(win) > prob.B + slack * max(prob.B, scale * prob.sigma):
                raise HypothesisError(f"window integral of h reaches {np.max(win):.6g} > B={prob.B:.6g}")
    max_y = float(np.max(y))
    return GronwallReport(max_y <= bound * (1 + 1e-9), bound - max_y, bound, max_y)


# --- weak-form residuals ---------------------------------------------------


def _bump_profile(kind: str, T: float):
    """Time factor ``eta`` with ``eta(T) = eta'(T) = 0`` and its derivative."""
    if kind == "cubic":
        return (lambda t: (1 - t / T) ** 3, lambda t: -3.0 / T * (1 - t / T) ** 2)
    if kind == "cos2":
        w = math.pi / (2 * T)
        return (lambda t: np.cos(w * t) ** 2, lambda t: -2 * w * np.cos(w * t) * np.sin(w * t))
    raise ConfigError(f"unknown time profile {kind!r}")


STREAM_POWER = 4


def _sine_power(a, x, q):
    """``sin^q(a x)`` and its first three derivatives."""
    s, c = np.sin(a * x), np.cos(a * x)
    f = s**q
    d1 = q * a * s ** (q - 1) * c
    d2 = q * a * a * ((q - 1) * s ** (q - 2) * c * c - f)
    d3 = q * a**3 * ((q - 1) * (q - 2) * s ** (q - 3) * c**3 - (3 * q - 2) * s ** (q - 1) * c)
    return f, d1, d2, d3


@dataclass
class TestFunction:
    """Member of the test family used by :func:`weak_residual`.

    ``kind='cosine'``: ``cos(kx pi x/Lx) cos(ky pi y/Ly) eta(t)``, zero normal
    derivative on the box walls; used for the n and c equations.
    ``kind='stream'``: divergence-free vector field ``curl psi`` with
    ``psi = sin^4(kx pi x/Lx) sin^4(ky pi y/Ly) eta(t)``; it vanishes to third
    order on the box walls, which keeps the wall layer of the projection
    splitting out of the residual. Used for the momentum equation. ``kind='zero'`` is identically 0.
    """

    __test__ = False  # not a pytest class

    kind: str = "cosine"
    kx: int = 1
    ky: int = 1
    profile: str = "cubic"

    def spatial(self, grid):
        X, Y = grid.cell_centers
        Lx, Ly = grid.Lx, grid.Ly
        a, b = self.kx * math.pi / Lx, self.ky * math.pi / Ly
        if self.kind == "zero":
            z = np.zeros_like(X)
            return {"phi": z, "gx": z, "gy": z, "lap": z, "vx": z, "vy": z, "lapx": z, "lapy": z,
                    "dxx": z, "dxy": z, "dyx": z, "dyy": z}
        if self.kind == "cosine":
            cx, cy, sx, sy = np.cos(a * X), np.cos(b * Y), np.sin(a * X), np.sin(b * Y)
            return {"phi": cx * cy, "gx": -a * sx * cy, "gy": -b * cx * sy,
                    "lap": -(a * a + b * b) * cx * cy}
        if self.kind == "stream":
            fx, dx, ddx, dddx = _sine_power(a, X, STREAM_POWER)
            fy, dy, ddy, dddy = _sine_power(b, Y, STREAM_POWER)
            # v = (d psi/dy, -d psi/dx)
            return {
                "vx": fx * dy, "vy": -dx * fy,
                "dxx": dx * dy, "dxy": fx * ddy,  # d vx/dx, d vx/dy
                "dyx": -ddx * fy, "dyy": -dx * dy,  # d vy/dx, d vy/dy
                "lapx": ddx * dy + fx * dddy,
                "lapy": -(dddx * fy + dx * ddy),
            }
        raise ConfigError(f"unknown test kind {self.kind!r}")


def default_test_family() -> list[TestFunction]:
    fam = []
    for prof in ("cubic", "cos2"):
        for kx, ky in ((1, 0), (1, 1), (2, 1)):
            fam.append(TestFunction("cosine", kx, ky, prof))
        fam.append(TestFunction("stream", 1, 1, prof))
    return fam


@dataclass
class WeakResidual:
    n: float
    c: float
    u: float
    n_scale: float
    c_scale: float
    u_scale: float

    def relative(self) -> tuple[float, float, float]:
        def rel(r, s):
            return abs(r) / s if s > 0 else abs(r)

        return rel(self.n, self.n_scale), rel(self.c, self.c_scale), rel(self.u, self.u_scale)


def weak_residual(trajectory, test: TestFunction, p) -> WeakResidual:
    """Residuals of the three weak identities on a stored trajectory.

    ``trajectory`` is a sequence of states (``t, n, c, u``) starting at the
    initial time; the last sample time is the horizon at which the test
    function's time factor vanishes. Spatial integrals use cell-centre
    values (velocities and gradients averaged from faces); time integrals
    use the trapezoid rule, except ``int f phi_t`` which is exact in time
    for piecewise-linear ``f``. Each residual comes with the sum of the
    absolute values of its terms as a scale.
    """
    if len(trajectory) < 2:
        raise ConfigError("weak_residual needs at least two samples")
    if test.kind == "zero":
        return WeakResidual(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    ts = np.array([s.t for s in trajectory])
    eta, _ = _bump_profile(test.profile, ts[-1] - ts[0])
    etas = eta(ts - ts[0])
    grid = trajectory[0].n.grid
    h2 = grid.h**2
    mask = grid.mask
    sp = test.spatial(grid)
    S = p.sensitivity
    X, Y = grid.cell_centers

    def integ(a):
        return h2 * float(np.sum(a[mask]))

    first, second = [], []
    for s in trajectory:
        n, c = s.n.values, s.c.values
        ucx, ucy = s.u.cell_components()
        if test.kind == "cosine":
            phi, gx, gy = sp["phi"], sp["gx"], sp["gy"]
            cgx, cgy = gradient_faces(s.c).cell_components()
            s11, s12, s21, s22 = S.base(X, Y, n, c)
            cut = S.rho(grid, grid.wall_distance_cells) * S.chi_cut(n)
            ax = cut * (s11 * cgx + s12 * cgy)
            ay = cut * (s21 * cgx + s22 * cgy)
            n_terms = (integ(_power(n, p.eps, p.m) * sp["lap"]), integ(n * (ax * gx + ay * gy)),
                       integ(n * (ucx * gx + ucy * gy)))
            c_terms = (-integ(cgx * gx + cgy * gy), -integ(c * phi), integ(n * phi),
                       integ(c * (ucx * gx + ucy * gy)))
            first.append((integ(n * phi), n_terms))
            second.append((integ(c * phi), c_terms))
        else:
            vx, vy = sp["vx"], sp["vy"]
            pgx, pgy = p.phi.face_gradient(grid).cell_components()
            u_terms = (
                p.kappa * integ(ucx * ucx * sp["dxx"] + ucx * ucy * sp["dxy"]
                                + ucy * ucx * sp["dyx"] + ucy * ucy * sp["dyy"]),
                integ(ucx * sp["lapx"] + ucy * sp["lapy"]),
                integ(n * (pgx * vx + pgy * vy)),
            )
            first.append((integ(ucx * vx + ucy * vy), u_terms))

    weights = np.zeros(len(ts))
    weights[:-1] += 0.5 * np.diff(ts)
    weights[1:] += 0.5 * np.diff(ts)

    def assemble(samples):
        if not samples:
            return 0.0, 0.0
        pair = np.array([v for v, _ in samples])
        time_term = -float(np.sum(0.5 * (pair[:-1] + pair[1:]) * np.diff(etas)))
        init_term = -pair[0] * etas[0]
        integrated = (np.array([t for _, t in samples]) * (weights * etas)[:, None]).sum(axis=0)
        resid = time_term + init_term - float(np.sum(integrated))
        scale = abs(time_term) + abs(init_term) + float(np.sum(np.abs(integrated)))
        return resid, scale

    if test.kind == "cosine":
        (rn, sn), (rc, sc) = assemble(first), assemble(second)
        return WeakResidual(rn, rc, 0.0, sn, sc, 0.0)
    ru, su = assemble(first)
    return WeakResidual(0.0, 0.0, ru, 0.0, 0.0, su)


# --- blow-up indicator -----------------------------------------------------


@dataclass
class BlowupResult:
    kind: str  # "bounded" | "growing" | "dt_collapse"
    rate: float = 0.0
    growth: float = 1.0


def plateau(times, values, ratio: float = 1.2) -> bool:
    """``max`` over the second half of the time span is at most ``ratio``
    times the ``max`` over the first half."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    mid = 0.5 * (t[0] + t[-1])
    first = v[t <= mid]
    second = v[t >= mid]
    return bool(np.max(second) <= ratio * np.max(first))


def blowup_indicator(records, terminated_by_step_error: bool = False, ratio: float = 1.2,
                     key: str = "n_linf") -> BlowupResult:
    t = np.array([r.t for r in records])
    v = np.array([getattr(r, key) for r in records])
    growth = float(np.max(v) / v[0]) if len(v) and v[0] > 0 else float("inf")
    if terminated_by_step_error:
        return BlowupResult("dt_collapse", growth=growth)
    if len(records) < 10:
        raise ConfigError(f"blowup_indicator needs >= 10 records, got {len(records)}")
    if plateau(t, v, ratio):
        return BlowupResult("bounded", growth=growth)
    pos = v > 0
    rate = float(np.polyfit(t[pos], np.log(v[pos]), 1)[0]) if pos.sum() >= 2 else float("inf")
    return BlowupResult("growing", rate=rate, growth=growth)
