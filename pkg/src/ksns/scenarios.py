"""Named initial-data presets.

``build("gaussian_bump(M=20, sigma_b=0.1)", nx=32)`` accepts keyword
arguments inside the name as well as overrides; both are validated
against the preset's parameter list.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field

import numpy as np

from ksns.errors import ConfigError
from ksns.grid import Grid, ScalarField, VectorField, make_grid
from ksns.linalg import PROJECTION_TOL, helmholtz_project
from ksns.model import ModelParams, Potential, SensitivityTensor
from ksns.ops import divergence

# shared by every preset; preset-specific keys are added below
COMMON = {
    "nx": 64, "ny": None, "Lx": 1.0, "Ly": 1.0, "mask": "full",
    "m": 1.5, "eps": 0.0, "kappa": 1.0, "C_S": 1.0, "chi": 1.0,
    "g": (0.0, -1.0), "yosida_eps": None, "magnitude_cutoff": None, "boundary_cutoff_width": None,
    "density_cutoff": False,
    "u_amp": 0.0, "noise": 0.0, "seed": 0, "T": 1.0,
}


@dataclass
class Scenario:
    name: str
    grid: Grid
    n0: ScalarField
    c0: ScalarField
    u0: VectorField
    params: ModelParams
    T: float
    seed: int = 0
    options: dict = field(default_factory=dict, repr=False)

    def check(self, tol: float = PROJECTION_TOL) -> None:
        """Assert nonnegative data and a discretely solenoidal ``u0``."""
        act = self.grid.mask
        if np.any(self.n0.values[act] < 0) or np.any(self.c0.values[act] < 0):
            raise ConfigError(f"scenario {self.name}: negative initial data")
        div = divergence(self.u0).values
        if np.max(np.abs(div[act])) > tol:
            raise ConfigError(f"scenario {self.name}: u0 divergence {np.max(np.abs(div)):.3e} above {tol}")


def gaussian(X, Y, mass, sigma, center):
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return mass / (2 * math.pi * sigma**2) * np.exp(-r2 / (2 * sigma**2))


def vortex(grid: Grid, amp: float) -> VectorField:
    """Projected curl of ``amp * sin^2(pi x/Lx) sin^2(pi y/Ly)`` on faces."""
    if amp == 0.0:
        return VectorField.zeros(grid)
    Lx, Ly = grid.Lx, grid.Ly

    def psi_dy(X, Y):
        return np.sin(np.pi * X / Lx) ** 2 * 2 * np.sin(np.pi * Y / Ly) * np.cos(np.pi * Y / Ly) * np.pi / Ly

    def psi_dx(X, Y):
        return 2 * np.sin(np.pi * X / Lx) * np.cos(np.pi * X / Lx) * np.pi / Lx * np.sin(np.pi * Y / Ly) ** 2

    X, Y = grid.xface_centers
    ux = amp * psi_dy(X, Y)
    X, Y = grid.yface_centers
    uy = -amp * psi_dx(X, Y)
    return helmholtz_project(VectorField(grid, ux, uy))[0]


def _sensitivity(o, kind="scalar_identity", **kw):
    # density_cutoff ties the large-density threshold to 1/eps
    cut = o["magnitude_cutoff"]
    if cut is None and o["density_cutoff"] and o["eps"] > 0:
        cut = 1.0 / o["eps"]
    return SensitivityTensor(kind, chi=o["chi"], boundary_cutoff_width=o["boundary_cutoff_width"],
                             magnitude_cutoff=cut, **kw)


def _params(o, sens):
    return ModelParams(m=o["m"], kappa=o["kappa"], C_S=o["C_S"], eps=o["eps"], sensitivity=sens,
                       phi=Potential("linear_gravity", tuple(o["g"])), yosida_eps=o["yosida_eps"])


def _n_bump(o):
    return lambda X, Y: gaussian(X, Y, o["M"], o["sigma_b"], o["center"])


def _homogeneous(o):
    nb = o["n_bar"]
    return (lambda X, Y: np.full_like(X, nb)), (lambda X, Y: np.full_like(X, nb)), _sensitivity(o)


def _gaussian_bump(o):
    return _n_bump(o), (lambda X, Y: np.full_like(X, o["c0"])), _sensitivity(o)


def _two_bumps(o):
    def n0(X, Y):
        return sum(gaussian(X, Y, o["M"] / 2, o["sigma_b"], c) for c in o["centers"])

    return n0, (lambda X, Y: np.full_like(X, o["c0"])), _sensitivity(o)


def _rotational(o):
    sens = _sensitivity({**o, "chi": o["C_S"]}, "rotation", theta=o["theta"])
    return _n_bump(o), (lambda X, Y: np.full_like(X, o["c0"])), sens


BUMP = {"M": 50.0, "sigma_b": 0.05, "center": (0.5, 0.5), "c0": 0.0}

PRESETS = {
    "homogeneous": (_homogeneous, {"n_bar": 1.0, "g": (0.0, 0.0)}),
    "gaussian_bump": (_gaussian_bump, dict(BUMP)),
    "two_bumps": (_two_bumps, {**BUMP, "M": 20.0, "sigma_b": 0.08, "centers": ((0.3, 0.35), (0.7, 0.6))}),
    "aggregation_m1": (_gaussian_bump, {**BUMP, "m": 1.0, "T": 0.05}),
    "bounded_m15": (_gaussian_bump, {**BUMP, "m": 1.5, "T": 5.0}),
    "rotational_flux": (_rotational, {**BUMP, "theta": math.pi / 2, "T": 5.0}),
    "nonconvex_L": (_gaussian_bump, {**BUMP, "mask": "l_shape", "center": (0.25, 0.25), "T": 5.0}),
}

_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?\s*$", re.S)


def parse_name(spec: str):
    """Split ``"name(k=v, ...)"`` into the name and a dict of literals."""
    mt = _CALL.match(spec)
    if not mt:
        raise ConfigError(f"malformed scenario {spec!r}", key="scenario")
    name, args = mt.group(1), mt.group(2)
    kw = {}
    if args and args.strip():
        try:
            call = ast.parse(f"f({args})", mode="eval").body
            if call.args:
                raise ValueError("positional arguments")
            kw = {k.arg: ast.literal_eval(k.value) for k in call.keywords}
        except (SyntaxError, ValueError) as e:
            raise ConfigError(f"bad scenario arguments in {spec!r}: {e}", key="scenario") from e
    return name, kw


def options(name: str, overrides: dict | None = None) -> dict:
    """Resolved options of a preset (defaults merged with overrides)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(PRESETS)}", key="scenario")
    _, extra = PRESETS[name]
    o = {**COMMON, **extra}
    for k, v in (overrides or {}).items():
        if k not in o:
            raise ConfigError(f"unknown option {k!r} for scenario {name!r}", key=f"scenario.{k}")
        o[k] = v
    if o["ny"] is None:
        o["ny"] = int(round(o["nx"] * o["Ly"] / o["Lx"]))
    return o


def validate(name: str, overrides: dict | None = None) -> ModelParams:
    """Check options and model parameters without materialising fields."""
    o = options(name, overrides)
    maker, _ = PRESETS[name]
    _, _, sens = maker(o)
    return _params(o, sens)


def build(spec, **overrides) -> Scenario:
    """Materialise a preset from a name, ``"name(k=v)"`` string or dict with ``name``."""
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("name")
        kw = spec
    else:
        name, kw = parse_name(spec)
    o = options(name, {**kw, **overrides})
    maker, _ = PRESETS[name]
    grid = make_grid(o["Lx"], o["Ly"], int(o["nx"]), int(o["ny"]), o["mask"])
    n_fn, c_fn, sens = maker(o)
    params = _params(o, sens)
    n0 = grid.cell_field(n_fn)
    c0 = grid.cell_field(c_fn)
    if o["noise"]:
        rng = np.random.default_rng(o["seed"])
        pert = 1.0 + o["noise"] * rng.uniform(-1.0, 1.0, grid.shape)
        n0 = n0.with_values(n0.values * pert)
    u0 = vortex(grid, o["u_amp"])
    sc = Scenario(name, grid, n0, c0, u0, params, float(o["T"]), int(o["seed"]), o)
    sc.check()
    return sc


def preset_names():
    return list(PRESETS)
