"""Line-oriented run configuration.

Each non-blank line is ``section.key = value`` (or bare ``scenario = ...``);
values are Python literals, with ``true``/``false`` accepted for booleans.
``#`` starts a comment. Sections:

``scenario``  preset name (``scenario = "bounded_m15"``) and preset options
              (``scenario.M = 20``).
``grid``      ``nx ny Lx Ly mask``, forwarded to the preset.
``model``     ``m eps kappa C_S chi yosida_eps magnitude_cutoff
              boundary_cutoff_width g density_cutoff``, forwarded to the preset.
``step``      ``dt cfl dt_min dt_max scheme adaptive growth signal_first``.
``run``       ``T``.
``output``    ``dir record_interval snapshot_interval``.
``sweep``     ``m eps`` (lists).
``verify``    ``suites`` (list of invariant suite names).
"""

from __future__ import annotations

import ast
import math
import os
from dataclasses import dataclass, field, replace

from ksns import scenarios
from ksns.errors import ConfigError
from ksns.stepper import StepControl

GRID_KEYS = ("nx", "ny", "Lx", "Ly", "mask")
MODEL_KEYS = ("m", "eps", "kappa", "C_S", "chi", "yosida_eps", "magnitude_cutoff", "boundary_cutoff_width", "g",
              "density_cutoff")
SUITES = ("positivity", "divergence", "mass", "c_mass", "truncation", "finite")
DEFAULT_SUITES = SUITES

# key -> (accepted types, default)
_NUM = (int, float)
SCHEMA = {
    "step.dt": (_NUM, 1e-3),
    "step.cfl": (_NUM, 0.5),
    "step.dt_min": (_NUM, 1e-7),
    "step.dt_max": (_NUM, 1e-2),
    "step.scheme": ((str,), "imex_euler"),
    "step.adaptive": ((bool,), True),
    "step.growth": (_NUM, 1.5),
    "step.signal_first": ((bool,), True),
    "run.T": (_NUM, None),
    "output.dir": ((str,), "ksns_out"),
    "output.record_interval": (_NUM, 0.01),
    "output.snapshot_interval": (_NUM + (type(None),), None),
    "sweep.m": ((list, tuple), None),
    "sweep.eps": ((list, tuple), None),
    "verify.suites": ((list, tuple), DEFAULT_SUITES),
}


@dataclass
class SimConfig:
    scenario: str = "homogeneous"
    options: dict = field(default_factory=dict)  # preset overrides
    step: StepControl = field(default_factory=StepControl)
    T: float = 1.0
    output_dir: str = "ksns_out"
    record_interval: float = 0.01
    snapshot_interval: float | None = None
    sweep_m: tuple | None = None
    sweep_eps: tuple | None = None
    verify: tuple = DEFAULT_SUITES

    @property
    def has_sweep(self) -> bool:
        return self.sweep_m is not None or self.sweep_eps is not None

    def build_scenario(self):
        return scenarios.build(self.scenario, **self.options)

    def children(self) -> list[tuple[float, float, "SimConfig"]]:
        """One config per ``(m, eps)`` pair of the sweep."""
        base = scenarios.options(self.scenario, self.options)
        ms = self.sweep_m if self.sweep_m is not None else (base["m"],)
        es = self.sweep_eps if self.sweep_eps is not None else (base["eps"],)
        out = []
        for m in ms:
            for e in es:
                opts = dict(self.options, m=m, eps=e)
                sub = os.path.join(self.output_dir, f"m{m:g}_eps{e:g}")
                out.append((m, e, replace(self, options=opts, output_dir=sub, sweep_m=None, sweep_eps=None)))
        return out


def _literal(text: str):
    low = text.strip()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    return ast.literal_eval(low)


def _typename(types):
    return "/".join(t.__name__ for t in types)


def _check_type(key, value, types, line):
    # bool is an int subclass; refuse it for numeric keys
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{key} expects {_typename(types)}, got bool", key=key, line=line)
    if not isinstance(value, types):
        raise ConfigError(f"{key} expects {_typename(types)}, got {type(value).__name__}", key=key, line=line)


def _freeze(v):
    return tuple(_freeze(x) for x in v) if isinstance(v, (list, tuple)) else v


def parse_text(text: str) -> SimConfig:
    values: dict = {}
    lines: dict = {}
    opts: dict = {}
    scenario = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=no)
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            value = _literal(val)
        except (ValueError, SyntaxError) as e:
            raise ConfigError(f"cannot parse value for {key}: {val!r}", key=key, line=no) from e
        lines[key] = no
        if key in ("scenario", "scenario.name"):
            if not isinstance(value, str):
                raise ConfigError("scenario expects a string", key=key, line=no)
            scenario = value
            continue
        section, _, name = key.partition(".")
        if section == "scenario" or (section == "grid" and name in GRID_KEYS) or \
                (section == "model" and name in MODEL_KEYS):
            opts[name] = (_freeze(value), no, key)
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key=key, line=no)
        types, _ = SCHEMA[key]
        _check_type(key, value, types, no)
        values[key] = _freeze(value)
    if scenario is None:
        raise ConfigError("no scenario given", key="scenario")

    name, inline = scenarios.parse_name(scenario)
    defaults = scenarios.options(name) if name in scenarios.PRESETS else None
    if defaults is None:
        raise ConfigError(f"unknown scenario {name!r}", key="scenario", line=lines.get("scenario"))
    merged = dict(inline)
    for k, (v, no, key) in opts.items():
        if k not in defaults:
            raise ConfigError(f"unknown key {key!r}", key=key, line=no)
        ref = defaults[k]
        if isinstance(ref, (int, float)) and not isinstance(ref, bool) and \
                (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"{key} expects a number, got {type(v).__name__}", key=key, line=no)
        merged[k] = v
    try:
        scenarios.validate(name, merged)
    except ConfigError as e:
        k = (e.key or "").split(".")[-1]
        src = next((key for kk, (_, _, key) in opts.items() if kk == k), None)
        raise ConfigError(str(e.args[0]), key=src or e.key, line=lines.get(src)) from e

    def get(key):
        return values.get(key, SCHEMA[key][1])

    T = get("run.T")
    if T is None:
        T = scenarios.options(name, merged)["T"]
    if T < 0:
        raise ConfigError("run.T must be >= 0", key="run.T", line=lines.get("run.T"))
    for key in ("output.record_interval", "output.snapshot_interval"):
        v = get(key)
        if v is not None and not v > 0:
            raise ConfigError(f"{key} must be > 0", key=key, line=lines.get(key))
    for key in ("sweep.m", "sweep.eps"):
        v = get(key)
        if v is not None:
            if len(v) == 0:
                raise ConfigError(f"{key} must be non-empty", key=key, line=lines.get(key))
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                raise ConfigError(f"{key} expects a list of numbers", key=key, line=lines.get(key))
            for x in v:
                try:
                    scenarios.validate(name, {**merged, key.split(".")[1]: x})
                except ConfigError as e:
                    raise ConfigError(str(e.args[0]), key=key, line=lines.get(key)) from e
    suites = tuple(get("verify.suites"))
    bad = [s for s in suites if s not in SUITES]
    if bad:
        raise ConfigError(f"unknown verify suite(s) {bad}; known: {', '.join(SUITES)}", key="verify.suites",
                          line=lines.get("verify.suites"))
    try:
        step = StepControl(dt=float(get("step.dt")), cfl_target=float(get("step.cfl")),
                           dt_min=float(get("step.dt_min")), dt_max=float(get("step.dt_max")),
                           scheme=get("step.scheme"), adaptive=get("step.adaptive"),
                           growth=float(get("step.growth")), signal_first=get("step.signal_first"))
    except ConfigError as e:
        k = {"step.cfl": "step.cfl", "step.dt": "step.dt", "step.scheme": "step.scheme"}.get(e.key, e.key)
        raise ConfigError(str(e.args[0]), key=k, line=lines.get(k)) from e
    return SimConfig(
        scenario=name, options=dict(sorted(merged.items())), step=step, T=float(T),
        output_dir=get("output.dir"), record_interval=float(get("output.record_interval")),
        snapshot_interval=None if get("output.snapshot_interval") is None else float(get("output.snapshot_interval")),
        sweep_m=None if get("sweep.m") is None else tuple(float(x) for x in get("sweep.m")),
        sweep_eps=None if get("sweep.eps") is None else tuple(float(x) for x in get("sweep.eps")),
        verify=suites,
    )


def _strip_comment(raw: str) -> str:
    """Drop everything from the first ``#`` outside a quoted string."""
    quote = None
    for i, ch in enumerate(raw):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return raw[:i]
    return raw


def format_config(cfg: SimConfig) -> str:
    """Canonical text form; ``parse_text(format_config(c)) == c``."""
    s = cfg.step
    out = [f"scenario = {cfg.scenario!r}"]
    for k, v in sorted(cfg.options.items()):
        sect = "grid" if k in GRID_KEYS else "model" if k in MODEL_KEYS else "scenario"
        out.append(f"{sect}.{k} = {_fmt(v)}")
    out += [
        f"step.dt = {s.dt!r}", f"step.cfl = {s.cfl_target!r}", f"step.dt_min = {s.dt_min!r}",
        f"step.dt_max = {s.dt_max!r}", f"step.scheme = {s.scheme!r}",
        f"step.adaptive = {'true' if s.adaptive else 'false'}", f"step.growth = {s.growth!r}",
        f"step.signal_first = {'true' if s.signal_first else 'false'}",
        f"run.T = {cfg.T!r}",
        f"output.dir = {cfg.output_dir!r}", f"output.record_interval = {cfg.record_interval!r}",
        f"output.snapshot_interval = {_fmt(cfg.snapshot_interval)}",
    ]
    if cfg.sweep_m is not None:
        out.append(f"sweep.m = {_fmt(list(cfg.sweep_m))}")
    if cfg.sweep_eps is not None:
        out.append(f"sweep.eps = {_fmt(list(cfg.sweep_eps))}")
    out.append(f"verify.suites = {_fmt(list(cfg.verify))}")
    return "\n".join(out) + "\n"


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) and not math.isfinite(v):
        raise ConfigError(f"non-finite value {v}")
    return repr(v)


def parse_config(path, echo: bool = True) -> SimConfig:
    """Parse a config file; with ``echo`` the resolved config is written to
    ``<output_dir>/config.resolved``."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = parse_text(text)
    if echo:
        write_resolved(cfg)
    return cfg


def write_resolved(cfg: SimConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "config.resolved")
    with open(path, "w") as fh:
        fh.write(format_config(cfg))
    return path
