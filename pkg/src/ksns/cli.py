"""Command line entry point: ``ksns run|sweep|verify <config>`` and
``ksns gronwall``.

Exit codes: 0 ok, 1 invariant failure, 2 config error, 3 solver error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ksns import config as cfgmod
from ksns.diagnostics import gronwall_bound
from ksns.errors import ConfigError, KSNSError, SolverError
from ksns.stepper import run

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

REPORT_COLUMNS = ("m", "eps", "termination", "max_n_linf", "max_F_key", "indicator", "growth", "failures", "error")


@dataclass
class SweepRow:
    m: float
    eps: float
    termination: str = ""
    max_n_linf: float = float("nan")
    max_F_key: float = float("nan")
    indicator: str = ""
    growth: float = float("nan")
    failures: tuple = ()
    error: str = ""
    final: dict | None = field(default=None, repr=False)  # final n, c, ux, uy arrays and h

    def values(self):
        return (self.m, self.eps, self.termination, self.max_n_linf, self.max_F_key, self.indicator,
                self.growth, ";".join(self.failures), self.error)


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)
    # m -> {"n": [...], "c": [...], "u": [...]} successive-difference ratios along the eps series
    cauchy: dict = field(default_factory=dict)

    @property
    def failures(self) -> list[str]:
        out = []
        for r in self.rows:
            tag = f"m={r.m:g} eps={r.eps:g}"
            out += [f"{tag}: {f}" for f in r.failures]
            if r.error:
                out.append(f"{tag}: error: {r.error}")
        return out


def _run_child(child: cfgmod.SimConfig, quiet: bool = True) -> SweepRow:
    m, eps = child.options.get("m"), child.options.get("eps")
    row = SweepRow(m, eps)
    try:
        res = run(child, quiet=quiet)
    except KSNSError as e:
        row.termination = "error"
        row.error = f"{type(e).__name__}: {e}"
        return row
    row.termination = res.termination
    row.max_n_linf = max(r.n_linf for r in res.records)
    row.max_F_key = max(r.F_key for r in res.records)
    if res.indicator is not None:
        row.indicator = res.indicator.kind
        row.growth = res.indicator.growth
    row.failures = tuple(res.failures)
    st = res.state
    row.final = {"t": st.t, "h": st.n.grid.h, "mask": st.n.grid.mask, "n": st.n.values, "c": st.c.values,
                 "ux": st.u.ux, "uy": st.u.uy}
    return row


def _l2_diff(a: dict, b: dict, key: str) -> float:
    h2 = a["h"] ** 2
    if key == "u":
        return math.sqrt(h2 * (np.sum((a["ux"] - b["ux"]) ** 2) + np.sum((a["uy"] - b["uy"]) ** 2)))
    d = (a[key] - b[key])[a["mask"]]
    return math.sqrt(h2 * float(np.sum(d * d)))


def cauchy_ratios(finals: list[dict]) -> dict:
    """``|X_{j+1} - X_j| / |X_j - X_{j-1}|`` along a sequence of final states."""
    out = {}
    for key in ("n", "c", "u"):
        diffs = [_l2_diff(finals[j + 1], finals[j], key) for j in range(len(finals) - 1)]
        out[key] = [diffs[j + 1] / diffs[j] if diffs[j] > 0 else float("inf") for j in range(len(diffs) - 1)]
    return out


def max_workers() -> int:
    env = os.environ.get("KSNS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"KSNS_THREADS must be an integer, got {env!r}", key="KSNS_THREADS") from None
    return os.cpu_count() or 1


def run_sweep(cfg: cfgmod.SimConfig, quiet: bool = True) -> SweepReport:
    """Run every ``(m, eps)`` child; failures are recorded per row."""
    children = [c for _, _, c in cfg.children()]
    workers = min(max_workers(), len(children))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_child, children, [quiet] * len(children)))
    else:
        rows = [_run_child(c, quiet) for c in children]
    report = SweepReport(rows)
    if cfg.sweep_eps is not None and len(cfg.sweep_eps) >= 3:
        for m in sorted({r.m for r in rows}):
            series = sorted((r for r in rows if r.m == m), key=lambda r: -r.eps)
            if all(r.final is not None for r in series):
                report.cauchy[m] = cauchy_ratios([r.final for r in series])
    return report


def format_table(report: SweepReport) -> str:
    head = f"{'m':>6} {'eps':>8} {'termination':>22} {'max|n|inf':>12} {'max F_key':>12} {'indicator':>12}"
    lines = [head, "-" * len(head)]
    for r in report.rows:
        lines.append(f"{r.m:>6g} {r.eps:>8g} {r.termination:>22} {r.max_n_linf:>12.5g} "
                     f"{r.max_F_key:>12.5g} {r.indicator:>12}")
    for m, ratios in sorted(report.cauchy.items()):
        for key in ("n", "c", "u"):
            vals = ", ".join(f"{v:.4g}" for v in ratios[key])
            lines.append(f"cauchy m={m:g} {key}: {vals}")
    fails = report.failures
    lines.append("invariants: " + ("all passed" if not fails else f"{len(fails)} failure(s)"))
    lines += [f"  FAIL {f}" for f in fails]
    return "\n".join(lines) + "\n"


def emit_report(report: SweepReport, out_dir: str) -> int:
    """Write ``sweep.csv`` and ``sweep.txt``; returns the exit status."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in report.rows:
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r.values()])
        if report.cauchy:
            with open(os.path.join(out_dir, "cauchy.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("m", "field", "index", "ratio"))
                for m, ratios in sorted(report.cauchy.items()):
                    for key in ("n", "c", "u"):
                        for j, v in enumerate(ratios[key]):
                            w.writerow((f"{m:.17g}", key, j, f"{v:.17g}"))
        with open(os.path.join(out_dir, "sweep.txt"), "w") as fh:
            fh.write(format_table(report))
    except OSError as e:
        raise OSError(f"cannot write report to {out_dir}: {e}") from e
    return EXIT_OK if not report.failures else EXIT_INVARIANT


def _summary(res) -> str:
    last = res.records[-1]
    ind = res.indicator.kind if res.indicator is not None else "n/a"
    return (f"termination={res.termination} t={last.t:.6g} steps={last.step} indicator={ind} "
            f"max|n|inf={max(r.n_linf for r in res.records):.6g}")


def cmd_run(path: str) -> int:
    cfg = cfgmod.parse_config(path)
    if cfg.has_sweep:
        return cmd_sweep(path, cfg)
    res = run(cfg)
    print(_summary(res))
    for f in res.failures:
        print(f"FAIL {f}")
    return EXIT_OK if res.ok else EXIT_INVARIANT


def cmd_sweep(path: str, cfg=None) -> int:
    cfg = cfg or cfgmod.parse_config(path)
    report = run_sweep(cfg, quiet=False)
    status = emit_report(report, cfg.output_dir)
    print(format_table(report), end="")
    return status


def cmd_verify(path: str) -> int:
    """Run with every invariant suite enabled and no snapshots; print one
    pass/fail line per suite."""
    cfg = cfgmod.parse_config(path)
    cfg = replace(cfg, verify=cfgmod.SUITES, snapshot_interval=None)
    children = [c for _, _, c in cfg.children()] if cfg.has_sweep else [cfg]
    failed = False
    for child in children:
        res = run(child, quiet=True)
        tag = f"{child.scenario} m={child.options.get('m', '-')} eps={child.options.get('eps', '-')}"
        for suite in cfgmod.SUITES:
            bad = [f for f in res.failures if f.startswith(suite + ":")]
            print(f"{'FAIL' if bad else 'PASS'} {tag} {suite}" + (f" ({bad[0]})" if bad else ""))
            failed |= bool(bad)
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_gronwall(y0: float, A: float, B: float, sigma: float) -> int:
    print(repr(gronwall_bound(y0, A, B, sigma)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksns", description="Keller-Segel-Navier-Stokes simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run one simulation (or the sweep, if configured)"),
                       ("sweep", "run the configured (m, eps) sweep"),
                       ("verify", "run with all invariant suites and report pass/fail")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config")
    g = sub.add_parser("gronwall", help="print the Gronwall-type bound max{y0+B, B/(A sigma)+2B}")
    for arg in ("--y0", "--A", "--B", "--sigma"):
        g.add_argument(arg, type=float, required=True)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.verbose:
        import logging

        logging.basicConfig(level=logging.DEBUG)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "sweep":
            return cmd_sweep(args.config)
        if args.command == "verify":
            return cmd_verify(args.config)
        return cmd_gronwall(args.y0, args.A, args.B, args.sigma)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
