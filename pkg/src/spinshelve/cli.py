"""Command-line entry point.

Exit codes: 0 success, 1 input or validation error, 2 usage error,
3 fit did not converge.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import pulseseq
from .config import available_presets, load_config
from .errors import SpinShelveError
from .experiments import (
    ExperimentReport,
    atomic_write,
    initialization_scan,
    odmr_scan,
    pl_recovery_scan,
    rabi_buffer_scan,
    simulate_timeline,
    t1_scan,
)
from .experiments.simulate import SimulationPlan, readout_histogram
from .fitting import MODELS, fit

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_NOCONV = 0, 1, 2, 3
EXPERIMENTS = ("pl-recovery", "init-time", "rabi-buffer", "t1", "odmr-spectrum")
PROTOCOL_FILES = {
    "fig2": "pl_recovery", "fig3": "init_time", "fig4a": "rabi_buffer", "fig4c": "t1", "odmr": "cw_odmr",
}

log = logging.getLogger("spinshelve")


class UsageError(Exception):
    pass


def _parse_bindings(extra: list[str]) -> dict[str, str]:
    """Turn leftover ``--name value`` / ``--name=value`` pairs into bindings."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise UsageError(f"unexpected argument {tok!r}")
        if "=" in tok:
            name, value = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            name, value = tok[2:], extra[i + 1]
            i += 2
        out[name] = value
    return out


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _floats(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = [float(pulseseq._parse_binding(p)) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"range must be start:stop:step with step > 0, got {text!r}")
        a, b, s = parts
        n = int(np.floor((b - a) / s + 1e-9)) + 1
        return [a + i * s for i in range(n)]
    return [float(pulseseq._parse_binding(p)) for p in text.split(",") if p.strip()]


def _config(args):
    overrides = _parse_sets(getattr(args, "set", None))
    cfg = load_config(args.preset, overrides)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "noise", False):
        changes["noise"] = True
    if getattr(args, "dt", None) is not None:
        changes["dt_sample"] = args.dt
    if getattr(args, "bin_width", None) is not None:
        changes["bin_width"] = args.bin_width
    if getattr(args, "window", None):
        w = _floats(args.window.replace(":", ","))
        if len(w) != 2:
            raise UsageError("--window expects start:end")
        changes["window"] = (w[0], w[1])
    return cfg.replace(**changes) if changes else cfg


def _read_pseq(path: str) -> pulseseq.SequenceSpec:
    p = Path(path)
    if not p.is_file() and path in PROTOCOL_FILES:
        return pulseseq.parse(pulseseq.PROTOCOLS[PROTOCOL_FILES[path]])
    if not p.is_file() and path in pulseseq.PROTOCOLS:
        return pulseseq.parse(pulseseq.PROTOCOLS[path])
    try:
        text = p.read_text()
    except OSError as exc:
        raise SpinShelveError(f"cannot read sequence file {path}: {exc.strerror or exc}") from None
    return pulseseq.parse(text)


def _write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _sidecar(outdir: Path, started: datetime, command: str) -> None:
    meta = {"command": command, "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat()}
    _write_json(outdir / "run.meta.json", meta)


# ---------------------------------------------------------------- commands

def cmd_simulate(args, extra) -> int:
    started = datetime.now(timezone.utc)
    bindings = _parse_bindings(extra)
    cfg = _config(args)
    spec = _read_pseq(args.pseq)
    tl = pulseseq.compile(spec, bindings, args.resolution)
    traj = simulate_timeline(cfg, tl, use_mw=not args.no_mw)
    out = Path(args.out)
    atomic_write(out / "trajectory.csv", traj.to_csv())
    plan = SimulationPlan.from_timeline(tl, cfg.mw_advances_time)
    meta = {
        "config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed,
        "bindings": {k: float(pulseseq._parse_binding(v)) for k, v in bindings.items()},
        "timeline": json.loads(tl.to_json()), "sim_laser_edges": [list(e) for e in plan.laser_edges],
        "clamped_samples": traj.clamped,
    }
    ons = plan.laser_on_edges()
    if ons and ons[-1] < plan.duration:
        ro = ons[-1]
        hist = readout_histogram(cfg, traj, ro, plan.duration - ro)
        atomic_write(out / "readout_histogram.csv", hist.to_csv())
    _write_json(out / "metadata.json", meta)
    _sidecar(out, started, "simulate")
    print(f"wrote {out / 'trajectory.csv'} ({len(traj)} samples)")
    return EXIT_OK


def _summary_line(report: ExperimentReport) -> str:
    s = report.summary
    if report.protocol == "pl-recovery":
        per = ", ".join(f"{t:.2f}" if t is not None else "n/a" for t in s["t_is_ns"])
        mean = s["t_is_mean_ns"]
        return f"T_IS ≈ {mean:.1f} ns (per power: {per} ns)" if mean is not None else "T_IS: fit unavailable"
    if report.protocol == "init-time":
        a = s["a"]
        return (f"exponent a ≈ {a:.2f}, t0 = {s['t0_ns']:.2f} ns, t95(k_exp) = {s['t95_k_exp_ns']:.1f} ns"
                if a is not None else "power law: fit unavailable")
    if report.protocol == "rabi-buffer":
        t = s["t_buffer_ns"]
        return (f"amplitude time constant ≈ {t:.1f} ns, Rabi period {s['rabi_period_ns']:.1f} ns, "
                f"T2rho {s['t2rho_ns']:.1f} ns") if t is not None else "amplitude fit unavailable"
    if report.protocol == "t1":
        ts, tl = s["t_short_ns"], s["t_long_ns"]
        short = f"{ts:.1f} ns" if ts is not None else s["notes"]["short"]
        long = f"{tl / 1000:.2f} us" if tl is not None else s["notes"]["long"]
        return f"short-range constant {short}, T1 {long}, pi pulse {s['t_pi_ns']:.1f} ns"
    c = s["group_centers_ghz"]
    return "dip groups at " + ", ".join(f"{x:.3f}" for x in c) + " GHz"


GNUPLOT = """\
set datafile separator ','
set key autotitle columnhead
{body}
"""


def _gnuplot(report: ExperimentReport) -> str:
    lines = []
    for name, table in report.tables.items():
        stem = name.rsplit(".", 1)[0]
        ncol = len(table["columns"])
        logx = "set logscale x\n" if report.protocol in ("init-time", "t1") else "unset logscale x\n"
        plots = ", ".join(f"'{name}' using 1:{i} with linespoints" for i in range(2, ncol + 1))
        lines.append(f"set terminal pngcairo\nset output '{stem}.png'\n{logx}plot {plots}")
    return GNUPLOT.format(body="\n".join(lines))


def cmd_experiment(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    started = datetime.now(timezone.utc)
    cfg = _config(args)
    name = args.name
    grid = _floats(args.grid) if args.grid else None
    jobs = args.jobs
    if name == "pl-recovery":
        levels = _floats(args.levels) if args.levels else None
        rep = pl_recovery_scan(cfg, grid or pulseseq.parse(pulseseq.PROTOCOLS["pl_recovery"]).sweep("tau").values(),
                               levels, jobs=jobs)
        main = [f for f in rep.fits.values()]
    elif name == "init-time":
        rep = initialization_scan(cfg, grid, jobs=jobs) if grid else initialization_scan(cfg, jobs=jobs)
        main = [rep.fits["power_law"]]
    elif name == "rabi-buffer":
        kw = {"normalization": args.normalization, "jobs": jobs}
        if grid:
            kw["buffers"] = grid
        if args.mw:
            kw["mw_durations"] = _floats(args.mw)
        rep = rabi_buffer_scan(cfg, **kw)
        main = [rep.fits["amp_recovery"]]
    elif name == "t1":
        kw = {"normalization": args.normalization, "jobs": jobs}
        if grid:
            kw["taus"] = grid
        rep = t1_scan(cfg, **kw)
        main = [f for k, f in rep.fits.items() if f is not None]
    else:
        kw = {}
        for key in ("b_field", "linewidth", "depth"):
            if getattr(args, key) is not None:
                kw[key] = getattr(args, key)
        if grid:
            kw["f_grid"] = grid
        rep = odmr_scan(cfg, **kw)
        main = []
    out = Path(args.out)
    rep.write(out)
    if args.gnuplot:
        atomic_write(out / "plot.gp", _gnuplot(rep))
    _sidecar(out, started, f"experiment {name}")
    print(_summary_line(rep))
    if any(f is None or not f.converged for f in main):
        print("warning: a fit did not converge; results are not authoritative", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def _read_xy(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpinShelveError(f"cannot read {path}: {exc.strerror or exc}") from None
    rows = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            if not rows and lineno == 1:
                continue  # header
            raise SpinShelveError(f"{path}: malformed row {lineno}: {','.join(row)!r}") from None
        if len(vals) not in (2, 3):
            raise SpinShelveError(f"{path}: row {lineno} has {len(vals)} columns, expected 2 or 3")
        if rows and len(vals) != len(rows[0]):
            raise SpinShelveError(f"{path}: row {lineno} has {len(vals)} columns, expected {len(rows[0])}")
        rows.append(vals)
    if not rows:
        raise SpinShelveError(f"{path}: no data rows")
    data = np.array(rows)
    return data[:, 0], data[:, 1], (data[:, 2] if data.shape[1] == 3 else None)


def cmd_fit(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    if args.model not in MODELS:
        raise UsageError(f"unknown model {args.model!r}; choose from {', '.join(MODELS)}")
    x, y, sigma = _read_xy(args.csv)
    res = fit(args.model, x, y, sigma)
    text = res.to_json() + "\n"
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".fit.json")
    atomic_write(out, text)
    sys.stdout.write(text)
    return EXIT_OK if res.converged else EXIT_NOCONV


def cmd_compile(args, extra) -> int:
    bindings = _parse_bindings(extra)
    spec = _read_pseq(args.pseq)
    if args.sweep:
        if "=" not in args.sweep:
            raise UsageError("--sweep expects name=start:stop:step")
        var, rng = args.sweep.split("=", 1)
        values = _floats(rng)
        if var not in {s.name for s in spec.sweeps}:
            # allow sweeping any bound variable, not only declared sweeps
            results = [({**bindings, var: v}, pulseseq.compile(spec, {**bindings, var: v}, args.resolution))
                       for v in values]
        else:
            results = pulseseq.expand_sweep(spec, var, values, bindings, args.resolution)
        out = Path(args.out or "timelines")
        for b, tl in results:
            atomic_write(out / f"timeline_{var}={b[var]:g}ns.json", tl.to_json() + "\n")
        print(f"wrote {len(results)} timelines to {out}")
        return EXIT_OK
    tl = pulseseq.compile(spec, bindings, args.resolution)
    text = tl.to_json() + "\n"
    if args.out:
        atomic_write(Path(args.out), text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinshelve", description="Five-level spin shelving simulations and analysis.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--preset", default="room_temperature",
                        help=f"preset name or path (available: {', '.join(available_presets())})")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        sp.add_argument("--seed", type=int, help="base RNG seed (default from preset, 0)")
        sp.add_argument("--noise", action="store_true", help="Poisson shot noise on histograms")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--bin-width", type=float, help="histogram bin width in ns")
        sp.add_argument("--window", help="read-out window start:end in ns")

    s = sub.add_parser("simulate", help="simulate one pulse sequence; unknown --name value pairs bind variables")
    common(s)
    s.add_argument("--pseq", required=True, help="sequence file or protocol name (fig2, fig3, fig4a, fig4c, odmr)")
    s.add_argument("--dt", type=float, help="output sampling step in ns")
    s.add_argument("--resolution", type=float, default=1.0, help="timeline grid in ns")
    s.add_argument("--no-mw", action="store_true", help="skip microwave population maps")
    s.set_defaults(func=cmd_simulate, out_default="out")

    e = sub.add_parser("experiment", help="run a measurement protocol")
    e.add_argument("name", choices=EXPERIMENTS)
    common(e)
    e.add_argument("--grid", help="main sweep as start:stop:step or comma list")
    e.add_argument("--levels", help="pl-recovery excitation rates (s^-1), comma list")
    e.add_argument("--mw", help="rabi-buffer MW pulse lengths")
    e.add_argument("--normalization", choices=("reference", "steady"), default="reference",
                   help="contrast denominator for rabi-buffer and t1")
    e.add_argument("--b-field", type=float, dest="b_field", help="odmr-spectrum field in mT")
    e.add_argument("--linewidth", type=float, help="odmr-spectrum line FWHM in MHz")
    e.add_argument("--depth", type=float, help="odmr-spectrum dip depth")
    e.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    e.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    e.set_defaults(func=cmd_experiment, out_default=None)

    f = sub.add_parser("fit", help="fit a model to a CSV of x, y[, sigma]")
    f.add_argument("model", help=f"one of: {', '.join(MODELS)}")
    f.add_argument("csv")
    f.add_argument("--out", help="result JSON path (default: CSV path with suffix .fit.json)")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("compile", help="compile a .pseq file to timeline JSON")
    c.add_argument("pseq")
    c.add_argument("--sweep", help="name=start:stop:step, one JSON file per value")
    c.add_argument("--resolution", type=float, default=1.0)
    c.add_argument("--out", help="output file (or directory with --sweep)")
    c.set_defaults(func=cmd_compile)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "simulate" and args.out is None:
        args.out = "out"
    if args.command == "experiment" and args.out is None:
        args.out = f"out/{args.name}"
    try:
        return args.func(args, extra)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spinshelve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpinShelveError, ValueError, OSError) as exc:
        print(f"spinshelve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
