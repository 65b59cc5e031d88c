"""Command-line front end.

    hsav run CONFIG [--set key=value ...] [--force] [--csv-fields] [--threads N]
    hsav validate CONFIG [--set key=value ...]
    hsav tableau S

Configs are INI files with the sections below. Relative output directories
are resolved against ``$HSAV_OUTPUT_ROOT`` (default: the working directory).
Exit codes: 0 success, 1 config error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import contextlib
import inspect
import json
import math
import operator
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .models import INITIAL_CONDITIONS, MODEL_BUILDERS, PRNG_ALGORITHM, double_well_min_c0, initial_condition
from .sav import RadicandError, energy, init_consistent
from .spectral import Grid2D, write_snapshot
from .stepper import MODES, Observer, SolverConfig, StepFailure, integrate, parse_method
from .tableau import MAX_STAGES, check_stability, format_tableau, gauss_tableau

OUTPUT_ROOT_ENV = "HSAV_OUTPUT_ROOT"
MANIFEST = "manifest.json"
FAILED_MANIFEST = "manifest.failed.json"
EXPERIMENTS = ("single", "refinement", "energy_sweep", "disk", "power_law")

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 1, 2, 3


class ConfigError(ValueError):
    pass


REQUIRED = object()

# section -> key -> (type, default)
SCHEMA = {
    "model": {"name": (str, REQUIRED)},
    "grid": {
        "Nx": (int, REQUIRED),
        "Ny": (int, REQUIRED),
        "Lx": ("real", 2 * math.pi),
        "Ly": ("real", 2 * math.pi),
        "x0": ("real", 0.0),
        "y0": ("real", 0.0),
    },
    "time": {"method": (str, REQUIRED), "dt": ("real", REQUIRED), "t_end": ("real", REQUIRED)},
    "solver": {
        "tolerance": ("real", 1e-12),
        "max_iterations": (int, 200),
        "mode": (str, "picard_preconditioned"),
    },
    "initial": {"kind": (str, REQUIRED), "seed": (int, 0)},
    "output": {"directory": (str, "out"), "snapshot_stride": (int, 0), "energy_stride": (int, 1)},
    "experiment": {
        "kind": (str, "single"),
        "methods": ("list", None),
        "dt_list": ("reallist", None),
        "reference": (str, "cauchy"),
        "norm": (str, "L2_h"),
        "window_lo": ("real", 10.0),
        "window_hi": ("real", None),
        "sample_every": ("real", 1.0),
        "fit_lo": ("real", 0.0),
        "fit_hi": ("real", None),
        "r0": ("real", 100.0),
    },
}

_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}


def _real(text: str) -> float:
    """Number or arithmetic expression in numbers and ``pi``."""

    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            return _BIN[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError(text)

    try:
        return ev(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError):
        raise ValueError(f"not a real number: {text!r}") from None


def _convert(kind, text):
    if kind is str:
        return text.strip()
    if kind is int:
        return int(text)
    if kind == "real":
        return _real(text)
    if kind == "list":
        return [t.strip() for t in text.split(",") if t.strip()]
    if kind == "reallist":
        return [_real(t) for t in text.split(",") if t.strip()]
    raise AssertionError(kind)


def _model_keys(name):
    cls = MODEL_BUILDERS[name][0]
    return {f.name for f in fields(cls)}


def _initial_keys(kind):
    sig = inspect.signature(INITIAL_CONDITIONS[kind])
    return set(list(sig.parameters)[1:])


def _resolve_key(key, raw):
    """``section.key`` or a bare key that names exactly one section."""
    if "." in key:
        sec, k = key.split(".", 1)
        return sec, k
    hits = [sec for sec, keys in SCHEMA.items() if key in keys]
    if not hits:
        # model parameters and initial-condition arguments live in their own sections
        name = raw.get("model", {}).get("name")
        if name in MODEL_BUILDERS and key in _model_keys(name):
            return "model", key
        kind = raw.get("initial", {}).get("kind")
        if kind in INITIAL_CONDITIONS and key in _initial_keys(kind):
            return "initial", key
        raise ConfigError(f"override key {key!r} is unknown; use section.key")
    if len(hits) > 1:
        raise ConfigError(f"override key {key!r} is ambiguous between sections {hits}; use section.key")
    return hits[0], key


def read_raw(path, overrides=()) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    raw = {sec: dict(cp[sec]) for sec in cp.sections()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        sec, k = _resolve_key(key.strip(), raw)
        raw.setdefault(sec, {})[k] = value.strip()
    return raw


def resolve(raw: dict) -> dict:
    """Typed, validated config; raises ConfigError naming the violation."""
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    cfg = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        out = {}
        for key, (kind, default) in keys.items():
            if key in given:
                try:
                    out[key] = _convert(kind, given[key])
                except ValueError as exc:
                    raise ConfigError(f"{sec}.{key}: {exc}") from None
            elif default is REQUIRED:
                raise ConfigError(f"missing required key {sec}.{key}")
            else:
                out[key] = default
        cfg[sec] = out

    name = cfg["model"]["name"]
    if name not in MODEL_BUILDERS:
        raise ConfigError(f"model.name: unknown model {name!r}; choose from {sorted(MODEL_BUILDERS)}")
    allowed = _model_keys(name)
    for key, value in raw.get("model", {}).items():
        if key == "name":
            continue
        if key not in allowed:
            raise ConfigError(f"model.{key}: unknown parameter for {name}; allowed {sorted(allowed)}")
        if key == "C0" and value.strip() == "auto":
            cfg["model"][key] = "auto"
            continue
        try:
            cfg["model"][key] = _real(value)
        except ValueError as exc:
            raise ConfigError(f"model.{key}: {exc}") from None

    kind = cfg["initial"]["kind"]
    if kind not in INITIAL_CONDITIONS:
        raise ConfigError(f"initial.kind: unknown initial condition {kind!r}; choose from {sorted(INITIAL_CONDITIONS)}")
    allowed = _initial_keys(kind)
    for key, value in raw.get("initial", {}).items():
        if key in SCHEMA["initial"]:
            continue
        if key not in allowed:
            raise ConfigError(f"initial.{key}: unknown argument for {kind}; allowed {sorted(allowed)}")
        try:
            cfg["initial"][key] = _real(value)
        except ValueError as exc:
            raise ConfigError(f"initial.{key}: {exc}") from None

    for sec, keys in SCHEMA.items():
        if sec in ("model", "initial"):
            continue
        extra = set(raw.get(sec, {})) - set(keys)
        if extra:
            raise ConfigError(f"unknown key(s) in [{sec}]: {sorted(extra)}")

    _check_values(cfg)
    return cfg


def _check_method(m, where):
    try:
        parse_method(m)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc} (Gauss tableaus exist for 1..{MAX_STAGES} stages)") from None


def _check_values(cfg):
    g, t, s, o, e = cfg["grid"], cfg["time"], cfg["solver"], cfg["output"], cfg["experiment"]
    try:
        Grid2D(g["Nx"], g["Ny"], g["Lx"], g["Ly"], g["x0"], g["y0"])
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    if not t["dt"] > 0:
        raise ConfigError(f"time.dt must be positive, got {t['dt']:g}")
    if not t["t_end"] >= 0:
        raise ConfigError(f"time.t_end must be nonnegative, got {t['t_end']:g}")
    _check_method(t["method"], "time.method")
    for m in e["methods"] or []:
        _check_method(m, "experiment.methods")
    if not s["tolerance"] > 0:
        raise ConfigError("solver.tolerance must be positive")
    if s["max_iterations"] < 1:
        raise ConfigError("solver.max_iterations must be >= 1")
    if s["mode"] not in MODES:
        raise ConfigError(f"solver.mode: unknown mode {s['mode']!r}; choose from {MODES}")
    if o["snapshot_stride"] < 0 or o["energy_stride"] < 1:
        raise ConfigError("output strides: snapshot_stride >= 0 and energy_stride >= 1 required")
    if e["kind"] not in EXPERIMENTS:
        raise ConfigError(f"experiment.kind: unknown experiment {e['kind']!r}; choose from {EXPERIMENTS}")
    if e["dt_list"] is not None and any(not d > 0 for d in e["dt_list"]):
        raise ConfigError("experiment.dt_list entries must be positive")
    if e["kind"] == "refinement" and (e["dt_list"] is None or len(e["dt_list"]) < 2):
        raise ConfigError("experiment.dt_list needs at least two entries for a refinement study")


def dump(cfg: dict) -> str:
    lines = []
    for sec, vals in cfg.items():
        lines.append(f"[{sec}]")
        for k, v in vals.items():
            if v is None:
                continue
            if isinstance(v, list):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


# -- construction from a resolved config ---------------------------------------------

def build(cfg):
    g = cfg["grid"]
    grid = Grid2D(g["Nx"], g["Ny"], g["Lx"], g["Ly"], g["x0"], g["y0"])
    name = cfg["model"]["name"]
    params = {k: v for k, v in cfg["model"].items() if k != "name"}
    cls, builder = MODEL_BUILDERS[name]
    if params.get("C0") == "auto":
        gamma0 = params.get("gamma0", cls().gamma0)
        params["C0"] = double_well_min_c0(grid, gamma0) if name != "mbe" else 1.0
    try:
        model = builder(cls(**params), grid)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None
    ic = {k: v for k, v in cfg["initial"].items() if k != "kind"}
    kind = cfg["initial"]["kind"]
    if "seed" not in _initial_keys(kind):
        ic.pop("seed")
    else:
        ic["seed"] = int(ic["seed"])
    phi0 = initial_condition(kind, grid, **ic)
    s = cfg["solver"]
    solver = SolverConfig(s["tolerance"], s["max_iterations"], s["mode"])
    return grid, model, phi0, solver


# -- run ----------------------------------------------------------------------------

class _Outputs:
    def __init__(self, directory: Path):
        self.dir = directory
        self.files = []

    def path(self, name) -> Path:
        return self.dir / name

    def add(self, name):
        p = self.dir / name
        self.files.append({"name": name, "bytes": p.stat().st_size})


def _atomic_json(path: Path, obj):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def output_dir(cfg) -> Path:
    d = Path(cfg["output"]["directory"])
    if not d.is_absolute():
        d = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / d
    return d


def _prepare_dir(d: Path, force: bool):
    existing = [d / n for n in (MANIFEST, FAILED_MANIFEST) if (d / n).exists()]
    if existing and not force:
        raise FileExistsError(f"{d} already holds a run ({existing[0].name}); pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    for p in existing:
        p.unlink()


def _seed(cfg):
    return cfg["initial"].get("seed", 0)


def _tag(method, dt):
    return f"{method}_dt{dt:g}"


def run_experiment(cfg, out: _Outputs, csv_fields=False, threads=1) -> dict:
    from . import harness, plotting

    grid, model, phi0, solver = build(cfg)
    state0 = init_consistent(phi0, model)
    header = harness.manifest_comment(cfg, _seed(cfg))
    t, e = cfg["time"], cfg["experiment"]
    methods = e["methods"] or [t["method"]]
    dts = e["dt_list"] or [t["dt"]]
    kind = e["kind"]
    results = {"experiment": kind}

    if kind == "single":
        rec = harness._EnergyRecorder(model)
        obs = [Observer(rec, cfg["output"]["energy_stride"])]
        stride = cfg["output"]["snapshot_stride"]
        if stride:
            def snap(step, tt, state, report):
                name = f"phi_{step:06d}.bin"
                write_snapshot(out.path(name), state.phi)
                out.add(name)
                if csv_fields:
                    _write_field_csv(out, f"phi_{step:06d}.csv", state.phi)
            obs.append(Observer(snap, stride))
        failure = None
        final = None
        try:
            final = integrate(state0, model, t["method"], t["dt"], t["t_end"], obs, solver)
        except StepFailure as exc:
            failure = exc
        trace = rec.trace(parse_method_name(t["method"]), t["dt"], str(failure) if failure else None)
        harness.write_energy_csv(out.path("energy.csv"), trace, header)
        out.add("energy.csv")
        plotting.plot_energy([trace], out.path("energy.png"))
        out.add("energy.png")
        if failure:
            raise failure
        plotting.plot_field(final.phi.values, grid, out.path("phi_final.png"), f"t = {final.t:g}")
        out.add("phi_final.png")
        write_snapshot(out.path("phi_final.bin"), final.phi)
        out.add("phi_final.bin")
        if csv_fields:
            _write_field_csv(out, "phi_final.csv", final.phi)
        results.update(
            final_time=final.t,
            energy_monotone=trace.monotone(),
            max_rel_energy_increase=trace.max_increase(),
            final_energy=float(trace.modified[-1]),
        )
    elif kind == "refinement":
        tables = []
        for m in methods:
            tab = harness.refinement_study(
                model, state0, m, dts, t["t_end"], e["reference"], e["norm"], cfg=solver, threads=threads
            )
            tables.append(tab)
            name = "convergence.csv" if len(methods) == 1 else f"convergence_{tab.method}.csv"
            harness.write_convergence_csv(out.path(name), tab, header)
            out.add(name)
            results[tab.method] = [[r.dt, r.error, r.observed_order] for r in tab.rows]
        plotting.plot_convergence(tables, out.path("convergence.png"))
        out.add("convergence.png")
    elif kind == "energy_sweep":
        traces = harness.energy_sweep(model, state0, methods, dts, t["t_end"], solver, cfg["output"]["energy_stride"], threads)
        single = len(traces) == 1
        for tr in traces:
            name = "energy.csv" if single else f"energy_{_tag(tr.method, tr.dt)}.csv"
            harness.write_energy_csv(out.path(name), tr, header)
            out.add(name)
            results[_tag(tr.method, tr.dt)] = {
                "failure": tr.failure,
                "monotone": tr.monotone(),
                "max_rel_increase": tr.max_increase(),
            }
        plotting.plot_energy(traces, out.path("energy.png"))
        out.add("energy.png")
    elif kind == "disk":
        window = (e["fit_lo"], e["fit_hi"] if e["fit_hi"] is not None else np.inf)
        traces = []
        for m in methods:
            for dt in dts:
                tr = harness.disk_run(model, state0, m, dt, t["t_end"], solver, e["sample_every"], window)
                traces.append(tr)
        single = len(traces) == 1
        for tr in traces:
            name = "disk.csv" if single else f"disk_{_tag(tr.method, tr.dt)}.csv"
            harness.write_disk_csv(out.path(name), tr, header)
            out.add(name)
            results[_tag(tr.method, tr.dt)] = {
                "slope": tr.slope,
                "slope_rel_error": abs(tr.slope + 2 * np.pi) / (2 * np.pi),
                "failure": tr.failure,
            }
        plotting.plot_disk(traces, e["r0"], out.path("disk.png"))
        out.add("disk.png")
    elif kind == "power_law":
        hi = e["window_hi"] if e["window_hi"] is not None else t["t_end"]
        trace, fit = harness.power_law_study(
            model, state0, t["method"], t["dt"], t["t_end"], (e["window_lo"], hi), cfg=solver,
            stride=cfg["output"]["energy_stride"],
        )
        harness.write_energy_csv(out.path("energy.csv"), trace, header)
        out.add("energy.csv")
        plotting.plot_power_law(trace, fit, out.path("power_law.png"))
        out.add("power_law.png")
        results.update(slope=fit.slope, intercept=fit.intercept, window=list(fit.fit_window), residual=fit.residual)
    failures = [v for v in results.values() if isinstance(v, dict) and v.get("failure")]
    if failures:
        results["failed_runs"] = len(failures)
    return results


def parse_method_name(m):
    tab = parse_method(m)
    return "cn" if tab is None else f"gauss{tab.s}"


def _write_field_csv(out, name, phi):
    X, Y = phi.grid.mesh()
    with open(out.path(name), "w", newline="\n") as fh:
        fh.write("x,y,phi\n")
        for x, y, v in zip(X.ravel(), Y.ravel(), phi.values.ravel()):
            fh.write(f"{x!r},{y!r},{v!r}\n")
    out.add(name)


@contextlib.contextmanager
def _fft_workers(n):
    import scipy.fft

    with scipy.fft.set_workers(n):
        yield


def cmd_run(args) -> int:
    try:
        cfg = resolve(read_raw(args.config, args.set))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    d = output_dir(cfg)
    try:
        _prepare_dir(d, args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = _Outputs(d)
    manifest = {
        "config": cfg,
        "version": __version__,
        "prng": PRNG_ALGORITHM,
        "seed": _seed(cfg),
        "start": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    code, message = 0, None
    t0 = time.perf_counter()
    try:
        with _fft_workers(args.threads):
            manifest["results"] = run_experiment(cfg, out, args.csv_fields, args.threads)
    except ConfigError as exc:
        code, message = EXIT_CONFIG, f"config error: {exc}"
    except (StepFailure, RadicandError, FloatingPointError) as exc:
        code, message = EXIT_NUMERICAL, f"numerical failure: {exc}"
    except ValueError as exc:
        code, message = EXIT_CONFIG, f"config error: {exc}"
    except OSError as exc:
        code, message = EXIT_IO, f"I/O error: {exc}"
    manifest["end"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest["wall_seconds"] = round(time.perf_counter() - t0, 3)
    manifest["files"] = out.files
    if code == 0 and manifest["results"].get("failed_runs"):
        code, message = EXIT_NUMERICAL, f"numerical failure: {manifest['results']['failed_runs']} run(s) failed"
    if message:
        manifest["error"] = message
    try:
        _atomic_json(d / (FAILED_MANIFEST if code else MANIFEST), manifest)
    except OSError as exc:
        print(f"I/O error writing manifest: {exc}", file=sys.stderr)
        return EXIT_IO
    if message:
        print(message, file=sys.stderr)
    else:
        print(f"wrote {len(out.files)} file(s) to {d}")
    return code


def cmd_validate(args) -> int:
    try:
        cfg = resolve(read_raw(args.config, args.set))
        build(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("OK")
    print(dump(cfg))
    return 0


def describe_tableau(s: int) -> str:
    tab = gauss_tableau(s)
    rep = check_stability(tab)
    verdict = "algebraically stable" if rep.passes else "NOT algebraically stable"
    return (
        f"{s}-stage Gauss collocation (order {2 * s})\n{format_tableau(tab)}\n"
        f"stability residual max|b_i a_ij + b_j a_ji - b_i b_j| = {rep.max_residual:.3e}, "
        f"min b_i = {rep.min_weight:.17g}: {verdict}"
    )


def cmd_tableau(args) -> int:
    try:
        print(describe_tableau(args.stages))
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsav", description="Gauss-collocation SAV solvers for gradient flows")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configured experiment")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    r.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    r.add_argument("--csv-fields", action="store_true", help="also write field snapshots as node-listed CSV")
    r.add_argument("--threads", type=int, default=1, help="worker threads for FFTs and sweeps")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="check a config and print it resolved")
    v.add_argument("config")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    v.set_defaults(fn=cmd_validate)

    t = sub.add_parser("tableau", help="print a Gauss Butcher tableau and its stability report")
    t.add_argument("stages", type=int)
    t.set_defaults(fn=cmd_tableau)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
