"""Experiment drivers: time refinement, energy sweeps, the Allen-Cahn disk
benchmark, coarsening power laws and an independent brute-force oracle."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .models import AllenCahnParams, allen_cahn, disk
from .sav import ModelSpec, SavState, energy, init_consistent
from .spectral import Field, Grid2D, forward, inverse
from .stepper import Observer, SolverConfig, StepFailure, integrate, method_name

NORMS = ("L2_h", "max")
REFERENCES = ("cauchy", "finest_dt", "analytic")


def norm_h(values: np.ndarray, grid: Grid2D, kind: str = "L2_h") -> float:
    if kind == "L2_h":
        return float(np.sqrt(grid.cell * np.sum(values * values)))
    if kind == "max":
        return float(np.max(np.abs(values)))
    raise ValueError(f"unknown norm {kind!r}; choose from {NORMS}")


# -- refinement ------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    error: float
    observed_order: Optional[float] = None


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple
    norm: str = "L2_h"
    reference: str = "cauchy"
    method: str = ""

    @property
    def dts(self) -> np.ndarray:
        return np.array([r.dt for r in self.rows])

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    @property
    def orders(self) -> np.ndarray:
        return np.array([np.nan if r.observed_order is None else r.observed_order for r in self.rows])

    def orders_above_floor(self, floor: float = 1e-12) -> np.ndarray:
        """Observed orders of the pairs whose finer error is still above
        ``floor``."""
        return np.array(
            [r.observed_order for r in self.rows[1:] if r.error > floor and r.observed_order is not None]
        )


def observed_orders(dts: Sequence[float], errors: Sequence[float]) -> list:
    out = [None]
    for i in range(1, len(dts)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(dts[i - 1] / dts[i]))
        else:
            out.append(None)
    return out


def _check_dt_list(dt_list, t_end):
    dts = [float(d) for d in dt_list]
    if len(dts) < 2:
        raise ValueError("refinement needs at least two time steps")
    if any(not d > 0 for d in dts):
        raise ValueError("time steps must be positive")
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError(f"dt_list must be strictly decreasing, got {dts}")
    for d in dts:
        n = t_end / d
        if abs(n - round(n)) > 1e-8 * max(1.0, n):
            raise ValueError(f"dt={d:g} does not divide t_end={t_end:g}")
    return dts


def final_state(state0, model, method, dt, t_end, cfg=SolverConfig()) -> SavState:
    return integrate(state0, model, method, dt, t_end, cfg=cfg)


def refinement_study(
    model: ModelSpec,
    state0: SavState,
    method,
    dt_list: Sequence[float],
    t_end: float,
    reference: str = "cauchy",
    norm: str = "L2_h",
    exact: Optional[Callable[[Grid2D, float], np.ndarray]] = None,
    cfg: SolverConfig = SolverConfig(),
    threads: int = 1,
) -> ConvergenceTable:
    """Errors at ``t_end`` under dt refinement.

    ``cauchy``: row i holds ``|u(dt_i) - u(dt_{i+1})|`` (the last dt only
    serves as a partner). ``finest_dt``: errors against the run with the
    last dt. ``analytic``: errors against ``exact(grid, t_end)``.
    """
    if reference not in REFERENCES:
        raise ValueError(f"unknown reference {reference!r}; choose from {REFERENCES}")
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}; choose from {NORMS}")
    if reference == "analytic" and exact is None:
        raise ValueError("analytic reference needs an exact solution")
    dts = _check_dt_list(dt_list, t_end - state0.t)

    def run(dt):
        try:
            return final_state(state0, model, method, dt, t_end, cfg).phi.values
        except StepFailure as exc:
            raise StepFailure(f"refinement run with dt={dt:g} failed: {exc}", exc.residual, exc.step, exc.t) from exc

    sols = _map(run, dts, threads)
    grid = model.grid
    if reference == "analytic":
        ref = exact(grid, t_end)
        row_dts, errs = dts, [norm_h(u - ref, grid, norm) for u in sols]
    elif reference == "finest_dt":
        row_dts, errs = dts[:-1], [norm_h(u - sols[-1], grid, norm) for u in sols[:-1]]
    else:
        row_dts = dts[:-1]
        errs = [norm_h(sols[i] - sols[i + 1], grid, norm) for i in range(len(dts) - 1)]
    orders = observed_orders(row_dts, errs)
    rows = tuple(ConvergenceRow(d, e, o) for d, e, o in zip(row_dts, errs, orders))
    return ConvergenceTable(rows, norm, reference, method_name(method))


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- energy traces ---------------------------------------------------------------

@dataclass
class EnergyTrace:
    method: str
    dt: float
    t: np.ndarray
    modified: np.ndarray
    raw: np.ndarray
    q: np.ndarray
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def max_increase(self) -> float:
        """Largest relative step increase ``(E_{n+1} - E_n) / (1 + |E_n|)``."""
        if self.modified.size < 2:
            return -np.inf
        return float(np.max(np.diff(self.modified) / (1 + np.abs(self.modified[:-1]))))

    def monotone(self, rel: float = 1e-10) -> bool:
        return self.max_increase() <= rel


class _EnergyRecorder:
    def __init__(self, model):
        self.model = model
        self.t, self.mod, self.raw, self.q = [], [], [], []

    def __call__(self, step, t, state, report):
        e = energy(state, self.model)
        self.t.append(t)
        self.mod.append(e.modified)
        self.raw.append(e.raw)
        self.q.append(state.q)

    def trace(self, method, dt, failure=None) -> EnergyTrace:
        a = np.asarray
        return EnergyTrace(method, dt, a(self.t), a(self.mod), a(self.raw), a(self.q), failure)


def energy_run(model, state0, method, dt, t_end, cfg=SolverConfig(), stride=1, extra_observers=()):
    rec = _EnergyRecorder(model)
    failure = None
    try:
        integrate(state0, model, method, dt, t_end, [Observer(rec, stride), *extra_observers], cfg)
    except StepFailure as exc:
        failure = str(exc)
    return rec.trace(method_name(method), float(dt), failure)


def energy_sweep(
    model: ModelSpec,
    state0: SavState,
    methods: Sequence,
    dt_list: Sequence[float],
    t_end: float,
    cfg: SolverConfig = SolverConfig(),
    stride: int = 1,
    threads: int = 1,
) -> list:
    """One EnergyTrace per (method, dt); a failed run keeps its partial
    trace and the failure message, and the sweep continues."""
    jobs = [(m, float(dt)) for m in methods for dt in dt_list]
    return _map(lambda job: energy_run(model, state0, job[0], job[1], t_end, cfg, stride), jobs, threads)


# -- Allen-Cahn shrinking disk -------------------------------------------------------

@dataclass
class DiskTrace:
    method: str
    dt: float
    t: np.ndarray
    volume: np.ndarray
    slope: float = float("nan")
    intercept: float = float("nan")
    failure: Optional[str] = None

    def deviation(self, r0: float, t_lo: float = 0.0, t_hi: float = np.inf) -> float:
        """Max relative gap to the law ``pi r0^2 - 2 pi t`` on [t_lo, t_hi]."""
        sel = (self.t >= t_lo) & (self.t <= t_hi)
        law = np.pi * r0 ** 2 - 2 * np.pi * self.t[sel]
        return float(np.max(np.abs(self.volume[sel] - law) / np.abs(law)))


def disk_volume(phi: np.ndarray, grid: Grid2D) -> float:
    """Area of ``{phi > 0}`` by counting nodes."""
    return grid.cell * int(np.count_nonzero(phi > 0))


def disk_setup(N: int = 256, half_width: float = 128.0, r0: float = 100.0, M: float = 1.0, eps: float = 1.0):
    """AC model and sharp disk on ``[-half_width, half_width]^2``.

    The stabilisation is switched off (gamma0 = 0) so the double well is
    nonnegative and C0 = 1 keeps the radicand positive.
    """
    grid = Grid2D(N, N, 2 * half_width, 2 * half_width, -half_width, -half_width)
    model = allen_cahn(AllenCahnParams(M=M, eps=eps, gamma0=0.0, C0=1.0), grid)
    return model, init_consistent(disk(grid, r0), model)


def linear_fit(t, v, window=(-np.inf, np.inf)):
    t, v = np.asarray(t), np.asarray(v)
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(t[sel], v[sel], 1)
    return float(slope), float(intercept)


def disk_run(model, state0, method, dt, t_end, cfg=SolverConfig(), sample_every: float = 1.0, fit_window=(0.0, np.inf)):
    grid = model.grid
    ts, vs = [], []

    def rec(step, t, state, report):
        ts.append(t)
        vs.append(disk_volume(state.phi.values, grid))

    stride = max(1, int(round(sample_every / dt)))
    failure = None
    try:
        integrate(state0, model, method, dt, t_end, [Observer(rec, stride)], cfg)
    except StepFailure as exc:
        failure = str(exc)
    slope, intercept = linear_fit(ts, vs, fit_window)
    return DiskTrace(method_name(method), float(dt), np.array(ts), np.array(vs), slope, intercept, failure)


def disk_benchmark(
    dt_list: Sequence[float],
    methods: Sequence,
    t_end: float = 500.0,
    N: int = 256,
    cfg: SolverConfig = SolverConfig(),
    fit_window=(0.0, np.inf),
    sample_every: float = 1.0,
    threads: int = 1,
) -> list:
    model, state0 = disk_setup(N)
    jobs = [(m, float(dt)) for m in methods for dt in dt_list]
    return _map(
        lambda job: disk_run(model, state0, job[0], job[1], t_end, cfg, sample_every, fit_window), jobs, threads
    )


# -- coarsening power law ------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    fit_window: tuple
    residual: float
    samples: int


def fit_power_law(t, E, window) -> PowerLawFit:
    """Least squares ``log E = slope log t + intercept`` on the window."""
    t, E = np.asarray(t, float), np.asarray(E, float)
    lo, hi = window
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 5:
        raise ValueError(f"power-law window [{lo:g}, {hi:g}] holds {int(sel.sum())} samples; need at least 5")
    if np.any(E[sel] <= 0) or np.any(t[sel] <= 0):
        raise ValueError("power-law fit needs positive times and energies in the window")
    x, y = np.log(t[sel]), np.log(E[sel])
    coef, res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0] / sel.sum())) if res.size else 0.0
    return PowerLawFit(float(coef[0]), float(coef[1]), (float(lo), float(hi)), resid, int(sel.sum()))


def power_law_study(
    model: ModelSpec,
    state0: SavState,
    method,
    dt: float,
    t_end: float,
    window: Optional[tuple] = None,
    which: str = "modified",
    cfg: SolverConfig = SolverConfig(),
    stride: int = 1,
) -> tuple:
    """Energy trace and its log-log slope (default window [10, t_end])."""
    trace = energy_run(model, state0, method, dt, t_end, cfg, stride)
    if not trace.ok:
        raise StepFailure(f"power-law run failed: {trace.failure}")
    window = (10.0, t_end) if window is None else window
    E = trace.modified if which == "modified" else trace.raw
    return trace, fit_power_law(trace.t, E, window)


# -- brute-force oracle ---------------------------------------------------------

ORACLE_DT = 1e-6
ORACLE_MAX_STEPS = 200_000


def oracle_reference(model: ModelSpec, phi0: Field, t_end: float, dt_ref: float = ORACLE_DT) -> Field:
    """Reference solution of the semi-discrete SAV system by the implicit
    midpoint rule at a tiny step, stage solved by plain fixed point.

    Only the transforms and operator symbols are shared with the main
    solver; the right-hand side is assembled here from full-spectrum symbols.
    """
    grid = model.grid
    if grid.Nx * grid.Ny > 256:
        raise ValueError("oracle is limited to grids of at most 16x16 nodes")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    phi = np.array(phi0.values, dtype=float)
    q = math.sqrt(grid.cell * float(np.sum(model.g_eval(phi))) + model.C0)
    if t_end == 0:
        return Field(grid, phi)
    nsteps = math.ceil(t_end / dt_ref - 1e-9)
    if nsteps > ORACLE_MAX_STEPS:
        raise ValueError(f"t_end={t_end:g} needs {nsteps} oracle steps; budget is {ORACLE_MAX_STEPS}")
    h = t_end / nsteps
    Lh, Gh = model.L.half, model.G.half
    cell = grid.cell
    shape = grid.shape

    def f(p, qq):
        r = math.sqrt(cell * float(np.sum(model.g_eval(p))) + model.C0)
        b = model.g_variation(p) / r
        k = inverse(Gh * (Lh * forward(p) + qq * forward(b)), shape)
        return k, 0.5 * cell * float(np.sum(b * k))

    for _ in range(nsteps):
        kp, kq = f(phi, q)
        for _ in range(50):
            k_new, l_new = f(phi + 0.5 * h * kp, q + 0.5 * h * kq)
            diff = max(float(np.max(np.abs(k_new - kp))), abs(l_new - kq))
            kp, kq = k_new, l_new
            if h * diff <= 1e-17 * (1 + float(np.max(np.abs(phi)))):
                break
        phi = phi + h * kp
        q = q + h * kq
    return Field(grid, phi)


def linear_exact(model: ModelSpec, phi0: Field, t: float) -> np.ndarray:
    """Per-mode ``exp(sigma t)`` solution of a model with ``g == 0``."""
    return inverse(np.exp(model.sigma * t) * forward(phi0.values), model.grid.shape)


# -- CSV output -----------------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def manifest_comment(config: dict, seed) -> str:
    return f"# manifest: config_sha256={config_hash(config)} seed={seed}\n"


def _write_csv(path, header_line, columns, names, extra_comments=()):
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(header_line)
        for c in extra_comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(names) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path.stat().st_size


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_energy_csv(path, trace: EnergyTrace, header: str) -> int:
    comments = [f"method={trace.method} dt={trace.dt!r}"]
    if trace.failure:
        comments.append(f"failed: {trace.failure}")
    return _write_csv(path, header, [trace.t, trace.modified, trace.raw, trace.q], ["t", "E_modified", "E_raw", "q"], comments)


def write_convergence_csv(path, table: ConvergenceTable, header: str) -> int:
    comments = [f"method={table.method} norm={table.norm} reference={table.reference}"]
    return _write_csv(
        path, header, [table.dts, table.errors, [r.observed_order for r in table.rows]], ["dt", "error", "order"], comments
    )


def write_disk_csv(path, trace: DiskTrace, header: str) -> int:
    comments = [f"method={trace.method} dt={trace.dt!r} slope={trace.slope!r} intercept={trace.intercept!r}"]
    if trace.failure:
        comments.append(f"failed: {trace.failure}")
    return _write_csv(path, header, [trace.t, trace.volume], ["t", "volume"], comments)


def read_csv(path) -> dict:
    """Columns of a file written above, comments skipped."""
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    names = rows[0].split(",")
    cols = {n: [] for n in names}
    for ln in rows[1:]:
        for n, v in zip(names, ln.split(",")):
            cols[n].append(float(v) if v else np.nan)
    return {n: np.array(v) for n, v in cols.items()}
