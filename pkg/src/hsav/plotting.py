"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_energy(traces, path, which: str = "modified", logx: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for tr in traces:
        if tr.t.size == 0:
            continue
        E = tr.modified if which == "modified" else tr.raw
        label = f"{tr.method}, dt={tr.dt:g}" + (" (failed)" if tr.failure else "")
        ax.plot(tr.t, E, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("modified energy" if which == "modified" else "energy")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_convergence(tables, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    for tab in tables:
        ax.loglog(tab.dts, tab.errors, "o-", label=tab.method)
    ax.set_xlabel("dt")
    ax.set_ylabel(f"error ({tables[0].norm if tables else ''})")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_disk(traces, r0, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    t_max = max((tr.t[-1] for tr in traces if tr.t.size), default=1.0)
    tt = np.linspace(0, t_max, 200)
    ax.plot(tt, np.pi * r0 ** 2 - 2 * np.pi * tt, "k--", lw=1, label="pi R0^2 - 2 pi t")
    for tr in traces:
        ax.plot(tr.t, tr.volume, label=f"{tr.method}, dt={tr.dt:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("volume")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_power_law(trace, fit, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    sel = trace.t > 0
    ax.loglog(trace.t[sel], trace.modified[sel], label="E(t)")
    lo, hi = fit.fit_window
    tt = np.geomspace(lo, hi, 50)
    ax.loglog(tt, np.exp(fit.intercept) * tt ** fit.slope, "--", label=f"slope {fit.slope:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.legend()
    return _save(fig, path)


def plot_field(values, grid, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ext = [grid.x0, grid.x0 + grid.Lx, grid.y0, grid.y0 + grid.Ly]
    im = ax.imshow(values.T, origin="lower", extent=ext, cmap="RdBu_r")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    return _save(fig, path)
