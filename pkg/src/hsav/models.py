"""Allen-Cahn, Cahn-Hilliard and MBE (slope selection) gradient flows.

The stabilisation shift ``gamma0`` is moved out of the potential into the
linear operator, e.g. ``L = -eps^2 Lap + gamma0`` with
``g = 1/4 (phi^2 - 1)^2 - gamma0/2 phi^2`` for the phase-field models.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .sav import ModelSpec
from .spectral import (
    Field,
    Grid2D,
    LINEAR,
    MOBILITY,
    derivative_values,
    laplacian_symbol,
    make_operator_symbol,
)

PRNG_ALGORITHM = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True)
class AllenCahnParams:
    M: float = 1.0
    eps: float = 1.0
    gamma0: float = 1.0
    C0: float = 1.0

    def __post_init__(self):
        if self.M <= 0 or self.eps <= 0:
            raise ValueError("Allen-Cahn needs M > 0 and eps > 0")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be nonnegative")


@dataclass(frozen=True)
class CahnHilliardParams:
    lam: float = 1e-3
    eps: float = 0.01
    gamma0: float = 1.0
    C0: float = 1.0

    def __post_init__(self):
        if self.lam <= 0 or self.eps <= 0:
            raise ValueError("Cahn-Hilliard needs lambda > 0 and eps > 0")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be nonnegative")


@dataclass(frozen=True)
class MbeParams:
    M: float = 1.0
    eps2: float = 0.1
    gamma0: float = 1.0
    C0: float = 1.0

    def __post_init__(self):
        if self.M <= 0 or self.eps2 <= 0:
            raise ValueError("MBE needs M > 0 and eps2 > 0")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be nonnegative")


def _double_well(gamma0: float):
    def g(phi):
        p2 = phi * phi
        return 0.25 * (p2 - 1.0) ** 2 - 0.5 * gamma0 * p2

    def dg(phi):
        return phi * phi * phi - (1.0 + gamma0) * phi

    def jvp(phi, v):
        return (3.0 * phi * phi - 1.0 - gamma0) * v

    def curvature(phi):
        return float(np.mean(3.0 * phi * phi)) - 1.0 - gamma0

    return g, dg, jvp, curvature


def double_well_min_c0(grid: Grid2D, gamma0: float, margin: float = 1.0) -> float:
    """Smallest C0 (plus ``margin``) keeping the radicand positive for any
    field, since ``min g = -gamma0/2 - gamma0**2/4``."""
    return grid.area * (0.5 * gamma0 + 0.25 * gamma0 ** 2) + margin


def allen_cahn(p: AllenCahnParams, grid: Grid2D) -> ModelSpec:
    """``phi_t = -M (-eps^2 Lap phi + phi^3 - phi)``."""
    g, dg, jvp, curv = _double_well(p.gamma0)
    return ModelSpec(
        name="allen_cahn",
        grid=grid,
        G=make_operator_symbol(grid, -p.M, MOBILITY),
        L=make_operator_symbol(grid, (p.gamma0, -p.eps ** 2), LINEAR),
        g_eval=g,
        g_variation=dg,
        C0=p.C0,
        gamma0=p.gamma0,
        g_variation_jvp=jvp,
        curvature_symbol=curv,
        params=(("M", p.M), ("eps", p.eps)),
    )


def cahn_hilliard(p: CahnHilliardParams, grid: Grid2D) -> ModelSpec:
    """``phi_t = lam Lap (-eps^2 Lap phi + phi^3 - phi)``; conserves mass."""
    g, dg, jvp, curv = _double_well(p.gamma0)
    return ModelSpec(
        name="cahn_hilliard",
        grid=grid,
        G=make_operator_symbol(grid, (0.0, p.lam), MOBILITY),
        L=make_operator_symbol(grid, (p.gamma0, -p.eps ** 2), LINEAR),
        g_eval=g,
        g_variation=dg,
        C0=p.C0,
        gamma0=p.gamma0,
        g_variation_jvp=jvp,
        curvature_symbol=curv,
        params=(("lam", p.lam), ("eps", p.eps)),
    )


def mbe(p: MbeParams, grid: Grid2D) -> ModelSpec:
    """Thin-film epitaxy with slope selection,
    ``phi_t = -M (eps2 Lap^2 phi + div((1 - |grad phi|^2) grad phi))``.

    ``g = 1/4 (|grad phi|^2 - 1 - gamma0)^2`` and its variational derivative
    is ``div((gamma0 + 1 - |grad phi|^2) grad phi)``.
    """
    gamma0 = p.gamma0
    shape = grid.shape

    def grad(phi):
        return derivative_values(grid, phi, 1, 0), derivative_values(grid, phi, 0, 1)

    def div(fx, fy):
        return derivative_values(grid, fx, 1, 0) + derivative_values(grid, fy, 0, 1)

    def g(phi):
        px, py = grad(phi)
        return 0.25 * (px * px + py * py - 1.0 - gamma0) ** 2

    def dg(phi):
        px, py = grad(phi)
        coef = gamma0 + 1.0 - (px * px + py * py)
        return div(coef * px, coef * py)

    def jvp(phi, v):
        px, py = grad(phi)
        vx, vy = grad(v)
        coef = gamma0 + 1.0 - (px * px + py * py)
        dot = 2.0 * (px * vx + py * vy)
        return div(coef * vx - dot * px, coef * vy - dot * py)

    lap = laplacian_symbol(grid)[:, : shape[1] // 2 + 1]

    def curvature(phi):
        px, py = grad(phi)
        m = float(np.mean(px * px + py * py))
        return (gamma0 + 1.0 - 2.0 * m) * lap

    return ModelSpec(
        name="mbe",
        grid=grid,
        G=make_operator_symbol(grid, -p.M, MOBILITY),
        L=make_operator_symbol(grid, (0.0, -gamma0, p.eps2), LINEAR),
        g_eval=g,
        g_variation=dg,
        C0=p.C0,
        gamma0=gamma0,
        g_variation_jvp=jvp,
        curvature_symbol=curvature,
        params=(("M", p.M), ("eps2", p.eps2)),
    )


def linear_model(grid: Grid2D, G_recipe=(0.0, 1.0), L_recipe=(1.0, -1.0), C0: float = 1.0) -> ModelSpec:
    """Gradient flow with ``g == 0``: ``phi_t = G L phi`` exactly linear."""

    def zero(phi):
        return np.zeros_like(phi)

    return ModelSpec(
        name="linear",
        grid=grid,
        G=make_operator_symbol(grid, G_recipe, MOBILITY),
        L=make_operator_symbol(grid, L_recipe, LINEAR),
        g_eval=zero,
        g_variation=zero,
        C0=C0,
        gamma0=0.0,
        g_variation_jvp=lambda phi, v: np.zeros_like(phi),
        curvature_symbol=lambda phi: 0.0,
    )


MODEL_BUILDERS = {
    "allen_cahn": (AllenCahnParams, allen_cahn),
    "cahn_hilliard": (CahnHilliardParams, cahn_hilliard),
    "mbe": (MbeParams, mbe),
}


def build_model(name: str, grid: Grid2D, **params) -> ModelSpec:
    try:
        cls, builder = MODEL_BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_BUILDERS)}") from None
    return builder(cls(**params), grid)


# -- initial conditions ------------------------------------------------------

def disk(grid: Grid2D, r0: float = 100.0, cx: float = 0.0, cy: float = 0.0) -> Field:
    X, Y = grid.mesh()
    inside = (X - cx) ** 2 + (Y - cy) ** 2 < r0 ** 2
    return Field(grid, np.where(inside, 1.0, -1.0))


def product_sine(grid: Grid2D, kx: float, ky: float, amp: float = 1.0) -> Field:
    X, Y = grid.mesh()
    return Field(grid, amp * np.sin(kx * X) * np.sin(ky * Y))


def random_field(grid: Grid2D, amp: float = 1e-3, mean: float = 0.0, seed: int = 0) -> Field:
    """``mean + amp * U(-1, 1)`` from a seeded PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return Field(grid, mean + amp * rng.uniform(-1.0, 1.0, size=grid.shape))


def mbe_two_mode(grid: Grid2D, amp: float = 0.1) -> Field:
    X, Y = grid.mesh()
    return Field(grid, amp * (np.sin(3 * X) * np.sin(2 * Y) + np.sin(5 * X) * np.sin(5 * Y)))


INITIAL_CONDITIONS = {
    "disk": disk,
    "product_sine": product_sine,
    "random": random_field,
    "mbe_two_mode": mbe_two_mode,
}


def initial_condition(kind: str, grid: Grid2D, **kwargs) -> Field:
    try:
        fn = INITIAL_CONDITIONS[kind]
    except KeyError:
        raise ValueError(f"unknown initial condition {kind!r}; choose from {sorted(INITIAL_CONDITIONS)}") from None
    return fn(grid, **kwargs)


def params_dict(p) -> dict:
    return dict(zip(p.__dataclass_fields__, astuple(p)))
