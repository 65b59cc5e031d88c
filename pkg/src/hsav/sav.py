"""Scalar auxiliary variable reformulation of ``phi_t = G (L phi + dg/dphi)``.

With ``q = sqrt((g(phi), 1)_h + C0)`` the flow becomes

    phi_t = G (L phi + q g'(phi) / sqrt((g, 1)_h + C0))
    q_t   = (g'(phi) / (2 sqrt((g, 1)_h + C0)), phi_t)_h

and the quadratic energy ``E_h = 1/2 (L phi, phi)_h + q**2 - C0`` is
dissipated.  ``C0`` is kept separate from ``g`` everywhere in this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .spectral import Field, Grid2D, OperatorSymbol, forward, inverse, LINEAR, MOBILITY

Array = np.ndarray


class RadicandError(ArithmeticError):
    """``(g(phi), 1)_h + C0`` fell to (or below) zero."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One gradient flow: mobility ``G``, linear part ``L`` and potential ``g``.

    ``g_eval`` returns the potential density (without the C0 shift),
    ``g_variation`` its variational derivative.  ``g_variation_jvp(phi, v)``
    is the derivative of ``g_variation`` at ``phi`` in direction ``v`` and
    ``curvature_symbol(phi)`` a Fourier-diagonal stand-in for it; both are
    only used by the Newton stage solver.
    """

    name: str
    grid: Grid2D
    G: OperatorSymbol
    L: OperatorSymbol
    g_eval: Callable[[Array], Array]
    g_variation: Callable[[Array], Array]
    C0: float
    gamma0: float = 0.0
    g_variation_jvp: Optional[Callable[[Array, Array], Array]] = None
    curvature_symbol: Optional[Callable[[Array], Array]] = None
    params: tuple = ()

    def __post_init__(self):
        if self.G.kind != MOBILITY:
            raise ValueError("G must be a mobility symbol")
        if self.L.kind != LINEAR:
            raise ValueError("L must be a linear_L symbol")
        if self.G.grid != self.grid or self.L.grid != self.grid:
            raise ValueError("operator symbols live on a different grid")
        if self.C0 < 0:
            raise ValueError("C0 must be nonnegative")

    @property
    def sigma(self) -> Array:
        """Half-spectrum symbol of the composed operator ``G L``."""
        return self.G.half * self.L.half

    def radicand(self, phi: Array) -> float:
        return self.grid.cell * float(np.sum(self.g_eval(phi))) + self.C0

    def checked_sqrt_radicand(self, phi: Array) -> float:
        r = self.radicand(phi)
        if not r > 1e-12 * self.grid.area:
            raise RadicandError(
                f"(g(phi),1)_h + C0 = {r:.6g} is not positive for model {self.name!r}; "
                f"increase C0 (currently {self.C0:g})"
            )
        return float(np.sqrt(r))

    def apply_L(self, values: Array) -> Array:
        return inverse(self.L.half * forward(values), self.grid.shape)

    def apply_G(self, values: Array) -> Array:
        return inverse(self.G.half * forward(values), self.grid.shape)


@dataclass(frozen=True)
class SavState:
    phi: Field
    q: float
    t: float = 0.0


@dataclass(frozen=True)
class EnergyPair:
    modified: float
    raw: float


def _values(phi) -> Array:
    return phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)


def init_consistent(phi0: Field, model: ModelSpec, t: float = 0.0) -> SavState:
    """Start the SAV variable on the exact value ``sqrt((g(phi0),1)_h + C0)``."""
    r = model.radicand(phi0.values)
    if not r > 0:
        raise RadicandError(
            f"cannot initialise q: (g(phi0),1)_h + C0 = {r:.6g} <= 0 "
            f"(C0 = {model.C0:g}, model {model.name!r})"
        )
    return SavState(phi0, float(np.sqrt(r)), float(t))


def normalized_variation(phi: Array, model: ModelSpec) -> tuple[Array, float]:
    """``g'(phi) / sqrt(radicand)`` together with the denominator used."""
    root = model.checked_sqrt_radicand(phi)
    return model.g_variation(phi) / root, root


def stage_rhs(Phi, Q: float, model: ModelSpec) -> tuple[Field | Array, float]:
    """Stage derivatives ``(k, l)`` of the SAV system.

    ``k = G (L Phi + Q g'(Phi)/r)`` and ``l = (g'(Phi)/(2 r), k)_h`` where
    ``r = sqrt((g(Phi),1)_h + C0)`` is evaluated once and shared by both.
    Accepts a Field (returns a Field) or a bare array.
    """
    vals = _values(Phi)
    bvec, _ = normalized_variation(vals, model)
    k = model.apply_G(model.apply_L(vals) + Q * bvec)
    l = 0.5 * model.grid.cell * float(np.sum(bvec * k))
    if isinstance(Phi, Field):
        return Field(Phi.grid, k), l
    return k, l


def linear_energy(phi: Array, model: ModelSpec) -> float:
    """``1/2 (L_h phi, phi)_h``."""
    return 0.5 * model.grid.cell * float(np.sum(model.apply_L(phi) * phi))


def energy_increment(phi0: Array, q0: float, dphi: Array, dq: float, model: ModelSpec) -> float:
    """``E(phi0 + dphi, q0 + dq) - E(phi0, q0)`` from the increments, as
    ``1/2 (L dphi, 2 phi0 + dphi)_h + dq (2 q0 + dq)``; avoids cancelling two
    large energies and the rounding of the stored new state."""
    lin = 0.5 * model.grid.cell * float(np.sum(model.apply_L(dphi) * (2.0 * phi0 + dphi)))
    return lin + dq * (2.0 * q0 + dq)


def energy_values(phi: Array, q: float, model: ModelSpec) -> EnergyPair:
    lin = linear_energy(phi, model)
    raw = lin + model.grid.cell * float(np.sum(model.g_eval(phi)))
    return EnergyPair(lin + q * q - model.C0, raw)


def energy(state: SavState, model: ModelSpec) -> EnergyPair:
    """Modified energy ``1/2 (L phi, phi)_h + q^2 - C0`` and raw energy
    ``1/2 (L phi, phi)_h + (g(phi), 1)_h``."""
    return energy_values(state.phi.values, state.q, model)


def q_gap(state: SavState, model: ModelSpec) -> float:
    """Relative drift ``|q - sqrt((g,1)_h + C0)| / q`` of the auxiliary variable."""
    r = model.radicand(state.phi.values)
    return abs(state.q - np.sqrt(max(r, 0.0))) / abs(state.q)
