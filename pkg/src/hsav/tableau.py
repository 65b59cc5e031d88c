"""Butcher tableaus for Gauss-Legendre collocation and the algebraic
stability check ``b_i a_ij + b_j a_ji - b_i b_j == 0, b_i >= 0``."""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

MAX_STAGES = 10

# work precision for node/coefficient generation; rounded to float64 at the end
_DPS = 60


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float)
        c = np.array(self.c, dtype=float)
        s = b.size
        if A.shape != (s, s) or c.shape != (s,):
            raise ValueError(f"inconsistent tableau shapes A{A.shape} b{b.shape} c{c.shape}")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return self.b.size

    def check_stability(self) -> "StabilityReport":
        return check_stability(self)

    def __str__(self) -> str:
        return format_tableau(self)


@dataclass(frozen=True)
class StabilityReport:
    max_residual: float
    min_weight: float

    @property
    def passes(self) -> bool:
        return self.max_residual <= 1e-13 and self.min_weight >= -1e-14


def check_stability(t: ButcherTableau) -> StabilityReport:
    """Residual of ``M = B A + A^T B - b b^T`` (B = diag(b)) and the
    smallest weight."""
    A, b = t.A, t.b
    M = b[:, None] * A + (b[:, None] * A).T - np.outer(b, b)
    return StabilityReport(float(np.max(np.abs(M))), float(np.min(b)))


def _shifted_legendre_roots(s: int) -> list:
    """Zeros of P_s(2x - 1) on (0, 1) by Newton from Chebyshev guesses."""
    roots = []
    tol = mpmath.mpf(10) ** (-(_DPS - 5))
    for i in range(s):
        # Chebyshev-Gauss guess on [-1, 1], ascending
        x = -mpmath.cos(mpmath.pi * (i + mpmath.mpf(3) / 4) / (s + mpmath.mpf(1) / 2))
        for _ in range(100):
            p0, p1 = mpmath.mpf(1), x
            for n in range(2, s + 1):
                p0, p1 = p1, ((2 * n - 1) * x * p1 - (n - 1) * p0) / n
            if s == 1:
                p, dp = x, mpmath.mpf(1)
            else:
                p = p1
                dp = s * (x * p1 - p0) / (x * x - 1)
            dx = p / dp
            x -= dx
            if abs(dx) < tol:
                break
        else:  # pragma: no cover - Newton from Chebyshev guesses always converges here
            raise RuntimeError(f"Legendre root {i} of degree {s} did not converge")
        roots.append((x + 1) / 2)
    return roots


def _gauss_exact(s: int):
    with mpmath.workdps(_DPS):
        c = _shifted_legendre_roots(s)
        V = mpmath.matrix(s, s)
        for k in range(s):
            for j in range(s):
                V[k, j] = c[j] ** k
        rhs_b = mpmath.matrix([mpmath.mpf(1) / (k + 1) for k in range(s)])
        b = mpmath.lu_solve(V, rhs_b)
        A = []
        for i in range(s):
            rhs = mpmath.matrix([c[i] ** (k + 1) / (k + 1) for k in range(s)])
            A.append([float(v) for v in mpmath.lu_solve(V, rhs)])
        return A, [float(v) for v in b], [float(v) for v in c]


def gauss_tableau(s: int) -> ButcherTableau:
    """s-stage Gauss-Legendre collocation tableau (order 2s).

    Nodes are the roots of the shifted Legendre polynomial; the rows of A
    solve ``sum_j a_ij c_j**(k-1) = c_i**k / k`` for k = 1..s.
    """
    if int(s) != s or not 1 <= s <= MAX_STAGES:
        raise ValueError(f"Gauss stage count must be in 1..{MAX_STAGES}, got {s}")
    A, b, c = _gauss_exact(int(s))
    return ButcherTableau(A, b, c, name=f"gauss{s}")


# Reference coefficients of the order-4 and order-6 Gauss methods.
_R3 = np.sqrt(3.0)
_R15 = np.sqrt(15.0)

GAUSS2_TABLE = ButcherTableau(
    A=[[1 / 4, 1 / 4 - _R3 / 6], [1 / 4 + _R3 / 6, 1 / 4]],
    b=[1 / 2, 1 / 2],
    c=[1 / 2 - _R3 / 6, 1 / 2 + _R3 / 6],
    name="gauss2-table",
)

GAUSS3_TABLE = ButcherTableau(
    A=[
        [5 / 36, 2 / 9 - _R15 / 15, 5 / 36 - _R15 / 30],
        [5 / 36 + _R15 / 24, 2 / 9, 5 / 36 - _R15 / 24],
        [5 / 36 + _R15 / 30, 2 / 9 + _R15 / 15, 5 / 36],
    ],
    b=[5 / 18, 4 / 9, 5 / 18],
    c=[1 / 2 - _R15 / 10, 1 / 2, 1 / 2 + _R15 / 10],
    name="gauss3-table",
)

CLASSICAL_RK4 = ButcherTableau(
    A=[[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1, 0]],
    b=[1 / 6, 1 / 3, 1 / 3, 1 / 6],
    c=[0, 0.5, 0.5, 1],
    name="rk4",
)

CRANK_NICOLSON = ButcherTableau(
    A=[[0, 0], [0.5, 0.5]], b=[0.5, 0.5], c=[0, 1], name="trapezoid"
)


def format_tableau(t: ButcherTableau, digits: int = 17) -> str:
    w = digits + 7
    fmt = f"{{:>{w}.{digits}g}}"
    lines = []
    for i in range(t.s):
        row = "".join(fmt.format(v) for v in t.A[i])
        lines.append(f"{fmt.format(t.c[i])} |{row}")
    lines.append("-" * (w + 2 + w * t.s))
    lines.append(" " * w + " |" + "".join(fmt.format(v) for v in t.b))
    return "\n".join(lines)
