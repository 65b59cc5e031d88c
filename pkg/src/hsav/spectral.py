"""Periodic 2D Fourier pseudospectral grid.

Grid functions live on the uniform periodic mesh ``x_j = j*hx``,
``y_k = k*hy`` with row index <-> x and column index <-> y.  Derivatives
and the linear operators of a gradient flow are Fourier multipliers, so
they are applied with a forward real FFT, a multiply and an inverse FFT.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft

__all__ = [
    "Grid2D",
    "Field",
    "SpectralMultiplier",
    "OperatorSymbol",
    "GridMismatchError",
    "make_multiplier",
    "apply_derivative",
    "inner",
    "norm",
    "make_operator_symbol",
    "apply_symbol",
    "forward",
    "inverse",
    "write_snapshot",
    "read_snapshot",
]

SNAPSHOT_MAGIC = b"HSAVFLD1"
_HEADER = struct.Struct("<8sIIdd")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    Nx: int
    Ny: int
    Lx: float = 2 * np.pi
    Ly: float = 2 * np.pi
    # lower-left corner; the nodes are x0 + j*hx
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        for name in ("Nx", "Ny"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 4, got {n}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def hx(self) -> float:
        return self.Lx / self.Nx

    @property
    def hy(self) -> float:
        return self.Ly / self.Ny

    @property
    def mu_x(self) -> float:
        return 2 * np.pi / self.Lx

    @property
    def mu_y(self) -> float:
        return 2 * np.pi / self.Ly

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def cell(self) -> float:
        return self.hx * self.hy

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.Nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.Ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def wavenumbers(self, axis: str) -> np.ndarray:
        """Integer mode numbers in DFT order, Nyquist reported as +N/2."""
        n = self.Nx if axis == "x" else self.Ny
        m = np.fft.fftfreq(n, 1.0 / n)
        m[n // 2] = n // 2
        return m

    def field(self, values) -> "Field":
        return Field(self, values)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))


@dataclass(frozen=True)
class Field:
    """Real grid function on a :class:`Grid2D`."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other, self.grid))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other, self.grid))

    def __mul__(self, c):
        return Field(self.grid, self.values * _vals(c, self.grid))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


def _vals(obj, grid):
    if isinstance(obj, Field):
        _check_grid(obj.grid, grid)
        return obj.values
    return obj


def _check_grid(g1: Grid2D, g2: Grid2D) -> None:
    if g1 != g2:
        raise GridMismatchError(f"grid mismatch: {g1} vs {g2}")


# -- transforms --------------------------------------------------------------

def forward(values: np.ndarray) -> np.ndarray:
    """Real 2D DFT over the last two axes (half spectrum along y)."""
    return sfft.rfft2(values, axes=(-2, -1))


def inverse(spec: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return sfft.irfft2(spec, s=shape, axes=(-2, -1))


def half(full: np.ndarray, Ny: int) -> np.ndarray:
    """Restrict a full Nx x Ny multiplier to the rfft half spectrum."""
    return np.ascontiguousarray(full[..., : Ny // 2 + 1])


# -- multipliers -------------------------------------------------------------

@dataclass(frozen=True)
class SpectralMultiplier:
    order: int
    axis: str
    values: np.ndarray  # complex, DFT order


def make_multiplier(grid: Grid2D, axis: str, s: int) -> SpectralMultiplier:
    """Diagonal of the differentiation eigenvalues for one axis.

    Odd orders zero the Nyquist mode (the matrix is then real antisymmetric),
    even orders keep it as ``(i*mu*N/2)**s``.
    """
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    if s < 0 or int(s) != s:
        raise ValueError(f"derivative order must be a nonnegative integer, got {s}")
    n = grid.Nx if axis == "x" else grid.Ny
    if n % 2:
        raise ValueError("odd grid counts are not supported")
    mu = grid.mu_x if axis == "x" else grid.mu_y
    m = grid.wavenumbers(axis)
    if s % 2:
        m = m.copy()
        m[n // 2] = 0.0
    vals = (1j * mu * m) ** s
    if s % 2 == 0:
        vals = vals.real + 0j
    else:
        vals = 1j * vals.imag
    return SpectralMultiplier(int(s), axis, vals)


def _derivative_symbol(grid: Grid2D, sx: int, sy: int) -> np.ndarray:
    lx = make_multiplier(grid, "x", sx).values
    ly = make_multiplier(grid, "y", sy).values
    return lx[:, None] * ly[None, : grid.Ny // 2 + 1]


def apply_derivative(f: Field, sx: int, sy: int) -> Field:
    """Pseudospectral mixed derivative d^sx/dx^sx d^sy/dy^sy of ``f``."""
    grid = f.grid
    out = inverse(_derivative_symbol(grid, sx, sy) * forward(f.values), grid.shape)
    return Field(grid, out)


def derivative_values(grid: Grid2D, values: np.ndarray, sx: int, sy: int) -> np.ndarray:
    """Array version of :func:`apply_derivative` (no Field wrapping)."""
    return inverse(_derivative_symbol(grid, sx, sy) * forward(values), grid.shape)


# -- inner products ----------------------------------------------------------

def inner(f: Field, g: Field) -> float:
    """Discrete inner product ``hx*hy*sum(f*g)``."""
    _check_grid(f.grid, g.grid)
    return f.grid.cell * float(np.sum(f.values * g.values))


def norm(f: Field) -> float:
    return float(np.sqrt(inner(f, f)))


def spectral_weights(grid: Grid2D) -> np.ndarray:
    """Parseval weights for half spectra so that
    ``inner(f, g) == sum(w * Re(conj(fh) * gh))``."""
    w = np.full((grid.Nx, grid.Ny // 2 + 1), 2.0)
    w[:, 0] = 1.0
    w[:, grid.Ny // 2] = 1.0
    return w * grid.cell / (grid.Nx * grid.Ny)


# -- operator symbols --------------------------------------------------------

LINEAR = "linear_L"
MOBILITY = "mobility_G"


@dataclass(frozen=True)
class OperatorSymbol:
    """Real Fourier multiplier of a linear operator on the grid.

    ``kind`` is ``"linear_L"`` (self-adjoint) or ``"mobility_G"``
    (negative semi-definite, every entry <= 0).
    """

    grid: Grid2D
    values: np.ndarray
    kind: str = LINEAR
    recipe: tuple = field(default=(), compare=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if np.iscomplexobj(v):
            if np.max(np.abs(v.imag), initial=0.0) > 0:
                raise ValueError("operator symbols must be real")
            v = v.real
        v = np.array(v, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"symbol shape {v.shape} does not match grid {self.grid.shape}")
        if self.kind not in (LINEAR, MOBILITY):
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError("symbol contains non-finite values")
        if self.kind == MOBILITY and np.any(v > 0):
            raise ValueError(
                f"mobility symbol has positive entries (max {v.max():g}); "
                "the operator must be negative semi-definite"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        h = half(v, self.grid.Ny)
        h.setflags(write=False)
        object.__setattr__(self, "_half", h)

    @property
    def half(self) -> np.ndarray:
        return self._half

    def __call__(self, f: Field) -> Field:
        return apply_symbol(self, f)


def laplacian_symbol(grid: Grid2D) -> np.ndarray:
    lx = make_multiplier(grid, "x", 2).values.real
    ly = make_multiplier(grid, "y", 2).values.real
    return lx[:, None] + ly[None, :]


def make_operator_symbol(grid: Grid2D, recipe, kind: str = LINEAR) -> OperatorSymbol:
    """Build the symbol of ``sum(c[p] * Laplacian**p)``.

    ``recipe`` is a scalar (constant operator) or a sequence of real
    coefficients ``(c0, c1, c2, ...)`` in increasing powers of the Laplacian.
    """
    coeffs = (float(recipe),) if np.isscalar(recipe) else tuple(float(c) for c in recipe)
    if not coeffs:
        raise ValueError("empty operator recipe")
    lap = laplacian_symbol(grid)
    vals = np.zeros(grid.shape)
    power = np.ones(grid.shape)
    for c in coeffs:
        if c:
            vals = vals + c * power
        power = power * lap
    return OperatorSymbol(grid, vals, kind, coeffs)


def apply_symbol(sym: OperatorSymbol, f: Field) -> Field:
    _check_grid(sym.grid, f.grid)
    return Field(f.grid, inverse(sym.half * forward(f.values), f.grid.shape))


# -- snapshot files ----------------------------------------------------------

def write_snapshot(path, f: Field) -> int:
    """Write ``f`` as a 32-byte header plus little-endian float64 data
    (x-major).  Returns the number of bytes written."""
    g = f.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, g.Nx, g.Ny, g.Lx, g.Ly)
    data = np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C")
    Path(path).write_bytes(header + data)
    return len(header) + len(data)


def read_snapshot(path) -> Field:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, nx, ny, lx, ly = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * nx * ny
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(nx, ny)
    return Field(Grid2D(nx, ny, lx, ly), vals.astype(float))
