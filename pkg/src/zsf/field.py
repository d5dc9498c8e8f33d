"""Periodic grid, sampled fields, Sobolev norms and parity projections.

The computational domain is the square torus ``[-L/2, L/2)^2`` sampled on
``N x N`` points.  ``values[i, j]`` samples ``(y1, y2) = (-L/2 + i*dx,
-L/2 + j*dx)``, so axis 0 is ``y1`` and the origin is the sample
``(N/2, N/2)``.  Frequencies follow :func:`numpy.fft.fftfreq` ordering; the
Nyquist row/column (``k = -N/2``) is present once and is its own mirror.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid2D", "Field", "Symmetry", "make_grid", "fft2", "ifft2",
    "sobolev_norm", "l2_inner", "project", "symmetry_defect",
    "reflect", "write_zkf", "read_zkf", "GridError",
]

MAGIC = b"ZKF1"


class GridError(ValueError):
    """Raised for invalid or mismatched grids."""


@dataclass(frozen=True)
class Grid2D:
    n_points: int
    box_length: float

    def __post_init__(self):
        n = self.n_points
        if not isinstance(n, (int, np.integer)) or n < 16 or n % 2:
            raise GridError(f"n_points must be an even integer >= 16, got {n!r}")
        if not np.isfinite(self.box_length) or self.box_length <= 0:
            raise GridError(f"box_length must be positive, got {self.box_length!r}")
        object.__setattr__(self, "n_points", int(n))
        object.__setattr__(self, "box_length", float(self.box_length))

    @property
    def spacing(self) -> float:
        return self.box_length / self.n_points

    dx = spacing

    @property
    def cell_area(self) -> float:
        return self.spacing ** 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_points, self.n_points)

    def freq(self, k):
        """Angular frequency ``2*pi*k/L`` for integer index ``k``."""
        return 2.0 * np.pi * np.asarray(k) / self.box_length

    @cached_property
    def coords(self) -> np.ndarray:
        """1D sample coordinates ``-L/2 + i*dx``."""
        return -0.5 * self.box_length + self.spacing * np.arange(self.n_points)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        y1, y2 = np.meshgrid(self.coords, self.coords, indexing="ij")
        return y1, y2

    @cached_property
    def radius(self) -> np.ndarray:
        y1, y2 = self.mesh
        return np.hypot(y1, y2)

    @cached_property
    def k1d(self) -> np.ndarray:
        """Angular frequencies in FFT order; index N/2 holds the Nyquist mode."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        k1, k2 = np.meshgrid(self.k1d, self.k1d, indexing="ij")
        return k1, k2

    @cached_property
    def ksq(self) -> np.ndarray:
        k1, k2 = self.wavenumbers
        return k1 * k1 + k2 * k2

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on the modes whose index along either axis is -N/2."""
        row = np.zeros(self.n_points, dtype=bool)
        row[self.n_points // 2] = True
        return row[:, None] | row[None, :]

    @cached_property
    def rwavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        """Wavenumbers for the half spectrum of :func:`scipy.fft.rfft2`."""
        k2 = 2.0 * np.pi * np.fft.rfftfreq(self.n_points, d=self.spacing)
        return np.meshgrid(self.k1d, k2, indexing="ij")

    @cached_property
    def rksq(self) -> np.ndarray:
        k1, k2 = self.rwavenumbers
        return k1 * k1 + k2 * k2

    @cached_property
    def rnyquist_mask(self) -> np.ndarray:
        m = np.zeros((self.n_points, self.n_points // 2 + 1), dtype=bool)
        m[self.n_points // 2, :] = True
        m[:, -1] = True
        return m

    @cached_property
    def origin_index(self) -> tuple[int, int]:
        return (self.n_points // 2, self.n_points // 2)

    def zeros(self, dtype=float) -> np.ndarray:
        return np.zeros(self.shape, dtype=dtype)

    def sample(self, func, dtype=None) -> "Field":
        y1, y2 = self.mesh
        vals = np.asarray(func(y1, y2))
        if dtype is not None:
            vals = vals.astype(dtype)
        return Field(self, np.broadcast_to(vals, self.shape).copy())


def make_grid(n_points: int, box_length: float) -> Grid2D:
    return Grid2D(n_points, box_length)


@dataclass(frozen=True, eq=False)
class Field:
    """Grid-sampled scalar field (real or complex).

    Values are copied and frozen on construction.
    """

    grid: Grid2D
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, copy=True)
        if vals.shape != self.grid.shape:
            raise GridError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if np.iscomplexobj(vals):
            vals = vals.astype(complex)
        else:
            vals = vals.astype(float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def real(self) -> "Field":
        return Field(self.grid, self.values.real)

    @property
    def imag(self) -> "Field":
        return Field(self.grid, self.values.imag)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s)

    def _other(self, other):
        if isinstance(other, Field):
            _check_same_grid(self.grid, other.grid)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


def _check_same_grid(a: Grid2D, b: Grid2D):
    if a != b:
        raise GridError(f"grid mismatch: {a} vs {b}")


def as_array(f) -> np.ndarray:
    return f.values if isinstance(f, Field) else np.asarray(f)


def fft2(a: np.ndarray) -> np.ndarray:
    return sfft.fft2(a)


def ifft2(a: np.ndarray) -> np.ndarray:
    return sfft.ifft2(a)


def real_if_real(input_array: np.ndarray, output: np.ndarray) -> np.ndarray:
    """Drop the imaginary part when the input was real."""
    if np.iscomplexobj(input_array):
        return output
    return output.real.copy()


def sobolev_norm(f, s: float = 0.0, grid: Grid2D | None = None) -> float:
    """Discrete ``H^s`` norm ``||(1+|xi|^2)^(s/2) f_hat||``.

    Normalised so that ``s = 0`` equals ``(dx^2 * sum |f|^2)^(1/2)``.
    """
    if s < 0:
        raise ValueError("s must be >= 0")
    grid = f.grid if isinstance(f, Field) else grid
    if grid is None:
        raise GridError("a grid is required for bare arrays")
    a = as_array(f)
    if not np.all(np.isfinite(a)):
        raise ValueError("field contains non-finite values")
    ahat = fft2(a)
    power = ahat.real ** 2 + ahat.imag ** 2
    if s:
        power = power * (1.0 + grid.ksq) ** s
    n = grid.n_points
    return float(np.sqrt(power.sum() * grid.cell_area / (n * n)))


def l2_inner(f, g, grid: Grid2D | None = None) -> float:
    """Real discrete L^2 pairing ``dx^2 * sum Re(f * conj(g))``."""
    if isinstance(f, Field):
        grid = f.grid
    a, b = as_array(f), as_array(g)
    return float(np.real(np.vdot(b, a)) * grid.cell_area)


class Symmetry(str, enum.Enum):
    EE = "EE"
    OE = "OE"
    RADIAL = "RADIAL"
    # odd in both variables; used for the second velocity component
    OO = "OO"


_SIGNS = {
    Symmetry.EE: (1.0, 1.0),
    Symmetry.OE: (-1.0, 1.0),
    Symmetry.OO: (-1.0, -1.0),
    Symmetry.RADIAL: (1.0, 1.0),
}


def reflect(a: np.ndarray, axis: int) -> np.ndarray:
    """Sample values of ``y_axis -> -y_axis``; index i maps to (N - i) mod N."""
    return np.roll(np.flip(a, axis=axis), 1, axis=axis)


def project_array(a: np.ndarray, sym) -> np.ndarray:
    sym = Symmetry(sym)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GridError("symmetry projections need a square grid")
    s1, s2 = _SIGNS[sym]
    b = a + s1 * reflect(a, 0)
    b = 0.25 * (b + s2 * reflect(b, 1))
    if sym is Symmetry.RADIAL:
        b = 0.5 * (b + b.T)
    return b


def project(f, sym):
    """Average ``f`` over the reflection group of the class ``sym``."""
    if isinstance(f, Field):
        return Field(f.grid, project_array(f.values, sym))
    return project_array(np.asarray(f), sym)


def symmetry_defect(f, sym, grid: Grid2D | None = None) -> float:
    """``||f - project(f, sym)||_{L^2}``."""
    if isinstance(f, Field):
        grid = f.grid
    a = as_array(f)
    d = a - project_array(a, sym)
    dx = grid.spacing if grid is not None else 1.0
    return float(np.sqrt(np.sum(np.abs(d) ** 2)) * dx)


# --- ZKF1 snapshot format -------------------------------------------------

_HEADER = struct.Struct("<4sIdB")


def write_zkf(path, f: Field) -> None:
    """Write ``f`` as a ZKF1 file (little-endian header + f64 payload)."""
    g = f.grid
    kind = 1 if f.is_complex else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.n_points, g.box_length, kind))
        if kind:
            payload = np.empty(g.shape + (2,), dtype="<f8")
            payload[..., 0] = f.values.real
            payload[..., 1] = f.values.imag
        else:
            payload = np.ascontiguousarray(f.values, dtype="<f8")
        fh.write(payload.tobytes(order="C"))


def read_zkf(path) -> Field:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated ZKF1 header")
    magic, n, box, kind = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if kind not in (0, 1):
        raise ValueError(f"{path}: unknown kind {kind}")
    count = n * n * (2 if kind else 1)
    expected = _HEADER.size + 8 * count
    if len(data) != expected:
        raise ValueError(f"{path}: payload size {len(data)} != {expected}")
    arr = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size)
    if kind:
        arr = arr.reshape(n, n, 2)
        vals = arr[..., 0] + 1j * arr[..., 1]
    else:
        vals = arr.reshape(n, n)
    return Field(Grid2D(n, box), vals)


# --- spectral helpers -----------------------------------------------------

def apply_symbol(a: np.ndarray, grid: Grid2D, symbol) -> np.ndarray:
    """Multiply ``a`` by a Fourier symbol.

    ``symbol(k1, k2)`` must be even under ``xi -> -xi`` for real input to
    stay real; it is evaluated on the half spectrum when ``a`` is real.
    """
    if np.iscomplexobj(a):
        k1, k2 = grid.wavenumbers
        return ifft2(fft2(a) * symbol(k1, k2))
    k1, k2 = grid.rwavenumbers
    return sfft.irfft2(sfft.rfft2(a) * symbol(k1, k2), s=a.shape)


def derivative(a: np.ndarray, grid: Grid2D, m: tuple[int, int]) -> np.ndarray:
    """Spectral ``d^m a``; odd orders drop the Nyquist mode along that axis."""
    m1, m2 = m
    if m1 == 0 and m2 == 0:
        return np.array(a, copy=True)
    n = grid.n_points

    def sym(k1, k2):
        s = (1j * k1) ** m1 * (1j * k2) ** m2
        if m1 % 2:
            s = np.where(np.isclose(np.abs(k1), np.pi / grid.spacing), 0.0, s)
        if m2 % 2:
            s = np.where(np.isclose(np.abs(k2), np.pi / grid.spacing), 0.0, s)
        return s

    if np.iscomplexobj(a):
        k1, k2 = grid.wavenumbers
        return ifft2(fft2(a) * sym(k1, k2))
    k1, k2 = grid.rwavenumbers
    out = sfft.irfft2(sfft.rfft2(a) * sym(k1, k2), s=(n, n))
    return out


def strip_nyquist(a: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Remove the modes with index ``-N/2`` along either axis."""
    if np.iscomplexobj(a):
        ah = fft2(a)
        ah[grid.nyquist_mask] = 0.0
        return ifft2(ah)
    ah = sfft.rfft2(a)
    ah[grid.rnyquist_mask] = 0.0
    return sfft.irfft2(ah, s=a.shape)


def gradient(a: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    return derivative(a, grid, (1, 0)), derivative(a, grid, (0, 1))


def laplacian(a: np.ndarray, grid: Grid2D) -> np.ndarray:
    return apply_symbol(a, grid, lambda k1, k2: -(k1 * k1 + k2 * k2))
