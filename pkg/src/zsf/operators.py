"""Anisotropic Fourier multipliers and the linearised operators around Q.

Multipliers (``D = |xi|^2 - (c.xi)^2``)::

    Sc       (c.xi)^2 / D
    Tc1,Tc2  (c.xi) xi_j / D
    dSc_dcj  2 |xi|^2 (c.xi) xi_j / D^2

The ``xi = 0`` mode is set to zero for every kind.  A Nyquist mode is kept
only where the symbol is even along that axis (so real fields stay real);
otherwise it is zeroed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .field import (
    Field, Grid2D, GridError, Symmetry, apply_symbol, derivative, project_array,
    sobolev_norm,
)

log = logging.getLogger(__name__)

KINDS = ("Sc", "Tc1", "Tc2", "dSc_dc1", "dSc_dc2")


class SpeedError(ValueError):
    """Raised when ``|c| >= 1`` (the multipliers are then singular)."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve misses its tolerance."""


def as_speed(c) -> tuple[float, float]:
    arr = np.atleast_1d(np.asarray(c, dtype=float))
    if arr.size == 1:
        arr = np.array([arr[0], 0.0])
    if arr.shape != (2,) or not np.all(np.isfinite(arr)):
        raise SpeedError(f"speed must be a scalar or a 2-vector, got {c!r}")
    if np.hypot(*arr) >= 1.0:
        raise SpeedError(f"|c| must be < 1, got |c| = {np.hypot(*arr):.6g}")
    return float(arr[0]), float(arr[1])


@dataclass(frozen=True)
class MultiplierSpec:
    kind: str
    speed: tuple[float, float]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown multiplier kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "speed", as_speed(self.speed))

    @property
    def analytic_bound(self) -> float:
        """Sup of ``|symbol|`` over ``R^2 \\ {0}``."""
        c2 = self.speed[0] ** 2 + self.speed[1] ** 2
        c = np.sqrt(c2)
        if self.kind == "Sc":
            return c2 / (1 - c2)
        if self.kind.startswith("Tc"):
            return c / (1 - c2)
        return 2 * c / (1 - c2) ** 2

    def symbol(self, k1, k2) -> np.ndarray:
        return symbol(self.kind, self.speed, k1, k2)


def symbol(kind: str, c, k1, k2) -> np.ndarray:
    """Evaluate a multiplier symbol; the value at ``xi = 0`` is 0."""
    c1, c2 = c
    cxi = c1 * k1 + c2 * k2
    k2sum = k1 * k1 + k2 * k2
    denom = k2sum - cxi * cxi
    zero = k2sum == 0
    denom = np.where(zero, 1.0, denom)
    if kind == "Sc":
        num = cxi * cxi
    elif kind == "Tc1":
        num = cxi * k1
    elif kind == "Tc2":
        num = cxi * k2
    elif kind == "dSc_dc1":
        num = 2 * k2sum * cxi * k1 / denom
    elif kind == "dSc_dc2":
        num = 2 * k2sum * cxi * k2 / denom
    else:
        raise ValueError(f"unknown multiplier kind {kind!r}")
    return np.where(zero, 0.0, num / denom)


@lru_cache(maxsize=64)
def _symbol_table(kind: str, c: tuple[float, float], grid: Grid2D, half: bool) -> np.ndarray:
    if half:
        k1, k2 = grid.rwavenumbers
        nyq = grid.rnyquist_mask
    else:
        k1, k2 = grid.wavenumbers
        nyq = grid.nyquist_mask
    tab = symbol(kind, c, k1, k2)
    # a Nyquist mode is its own mirror: keep it only if the symbol agrees
    # at +pi/dx and -pi/dx along every Nyquist axis of that mode
    kn = np.pi / grid.spacing
    at1 = np.isclose(np.abs(k1), kn)
    at2 = np.isclose(np.abs(k2), kn)
    mirrored = symbol(kind, c, np.where(at1, -k1, k1), np.where(at2, -k2, k2))
    consistent = np.isclose(mirrored, tab, rtol=1e-13, atol=0.0)
    tab[nyq & ~consistent] = 0.0
    tab.setflags(write=False)
    return tab


def multiplier_array(a: np.ndarray, grid: Grid2D, kind: str, c) -> np.ndarray:
    """Array-level :func:`apply_multiplier`."""
    c = as_speed(c)
    if c == (0.0, 0.0):
        return np.zeros_like(a)
    if np.iscomplexobj(a):
        return sfft.ifft2(sfft.fft2(a) * _symbol_table(kind, c, grid, False))
    tab = _symbol_table(kind, c, grid, True)
    return sfft.irfft2(sfft.rfft2(a) * tab, s=a.shape)


def apply_multiplier(f: Field, spec: MultiplierSpec) -> Field:
    """Apply the Fourier multiplier ``spec`` to ``f``; real in, real out."""
    return Field(f.grid, multiplier_array(f.values, f.grid, spec.kind, spec.speed))


def multiplier_norm_certificate(spec: MultiplierSpec, grid: Grid2D) -> float:
    """Largest ``|symbol|`` over the modes the grid actually applies."""
    return float(np.max(np.abs(_symbol_table(spec.kind, spec.speed, grid, False))))


# --- Lipschitz-in-c report ------------------------------------------------

@dataclass
class LipschitzReport:
    c: tuple[float, float]
    c_tilde: tuple[float, float]
    s_values: tuple[float, ...]
    sc_diff: dict = dc_field(default_factory=dict)
    sc_bound: dict = dc_field(default_factory=dict)
    dsc_diff: dict = dc_field(default_factory=dict)
    dsc_bound: dict = dc_field(default_factory=dict)
    fd_rel_error: dict = dc_field(default_factory=dict)
    fd_step: float = 1e-5

    @property
    def ok(self) -> bool:
        within = all(self.sc_diff[s] <= self.sc_bound[s] for s in self.s_values)
        within &= all(self.dsc_diff[k] <= self.dsc_bound[k] for k in self.dsc_diff)
        return within and all(e <= 1e-6 for e in self.fd_rel_error.values())


def lipschitz_in_c_check(f: Field, c, c_tilde, s_values=(0.0, 2.0), h: float = 1e-5) -> LipschitzReport:
    """Measure ``S_c - S_c~`` and ``dS_c/dc_j - dS_c~/dc_j`` against their bounds.

    Also compares the ``dSc_dcj`` symbol with the centred difference
    ``(S_{c+h e_j} - S_{c-h e_j}) / 2h`` applied to ``f``.
    """
    c, ct = as_speed(c), as_speed(c_tilde)
    cn2, ctn2 = c[0] ** 2 + c[1] ** 2, ct[0] ** 2 + ct[1] ** 2
    dc = float(np.hypot(c[0] - ct[0], c[1] - ct[1]))
    rep = LipschitzReport(c, ct, tuple(s_values), fd_step=h)
    a, g = f.values, f.grid
    for s in s_values:
        fn = sobolev_norm(f, s)
        d = multiplier_array(a, g, "Sc", c) - multiplier_array(a, g, "Sc", ct)
        rep.sc_diff[s] = sobolev_norm(d, s, g)
        rep.sc_bound[s] = 2 * dc / ((1 - cn2) * (1 - ctn2)) * fn
        for j in (1, 2):
            kind = f"dSc_dc{j}"
            d = multiplier_array(a, g, kind, c) - multiplier_array(a, g, kind, ct)
            rep.dsc_diff[(s, j)] = sobolev_norm(d, s, g)
            rep.dsc_bound[(s, j)] = 6 * dc / ((1 - cn2) ** 2 * (1 - ctn2) ** 2) * fn
    for j in (1, 2):
        e = np.zeros(2)
        e[j - 1] = h
        plus = multiplier_array(a, g, "Sc", (c[0] + e[0], c[1] + e[1]))
        minus = multiplier_array(a, g, "Sc", (c[0] - e[0], c[1] - e[1]))
        fd = (plus - minus) / (2 * h)
        exact = multiplier_array(a, g, f"dSc_dc{j}", c)
        scale = sobolev_norm(exact, 0, g)
        err = sobolev_norm(fd - exact, 0, g)
        rep.fd_rel_error[j] = err / scale if scale > 0 else err
    return rep


# --- linearised operators -------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearizedOp:
    """``L_+ = -Delta + 1 - 3Q^2`` or ``L_- = -Delta + 1 - Q^2``."""

    kind: str
    ground_state: Field

    def __post_init__(self):
        if self.kind not in ("Lplus", "Lminus"):
            raise ValueError(f"kind must be 'Lplus' or 'Lminus', got {self.kind!r}")

    @property
    def grid(self) -> Grid2D:
        return self.ground_state.grid

    @property
    def potential(self) -> np.ndarray:
        q2 = self.ground_state.values ** 2
        return 3.0 * q2 if self.kind == "Lplus" else q2

    def matvec(self, w: np.ndarray) -> np.ndarray:
        g = self.grid
        out = apply_symbol(w, g, lambda k1, k2: 1.0 + k1 * k1 + k2 * k2)
        return out - self.potential * w


def apply_L(op: LinearizedOp, w: Field) -> Field:
    if w.grid != op.grid:
        raise GridError("field and ground state live on different grids")
    return Field(w.grid, op.matvec(w.values))


def _helmholtz_inverse(grid: Grid2D):
    k1, k2 = grid.rwavenumbers
    inv = 1.0 / (1.0 + k1 * k1 + k2 * k2)
    n = grid.n_points

    def apply(v):
        return sfft.irfft2(sfft.rfft2(v) * inv, s=(n, n))

    return apply


@dataclass
class KrylovInfo:
    iterations: int
    residual: float
    converged: bool
    bound_ratio: float = float("nan")


def minres(matvec, b: np.ndarray, precond, inner, project=None, x0=None,
           rtol: float = 1e-10, maxiter: int = 5000):
    """Preconditioned MINRES for a symmetric (possibly indefinite) operator.

    ``precond`` must be symmetric positive definite.  ``project``, when
    given, is applied to every operator/preconditioner output and to the
    iterate so the Krylov space never leaves the invariant subspace.
    Convergence is judged on the true residual ``||b - A x|| <= rtol ||b||``.
    """
    P = project if project is not None else (lambda v: v)
    b = P(b)
    bnorm = np.sqrt(inner(b, b))
    x = np.zeros_like(b) if x0 is None else P(np.array(x0, dtype=float))
    if bnorm == 0:
        return x, KrylovInfo(0, 0.0, True)
    total = 0
    while True:
        r = b - P(matvec(x)) if total or x0 is not None else b.copy()
        rnorm = np.sqrt(inner(r, r))
        if rnorm <= rtol * bnorm:
            return x, KrylovInfo(total, rnorm / bnorm, True)
        if total >= maxiter:
            return x, KrylovInfo(total, rnorm / bnorm, False)
        # one MINRES cycle started from the current iterate
        v_old = np.zeros_like(b)
        v = r
        z = P(precond(v))
        gamma = np.sqrt(inner(z, v))
        gamma_old = 1.0
        eta = gamma
        s_old = s = 0.0
        c_old = c = 1.0
        w_old = np.zeros_like(b)
        w = np.zeros_like(b)
        # inner stop on the preconditioned residual estimate, a bit tighter
        # than requested; the outer loop re-checks the true residual
        inner_tol = 0.1 * rtol * gamma * bnorm / max(rnorm, 1e-300)
        while total < maxiter:
            total += 1
            z = z / gamma
            az = P(matvec(z))
            delta = inner(az, z)
            v_new = az - (delta / gamma) * v - (gamma / gamma_old) * v_old
            z_new = P(precond(v_new))
            gamma_new = np.sqrt(max(inner(z_new, v_new), 0.0))
            a0 = c * delta - c_old * s * gamma
            a1 = np.hypot(a0, gamma_new)
            a2 = s * delta + c_old * c * gamma
            a3 = s_old * gamma
            c_new, s_new = a0 / a1, gamma_new / a1
            w_new = (z - a3 * w_old - a2 * w) / a1
            x = x + (c_new * eta) * w_new
            eta = -s_new * eta
            v_old, v = v, v_new
            z = z_new
            gamma_old, gamma = gamma, gamma_new
            c_old, c = c, c_new
            s_old, s = s, s_new
            w_old, w = w, w_new
            if abs(eta) <= inner_tol or gamma_new == 0:
                break
        x = P(x)


_ALLOWED = {("Lplus", Symmetry.EE), ("Lplus", Symmetry.RADIAL), ("Lminus", Symmetry.OE)}


def invert_L_on_subspace(op: LinearizedOp, f: Field, sym=None, tol: float = 1e-10,
                         maxiter: int = 5000, x0=None) -> tuple[Field, KrylovInfo]:
    """Solve ``L g = f`` with ``g`` in the parity class ``sym``.

    Only ``(Lplus, EE|RADIAL)`` and ``(Lminus, OE)`` are accepted: those are
    the classes that exclude the kernels of ``L_+`` and ``L_-``.
    """
    if sym is None:
        sym = Symmetry.EE if op.kind == "Lplus" else Symmetry.OE
    sym = Symmetry(sym)
    if (op.kind, sym) not in _ALLOWED:
        raise ValueError(f"{op.kind} cannot be inverted on the {sym.value} class")
    if f.grid != op.grid:
        raise GridError("field and ground state live on different grids")
    fnorm = sobolev_norm(f, 0)
    from .field import symmetry_defect
    if symmetry_defect(f, sym) > 1e-10 * max(fnorm, 1.0):
        raise ValueError(f"right-hand side is not in the {sym.value} class")
    g = f.grid
    x, info = minres(
        op.matvec, f.values, _helmholtz_inverse(g),
        inner=lambda a, b: float(np.vdot(a, b).real) * g.cell_area,
        project=lambda a: project_array(a, sym),
        x0=None if x0 is None else x0.values if isinstance(x0, Field) else x0,
        rtol=tol, maxiter=maxiter,
    )
    if not info.converged:
        raise ConvergenceError(
            f"{op.kind}^-1 on {sym.value}: residual {info.residual:.3e} after "
            f"{info.iterations} iterations (grid too coarse or class violated?)")
    sol = Field(g, x)
    info.bound_ratio = sobolev_norm(sol, 2) / fnorm if fnorm > 0 else 0.0
    return sol, info


# --- appendix profiles ----------------------------------------------------

def solve_rho(Q: Field, tol: float = 1e-10) -> tuple[Field, KrylovInfo]:
    """Radial ``rho`` with ``L_+ rho = |y|^2 Q / 4``."""
    g = Q.grid
    rhs = Field(g, project_array(g.radius ** 2 * Q.values / 4.0, Symmetry.RADIAL))
    return invert_L_on_subspace(LinearizedOp("Lplus", Q), rhs, Symmetry.RADIAL, tol=tol)


def solve_R(Q: Field, tol: float = 1e-10) -> tuple[Field, KrylovInfo]:
    """Odd-even ``R`` with ``L_- R = d_1 Q``."""
    g = Q.grid
    rhs = Field(g, project_array(derivative(Q.values, g, (1, 0)), Symmetry.OE))
    return invert_L_on_subspace(LinearizedOp("Lminus", Q), rhs, Symmetry.OE, tol=tol)


def random_smooth_field(grid: Grid2D, rng: np.random.Generator, width: float = 3.0,
                        cutoff: float = 3.0) -> np.ndarray:
    """Band-limited random field under a Gaussian envelope of the given width."""
    noise = rng.standard_normal(grid.shape)
    lowpass = sfft.irfft2(sfft.rfft2(noise) * np.exp(-grid.rksq / cutoff ** 2), s=grid.shape)
    return lowpass * np.exp(-(grid.radius / width) ** 2)


@dataclass
class CoercivitySample:
    quadratic_forms: list
    h1_norms_sq: list

    @property
    def n_positive(self) -> int:
        return sum(q > 0 for q in self.quadratic_forms)

    @property
    def min_ratio(self) -> float:
        return min(q / n for q, n in zip(self.quadratic_forms, self.h1_norms_sq))


def coercivity_sample(Q: Field, rho: Field, n_samples: int = 20, seed: int = 0) -> CoercivitySample:
    """``<L_- w, w>`` for random ``w`` orthogonal to ``rho, d_1 Q, d_2 Q``."""
    g = Q.grid
    inner = lambda a, b: float(np.sum(a * b) * g.cell_area)  # noqa: E731
    basis = []
    for v in (rho.values, derivative(Q.values, g, (1, 0)), derivative(Q.values, g, (0, 1))):
        v = v.copy()
        for e in basis:
            v -= inner(v, e) * e
        basis.append(v / np.sqrt(inner(v, v)))
    op = LinearizedOp("Lminus", Q)
    rng = np.random.default_rng(seed)
    forms, norms = [], []
    for _ in range(n_samples):
        w = random_smooth_field(g, rng)
        for e in basis:
            w -= inner(w, e) * e
        forms.append(inner(op.matvec(w), w))
        norms.append(sobolev_norm(w, 1, g) ** 2)
    return CoercivitySample(forms, norms)


# --- free-space log-kernel oracle -----------------------------------------

def log_kernel_convolve(source: np.ndarray, grid: Grid2D, c, sigma: float = 1.0) -> np.ndarray:
    """``sum_y' ln q(y - y') source(y') dx^2`` over the whole box, singular cell corrected.

    ``q(y) = |y|^2 + (c.y)^2 / nu^2`` is the quadratic form of the fundamental
    solution ``ln q / (4 pi nu)`` of ``Delta - (c.grad)^2``.  The punctured
    trapezoid sum misses the integrable log singularity; it is restored by
    matching the exact integral of ``ln q * exp(-q / sigma^2)``.  The sum is a
    linear (non-periodic) convolution evaluated with zero-padded FFTs.
    """
    from scipy.signal import fftconvolve

    c1, c2 = c
    nu2 = 1.0 - c1 * c1 - c2 * c2
    n, dx = grid.n_points, grid.spacing
    off = np.arange(-(n - 1), n) * dx
    a, b = np.meshgrid(off, off, indexing="ij")
    q = a * a + b * b + (c1 * a + c2 * b) ** 2 / nu2
    kern = np.log(np.where(q == 0, 1.0, q))
    exact = np.sqrt(nu2) * np.pi * sigma ** 2 * (np.log(sigma ** 2) - np.euler_gamma)
    corr = exact - np.sum(kern * np.exp(-q / sigma ** 2)) * dx * dx
    total = fftconvolve(source, kern, mode="same") * dx * dx
    return total + corr * source


def free_space_multiplier(h: np.ndarray, grid: Grid2D, kind: str, c,
                          m: tuple[int, int] = (0, 0)) -> np.ndarray:
    """``d^m`` of ``S_c h`` or ``T_c,j h`` for the free-space problem.

    Uses ``S_c = Delta_c^{-1} (c.grad)^2`` and ``T_c,j = Delta_c^{-1} d_j (c.grad)``
    with the log kernel; ``h`` must vanish (to rounding) near the box edge.
    """
    c = as_speed(c)
    if kind not in ("Sc", "Tc1", "Tc2"):
        raise ValueError(f"free-space evaluation supports Sc, Tc1, Tc2, not {kind!r}")
    if c == (0.0, 0.0):
        return np.zeros_like(h)
    c1, c2 = c
    m1, m2 = m
    if kind == "Sc":
        terms = [(c1 * c1, (2, 0)), (2 * c1 * c2, (1, 1)), (c2 * c2, (0, 2))]
    elif kind == "Tc1":
        terms = [(c1, (2, 0)), (c2, (1, 1))]
    else:
        terms = [(c1, (1, 1)), (c2, (0, 2))]
    src = sum(w * derivative(h, grid, (d1 + m1, d2 + m2)) for w, (d1, d2) in terms if w != 0)
    nu = np.sqrt(1.0 - c1 * c1 - c2 * c2)
    return log_kernel_convolve(src, grid, c) / (4 * np.pi * nu)


def _node_indices(grid: Grid2D, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError("eval_points must have shape (M, 2)")
    L = grid.box_length
    if np.any(np.abs(pts) > L / 2 - L / 8):
        raise ValueError(f"evaluation points must stay {L / 8:g} away from the box boundary")
    idx = (pts + L / 2) / grid.spacing
    nodes = np.rint(idx)
    if np.any(np.abs(idx - nodes) > 1e-6):
        raise ValueError("evaluation points must be grid nodes")
    return nodes.astype(int)


def logkernel_Sc_oracle(h: Field, c, eval_points) -> np.ndarray:
    """Free-space ``S_c h`` at grid nodes by direct quadrature of the log kernel.

    ``S_c h = (1 / (4 pi nu)) * ln q  *  (c.grad)^2 h`` with ``nu = sqrt(1 - |c|^2)``;
    the convolution is the full (non-periodic) lattice sum over the box.
    """
    c = as_speed(c)
    idx = _node_indices(h.grid, eval_points)
    if c == (0.0, 0.0):
        return np.zeros(len(idx))
    total = free_space_multiplier(h.values, h.grid, "Sc", c)
    return total[idx[:, 0], idx[:, 1]]


@dataclass
class KernelNormalization:
    """Relative L2 mismatch of ``sign * c^2 / (4 pi^a nu) * kernel sum`` against ``S_c h``."""

    errors: dict
    best: tuple

    def as_dict(self) -> dict:
        return {"errors": {f"sign={s:+d},pi_power={a}": e for (s, a), e in self.errors.items()},
                "best_sign": self.best[0], "best_pi_power": self.best[1]}


def kernel_normalization(h: Field, c, eval_points) -> KernelNormalization:
    """Decide the log-kernel prefactor by comparison with the spectral ``S_c``."""
    c = as_speed(c)
    if c == (0.0, 0.0):
        raise SpeedError("normalization is undetermined at c = 0")
    idx = _node_indices(h.grid, eval_points)
    # with the prefactor 1 / (4 pi) stripped
    raw = 4 * np.pi * free_space_multiplier(h.values, h.grid, "Sc", c)[idx[:, 0], idx[:, 1]]
    ref = multiplier_array(h.values, h.grid, "Sc", c)[idx[:, 0], idx[:, 1]]
    scale = np.linalg.norm(ref)
    errors = {}
    for sign in (1, -1):
        for a in (1, 2):
            errors[(sign, a)] = float(np.linalg.norm(sign * raw / (4 * np.pi ** a) - ref) / scale)
    return KernelNormalization(errors, min(errors, key=errors.get))
