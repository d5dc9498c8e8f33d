"""Fixed-point construction of the travelling profiles ``(U_c, N_c, V_c)``.

The speed is reduced to ``c = (c, 0)``; the perturbation ``U = Q + eta1 +
i eta2`` is found by Picard iteration of ``G_c = (L_+^-1 F_c^+, L_-^-1 F_c^-)``
on the even-even x odd-even parity classes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import scipy.fft as sfft

from .field import (
    Field, Grid2D, Symmetry, derivative, laplacian, project_array, sobolev_norm,
    strip_nyquist, symmetry_defect,
)
from .operators import (
    LinearizedOp, as_speed, invert_L_on_subspace, multiplier_array,
)

log = logging.getLogger(__name__)

DEFAULT_C_CAP = 0.5


class ContractionError(RuntimeError):
    """The Picard iteration did not contract (speed outside the measured region)."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class EtaPair:
    eta1: Field
    eta2: Field

    @property
    def E_norm(self) -> float:
        return sobolev_norm(self.eta1, 2) + sobolev_norm(self.eta2, 2)

    def __sub__(self, other: "EtaPair") -> "EtaPair":
        return EtaPair(self.eta1 - other.eta1, self.eta2 - other.eta2)

    @classmethod
    def zeros(cls, grid: Grid2D) -> "EtaPair":
        return cls(Field(grid, grid.zeros()), Field(grid, grid.zeros()))

    def defects(self) -> tuple[float, float]:
        return symmetry_defect(self.eta1, Symmetry.EE), symmetry_defect(self.eta2, Symmetry.OE)


@dataclass
class IterationReport:
    update_norms: list = dc_field(default_factory=list)
    contraction_factors: list = dc_field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    krylov_iterations: list = dc_field(default_factory=list)
    fixed_point_residual: float = float("nan")

    @property
    def contraction_factor(self) -> float:
        """Last measured ratio of successive update norms (nan if undefined)."""
        finite = [r for r in self.contraction_factors if np.isfinite(r)]
        return finite[-1] if finite else float("nan")

    @property
    def max_contraction_factor(self) -> float:
        finite = [r for r in self.contraction_factors if np.isfinite(r)]
        return max(finite) if finite else float("nan")

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "update_norms": list(map(float, self.update_norms)),
            "contraction_history": list(map(float, self.contraction_factors)),
            "fixed_point_residual": float(self.fixed_point_residual),
        }


def _two_thirds_filter(grid: Grid2D):
    n = grid.n_points
    idx = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    keep1 = idx < n / 3
    keep = keep1[:, None] & keep1[None, :]
    keep_r = keep[:, : n // 2 + 1]
    import scipy.fft as sfft

    def filt(a):
        return sfft.irfft2(sfft.rfft2(a) * keep_r, s=(n, n))

    return filt


class _Products:
    """Pointwise products, optionally 2/3-rule dealiased."""

    def __init__(self, grid: Grid2D, dealias: bool):
        self.filt = _two_thirds_filter(grid) if dealias else None

    def __call__(self, *factors):
        out = factors[0]
        for f in factors[1:]:
            out = out * f
        return self.filt(out) if self.filt is not None else out


def _check_speed_e1(c) -> float:
    c1, c2 = as_speed(c)
    if c2 != 0.0:
        raise ValueError("the fixed-point maps assume c = (c, 0); use rotate_frame for other directions")
    return c1


def _check_eta(eta: EtaPair, tol: float = 1e-8):
    d1, d2 = eta.defects()
    scale = max(sobolev_norm(eta.eta1, 0) + sobolev_norm(eta.eta2, 0), 1.0)
    if d1 > tol * scale or d2 > tol * scale:
        raise ValueError(f"eta is not in E (defects {d1:.2e}, {d2:.2e})")


def _F_pair(eta: EtaPair, c: float, Q: Field, dealias: bool = False, check: bool = True):
    if check:
        _check_eta(eta)
    g = Q.grid
    q, e1, e2 = Q.values, eta.eta1.values, eta.eta2.values
    mul = _Products(g, dealias)

    def S(a):
        return multiplier_array(a, g, "Sc", (c, 0.0))

    sQ2 = S(mul(q, q))
    sQe1 = S(mul(q, e1))
    se1 = S(mul(e1, e1))
    se2 = S(mul(e2, e2))
    fplus = (mul(sQ2, q) + mul(sQ2, e1) + 2 * mul(sQe1, q) + 3 * mul(q, e1, e1) + mul(q, e2, e2)
             + 2 * mul(sQe1, e1) + mul(se1, q) + mul(se2, q) + mul(e1, e1, e1) + mul(e1, e2, e2)
             + mul(se1, e1) + mul(se2, e1))
    fminus = (mul(sQ2, e2) + 2 * mul(q, e1, e2) + 2 * mul(sQe1, e2) + mul(e1, e1, e2)
              + mul(e2, e2, e2) + mul(se1, e2) + mul(se2, e2))
    return fplus, fminus


def F_plus(eta: EtaPair, c, Q: Field, dealias: bool = False) -> Field:
    """Right-hand side of ``L_+ eta1 = F_c^+(eta1, eta2)`` (12 terms)."""
    fp, _ = _F_pair(eta, _check_speed_e1(c), Q, dealias)
    return Field(Q.grid, fp)


def F_minus(eta: EtaPair, c, Q: Field, dealias: bool = False) -> Field:
    """Right-hand side of ``L_- eta2 = F_c^-(eta1, eta2)`` (7 terms)."""
    _, fm = _F_pair(eta, _check_speed_e1(c), Q, dealias)
    return Field(Q.grid, fm)


def G_map(eta: EtaPair, c, Q: Field, *, dealias: bool = False, tol: float = 1e-12,
          x0: EtaPair | None = None, info: list | None = None) -> EtaPair:
    """One application of ``G_c``; each component stays in its parity class."""
    c = _check_speed_e1(c)
    fp, fm = _F_pair(eta, c, Q, dealias)
    fp = project_array(fp, Symmetry.EE)
    fm = project_array(fm, Symmetry.OE)
    g1, i1 = invert_L_on_subspace(LinearizedOp("Lplus", Q), Field(Q.grid, fp), Symmetry.EE,
                                  tol=tol, x0=None if x0 is None else x0.eta1)
    g2, i2 = invert_L_on_subspace(LinearizedOp("Lminus", Q), Field(Q.grid, fm), Symmetry.OE,
                                  tol=tol, x0=None if x0 is None else x0.eta2)
    if info is not None:
        info.append((i1.iterations, i2.iterations))
    return EtaPair(g1, g2)


def solve_eta(c, Q: Field, tol: float = 1e-10, max_iter: int = 200, *,
              c_cap: float = DEFAULT_C_CAP, eta0: EtaPair | None = None,
              dealias: bool = False, krylov_tol: float = 1e-12,
              newton: bool = False) -> tuple[EtaPair, IterationReport]:
    """Picard iteration ``eta <- G_c(eta)`` from ``eta0`` (default zero).

    Stops once the E-norm of the update is ``<= tol``.  Raises
    :class:`ContractionError` if the update norm grows over 5 consecutive
    iterations or ``max_iter`` is exhausted.
    """
    c = _check_speed_e1(c)
    if abs(c) > c_cap:
        raise ContractionError(f"|c| = {abs(c):g} exceeds c_cap = {c_cap:g}; "
                               "the fixed-point map is not known to contract there")
    grid = Q.grid
    eta = EtaPair.zeros(grid) if eta0 is None else eta0
    report = IterationReport()
    if newton:
        return _solve_eta_newton(c, Q, eta, tol, max_iter, dealias, krylov_tol, report)
    growth = 0
    for it in range(1, max_iter + 1):
        new = G_map(eta, c, Q, dealias=dealias, tol=krylov_tol, x0=eta,
                    info=report.krylov_iterations)
        upd = (new - eta).E_norm
        if report.update_norms:
            prev = report.update_norms[-1]
            ratio = upd / prev if prev > 0 else float("nan")
            report.contraction_factors.append(ratio)
            growth = growth + 1 if upd > prev else 0
        report.update_norms.append(upd)
        report.iterations = it
        eta = new
        log.debug("picard %d: update %.3e", it, upd)
        if upd <= tol:
            report.converged = True
            break
        if growth >= 5 or not np.isfinite(upd):
            raise ContractionError(
                f"Picard iteration diverging at c = {c:g} (update norms grew for 5 iterations)",
                report)
    else:
        raise ContractionError(f"no convergence within {max_iter} iterations at c = {c:g}", report)
    return eta, report


def _solve_eta_newton(c, Q, eta, tol, max_iter, dealias, krylov_tol, report):
    from scipy.optimize import NoConvergence, newton_krylov

    grid = Q.grid
    n = grid.n_points

    def unpack(x):
        x = x.reshape(2, n, n)
        return EtaPair(Field(grid, project_array(x[0], Symmetry.EE)),
                       Field(grid, project_array(x[1], Symmetry.OE)))

    def residual(x):
        e = unpack(x)
        g = G_map(e, c, Q, dealias=dealias, tol=krylov_tol, info=report.krylov_iterations)
        r = np.stack([e.eta1.values - g.eta1.values, e.eta2.values - g.eta2.values])
        report.iterations += 1
        return r.ravel()

    x0 = np.stack([eta.eta1.values, eta.eta2.values]).ravel()
    try:
        x = newton_krylov(residual, x0, f_tol=tol * 1e-2, maxiter=max_iter, method="lgmres")
    except NoConvergence as exc:
        raise ContractionError(f"Newton iteration failed at c = {c:g}", report) from exc
    eta = unpack(x)
    report.converged = True
    return eta, report


def contraction_scan(Q: Field, speeds, tol: float = 1e-10, max_iter: int = 200,
                     c_cap: float = DEFAULT_C_CAP, dealias: bool = False) -> dict:
    """Run the Picard iteration at each speed and report where it contracts.

    A speed counts as contracting when the iteration converges and every
    ratio of successive update norms is below 1.
    """
    rows = []
    for c in speeds:
        try:
            eta, rep = solve_eta(c, Q, tol=tol, max_iter=max_iter, c_cap=c_cap, dealias=dealias)
            factor = rep.max_contraction_factor if rep.contraction_factors else 0.0
            rows.append({"c": float(c), "converged": True, "iterations": rep.iterations,
                         "max_contraction_factor": float(factor), "E_norm": eta.E_norm})
        except ContractionError as exc:
            rep = exc.report
            rows.append({"c": float(c), "converged": False,
                         "iterations": rep.iterations if rep else 0,
                         "max_contraction_factor": float(rep.max_contraction_factor) if rep else float("nan"),
                         "E_norm": float("nan")})
    ok = [r["c"] for r in rows if r["converged"] and r["max_contraction_factor"] < 1]
    return {"rows": rows, "largest_contracting_speed": max(ok) if ok else None}


def fixed_point_residual(eta: EtaPair, c, Q: Field, dealias: bool = False) -> float:
    """``||G_c(eta) - eta||_E``."""
    return (G_map(eta, c, Q, dealias=dealias) - eta).E_norm


@dataclass
class SolitonProfile:
    c: tuple[float, float]
    U: Field
    N: Field
    V: tuple[Field, Field]
    residuals: tuple[float, float, float]
    omega: float = 1.0
    iterations: IterationReport | None = None
    eta: EtaPair | None = None

    @property
    def grid(self) -> Grid2D:
        return self.U.grid

    def symmetry_defects(self) -> dict:
        """Parity defects relative to each field's L^2 norm (c along e1 only)."""
        def rel(f, sym):
            n = sobolev_norm(f, 0)
            return symmetry_defect(f, sym) / n if n > 0 else 0.0
        return {
            "ReU_EE": rel(self.U.real, Symmetry.EE),
            "ImU_OE": rel(self.U.imag, Symmetry.OE),
            "N_EE": rel(self.N, Symmetry.EE),
            "V1_EE": rel(self.V[0], Symmetry.EE),
            "V2_OO": rel(self.V[1], Symmetry.OO),
        }


def stationary_residuals(U: Field, N: Field, V, c, omega: float = 1.0) -> tuple[float, float, float]:
    """Relative residuals of the three stationary equations.

    1. ``||Delta U - omega U - N U|| / ||U||_{H^2}``
    2. ``||grad(N + |U|^2) - (c.grad) V|| / ||grad |U|^2||``
    3. ``||c.grad N - div V|| / ||grad |U|^2||``
    """
    g = U.grid
    c1, c2 = c
    u, n = U.values, N.values
    v1, v2 = V[0].values, V[1].values
    r1 = laplacian(u, g) - omega * u - n * u
    res1 = sobolev_norm(r1, 0, g) / sobolev_norm(U, 2)
    h = np.abs(u) ** 2
    scale = np.sqrt(sobolev_norm(derivative(h, g, (1, 0)), 0, g) ** 2
                    + sobolev_norm(derivative(h, g, (0, 1)), 0, g) ** 2)
    p = n + h

    def cdot_grad(a):
        return c1 * derivative(a, g, (1, 0)) + c2 * derivative(a, g, (0, 1))

    # odd derivatives are undefined on Nyquist modes, so lines 2-3 are
    # measured on the resolved modes only
    line2 = [strip_nyquist(derivative(p, g, (1, 0)) - cdot_grad(v1), g),
             strip_nyquist(derivative(p, g, (0, 1)) - cdot_grad(v2), g)]
    res2 = np.sqrt(sum(sobolev_norm(a, 0, g) ** 2 for a in line2)) / scale
    line3 = strip_nyquist(cdot_grad(n) - derivative(v1, g, (1, 0)) - derivative(v2, g, (0, 1)), g)
    res3 = sobolev_norm(line3, 0, g) / scale
    return float(res1), float(res2), float(res3)


def fields_from_U(U: Field, c) -> tuple[Field, tuple[Field, Field]]:
    """``N = -|U|^2 - S_c|U|^2`` and ``V = -(T_c1 |U|^2, T_c2 |U|^2)``."""
    g = U.grid
    c = as_speed(c)
    h = np.abs(U.values) ** 2
    N = -h - multiplier_array(h, g, "Sc", c)
    V = (-multiplier_array(h, g, "Tc1", c), -multiplier_array(h, g, "Tc2", c))
    return Field(g, N), (Field(g, V[0]), Field(g, V[1]))


def assemble_profile(eta: EtaPair, c, Q: Field, report: IterationReport | None = None) -> SolitonProfile:
    c = as_speed(c)
    U = Field(Q.grid, Q.values + eta.eta1.values + 1j * eta.eta2.values)
    N, V = fields_from_U(U, c)
    res = stationary_residuals(U, N, V, c)
    return SolitonProfile(c=c, U=U, N=N, V=V, residuals=res, iterations=report, eta=eta)


def solve_profile(c, Q: Field, **kwargs) -> SolitonProfile:
    """Solve for any speed vector: solve along e1, then rotate."""
    c1, c2 = as_speed(c)
    speed = float(np.hypot(c1, c2))
    eta, rep = solve_eta(speed, Q, **kwargs)
    prof = assemble_profile(eta, speed, Q, rep)
    theta = float(np.arctan2(c2, c1))
    if theta != 0.0:
        prof = rotate_frame(prof, theta)
    return prof


# --- frame rotation -------------------------------------------------------

def _rotate_exact(a: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Sample ``a(R(-theta) y)`` for ``theta = quarter_turns * pi/2``."""
    n = a.shape[0]
    i = np.arange(n) - n // 2
    I, J = np.meshgrid(i, i, indexing="ij")
    k = quarter_turns % 4
    # R(-theta) (i, j) for theta = k pi/2
    src = {0: (I, J), 1: (J, -I), 2: (-I, -J), 3: (-J, I)}[k]
    return a[(src[0] + n // 2) % n, (src[1] + n // 2) % n]


def _shear(a: np.ndarray, grid: Grid2D, axis: int, amount: float) -> np.ndarray:
    """Sample ``a(y1 + amount*y2, y2)`` (axis 0) or ``a(y1, y2 + amount*y1)`` (axis 1).

    Each line is translated by a Fourier phase, exact for band-limited data.
    """
    k = grid.k1d
    y = grid.coords
    if axis == 0:
        phase = np.exp(1j * k[:, None] * (amount * y)[None, :])
    else:
        phase = np.exp(1j * (amount * y)[:, None] * k[None, :])
    out = sfft.ifft(sfft.fft(a, axis=axis) * phase, axis=axis)
    return out if np.iscomplexobj(a) else out.real


def _rotate_spectral(a: np.ndarray, grid: Grid2D, theta: float) -> np.ndarray:
    """Sample ``a(R(-theta) y)``: quarter turns exactly, the rest by three shears."""
    q = int(np.round(theta / (np.pi / 2)))
    a = _rotate_exact(a, q)
    phi = theta - q * np.pi / 2
    if phi == 0.0:
        return a
    # R(-phi) = Sx(t) Sy(-sin phi) Sx(t), t = tan(phi/2); applied left to right
    t = np.tan(phi / 2)
    a = _shear(a, grid, 0, t)
    a = _shear(a, grid, 1, -np.sin(phi))
    return _shear(a, grid, 0, t)


def rotate_frame(profile: SolitonProfile, theta: float) -> SolitonProfile:
    """Profile for the speed rotated counter-clockwise by ``theta``.

    ``U'(y) = U(R(-theta) y)``, ``N'`` likewise and ``V'(y) = R(theta) V(R(-theta) y)``.
    Multiples of ``pi/2`` permute grid points exactly.  Other angles rotate
    ``U`` spectrally (three Fourier shears, accurate while ``U`` is at rounding
    level on the box edge) and rebuild ``N``, ``V`` from ``|U'|^2`` with the
    rotated speed, which avoids resampling their algebraic tails.
    """
    g = profile.grid
    q = theta / (np.pi / 2)
    exact = abs(q - round(q)) < 1e-12
    ct, st = np.cos(theta), np.sin(theta)
    if exact:
        ct, st = float(np.rint(ct)), float(np.rint(st))
    c1, c2 = profile.c
    c_new = (ct * c1 - st * c2, st * c1 + ct * c2)
    if exact:
        k = int(round(q))
        U = Field(g, _rotate_exact(profile.U.values, k))
        N = Field(g, _rotate_exact(profile.N.values, k))
        v1, v2 = _rotate_exact(profile.V[0].values, k), _rotate_exact(profile.V[1].values, k)
        V = (Field(g, ct * v1 - st * v2), Field(g, st * v1 + ct * v2))
    else:
        U = Field(g, _rotate_spectral(profile.U.values, g, theta))
        N, V = fields_from_U(U, c_new)
        if profile.omega != 1.0:
            raise ValueError("rotate before rescaling: general angles rebuild N, V at omega = 1")
    res = stationary_residuals(U, N, V, c_new, profile.omega)
    return replace(profile, c=c_new, U=U, N=N, V=V, residuals=res, eta=None)


def rescale_profile(profile: SolitonProfile, omega: float) -> SolitonProfile:
    """``sqrt(omega) U(sqrt(omega) y)``, ``omega N(sqrt(omega) y)``, ``omega V(sqrt(omega) y)``.

    The sample values are reused on a box of length ``L / sqrt(omega)``; only
    the amplitudes change.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    g = profile.grid
    s = float(np.sqrt(omega))
    g2 = Grid2D(g.n_points, g.box_length / s)
    U = Field(g2, s * profile.U.values)
    N = Field(g2, omega * profile.N.values)
    V = (Field(g2, omega * profile.V[0].values), Field(g2, omega * profile.V[1].values))
    res = stationary_residuals(U, N, V, profile.c, omega * profile.omega)
    return replace(profile, U=U, N=N, V=V, residuals=res, omega=omega * profile.omega, eta=None)


def scaling_family_check(profile: SolitonProfile, omega: float) -> dict:
    """Residuals of the ``omega``-rescaled profile, which must solve the
    stationary system with ``Delta U = omega U + N U`` on the rescaled grid."""
    scaled = rescale_profile(profile, omega)
    return {"omega": omega, "box_length": scaled.grid.box_length,
            "residuals": scaled.residuals, "base_residuals": profile.residuals}
