"""Ground state ``Q`` of ``Delta Q = Q - Q^3`` on the periodic grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .field import Field, Grid2D, Symmetry, laplacian, project_array, sobolev_norm, symmetry_defect
from .operators import ConvergenceError, LinearizedOp, invert_L_on_subspace

log = logging.getLogger(__name__)


class GroundStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundState:
    Q: Field
    residual: float
    peak: float
    mass: float
    petviashvili_iterations: int = 0
    newton_iterations: int = 0

    @property
    def grid(self) -> Grid2D:
        return self.Q.grid


def nls_residual(q: np.ndarray, grid: Grid2D) -> np.ndarray:
    return laplacian(q, grid) - q + q ** 3


def petviashvili(grid: Grid2D, tol: float = 1e-4, max_iter: int = 500, gamma: float = 1.5,
                 seed_amplitude: float = 2.2):
    """Petviashvili iteration for the cubic ground state.

    Returns ``(Q, iterations)`` once ``||Delta Q - Q + Q^3|| <= tol ||Q||``.
    """
    n = grid.n_points
    inv = 1.0 / (1.0 + grid.rksq)
    q = seed_amplitude * np.exp(-0.5 * grid.radius ** 2)
    for it in range(1, max_iter + 1):
        qh = sfft.rfft2(q)
        q3 = q ** 3
        num = np.sum(q * sfft.irfft2(qh / inv, s=(n, n)))
        den = np.sum(q3 * q)
        if not np.isfinite(den) or den <= 0 or num <= 0:
            raise GroundStateError("Petviashvili iteration collapsed")
        m = num / den
        q = m ** gamma * sfft.irfft2(sfft.rfft2(q3) * inv, s=(n, n))
        q = project_array(q, Symmetry.RADIAL)
        qn = sobolev_norm(q, 0, grid)
        if not np.isfinite(qn) or qn < 1e-8:
            raise GroundStateError("Petviashvili iteration collapsed to zero")
        if qn > 1e6:
            raise GroundStateError("Petviashvili iteration diverged")
        res = sobolev_norm(nls_residual(q, grid), 0, grid)
        if res <= tol * qn:
            return q, it
    raise GroundStateError(f"Petviashvili did not reach {tol:g} in {max_iter} iterations")


# far-field values below this fraction of the peak are rounding noise
POSITIVITY_FLOOR = 1e-12


def is_positive(q: np.ndarray) -> bool:
    """``Q > 0`` up to rounding in the far field."""
    return bool(np.min(q) > -POSITIVITY_FLOOR * np.max(q))


def compute_Q(grid: Grid2D, tol: float = 1e-10, max_newton: int = 20) -> GroundState:
    """Petviashvili iteration followed by Newton polishing on the radial class."""
    if np.exp(-grid.box_length / 2) >= max(tol, 1e-300) * 1e3:
        log.warning("box L=%g is small for tolerance %g", grid.box_length, tol)
    q, n_pet = petviashvili(grid)
    qn = sobolev_norm(q, 0, grid)
    res = sobolev_norm(nls_residual(q, grid), 0, grid)
    n_newton = 0
    while res > tol * qn:
        if n_newton >= max_newton:
            raise GroundStateError(f"Newton polish stalled at residual {res:.3e}")
        n_newton += 1
        F = project_array(nls_residual(q, grid), Symmetry.RADIAL)
        op = LinearizedOp("Lplus", Field(grid, q))
        try:
            delta, _ = invert_L_on_subspace(op, Field(grid, F), Symmetry.RADIAL,
                                            tol=min(1e-12, tol * 1e-2))
        except ConvergenceError as exc:
            raise GroundStateError(f"Newton step failed: {exc}") from exc
        q = q + delta.values
        qn = sobolev_norm(q, 0, grid)
        new_res = sobolev_norm(nls_residual(q, grid), 0, grid)
        log.debug("newton %d: residual %.3e", n_newton, new_res)
        if new_res > 0.5 * res and new_res > tol * qn:
            # rounding floor reached
            res = new_res
            if n_newton > 3:
                raise GroundStateError(f"Newton polish stalled at residual {res:.3e}")
        res = new_res
    Q = Field(grid, q)
    if not is_positive(q):
        raise GroundStateError(f"computed ground state is not positive (min {np.min(q):.3e})")
    if np.unravel_index(np.argmax(q), q.shape) != grid.origin_index:
        raise GroundStateError("ground state peak is not at the origin")
    return GroundState(Q=Q, residual=res, peak=float(q[grid.origin_index]),
                       mass=sobolev_norm(Q, 0) ** 2,
                       petviashvili_iterations=n_pet, newton_iterations=n_newton)


@dataclass(frozen=True)
class QDecayReport:
    slope: float
    amplitude: float
    max_weighted: float
    r_min: float
    r_max: float
    n_samples: int


def q_decay_check(gs, r_min: float = 5.0, r_max: float | None = None) -> QDecayReport:
    """Fit ``log Q + log(r)/2 = a - b r`` on an annulus; ``slope = -b``."""
    Q = gs.Q if isinstance(gs, GroundState) else gs
    grid = Q.grid
    if r_max is None:
        r_max = grid.box_length / 2 - 2
    q = Q.values
    if not np.any(q > 0) or Q.max_abs() == 0:
        raise ValueError("ground state is identically zero")
    r = grid.radius
    sel = (r >= r_min) & (r <= r_max)
    if not np.any(sel):
        raise ValueError(f"annulus [{r_min}, {r_max}] contains no grid points")
    rr, qq = r[sel], q[sel]
    good = qq > 0
    if good.sum() < 10:
        raise ValueError("ground state is not positive on the annulus")
    rr, qq = rr[good], qq[good]
    y = np.log(qq) + 0.5 * np.log(rr)
    slope, intercept = np.polyfit(rr, y, 1)
    weighted = qq * np.sqrt(rr) * np.exp(rr)
    return QDecayReport(float(slope), float(np.exp(intercept)), float(weighted.max()),
                        r_min, r_max, int(rr.size))


def virial_identities(gs: GroundState) -> dict:
    """Integrals entering the 2D Pohozaev identities for ``Q``."""
    Q = gs.Q
    g = Q.grid
    q = Q.values
    grad2 = sobolev_norm(Q, 1) ** 2 - sobolev_norm(Q, 0) ** 2
    q2 = float(np.sum(q ** 2) * g.cell_area)
    q4 = float(np.sum(q ** 4) * g.cell_area)
    return {"grad2": grad2, "q2": q2, "q4": q4}

