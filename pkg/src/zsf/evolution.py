"""Time integration of the first-order Zakharov system.

    u_t = i Delta u - i n u,   n_t = -div v,   v_t = -grad n - grad |u|^2

Strang splitting ``C(dt/2) L(dt) C(dt/2)``, both substeps solved exactly:

* ``L``: free Schroedinger flow ``exp(-i |xi|^2 t)`` and the unit-speed acoustic
  flow of ``(n, v)``, a rotation of ``(n, xi.v/|xi|)`` per Fourier mode (the
  transverse part of ``v`` does not move).
* ``C``: ``u <- exp(-i n t) u`` and ``v <- v - t grad|u|^2``; ``n`` and ``|u|``
  are constant along this flow.

The scheme is symmetric, hence time reversible, and conserves mass exactly.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.optimize import minimize

from .field import Field, Grid2D, sobolev_norm

log = logging.getLogger(__name__)


class EvolutionError(RuntimeError):
    pass


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ZSF_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EvolutionState:
    t: float
    u: Field
    n: Field
    v: tuple[Field, Field]

    @property
    def grid(self) -> Grid2D:
        return self.u.grid

    @classmethod
    def from_arrays(cls, grid: Grid2D, t: float, u, n, v1, v2) -> "EvolutionState":
        return cls(float(t), Field(grid, np.asarray(u, dtype=complex)), Field(grid, n),
                   (Field(grid, v1), Field(grid, v2)))


@dataclass(frozen=True)
class ConservedQuantities:
    mass: float
    energy: float
    momentum: tuple[float, float]

    def as_dict(self) -> dict:
        return {"mass": self.mass, "energy": self.energy, "momentum": list(self.momentum)}


def _odd_wavenumbers(grid: Grid2D, half: bool):
    """Wavenumbers with the Nyquist entries zeroed (first-derivative symbols)."""
    k1, k2 = grid.rwavenumbers if half else grid.wavenumbers
    kn = math.pi / grid.spacing
    k1 = np.where(np.isclose(np.abs(k1), kn), 0.0, k1)
    k2 = np.where(np.isclose(np.abs(k2), kn), 0.0, k2)
    return k1, k2


def _conserved_arrays(grid: Grid2D, u, n, v1, v2) -> ConservedQuantities:
    k1, k2 = _odd_wavenumbers(grid, False)
    uh = sfft.fft2(u, workers=_workers())
    du1 = sfft.ifft2(1j * k1 * uh, workers=_workers())
    du2 = sfft.ifft2(1j * k2 * uh, workers=_workers())
    da = grid.cell_area
    h = np.abs(u) ** 2
    mass = float(np.sum(h) * da)
    energy = float(np.sum(np.abs(du1) ** 2 + np.abs(du2) ** 2 + n * h + 0.5 * n * n
                          + 0.5 * (v1 * v1 + v2 * v2)) * da)
    ub = np.conj(u)
    p1 = float(np.sum(np.imag(ub * du1) + n * v1) * da)
    p2 = float(np.sum(np.imag(ub * du2) + n * v2) * da)
    return ConservedQuantities(mass, energy, (p1, p2))


def conserved(state: EvolutionState) -> ConservedQuantities:
    """Mass ``int |u|^2``, energy and momentum by grid quadrature."""
    return _conserved_arrays(state.grid, state.u.values, state.n.values,
                             state.v[0].values, state.v[1].values)


def dt_cap(grid: Grid2D) -> float:
    return grid.spacing ** 2 / math.pi


class _Stepper:
    """Array-level integrator; consecutive coupling half-steps are fused."""

    def __init__(self, grid: Grid2D, dt: float):
        self.grid, self.dt = grid, dt
        self.w = _workers()
        kk = grid.ksq
        self.schr = np.exp(-1j * kk * dt)
        k1, k2 = _odd_wavenumbers(grid, True)
        self.rk1, self.rk2 = k1, k2
        kabs = np.hypot(k1, k2)
        self.cos = np.cos(kabs * dt)
        self.sin = np.sin(kabs * dt)
        safe = np.where(kabs == 0, 1.0, kabs)
        self.e1 = np.where(kabs == 0, 0.0, k1 / safe)
        self.e2 = np.where(kabs == 0, 0.0, k2 / safe)

    def _grad(self, a):
        n = self.grid.n_points
        ah = sfft.rfft2(a, workers=self.w)
        return (sfft.irfft2(1j * self.rk1 * ah, s=(n, n), workers=self.w),
                sfft.irfft2(1j * self.rk2 * ah, s=(n, n), workers=self.w))

    def coupling(self, u, n, v1, v2, t):
        g1, g2 = self._grad(np.abs(u) ** 2)
        return np.exp(-1j * n * t) * u, n, v1 - t * g1, v2 - t * g2

    def linear(self, u, n, v1, v2):
        N = self.grid.n_points
        w = self.w
        u = sfft.ifft2(sfft.fft2(u, workers=w) * self.schr, workers=w)
        nh = sfft.rfft2(n, workers=w)
        v1h = sfft.rfft2(v1, workers=w)
        v2h = sfft.rfft2(v2, workers=w)
        a = self.e1 * v1h + self.e2 * v2h
        a_new = a * self.cos - 1j * nh * self.sin
        nh = nh * self.cos - 1j * a * self.sin
        da = a_new - a
        v1h = v1h + self.e1 * da
        v2h = v2h + self.e2 * da
        return (u, sfft.irfft2(nh, s=(N, N), workers=w),
                sfft.irfft2(v1h, s=(N, N), workers=w), sfft.irfft2(v2h, s=(N, N), workers=w))

    def run(self, arrays, n_steps: int):
        """``n_steps`` Strang steps with fused interior half-steps."""
        if n_steps <= 0:
            return arrays
        dt = self.dt
        arrays = self.coupling(*arrays, 0.5 * dt)
        for k in range(n_steps):
            arrays = self.linear(*arrays)
            arrays = self.coupling(*arrays, dt if k < n_steps - 1 else 0.5 * dt)
        return arrays


def _check_dt(grid: Grid2D, dt: float, cap: float | None):
    if dt == 0 or not math.isfinite(dt):
        raise ValueError(f"invalid time step {dt!r}")
    cap = dt_cap(grid) if cap is None else cap
    if abs(dt) > cap:
        warnings.warn(f"|dt| = {abs(dt):g} exceeds the cap {cap:g}", RuntimeWarning, stacklevel=3)


def _state_arrays(state: EvolutionState):
    return (state.u.values.copy(), state.n.values.copy(),
            state.v[0].values.copy(), state.v[1].values.copy())


def _finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def step(state: EvolutionState, dt: float, dt_max: float | None = None) -> EvolutionState:
    """One Strang step; ``dt`` may be negative (exact time reversal)."""
    _check_dt(state.grid, dt, dt_max)
    out = _Stepper(state.grid, dt).run(_state_arrays(state), 1)
    if not _finite(out):
        raise EvolutionError(f"non-finite state after step at t = {state.t + dt:g}")
    return EvolutionState.from_arrays(state.grid, state.t + dt, *out)


def evolve(state: EvolutionState, T: float, dt: float, dt_max: float | None = None) -> EvolutionState:
    n_steps = int(round(T / dt))
    if n_steps < 0 or not math.isclose(n_steps * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("T must be a non-negative multiple of dt")
    _check_dt(state.grid, dt, dt_max)
    out = _Stepper(state.grid, dt).run(_state_arrays(state), n_steps)
    if not _finite(out):
        raise EvolutionError("non-finite state")
    return EvolutionState.from_arrays(state.grid, state.t + n_steps * dt, *out)


# --- initial data -----------------------------------------------------------

def standing_wave_state(Q: Field) -> EvolutionState:
    """``(Q, -Q^2, 0)``, whose exact evolution is ``u = exp(it) Q``."""
    z = np.zeros(Q.grid.shape)
    return EvolutionState.from_arrays(Q.grid, 0.0, Q.values.astype(complex), -Q.values ** 2, z, z)


def travelling_state(profile) -> EvolutionState:
    """Data at ``t = 0`` of the travelling wave with ``omega = 1``."""
    g = profile.U.grid
    c1, c2 = profile.c
    y1, y2 = g.mesh
    phase = np.exp(0.5j * (c1 * y1 + c2 * y2))
    return EvolutionState.from_arrays(g, 0.0, profile.U.values * phase, profile.N.values,
                                      profile.V[0].values, profile.V[1].values)


def boosted_standing_state(Q: Field, c) -> EvolutionState:
    """The naive boost ``(Q exp(i c.y/2), -Q^2, 0)``, not a Zakharov travelling wave."""
    g = Q.grid
    c1, c2 = (c, 0.0) if np.isscalar(c) else c
    y1, y2 = g.mesh
    z = np.zeros(g.shape)
    return EvolutionState.from_arrays(g, 0.0, Q.values * np.exp(0.5j * (c1 * y1 + c2 * y2)),
                                      -Q.values ** 2, z, z)


# --- tracking ---------------------------------------------------------------

def centroid(u: np.ndarray, grid: Grid2D) -> tuple[float, float]:
    """Circular mean of ``|u|^2`` along each axis (periodic, no branch jumps)."""
    w = np.abs(u) ** 2
    L = grid.box_length
    theta = 2 * np.pi * grid.coords / L
    out = []
    for axis in (0, 1):
        marg = w.sum(axis=1 - axis)
        ang = math.atan2(float(np.sum(marg * np.sin(theta))), float(np.sum(marg * np.cos(theta))))
        out.append(L * ang / (2 * np.pi))
    return out[0], out[1]


def _shift(a: np.ndarray, grid: Grid2D, y) -> np.ndarray:
    """``a(. - y)`` by Fourier phase shift."""
    k1, k2 = grid.rwavenumbers
    n = grid.n_points
    return sfft.irfft2(sfft.rfft2(a) * np.exp(-1j * (k1 * y[0] + k2 * y[1])), s=(n, n))


def shape_error(u: np.ndarray, reference: np.ndarray, grid: Grid2D, guess=None) -> tuple[float, tuple]:
    """``min_y || |u| - |reference|(. - y) ||_{L^2}`` and the minimiser ``y``."""
    a = np.abs(u)
    ref = np.abs(reference)
    if guess is None:
        guess = np.subtract(centroid(u, grid), centroid(reference, grid))
    da = grid.cell_area

    def cost(y):
        return float(np.sum((a - _shift(ref, grid, y)) ** 2) * da)

    res = minimize(cost, np.asarray(guess, dtype=float), method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-18, "maxiter": 400})
    return math.sqrt(max(res.fun, 0.0)), (float(res.x[0]), float(res.x[1]))


@dataclass
class TrajectoryReport:
    times: np.ndarray
    centers: np.ndarray
    conserved: list
    shape_errors: np.ndarray
    velocity: tuple[float, float]
    mass_drift: float
    energy_drift: float
    momentum_drift: float
    final_state: EvolutionState

    def rows(self) -> list[dict]:
        out = []
        for t, cen, q, s in zip(self.times, self.centers, self.conserved, self.shape_errors):
            out.append({"t": float(t), "center_x": float(cen[0]), "center_y": float(cen[1]),
                        "M": q.mass, "H": q.energy, "P1": q.momentum[0], "P2": q.momentum[1],
                        "shape_error": float(s)})
        return out

    def summary(self) -> dict:
        return {"velocity": list(self.velocity), "mass_drift": self.mass_drift,
                "energy_drift": self.energy_drift, "momentum_drift": self.momentum_drift,
                "final_shape_error": float(self.shape_errors[-1])}


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


def track(state: EvolutionState, reference: np.ndarray, T: float, dt: float,
          snap_every: int = 500, dt_max: float | None = None, on_snapshot=None) -> TrajectoryReport:
    """Integrate to ``T`` recording centroid, conserved quantities and shape error."""
    g = state.grid
    n_steps = int(round(T / dt))
    if n_steps <= 0 or not math.isclose(n_steps * dt, T, rel_tol=1e-9):
        raise ValueError("T must be a positive multiple of dt")
    _check_dt(g, dt, dt_max)
    stepper = _Stepper(g, dt)
    arrays = _state_arrays(state)
    c0 = centroid(reference, g)
    limit = g.box_length / 4
    times, centers, cons, shapes = [], [], [], []
    done = 0
    unwrapped = None

    def record(t, arr):
        nonlocal unwrapped
        cen = np.array(centroid(arr[0], g))
        if unwrapped is not None:
            # unwrap the periodic centroid against the previous sample
            L = g.box_length
            cen = unwrapped + (cen - unwrapped + L / 2) % L - L / 2
        unwrapped = cen
        if np.any(np.abs(cen) > limit):
            raise EvolutionError(f"soliton left the safe region (centre {cen} at t = {t:g})")
        times.append(t)
        centers.append(cen)
        cons.append(_conserved_arrays(g, *arr))
        shapes.append(shape_error(arr[0], reference, g, guess=cen - np.array(c0))[0])
        if on_snapshot is not None:
            on_snapshot(t, arr)

    record(state.t, arrays)
    while done < n_steps:
        k = min(snap_every, n_steps - done)
        arrays = stepper.run(arrays, k)
        done += k
        if not _finite(arrays):
            raise EvolutionError(f"non-finite state at t = {state.t + done * dt:g}")
        record(state.t + done * dt, arrays)
    times = np.array(times)
    centers = np.array(centers)
    vel = tuple(float(np.polyfit(times, centers[:, j], 1)[0]) for j in (0, 1))
    q0, q1 = cons[0], cons[-1]
    p0 = np.hypot(*q0.momentum)
    dp = np.hypot(q1.momentum[0] - q0.momentum[0], q1.momentum[1] - q0.momentum[1])
    final = EvolutionState.from_arrays(g, state.t + n_steps * dt, *arrays)
    return TrajectoryReport(times, centers, cons, np.array(shapes), vel,
                            _rel(q1.mass, q0.mass), _rel(q1.energy, q0.energy),
                            dp / p0 if p0 > 0 else dp, final)


def evolve_and_track(profile, T: float = 10.0, dt: float = 1e-3, snap_every: int = 500,
                     **kwargs) -> TrajectoryReport:
    """Evolve the travelling-wave data of ``profile`` and follow it."""
    return track(travelling_state(profile), profile.U.values, T, dt, snap_every, **kwargs)


def galilean_comparison(profile, Q: Field, T: float = 10.0, dt: float = 1e-3,
                        snap_every: int = 1000) -> dict:
    """Shape error of the constructed soliton against the naive boosted standing wave."""
    sol = evolve_and_track(profile, T, dt, snap_every)
    naive = track(boosted_standing_state(Q, profile.c), Q.values, T, dt, snap_every)
    s, b = float(sol.shape_errors[-1]), float(naive.shape_errors[-1])
    return {"soliton_shape_error": s, "boosted_shape_error": b,
            "ratio": b / s if s > 0 else math.inf,
            "soliton_velocity": list(sol.velocity), "boosted_velocity": list(naive.velocity)}


def standing_wave_error(Q: Field, T: float = 1.0, dt: float = 1e-3) -> float:
    """``||u(T) - exp(iT) Q|| / ||Q||`` for the standing wave."""
    out = evolve(standing_wave_state(Q), T, dt)
    return sobolev_norm(out.u.values - np.exp(1j * T) * Q.values, 0, Q.grid) / sobolev_norm(Q, 0)
