"""Decay rates of the profile and the far-field expansion of ``N``.

Algebraic tails of ``N`` and ``V`` are measured on a free-space evaluation:
``h = |U|^2`` is embedded in a larger box with the same spacing and the
multipliers are applied through the log kernel of ``Delta_c`` (see
:func:`zsf.operators.free_space_multiplier`).  The periodic fields carry an
``O(1/L^2)`` zero-mode offset that would otherwise dominate the tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .field import Field, Grid2D, derivative, make_grid
from .operators import as_speed, free_space_multiplier

EPS = np.finfo(float).eps


class DecayFitError(ValueError):
    pass


# --- decay fits -------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """``|f| ~ A exp(-rate r)`` (exponential) or ``|f| ~ A / r^rate`` (algebraic)."""

    model: str
    rate: float
    amplitude: float
    r_min: float
    r_max: float
    residual: float
    radii: np.ndarray = dc_field(repr=False)
    maxima: np.ndarray = dc_field(repr=False)

    @property
    def n_shells(self) -> int:
        return int(self.radii.size)

    def as_dict(self) -> dict:
        return {"model": self.model, "rate": self.rate, "amplitude": self.amplitude,
                "r_min": self.r_min, "r_max": self.r_max, "residual": self.residual,
                "n_shells": self.n_shells}


def shell_maxima(values: np.ndarray, grid: Grid2D, r_min: float, r_max: float,
                 min_shells: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Max of ``|values|`` over thin shells covering ``[r_min, r_max]``."""
    width = min(grid.spacing, (r_max - r_min) / min_shells)
    edges = np.arange(r_min, r_max + 0.5 * width, width)
    r = grid.radius.ravel()
    a = np.abs(values).ravel()
    sel = (r >= r_min) & (r < edges[-1])
    which = np.digitize(r[sel], edges) - 1
    maxima = np.full(edges.size - 1, -np.inf)
    np.maximum.at(maxima, which, a[sel])
    centers = 0.5 * (edges[:-1] + edges[1:])
    keep = np.isfinite(maxima)
    return centers[keep], maxima[keep]


def fit_decay(f, model: str, annulus: tuple[float, float], grid: Grid2D | None = None,
              min_shells: int = 50) -> DecayFit:
    """Least-squares fit of log shell maxima of ``|f|`` on the annulus."""
    if model not in ("exponential", "algebraic"):
        raise ValueError(f"model must be 'exponential' or 'algebraic', got {model!r}")
    if isinstance(f, Field):
        grid, values = f.grid, f.values
    else:
        if grid is None:
            raise ValueError("a grid is required for bare arrays")
        values = np.asarray(f)
    r_min, r_max = map(float, annulus)
    if not 0 < r_min < r_max:
        raise ValueError(f"invalid annulus {annulus}")
    if r_max > grid.box_length / 2 - 2:
        raise DecayFitError(f"r_max = {r_max:g} exceeds L/2 - 2 = {grid.box_length / 2 - 2:g}")
    radii, maxima = shell_maxima(values, grid, r_min, r_max, min_shells)
    if radii.size < min_shells:
        raise DecayFitError(f"only {radii.size} non-empty shells in the annulus (need {min_shells})")
    if np.all(maxima < 10 * EPS):
        raise DecayFitError("field is below 10 machine epsilon on the whole annulus")
    maxima = np.maximum(maxima, np.finfo(float).tiny)
    x = radii if model == "exponential" else np.log(radii)
    y = np.log(maxima)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return DecayFit(model, float(-slope), float(np.exp(intercept)), r_min, r_max, resid,
                    radii, maxima)


def tail_ratio(a: DecayFit, b: DecayFit) -> float:
    """Geometric-mean ratio of shell maxima ``a / b`` over shared shells."""
    if a.radii.shape != b.radii.shape or not np.allclose(a.radii, b.radii):
        raise ValueError("fits must use the same shells")
    return float(np.exp(np.mean(np.log(a.maxima) - np.log(b.maxima))))


def crossover_radius(c) -> float:
    """Radius beyond 2 where ``exp(-r) = |c|^2 / r^2``; infinite for ``c = 0``."""
    c1, c2 = as_speed(c)
    s = float(np.hypot(c1, c2))
    if s == 0:
        return math.inf
    if 4 * math.exp(-2) <= s * s:
        return 2.0
    return float(brentq(lambda r: -r + 2 * math.log(r) - 2 * math.log(s), 2.0, 1e4))


# --- free-space far field ---------------------------------------------------

def embed(a: np.ndarray, grid: Grid2D, pad: int) -> tuple[Grid2D, np.ndarray]:
    """Centre ``a`` in a box ``pad`` times larger with the same spacing."""
    if pad < 1:
        raise ValueError("pad must be >= 1")
    n = grid.n_points
    big = make_grid(n * pad, grid.box_length * pad)
    out = np.zeros(big.shape, dtype=a.dtype)
    s = (n * pad - n) // 2
    out[s:s + n, s:s + n] = a
    return big, out


class FarField:
    """Free-space ``N``, ``V`` and their derivatives built from ``h = |U|^2``."""

    def __init__(self, profile, pad: int = 3):
        self.profile = profile
        self.c = as_speed(profile.c)
        self.pad = pad
        self.grid, self.h = embed(np.abs(profile.U.values) ** 2, profile.U.grid, pad)

    @cached_property
    def _cache(self) -> dict:
        return {}

    def N(self, m: tuple[int, int] = (0, 0)) -> np.ndarray:
        key = ("N", tuple(m))
        if key not in self._cache:
            g = self.grid
            self._cache[key] = -derivative(self.h, g, m) - free_space_multiplier(self.h, g, "Sc", self.c, m)
        return self._cache[key]

    def V(self, j: int, m: tuple[int, int] = (0, 0)) -> np.ndarray:
        key = ("V", j, tuple(m))
        if key not in self._cache:
            self._cache[key] = -free_space_multiplier(self.h, self.grid, f"Tc{j}", self.c, m)
        return self._cache[key]

    def node(self, y) -> tuple[int, int]:
        g = self.grid
        i = g.origin_index[0]
        idx = np.rint(np.asarray(y, dtype=float) / g.spacing).astype(int) + i
        return int(idx[0]), int(idx[1])


def multi_indices(order: int) -> list[tuple[int, int]]:
    return [(a, order - a) for a in range(order, -1, -1)]


@dataclass
class SweepRow:
    field: str
    m: tuple[int, int]
    fit: DecayFit
    expected: float
    tolerance: float
    ok: bool

    def as_dict(self) -> dict:
        return {"field": self.field, "m": list(self.m), **self.fit.as_dict(),
                "expected": self.expected, "tolerance": self.tolerance, "ok": self.ok}


def algebraic_annulus(c, far: FarField, width: float = 16.0) -> tuple[float, float]:
    """Annulus starting at 1.5x the exponential crossover radius."""
    r_lo = max(8.0, 1.5 * crossover_radius(c))
    r_hi = min(r_lo + width, far.grid.box_length / 2 - 2)
    if r_hi <= r_lo:
        raise DecayFitError(f"extended box too small for an algebraic fit beyond r = {r_lo:g}")
    return r_lo, r_hi


def u_annulus(grid: Grid2D, r_min: float = 6.0, r_max: float = 16.0) -> tuple[float, float]:
    """The U-fit annulus, clipped to the safe region of small boxes."""
    return r_min, min(r_max, grid.box_length / 2 - 2)


def derivative_decay_sweep(profile, m_max: int = 2, pad: int = 3,
                           u_ann: tuple[float, float] | None = None,
                           tolerance: float = 0.2, far: FarField | None = None) -> list[SweepRow]:
    """Fit every ``d^m U`` (exponential) and ``d^m N``, ``d^m V_j`` (algebraic).

    ``d^m U`` must decay at rate >= 0.5; ``N`` and ``V`` tails must have power
    ``|m| + 2`` within ``tolerance``.
    """
    if not 0 <= m_max <= 3:
        raise ValueError("m_max must be in 0..3")
    far = far or FarField(profile, pad)
    g = profile.U.grid
    ann = algebraic_annulus(profile.c, far)
    u_ann = u_ann or u_annulus(g)
    rows = []
    for order in range(m_max + 1):
        for m in multi_indices(order):
            du = derivative(profile.U.values, g, m)
            fit = fit_decay(du, "exponential", u_ann, g)
            rows.append(SweepRow("U", m, fit, 0.5, 0.0, fit.rate >= 0.5))
            expected = order + 2.0
            for name, vals in (("N", far.N(m)), ("V1", far.V(1, m)), ("V2", far.V(2, m))):
                fit = fit_decay(vals, "algebraic", ann, far.grid)
                rows.append(SweepRow(name, m, fit, expected, tolerance,
                                     abs(fit.rate - expected) <= tolerance))
    return rows


# --- pseudo-moment expansion ------------------------------------------------

def expansion_constant(c: float, K: int) -> float:
    """``C_{c,K} = (2K+5)! (1 + 8/nu^2)^(2K+3)``."""
    nu2 = 1.0 - c * c
    return float(math.factorial(2 * K + 5) * (1 + 8 / nu2) ** (2 * K + 3))


def _speed_e1(c) -> float:
    c1, c2 = as_speed(c)
    if c2 != 0.0:
        raise ValueError("the expansion is stated for c along e1; rotate the frame first")
    return c1


@dataclass
class ExpansionSums:
    """Pseudo-moment terms at a set of points; ``terms[p, n]`` excludes the prefactor."""

    c: float
    K: int
    points: np.ndarray
    terms: np.ndarray
    edge_density: float
    box_tail: float

    @property
    def nu(self) -> float:
        return math.sqrt(1 - self.c * self.c)

    def prefactor(self, pi_power: int = 1) -> float:
        return -self.c ** 2 / (4 * math.pi ** pi_power * self.nu ** 2)

    def partial_sums(self, pi_power: int = 1) -> np.ndarray:
        """Shape ``(points, K+1)``: cumulative approximations of ``N`` for ``n <= K``."""
        return self.prefactor(pi_power) * np.cumsum(self.terms, axis=1)


def expansion_eval(h: Field, c, points, K: int) -> ExpansionSums:
    """Pseudo-moment expansion of ``N`` up to order ``K`` at physical points ``y``.

    Term ``n`` is ``|z|^-(2n+2) * int (2 - 4(n+1)(z1-zeta1)^2/|z|^2)
    (2 z.zeta - |zeta|^2)^n h(nu zeta1, zeta2) dzeta`` with ``z = (y1/nu, y2)``,
    evaluated by quadrature over the grid box.
    """
    c = _speed_e1(c)
    if not 0 <= K <= 6:
        raise ValueError("K must be in 0..6")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(np.hypot(pts[:, 0], pts[:, 1]) < 4):
        raise ValueError("the expansion requires |y| >= 4")
    g = h.grid
    nu = math.sqrt(1 - c * c)
    y1, y2 = g.mesh
    z1g, z2g = y1 / nu, y2
    zz = z1g ** 2 + z2g ** 2
    # dzeta = dy / nu
    w = h.values * g.cell_area / nu
    terms = np.zeros((len(pts), K + 1))
    for p, (a, b) in enumerate(pts):
        z1, z2 = a / nu, b
        z2n = z1 * z1 + z2 * z2
        t = 2 * (z1 * z1g + z2 * z2g) - zz
        ang = (z1 - z1g) ** 2 / z2n
        tn = w.copy()
        for n in range(K + 1):
            terms[p, n] = np.sum((2 - 4 * (n + 1) * ang) * tn) / z2n ** (n + 1)
            tn = tn * t
    edge = max(np.abs(h.values[[0, -1], :]).max(), np.abs(h.values[:, [0, -1]]).max())
    return ExpansionSums(c, K, pts, terms, float(edge), float(math.exp(-g.box_length / 4)))


RAYS = {"e1": (1.0, 0.0), "e2": (0.0, 1.0), "diag": (1.0, 1.0)}


@dataclass
class ExpansionReport:
    c: float
    K: int
    nu: float
    pi_power: int
    pi_power_errors: dict
    C_cK: float
    rows: list
    slopes: dict
    beats_K0: dict
    edge_density: float
    box_tail: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("c", "K", "nu", "pi_power", "pi_power_errors", "C_cK", "slopes", "beats_K0",
                 "edge_density", "box_tail")} | {"rows": self.rows}


def ray_points(grid: Grid2D, ray: str, r_lo: float, r_hi: float) -> np.ndarray:
    """Grid nodes on a ray with ``r_lo <= |y| <= r_hi``."""
    d = np.asarray(RAYS[ray])
    step = grid.spacing * np.hypot(*d)
    k = np.arange(math.ceil(r_lo / step - 1e-9), math.floor(r_hi / step + 1e-9) + 1)
    return k[:, None] * grid.spacing * d[None, :]


def expansion_error_scan(profile, K: int = 3, radii: tuple[float, float] = (6.0, 18.0),
                         rays=("e1", "e2", "diag"), pad: int = 3,
                         far: FarField | None = None) -> ExpansionReport:
    """Tabulate ``|N - expansion|`` along rays and fit log-error against log-radius."""
    c = _speed_e1(profile.c)
    far = far or FarField(profile, pad)
    h = Field(profile.U.grid, np.abs(profile.U.values) ** 2)
    n_free = far.N()
    rows, slopes, beats = [], {}, {}
    sums_by_ray = {}
    for ray in rays:
        pts = ray_points(profile.U.grid, ray, *radii)
        sums_by_ray[ray] = (pts, expansion_eval(h, c, pts, K))
    # decide the pi power on the e2 ray, where the series converges fastest
    pts, s = sums_by_ray.get("e2", next(iter(sums_by_ray.values())))
    ref = np.array([n_free[far.node(p)] for p in pts])
    errs_by_power = {a: float(np.linalg.norm(s.partial_sums(a)[:, K] - ref) / np.linalg.norm(ref))
                     for a in (1, 2)}
    best = min(errs_by_power, key=errs_by_power.get)
    for ray, (pts, s) in sums_by_ray.items():
        ref = np.array([n_free[far.node(p)] for p in pts])
        ps = s.partial_sums(best)
        err = np.abs(ps - ref[:, None])
        r = np.hypot(pts[:, 0], pts[:, 1])
        for i in range(len(pts)):
            rows.append({"ray": ray, "y1": float(pts[i, 0]), "y2": float(pts[i, 1]),
                         "z1": float(pts[i, 0] / s.nu), "z2": float(pts[i, 1]), "radius": float(r[i]),
                         "N": float(ref[i]), "partial_sums": ps[i].tolist(),
                         "abs_error": err[i].tolist()})
        good = err[:, K] > 0
        slopes[ray] = float(np.polyfit(np.log(r[good]), np.log(err[good, K]), 1)[0])
        beats[ray] = bool(np.all(err[:, K] < err[:, 0]))
    any_sums = next(iter(sums_by_ray.values()))[1]
    return ExpansionReport(c, K, any_sums.nu, best, errs_by_power, expansion_constant(c, K),
                           rows, slopes, beats, any_sums.edge_density, any_sums.box_tail)
