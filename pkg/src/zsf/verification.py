"""Named pass/fail checks of the estimates, used by the ``verify``/``expand`` commands.

Every verdict key names the estimate it checks, e.g. ``thm1.U_minus_Q_quadratic``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .asymptotics import (
    FarField, algebraic_annulus, derivative_decay_sweep, expansion_error_scan, fit_decay, tail_ratio, u_annulus,
)
from .field import Field, Symmetry, derivative, project_array, sobolev_norm, symmetry_defect
from .ground_state import GroundState, is_positive, q_decay_check, virial_identities
from .operators import (
    LinearizedOp, MultiplierSpec, coercivity_sample, lipschitz_in_c_check, multiplier_array,
    multiplier_norm_certificate, random_smooth_field, solve_R, solve_rho,
)
from .solver import (
    EtaPair, SolitonProfile, assemble_profile, fixed_point_residual, rotate_frame, solve_eta,
)

SWEEP_SPEEDS = (0.025, 0.05, 0.1, 0.2)


@dataclass
class Verdict:
    key: str
    passed: bool
    value: object
    threshold: str
    description: str

    def as_dict(self) -> dict:
        return {"pass": bool(self.passed), "value": _jsonable(self.value),
                "threshold": self.threshold, "description": self.description}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def threads() -> int:
    try:
        return max(1, int(os.environ.get("ZSF_THREADS", "1")))
    except ValueError:
        return 1


def to_e1_frame(profile: SolitonProfile) -> SolitonProfile:
    c1, c2 = profile.c
    theta = math.atan2(c2, c1)
    return profile if theta == 0.0 else rotate_frame(profile, -theta)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# --- groups of checks -------------------------------------------------------

def check_ground_state(gs: GroundState) -> list[Verdict]:
    q = gs.Q
    qn = sobolev_norm(q, 0)
    dec = q_decay_check(gs)
    vir = virial_identities(gs)
    poh1 = abs(vir["grad2"] + vir["q2"] - vir["q4"]) / vir["q4"]
    poh2 = abs(vir["q2"] - vir["q4"] / 2) / vir["q2"]
    return [
        Verdict("notation.Q_residual", gs.residual <= 1e-8 * qn, gs.residual / qn, "<= 1e-8",
                "||Delta Q - Q + Q^3|| / ||Q||"),
        Verdict("notation.Q_positive_radial", is_positive(q.values)
                and symmetry_defect(q, Symmetry.RADIAL) <= 1e-8 * qn,
                symmetry_defect(q, Symmetry.RADIAL) / qn, "Q > 0, radial defect <= 1e-8",
                "positive radial ground state"),
        Verdict("notation.Q_decay_rate", abs(dec.slope + 1) <= 0.05, dec.slope, "-1 +- 0.05",
                "slope of log(Q sqrt(r)) against r"),
        Verdict("notation.Q_decay_bounded", dec.max_weighted < 10, dec.max_weighted, "< 10",
                "max Q sqrt(r) e^r on the annulus"),
        Verdict("notation.pohozaev", max(poh1, poh2) <= 1e-6, {"grad": poh1, "mass": poh2}, "<= 1e-6",
                "2D Pohozaev identities"),
    ]


def check_multipliers(grid, speed: float, seed: int = 0, n_fields: int = 20) -> list[Verdict]:
    rng = np.random.default_rng(seed)
    c = (speed, 0.0)
    bound = speed ** 2 / (1 - speed ** 2)
    worst = 0.0
    for _ in range(n_fields):
        f = random_smooth_field(grid, rng)
        sf = multiplier_array(f, grid, "Sc", c)
        for s in (0, 1, 2):
            worst = max(worst, sobolev_norm(sf, s, grid) / (bound * sobolev_norm(f, s, grid)))
    cert = {k: multiplier_norm_certificate(MultiplierSpec(k, c), grid) / MultiplierSpec(k, c).analytic_bound
            for k in ("Sc", "Tc1", "Tc2", "dSc_dc1")}
    f = Field(grid, np.exp(-grid.radius ** 2))
    lip_ok, fd_err = True, 0.0
    pairs = [(a, a + d) for a in np.linspace(0.05, 0.4, 5) for d in (0.02, 0.05)]
    for a, b in pairs:
        rep = lipschitz_in_c_check(f, (a, 0.0), (b, 0.0))
        lip_ok &= rep.ok
        fd_err = max(fd_err, max(rep.fd_rel_error.values()))
    return [
        Verdict("lemma.Sc1.norm_bound", worst <= 1 + 1e-12, worst, "<= 1",
                "max ||S_c f||_{H^s} / (c^2/(1-c^2) ||f||_{H^s}) over random f, s = 0, 1, 2"),
        Verdict("lemma.Sc1.symbol_bound", all(v <= 1 + 1e-12 for v in cert.values()), cert, "<= 1",
                "grid symbol maximum / analytic bound per kind"),
        Verdict("lemma.Sc2.lipschitz", bool(lip_ok), len(pairs), "all pairs within bound",
                "Lipschitz bounds of S_c and dS_c/dc_j in c"),
        Verdict("lemma.e3.finite_difference", fd_err <= 1e-6, fd_err, "<= 1e-6",
                "dS_c/dc_j symbol against a centred difference, h = 1e-5"),
    ]


def check_linearized(gs: GroundState, seed: int = 0) -> list[Verdict]:
    Q = gs.Q
    g = Q.grid
    qv = Q.values
    lm, lp = LinearizedOp("Lminus", Q), LinearizedOp("Lplus", Q)
    d1q = derivative(qv, g, (1, 0))
    k_minus = sobolev_norm(lm.matvec(qv), 0, g) / sobolev_norm(qv, 0, g)
    k_plus = sobolev_norm(lp.matvec(d1q), 0, g) / sobolev_norm(d1q, 0, g)
    R, _ = solve_R(Q)
    r_res = sobolev_norm(lm.matvec(R.values) - d1q, 0, g) / sobolev_norm(d1q, 0, g)
    r_def = symmetry_defect(R, Symmetry.OE) / sobolev_norm(R, 0)
    rho, _ = solve_rho(Q)
    rhs = g.radius ** 2 * qv / 4
    rho_res = sobolev_norm(lp.matvec(rho.values) - rhs, 0, g) / sobolev_norm(rhs, 0, g)
    coer = coercivity_sample(Q, rho, 20, seed)
    return [
        Verdict("notation.kernel_Lminus", k_minus <= 1e-6, k_minus, "<= 1e-6", "||L_- Q|| / ||Q||"),
        Verdict("notation.kernel_Lplus", k_plus <= 1e-5, k_plus, "<= 1e-5", "||L_+ d_1 Q|| / ||d_1 Q||"),
        Verdict("appendix.R", r_res <= 1e-8 and r_def <= 1e-10, {"residual": r_res, "OE_defect": r_def},
                "<= 1e-8", "L_- R = d_1 Q with R odd-even"),
        Verdict("appendix.rho", rho_res <= 1e-8, rho_res, "<= 1e-8", "L_+ rho = |y|^2 Q / 4"),
        Verdict("appendix.coer1", coer.n_positive == 20, {"positive": coer.n_positive, "min_ratio": coer.min_ratio},
                "20 / 20", "<L_- w, w> > 0 for w orthogonal to rho, d_1 Q, d_2 Q"),
    ]


def check_fixed_point(profile: SolitonProfile, Q: Field, tol: float, c_cap: float,
                      seed: int = 0, dealias: bool = False) -> list[Verdict]:
    p = to_e1_frame(profile)
    c = p.c[0]
    g = Q.grid
    eta = EtaPair(Field(g, p.U.values.real - Q.values), Field(g, p.U.values.imag))
    fp = fixed_point_residual(eta, c, Q, dealias=dealias)
    ref, rep = solve_eta(c, Q, tol=tol, c_cap=c_cap, dealias=dealias)
    factor = rep.max_contraction_factor if rep.contraction_factors else 0.0
    rng = np.random.default_rng(seed)
    spread = 0.0
    for _ in range(5):
        e1 = project_array(random_smooth_field(g, rng), Symmetry.RADIAL)
        e2 = project_array(random_smooth_field(g, rng), Symmetry.OE)
        seed_eta = EtaPair(Field(g, e1), Field(g, e2))
        scale = 0.1 * rng.uniform(0.2, 1.0) / seed_eta.E_norm
        seed_eta = EtaPair(Field(g, e1 * scale), Field(g, e2 * scale))
        other, _ = solve_eta(c, Q, tol=tol, c_cap=c_cap, eta0=seed_eta, dealias=dealias)
        spread = max(spread, (other - ref).E_norm)
    return [
        Verdict("prop.fixed_point_certificate", fp <= 2 * tol, fp, f"<= {2 * tol:g}",
                "||G(eta) - eta||_E at the stored profile"),
        Verdict("prop.contraction", rep.converged and factor < 1, factor, "< 1",
                "largest ratio of successive Picard updates"),
        Verdict("prop.uniqueness", spread <= 1e-6, spread, "<= 1e-6",
                "5 random seeds in the 0.1-ball converge to the same eta"),
    ]


def check_profile(profile: SolitonProfile) -> list[Verdict]:
    p = to_e1_frame(profile)
    res = max(profile.residuals)
    d = p.symmetry_defects()
    rk1 = max(d["ReU_EE"], d["ImU_OE"])
    return [
        Verdict("thm1.residuals_sysNUV", res <= 1e-8, list(profile.residuals), "<= 1e-8",
                "relative residuals of the three stationary equations"),
        Verdict("thm1.symmetry_rk1", rk1 <= 1e-7, d, "<= 1e-7", "Re U even-even, Im U odd-even"),
    ]


def speed_sweep(Q: Field, speeds=SWEEP_SPEEDS, tol: float = 1e-10, c_cap: float = 0.5,
                dealias: bool = False) -> list[SolitonProfile]:
    out = []
    for c in speeds:
        eta, rep = solve_eta(c, Q, tol=tol, c_cap=c_cap, dealias=dealias)
        out.append(assemble_profile(eta, c, Q, rep))
    return out


def scaling_norms(profiles, Q: Field) -> dict:
    qv = Q.values
    rows = {"c": [], "U_minus_Q": [], "N_plus_Q2": [], "V": [], "eta": []}
    for p in profiles:
        rows["c"].append(p.c[0])
        rows["U_minus_Q"].append(sobolev_norm(p.U.values - qv, 2, Q.grid))
        rows["N_plus_Q2"].append(sobolev_norm(p.N.values + qv ** 2, 2, Q.grid))
        rows["V"].append(math.hypot(sobolev_norm(p.V[0], 2), sobolev_norm(p.V[1], 2)))
        rows["eta"].append(p.eta.E_norm if p.eta is not None else float("nan"))
    return rows


def check_scaling(profiles, Q: Field) -> tuple[list[Verdict], dict]:
    rows = scaling_norms(profiles, Q)
    c = rows["c"]
    s_u = loglog_slope(c, rows["U_minus_Q"])
    s_n = loglog_slope(c, rows["N_plus_Q2"])
    s_v = loglog_slope(c, rows["V"])
    s_e = loglog_slope(c, rows["eta"])
    return [
        Verdict("thm1.U_minus_Q_quadratic", abs(s_u - 2) <= 0.1, s_u, "2 +- 0.1", "slope of log||U_c - Q||_{H^2}"),
        Verdict("thm1.N_plus_Q2_quadratic", abs(s_n - 2) <= 0.1, s_n, "2 +- 0.1", "slope of log||N_c + Q^2||_{H^2}"),
        Verdict("thm1.V_linear", abs(s_v - 1) <= 0.1, s_v, "1 +- 0.1", "slope of log||V_c||_{H^2}"),
        Verdict("prop.eta_quadratic", abs(s_e - 2) <= 0.1, s_e, "2 +- 0.1", "slope of log||eta||_E"),
    ], rows


def check_decay(profile: SolitonProfile, half: SolitonProfile, pad: int = 3,
                sweep_tolerance: float = 0.3) -> tuple[list[Verdict], list[dict]]:
    """Decay fits on ``profile``; ``half`` is the profile at half the speed."""
    p = to_e1_frame(profile)
    g = p.grid
    far, far_half = FarField(p, pad), FarField(half, pad)
    u_ann = u_annulus(g)
    u_fit = fit_decay(np.abs(p.U.values), "exponential", u_ann, g)
    ann = algebraic_annulus(half.c, far)
    fits = {}
    for name, f, fh in (("N", far.N(), far_half.N()), ("V1", far.V(1), far_half.V(1)),
                        ("V2", far.V(2), far_half.V(2))):
        fits[name] = (fit_decay(f, "algebraic", ann, far.grid), fit_decay(fh, "algebraic", ann, far.grid))
    v_ratio = min(tail_ratio(*fits["V1"]), tail_ratio(*fits["V2"]))
    v_ratio_max = max(tail_ratio(*fits["V1"]), tail_ratio(*fits["V2"]))
    n_ratio = tail_ratio(*fits["N"])
    sweep = derivative_decay_sweep(p, 2, pad, tolerance=sweep_tolerance, far=far)
    v_pow = [fits["V1"][0].rate, fits["V2"][0].rate]
    csv = []
    for name, fit in [("U", u_fit)] + [(k, v[0]) for k, v in fits.items()]:
        model = (lambda r, f=fit: f.amplitude * np.exp(-f.rate * r)) if fit.model == "exponential" \
            else (lambda r, f=fit: f.amplitude * r ** (-f.rate))
        for r, v in zip(fit.radii, fit.maxima):
            fv = float(model(r))
            csv.append({"field": name, "m": "0,0", "radius": float(r), "value": float(v),
                        "fit": fv, "error": float(abs(math.log(v) - math.log(fv)))})
    verdicts = [
        Verdict("lemma.agmon.U_rate", u_fit.rate >= 0.5, u_fit.rate, ">= 0.5",
                f"exponential rate of |U_c| on {u_ann[0]:g} <= |y| <= {u_ann[1]:g}"),
        Verdict("lemma.decrV.power", all(abs(x - 2) <= 0.15 for x in v_pow), v_pow, "2 +- 0.15",
                f"algebraic power of |V_c,j| on {ann[0]:.2f} <= |y| <= {ann[1]:.2f}"),
        Verdict("lemma.decrV.c_scaling", 1.6 <= v_ratio and v_ratio_max <= 2.4, [v_ratio, v_ratio_max],
                "2 +- 20%", "tail amplitude ratio of V when c doubles"),
        Verdict("lemma.decrN.power", abs(fits["N"][0].rate - 2) <= 0.2, fits["N"][0].rate, "2 +- 0.2",
                "far-tail algebraic power of |N_c|"),
        Verdict("lemma.decrN.c2_scaling", 3.2 <= n_ratio <= 4.8, n_ratio, "4 +- 20%",
                "tail amplitude ratio of N when c doubles"),
        Verdict("lemma.decrNV.derivative_sweep", all(r.ok for r in sweep),
                [r.as_dict() for r in sweep], f"|m| + 2 +- {sweep_tolerance}",
                "tail powers of all derivatives with |m| <= 2"),
    ]
    return verdicts, csv


def check_expansion(profile: SolitonProfile, K: int = 3, pad: int = 3):
    p = to_e1_frame(profile)
    if p.c[0] == 0:
        return [Verdict("lemma.expanN.trivial", True, 0.0, "c = 0", "all expansion terms vanish")], None
    rep = expansion_error_scan(p, K=K, pad=pad)
    e2 = [r for r in rep.rows if r["ray"] == "e2"]
    first = min(e2, key=lambda r: r["radius"])
    other = 3 - rep.pi_power
    errs = rep.pi_power_errors
    verdicts = [
        Verdict("lemma.expanN.slope_e2", rep.slopes["e2"] <= -3.5, rep.slopes["e2"], "<= -3.5",
                f"log-log slope of the K = {K} error along e2, 6 <= |y| <= 18"),
        Verdict("lemma.expanN.K_beats_K0_e2", rep.beats_K0["e2"], rep.beats_K0["e2"], "true",
                f"K = {K} sum beats the K = 0 sum at every e2 point"),
        Verdict("lemma.expanN.genuine_at_6", first["abs_error"][K] < abs(first["N"]),
                [first["abs_error"][K], first["N"]], "error < |N|", "expansion error below |N_c| at |y| = 6"),
        Verdict("lemma.expanN.normalization", errs[rep.pi_power] < 0.1 and errs[other] > 0.5,
                {"pi_power": rep.pi_power, **{str(k): v for k, v in errs.items()}},
                "chosen < 0.1, other > 0.5", "relative e2 error of -c^2/(4 pi^a nu^2) sums; reports a"),
    ]
    return verdicts, rep


def run_parallel(tasks: dict) -> dict:
    """Run independent zero-argument callables; results keyed like ``tasks``."""
    with ThreadPoolExecutor(max_workers=threads()) as ex:
        futs = {k: ex.submit(fn) for k, fn in tasks.items()}
        return {k: f.result() for k, f in futs.items()}
