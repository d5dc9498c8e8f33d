import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsf import ContractionError, compute_Q, make_grid, EtaPair, Field, LinearizedOp, MultiplierSpec, Symmetry, apply_multiplier, \
    invert_L_on_subspace, project, rotate_frame, solve_eta, solve_profile, sobolev_norm, symmetry_defect
from zsf.operators import multiplier_array, random_smooth_field
from zsf.solver import F_minus, F_plus, G_map, assemble_profile, contraction_scan, fixed_point_residual, \
    rescale_profile, scaling_family_check, stationary_residuals


def random_eta(Q, rng, size=0.1):
    g = Q.grid
    e1 = project(Field(g, random_smooth_field(g, rng)), Symmetry.EE)
    e2 = project(Field(g, random_smooth_field(g, rng)), Symmetry.OE)
    eta = EtaPair(e1, e2)
    return EtaPair(e1 * (size / eta.E_norm), e2 * (size / eta.E_norm))


def test_F_at_zero_eta(Q):
    z = EtaPair.zeros(Q.grid)
    fp = F_plus(z, 0.2, Q).values
    q = Q.values
    ref = apply_multiplier(Field(Q.grid, q * q), MultiplierSpec("Sc", (0.2, 0))).values * q
    assert np.allclose(fp, ref, atol=1e-15)
    assert np.max(np.abs(F_minus(z, 0.2, Q).values)) == 0


def test_F_minus_at_c0(Q, rng):
    eta = random_eta(Q, rng)
    q, e1, e2 = Q.values, eta.eta1.values, eta.eta2.values
    ref = 2 * q * e1 * e2 + e1 ** 2 * e2 + e2 ** 3
    assert np.allclose(F_minus(eta, 0.0, Q).values, ref, atol=1e-15)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 2 ** 31), c=st.floats(0.0, 0.4))
def test_F_parity(Q, seed, c):
    eta = random_eta(Q, np.random.default_rng(seed))
    fp, fm = F_plus(eta, c, Q), F_minus(eta, c, Q)
    assert symmetry_defect(fp, Symmetry.EE) <= 1e-10 * max(fp.norm(), 1)
    assert symmetry_defect(fm, Symmetry.OE) <= 1e-10 * max(fm.norm(), 1)


def test_F_rejects_non_admissible_eta(Q):
    g = Q.grid
    bad = EtaPair(Field(g, g.sample(lambda a, b: a * np.exp(-a * a - b * b)).values), Field(g, g.zeros()))
    with pytest.raises(ValueError):
        F_plus(bad, 0.1, Q)


def test_F_rejects_off_axis_speed(Q):
    with pytest.raises(ValueError):
        F_plus(EtaPair.zeros(Q.grid), (0.1, 0.1), Q)


def test_G_at_zero(Q):
    out = {}
    for c in (0.05, 0.1):
        g = G_map(EtaPair.zeros(Q.grid), c, Q)
        assert np.max(np.abs(g.eta2.values)) == 0
        rhs = Field(Q.grid, F_plus(EtaPair.zeros(Q.grid), c, Q).values)
        ref, _ = invert_L_on_subspace(LinearizedOp("Lplus", Q), project(rhs, Symmetry.EE), Symmetry.EE, tol=1e-12)
        assert (g.eta1 - ref).norm() <= 1e-9 * ref.norm()
        out[c] = g.E_norm
    assert out[0.1] / out[0.05] == pytest.approx(4.0, rel=0.05)


def test_standing_wave_is_fixed_point(Q, rng):
    z = EtaPair.zeros(Q.grid)
    assert G_map(z, 0.0, Q).E_norm == 0
    eta, rep = solve_eta(0.0, Q, eta0=random_eta(Q, rng, 0.01))
    assert rep.converged and eta.E_norm <= 1e-9


def test_c0_single_iteration(Q):
    eta, rep = solve_eta(0.0, Q)
    assert rep.iterations == 1 and eta.E_norm == 0


def test_contraction_measured(Q, rng):
    a, b = random_eta(Q, rng), random_eta(Q, rng)
    ratio = (G_map(a, 0.1, Q) - G_map(b, 0.1, Q)).E_norm / (a - b).E_norm
    assert ratio < 1


def test_quadratic_eta(profiles):
    r = profiles[0.1].eta.E_norm / profiles[0.05].eta.E_norm
    assert r == pytest.approx(4.0, rel=0.05)


def test_fixed_point_certificate(profiles, Q):
    for c, p in profiles.items():
        assert fixed_point_residual(p.eta, c, Q) <= 2e-10
        assert p.iterations.converged
        assert p.iterations.contraction_factor < 1


def test_residuals_at_c02(profiles):
    assert max(profiles[0.2].residuals) <= 1e-8


def test_uniqueness_in_ball(Q, profiles):
    ref = profiles[0.1].eta
    for seed in range(5):
        eta, _ = solve_eta(0.1, Q, eta0=random_eta(Q, np.random.default_rng(seed), 0.1))
        assert (eta - ref).E_norm <= 1e-6


def test_c1_dependence(Q, profiles):
    base = profiles[0.1].eta
    diffs = []
    for h in (0.02, 0.01, 0.005):
        e, _ = solve_eta(0.1 + h, Q)
        d = e - base
        diffs.append(EtaPair(d.eta1 * (1 / h), d.eta2 * (1 / h)))
    r1 = (diffs[0] - diffs[1]).E_norm
    r2 = (diffs[1] - diffs[2]).E_norm
    # divided differences converge linearly in h, and their norms settle
    assert r1 / r2 == pytest.approx(2.0, rel=0.1)
    assert diffs[1].E_norm / diffs[2].E_norm == pytest.approx(1.0, abs=0.1)


def test_hs_bootstrap(profiles):
    eta = profiles[0.1].eta
    finer, _ = solve_eta(0.1, compute_Q(make_grid(384, 40.0)).Q)
    for s in (2, 4, 6):
        fine = sobolev_norm(eta.eta1, s) + sobolev_norm(eta.eta2, s)
        assert np.isfinite(fine)
        ref = sobolev_norm(finer.eta1, s) + sobolev_norm(finer.eta2, s)
        assert fine == pytest.approx(ref, rel=1e-5)


def test_dealias_toggle(Q, profiles):
    base = profiles[0.1]
    alt = solve_profile(0.1, Q, dealias=True)
    for s in (0, 2):
        assert sobolev_norm(alt.U - base.U, s) <= 1e-6 * sobolev_norm(base.U, s)
        assert sobolev_norm(alt.N - base.N, s) <= 1e-6 * sobolev_norm(base.N, s)


def test_newton_matches_picard(Q, profiles):
    eta, rep = solve_eta(0.1, Q, newton=True)
    assert rep.converged
    assert (eta - profiles[0.1].eta).E_norm <= 1e-8


def test_c_cap(Q):
    with pytest.raises(ContractionError):
        solve_eta(0.95, Q)


def test_iteration_cap(Q):
    with pytest.raises(ContractionError) as exc:
        solve_eta(0.2, Q, max_iter=2)
    assert exc.value.report.iterations == 2


def test_contraction_scan(small_gs):
    scan = contraction_scan(small_gs.Q, [0.1, 0.3, 0.6], c_cap=0.5)
    assert [r["converged"] for r in scan["rows"]] == [True, True, False]
    assert scan["largest_contracting_speed"] == 0.3


def test_standing_wave_profile(Q):
    p = solve_profile(0.0, Q)
    assert np.array_equal(p.U.values, Q.values)
    assert np.allclose(p.N.values, -Q.values ** 2, atol=0)
    assert all(np.max(np.abs(v.values)) == 0 for v in p.V)


def test_theorem_bounds(profiles, Q):
    n_ratio = [sobolev_norm(profiles[c].N + Q.values ** 2, 2) / c ** 2 for c in (0.05, 0.1, 0.2)]
    v_ratio = [(sobolev_norm(profiles[c].V[0], 2) + sobolev_norm(profiles[c].V[1], 2)) / c for c in (0.05, 0.1, 0.2)]
    assert max(n_ratio) / min(n_ratio) < 1.5
    assert max(v_ratio) / min(v_ratio) < 1.5


def test_profile_symmetries(profiles):
    for p in profiles.values():
        assert max(p.symmetry_defects().values()) <= 1e-7


def test_assemble_formulae(profiles):
    p = profiles[0.1]
    h = np.abs(p.U.values) ** 2
    g = p.grid
    assert np.allclose(p.N.values, -h - multiplier_array(h, g, "Sc", (0.1, 0)), atol=1e-15)
    assert np.allclose(p.V[0].values, -multiplier_array(h, g, "Tc1", (0.1, 0)), atol=1e-15)


def test_rotation_identity(profiles):
    p = profiles[0.1]
    r = rotate_frame(p, 0.0)
    assert r.c == p.c and np.array_equal(r.U.values, p.U.values)


def test_rotation_quarter_turn(profiles, Q):
    p = profiles[0.1]
    r = rotate_frame(p, np.pi / 2)
    assert r.c == (0.0, 0.1)
    assert abs(r.residuals[0] - p.residuals[0]) <= 1e-12
    assert max(r.residuals) <= 10 * max(p.residuals) + 1e-15
    direct = solve_profile((0.0, 0.1), Q)
    assert np.max(np.abs(direct.U.values - r.U.values)) <= 1e-12


def test_rotation_half_turn(profiles):
    p = profiles[0.1]
    r = rotate_frame(p, np.pi)
    n = p.grid.n_points
    idx = (-(np.arange(n) - n // 2)) % n
    flipped = p.U.values[np.ix_((idx + n // 2) % n, (idx + n // 2) % n)]
    assert np.array_equal(r.U.values, flipped)
    assert r.c == (-0.1, 0.0)
    assert np.allclose(r.residuals, p.residuals, rtol=1e-6, atol=1e-15)


def test_rotation_general_angle(profiles):
    p = profiles[0.1]
    r = rotate_frame(p, np.pi / 4)
    assert r.c == pytest.approx((0.1 / np.sqrt(2), 0.1 / np.sqrt(2)))
    # spectral shears: interpolation error is reported, here well below 1e-5
    assert max(r.residuals) <= 1e-5
    assert r.U.norm() == pytest.approx(p.U.norm(), rel=1e-8)


def test_rotated_solve(Q):
    p = solve_profile((0.06, 0.08), Q)
    assert np.hypot(*p.c) == pytest.approx(0.1)
    assert max(p.residuals) <= 1e-5


@pytest.mark.parametrize("omega", [0.25, 0.5, 1.0, 2.0, 4.0])
def test_scaling_family(profiles, omega):
    p = profiles[0.1]
    rep = scaling_family_check(p, omega)
    assert rep["box_length"] == pytest.approx(p.grid.box_length / np.sqrt(omega))
    assert max(rep["residuals"]) <= 1e-7
    if omega == 1.0:
        assert rep["residuals"] == p.residuals


def test_scaling_recomputation(profiles):
    # the rescaled triple checked against an independent residual evaluation
    p = rescale_profile(profiles[0.1], 4.0)
    res = stationary_residuals(p.U, p.N, p.V, p.c, 4.0)
    assert max(res) <= 1e-7
    wrong = stationary_residuals(p.U, p.N, p.V, p.c, 1.0)
    assert wrong[0] > 1e-2


def test_scaling_rejects_bad_omega(profiles):
    with pytest.raises(ValueError):
        scaling_family_check(profiles[0.1], 0.0)


def test_assemble_profile_residuals(Q, profiles):
    p = profiles[0.05]
    again = assemble_profile(p.eta, 0.05, Q)
    assert again.residuals == p.residuals
