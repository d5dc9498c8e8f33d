import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import continuum_Tc1_gaussian, lattice_sum_Tc
from zsf import Field, LinearizedOp, MultiplierSpec, Symmetry, apply_L, apply_multiplier, invert_L_on_subspace, \
    logkernel_Sc_oracle, make_grid, multiplier_norm_certificate, project, sobolev_norm, symmetry_defect
from zsf.field import derivative
from zsf.operators import SpeedError, coercivity_sample, kernel_normalization, lipschitz_in_c_check, \
    random_smooth_field, solve_R, solve_rho, symbol

KINDS = ["Sc", "Tc1", "Tc2", "dSc_dc1", "dSc_dc2"]


def gaussian(g, a=1.0):
    return g.sample(lambda y1, y2: np.exp(-a * (y1 ** 2 + y2 ** 2)))


def test_c_zero_gives_zero():
    g = make_grid(32, 10.0)
    f = Field(g, np.random.default_rng(0).standard_normal(g.shape))
    assert np.max(np.abs(apply_multiplier(f, MultiplierSpec("Sc", (0, 0))).values)) == 0


def test_cos_y1():
    g = make_grid(32, 2 * np.pi)
    f = g.sample(lambda a, b: np.cos(a))
    out = apply_multiplier(f, MultiplierSpec("Sc", (0.5, 0))).values
    assert np.allclose(out, f.values / 3, atol=1e-14)


def test_cos_y2():
    g = make_grid(32, 2 * np.pi)
    f = g.sample(lambda a, b: np.cos(b))
    out = apply_multiplier(f, MultiplierSpec("Sc", (0.5, 0))).values
    assert np.max(np.abs(out)) < 1e-14


@pytest.mark.parametrize("c", [(1.0, 0.0), (0.8, 0.7), (0.0, -1.2)])
def test_speed_must_be_subluminal(c):
    with pytest.raises(SpeedError):
        MultiplierSpec("Sc", c)


def test_unknown_kind():
    with pytest.raises(ValueError):
        MultiplierSpec("Sx", (0.1, 0))


def test_Tc1_gaussian_lattice_oracle():
    g = make_grid(128, 24.0)
    out = apply_multiplier(gaussian(g), MultiplierSpec("Tc1", (0.3, 0))).values
    y1, y2 = g.mesh
    m = y1 ** 2 + y2 ** 2 <= 25
    ref = lattice_sum_Tc(0.3, g.box_length, np.stack([y1[m], y2[m]], -1))
    assert np.linalg.norm(out[m] - ref) <= 1e-6 * np.linalg.norm(ref)


def test_Tc1_gaussian_continuum_offset_scales_like_box_area():
    # the torus and the plane differ by a constant set by the zero mode
    offsets = []
    for n, L in ((256, 40.0), (512, 80.0)):
        g = make_grid(n, L)
        out = apply_multiplier(gaussian(g), MultiplierSpec("Tc1", (0.3, 0))).values
        y1, y2 = g.mesh
        m = y1 ** 2 + y2 ** 2 <= 25
        ref = continuum_Tc1_gaussian(0.3, np.stack([y1[m], y2[m]], -1))
        d = out[m] - ref
        assert np.linalg.norm(d - d.mean()) <= 3e-4 * np.linalg.norm(ref)
        offsets.append(d.mean())
    assert offsets[0] / offsets[1] == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("c", [(0.5, 0.0), (0.2, 0.3), (0.0, 0.6)])
def test_symbol_bounds_and_evenness(kind, c):
    spec = MultiplierSpec(kind, c)
    g = make_grid(64, 20.0)
    assert multiplier_norm_certificate(spec, g) <= spec.analytic_bound * (1 + 1e-12)
    k1, k2 = np.meshgrid(g.k1d, g.k1d, indexing="ij")
    s = spec.symbol(k1, k2)
    assert np.allclose(s, spec.symbol(-k1, -k2), atol=0)
    assert np.isrealobj(s)


def test_Sc_bound_attained():
    for g in (make_grid(64, 20.0), make_grid(16, 3.0)):
        v = multiplier_norm_certificate(MultiplierSpec("Sc", (0.5, 0)), g)
        assert 1 / 3 - 1e-12 <= v <= 1 / 3 + 1e-15


def test_Tc1_certificate():
    assert multiplier_norm_certificate(MultiplierSpec("Tc1", (0.5, 0)), make_grid(64, 20.0)) <= 2 / 3 + 1e-15


def test_Sc_certificate_c0():
    assert multiplier_norm_certificate(MultiplierSpec("Sc", (0, 0)), make_grid(32, 5.0)) == 0


def test_zero_mode_is_zero():
    for kind in KINDS:
        assert symbol(kind, (0.3, 0.1), np.array(0.0), np.array(0.0)) == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), c1=st.floats(-0.7, 0.7), c2=st.floats(-0.7, 0.7),
       s=st.sampled_from([0.0, 1.0, 2.0]))
def test_Sc_norm_bound_property(seed, c1, c2, s):
    if c1 * c1 + c2 * c2 >= 0.95:
        return
    g = make_grid(32, 12.0)
    f = Field(g, np.random.default_rng(seed).standard_normal(g.shape))
    spec = MultiplierSpec("Sc", (c1, c2))
    out = apply_multiplier(f, spec)
    assert not out.is_complex
    assert sobolev_norm(out, s) <= spec.analytic_bound * sobolev_norm(f, s) * (1 + 1e-12)


def test_lipschitz_equal_speeds():
    g = make_grid(64, 16.0)
    rep = lipschitz_in_c_check(gaussian(g), (0.2, 0), (0.2, 0))
    assert all(v == 0 for v in rep.sc_diff.values())
    assert all(v == 0 for v in rep.dsc_diff.values())


def test_lipschitz_gaussian_example():
    g = make_grid(128, 24.0)
    f = gaussian(g)
    rep = lipschitz_in_c_check(f, (0.2, 0), (0.25, 0))
    bound = 2 * 0.05 / ((1 - 0.04) * (1 - 0.0625)) * sobolev_norm(f, 0)
    assert rep.sc_diff[0.0] <= bound
    assert rep.sc_bound[0.0] == pytest.approx(bound, rel=1e-12)
    assert rep.ok


def test_dSc_finite_difference():
    g = make_grid(128, 24.0)
    rep = lipschitz_in_c_check(gaussian(g, 0.5), (0.3, 0.1), (0.3, 0.1), h=1e-5)
    assert max(rep.fd_rel_error.values()) <= 1e-6


# --- linearised operators ---

def test_L_minus_kernel(Q):
    assert apply_L(LinearizedOp("Lminus", Q), Q).norm() <= 1e-6 * Q.norm()


def test_L_plus_kernel(Q):
    dq = Field(Q.grid, derivative(Q.values, Q.grid, (1, 0)))
    assert apply_L(LinearizedOp("Lplus", Q), dq).norm() <= 1e-5 * dq.norm()


def test_L_plus_on_Q(Q):
    out = apply_L(LinearizedOp("Lplus", Q), Q).values
    assert np.linalg.norm(out + 2 * Q.values ** 3) * Q.grid.spacing <= 1e-8 * Q.norm()


@pytest.mark.parametrize("kind", ["Lplus", "Lminus"])
def test_self_adjoint(Q, kind, rng):
    op = LinearizedOp(kind, Q)
    g = Q.grid
    w1, w2 = (random_smooth_field(g, rng) for _ in range(2))
    a = np.sum(op.matvec(w1) * w2)
    b = np.sum(w1 * op.matvec(w2))
    assert abs(a - b) <= 1e-10 * abs(a)


def test_round_trip_Lplus(Q):
    g = Q.grid
    w = gaussian(g)
    op = LinearizedOp("Lplus", Q)
    back, info = invert_L_on_subspace(op, apply_L(op, w), Symmetry.EE, tol=1e-12)
    assert info.converged
    assert (back - w).norm() <= 1e-8 * w.norm()


def test_inverse_rejects_kernel_classes(Q):
    with pytest.raises(ValueError):
        invert_L_on_subspace(LinearizedOp("Lminus", Q), Q, Symmetry.EE)
    with pytest.raises(ValueError):
        invert_L_on_subspace(LinearizedOp("Lplus", Q), project(Q, Symmetry.OE), Symmetry.OE)


def test_inverse_rejects_wrong_parity(Q):
    g = Q.grid
    odd = g.sample(lambda a, b: a * np.exp(-a * a - b * b))
    with pytest.raises(ValueError):
        invert_L_on_subspace(LinearizedOp("Lplus", Q), odd, Symmetry.EE)


def test_R_profile(Q):
    R, info = solve_R(Q)
    g = Q.grid
    dq = derivative(Q.values, g, (1, 0))
    res = LinearizedOp("Lminus", Q).matvec(R.values) - dq
    assert np.linalg.norm(res) * g.spacing <= 1e-8 * np.linalg.norm(dq) * g.spacing
    assert symmetry_defect(R, Symmetry.OE) <= 1e-10 * R.norm()
    # analytic solution: L_-(-y1 Q / 2) = d1 Q
    y1, _ = g.mesh
    exact = -y1 * Q.values / 2
    assert np.linalg.norm(R.values - exact) <= 1e-7 * np.linalg.norm(exact)


def test_bound_ratio_random_oe(Q):
    rng = np.random.default_rng(7)
    op = LinearizedOp("Lminus", Q)
    ratios = []
    for _ in range(5):
        f = project(Field(Q.grid, random_smooth_field(Q.grid, rng)), Symmetry.OE)
        _, info = invert_L_on_subspace(op, f, Symmetry.OE)
        ratios.append(info.bound_ratio)
    assert max(ratios) < 1e3


def test_rho_and_coercivity(Q):
    rho, info = solve_rho(Q)
    g = Q.grid
    rhs = g.radius ** 2 * Q.values / 4
    res = LinearizedOp("Lplus", Q).matvec(rho.values) - rhs
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(rhs)
    assert symmetry_defect(rho, Symmetry.EE) <= 1e-10 * rho.norm()
    sample = coercivity_sample(Q, rho, 20, seed=3)
    assert sample.n_positive == 20
    assert sample.min_ratio > 0


# --- free-space oracle ---

def test_oracle_c0_zero():
    g = make_grid(64, 16.0)
    pts = [(0.0, 0.0), (1.0, 0.5)]
    assert np.all(logkernel_Sc_oracle(gaussian(g), (0, 0), pts) == 0)


def test_oracle_rejects_off_grid_and_edge_points():
    g = make_grid(64, 16.0)
    with pytest.raises(ValueError):
        logkernel_Sc_oracle(gaussian(g), (0.3, 0), [(0.1, 0.0)])
    with pytest.raises(ValueError):
        logkernel_Sc_oracle(gaussian(g), (0.3, 0), [(7.5, 0.0)])


def test_oracle_preserves_oe_parity():
    g = make_grid(128, 24.0)
    h = g.sample(lambda a, b: a * np.exp(-a * a - 0.5 * b * b))
    pts = np.array([(1.5, 0.75), (3.0, -2.25), (0.375, 4.5)])
    mirrored = pts * np.array([-1.0, 1.0])
    v = logkernel_Sc_oracle(h, (0.3, 0), pts)
    w = logkernel_Sc_oracle(h, (0.3, 0), mirrored)
    assert np.allclose(v, -w, rtol=1e-10, atol=1e-14)


def _disc_points(g, radius=5.0):
    y1, y2 = g.mesh
    m = y1 ** 2 + y2 ** 2 <= radius ** 2
    return m, np.stack([y1[m], y2[m]], -1)


@pytest.fixture(scope="module")
def oracle_case():
    g = make_grid(512, 60.0)
    h = gaussian(g)
    m, pts = _disc_points(g)
    per = apply_multiplier(h, MultiplierSpec("Sc", (0.3, 0))).values[m]
    return h, pts, per, logkernel_Sc_oracle(h, (0.3, 0), pts)


@pytest.mark.xfail(strict=True, reason="torus zero mode shifts periodic S_c by a constant of order 1/L^2")
def test_oracle_matches_spectral_literal(oracle_case):
    _, _, per, free = oracle_case
    assert np.linalg.norm(per - free) <= 1e-4 * np.linalg.norm(free)


def test_oracle_matches_spectral_up_to_constant(oracle_case):
    _, _, per, free = oracle_case
    d = per - free
    assert np.linalg.norm(d - d.mean()) <= 1e-4 * np.linalg.norm(free)


def test_oracle_offset_matches_zero_mode_estimate(oracle_case):
    h, _, per, free = oracle_case
    nu = np.sqrt(1 - 0.09)
    mass = np.sum(h.values) * h.grid.cell_area
    predicted = (1 / nu - 1) * mass / h.grid.box_length ** 2
    assert np.mean(per - free) == pytest.approx(-predicted, rel=0.1)


def test_kernel_normalization(oracle_case):
    h, pts, _, _ = oracle_case
    rep = kernel_normalization(h, (0.3, 0), pts)
    assert rep.best == (1, 1)
    assert rep.errors[(1, 2)] > 10 * rep.errors[(1, 1)]
