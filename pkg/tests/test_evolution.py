import warnings

import numpy as np
import pytest

from zsf import Field, make_grid, solve_profile, sobolev_norm
from zsf.evolution import EvolutionError, EvolutionState, boosted_standing_state, centroid, conserved, dt_cap, \
    evolve, evolve_and_track, shape_error, standing_wave_error, standing_wave_state, step, track, travelling_state
from zsf.field import derivative, gradient
from zsf.ground_state import virial_identities


def test_standing_wave_momentum_zero(Q):
    q = conserved(standing_wave_state(Q))
    assert np.max(np.abs(q.momentum)) <= 1e-14


def test_standing_wave_energy(gs):
    Q = gs.Q
    q = conserved(standing_wave_state(Q))
    g = Q.grid
    d1, d2 = gradient(Q.values, g)
    q4 = np.sum(Q.values ** 4) * g.cell_area
    direct = np.sum(d1 ** 2 + d2 ** 2) * g.cell_area - q4 / 2
    assert q.energy == pytest.approx(direct, rel=1e-12)
    # Pohozaev: int |grad Q|^2 = int Q^4 / 2, so the energy vanishes
    v = virial_identities(gs)
    assert abs(q.energy) <= 1e-6 * v["q4"]
    assert q.mass == pytest.approx(gs.mass, rel=1e-14)


def test_soliton_momentum_parity(profiles):
    q = conserved(travelling_state(profiles[0.2]))
    assert abs(q.momentum[0]) > 1e-3
    assert abs(q.momentum[1]) <= 1e-12 * abs(q.momentum[0])


def test_profile_velocity_curl_free(profiles):
    p = profiles[0.2]
    g = p.grid
    curl = derivative(p.V[1].values, g, (1, 0)) - derivative(p.V[0].values, g, (0, 1))
    assert sobolev_norm(curl, 0, g) <= 1e-8 * sobolev_norm(p.V[0], 1)


def test_plane_wave_step():
    g = make_grid(64, 2 * np.pi)
    y1, y2 = g.mesh
    xi = (3.0, -2.0)
    u = np.exp(1j * (xi[0] * y1 + xi[1] * y2))
    z = np.zeros(g.shape)
    out = step(EvolutionState.from_arrays(g, 0.0, u, z, z, z), 1e-3)
    assert np.allclose(out.u.values, u * np.exp(-1j * 13 * 1e-3), atol=1e-13)
    assert np.max(np.abs(out.n.values)) <= 1e-14
    assert out.t == pytest.approx(1e-3)


def test_standing_wave_phase(Q):
    assert standing_wave_error(Q, 1.0, 1e-3) <= 1e-4


def test_second_order(Q):
    errs = []
    for dt in (0.02, 0.01, 0.005):
        out = evolve(standing_wave_state(Q), 1.0, dt, dt_max=1.0)
        errs.append(sobolev_norm(out.u.values - np.exp(1j) * Q.values, 0, Q.grid))
    assert errs[1] / errs[2] == pytest.approx(4.0, abs=0.5)
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.5)


def test_time_reversible(profiles):
    s0 = travelling_state(profiles[0.1])
    back = step(step(s0, 1e-3), -1e-3)
    num = np.linalg.norm(back.u.values - s0.u.values) + np.linalg.norm(back.n.values - s0.n.values)
    den = np.linalg.norm(s0.u.values) + np.linalg.norm(s0.n.values)
    assert num <= 1e-10 * den
    assert back.t == 0.0


def test_dt_cap_warning(Q):
    s = standing_wave_state(Q)
    with pytest.warns(RuntimeWarning):
        step(s, 2 * dt_cap(Q.grid))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        step(s, 0.5 * dt_cap(Q.grid))


def test_invalid_dt(Q):
    with pytest.raises(ValueError):
        step(standing_wave_state(Q), 0.0)
    with pytest.raises(ValueError):
        evolve(standing_wave_state(Q), 1.0, 0.3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_is_fatal():
    g = make_grid(32, 10.0)
    z = np.zeros(g.shape)
    huge = np.full(g.shape, 1e200, dtype=complex)
    with pytest.raises(EvolutionError):
        step(EvolutionState.from_arrays(g, 0.0, huge, z, z, z), 1e-3, dt_max=1.0)


def test_centroid_circular():
    g = make_grid(64, 20.0)
    for y0 in ((3.0, -2.5), (9.5, 0.0)):
        f = g.sample(lambda a, b: np.exp(-((a - y0[0] + 10) % 20 - 10) ** 2 - (b - y0[1]) ** 2))
        c = centroid(f.values, g)
        assert c[0] == pytest.approx(y0[0] if y0[0] < 10 else y0[0] - 20, abs=1e-6)
        assert c[1] == pytest.approx(y0[1], abs=1e-6)


def test_shape_error_recovers_shift(Q):
    g = Q.grid
    from zsf.evolution import _shift
    moved = _shift(Q.values, g, (0.7, -0.4))
    err, y = shape_error(moved, Q.values, g)
    assert err <= 1e-6
    assert y == pytest.approx((0.7, -0.4), abs=1e-5)


def test_short_track(profiles):
    rep = evolve_and_track(profiles[0.2], T=1.0, dt=1e-3, snap_every=250)
    assert len(rep.rows()) == 5
    assert rep.velocity[0] == pytest.approx(0.2, rel=0.02)
    assert abs(rep.velocity[1]) <= 1e-6
    assert rep.mass_drift <= 1e-8
    assert rep.energy_drift <= 1e-5 and rep.momentum_drift <= 1e-5
    assert set(rep.rows()[0]) == {"t", "center_x", "center_y", "M", "H", "P1", "P2", "shape_error"}


def test_energy_drift_second_order(profiles):
    drifts = []
    for dt in (0.004, 0.002):
        rep = evolve_and_track(profiles[0.2], T=1.0, dt=dt, snap_every=10 ** 6)
        drifts.append(rep.energy_drift)
        # both substeps conserve these exactly
        assert rep.mass_drift <= 1e-12 and rep.momentum_drift <= 1e-10
    # at least second order; the leading dt^2 term cancels between the
    # endpoints of a travelling wave, so about 16 is observed
    assert drifts[0] / drifts[1] >= 3.5


def test_leaving_safe_region(Q):
    g = Q.grid
    shifted = np.roll(Q.values, int(10.5 / g.spacing), axis=0)
    z = np.zeros(g.shape)
    state = EvolutionState.from_arrays(g, 0.0, shifted, -shifted ** 2, z, z)
    with pytest.raises(EvolutionError):
        track(state, Q.values, 0.01, 1e-3)


def test_boosted_state_is_not_a_profile(Q, profiles):
    b = boosted_standing_state(Q, 0.2)
    s = travelling_state(profiles[0.2])
    assert np.max(np.abs(b.v[0].values)) == 0
    assert np.max(np.abs(s.v[0].values)) > 1e-3
    assert np.allclose(np.abs(b.u.values), Q.values)


def test_rotated_profile_moves_along_its_speed(Q):
    p = solve_profile((0.0, 0.2), Q)
    rep = evolve_and_track(p, T=1.0, dt=2e-3, snap_every=250)
    assert rep.velocity[1] == pytest.approx(0.2, rel=0.02)
    assert abs(rep.velocity[0]) <= 1e-6


def test_concurrent_runs_match(profiles):
    from concurrent.futures import ThreadPoolExecutor
    s = travelling_state(profiles[0.1])
    with ThreadPoolExecutor(2) as ex:
        a, b = ex.map(lambda _: evolve(s, 0.05, 1e-3), range(2))
    assert np.array_equal(a.u.values, b.u.values)


def test_state_fields_frozen(Q):
    s = standing_wave_state(Q)
    assert isinstance(s.u, Field)
    with pytest.raises(ValueError):
        s.u.values[0, 0] = 1
