import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilflow import diagnostics as D
from nilflow.algebra import LieStructure
from nilflow.errors import DomainError
from nilflow.family import (CanonicalFamilyParams, compare_to_family, family_closed_form, family_ode_rhs,
                            family_state, integrate_family, rescale, rescale_state, rigidity_report)
from nilflow.flow import StepController, evolve, homogeneous_state, random_state, rhs_G, rhs_a
from nilflow.grid import Grid

HEIS = LieStructure.heisenberg(1.0)


@pytest.fixture(scope="module")
def short_traj():
    s = random_state(Grid(32), HEIS, seed=11, h0=0.3, t0=0.0)
    return evolve(s, 1.2, StepController(error_tol=1e-9), snapshot_cadence=0.05)


def test_rescale_identity(short_traj):
    r = rescale(short_traj, 1.0)
    for a, b in zip(r.states, short_traj.states):
        assert np.array_equal(a.G, b.G) and np.array_equal(a.a, b.a) and a.t == b.t


def test_rescale_state_fields(short_traj):
    s = short_traj.states[10]
    r = rescale_state(s, 2.0)
    assert r.t == pytest.approx(s.t / 2)
    assert np.array_equal(r.G, s.G / 2) and np.array_equal(r.g, s.g / 2)
    assert np.array_equal(r.m, s.m / 2) and r.h0 == s.h0 / 2
    assert np.array_equal(r.a, s.a)


def test_rescale_interpolated_state_matches(short_traj):
    r = rescale(short_traj, 2.0, 0.1, 0.5)
    a = r.state_at(0.3125)
    b = rescale_state(short_traj.state_at(0.625), 2.0)
    for name in ("G", "g", "a", "m"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-12, atol=1e-14)


def test_rescale_composition(short_traj):
    a = rescale(rescale(short_traj, 2.0), 3.0)
    b = rescale(short_traj, 6.0)
    for sa, sb in zip(a.states, b.states):
        assert sa.t == pytest.approx(sb.t, rel=1e-15)
        for name in ("G", "g", "a", "m"):
            assert np.allclose(getattr(sa, name), getattr(sb, name), rtol=1e-15, atol=0)
    for da, db in zip(a.derivs, b.derivs):
        assert np.allclose(da, db, rtol=1e-14, atol=0)
    ta = a.state_at(0.13)
    tb = b.state_at(0.13)
    assert np.allclose(ta.G, tb.G, rtol=1e-13)


def test_rescale_window_not_covered(short_traj):
    with pytest.raises(ValueError):
        rescale(short_traj, 2.0, 0.1, 1.0)
    with pytest.raises(DomainError):
        rescale(short_traj, 0.0)


@pytest.mark.parametrize("scale", [0.5, 2.0, 4.0])
def test_monitors_and_energy_invariant_under_rescaling(short_traj, scale):
    j = 12
    orig = short_traj.states[j]
    r = rescale_state(orig, scale)
    ro, rr = D.record(orig), D.record(r)
    for name in ("mon_bracket", "mon_hg", "mon_q", "mon_d2"):
        assert getattr(rr, name) == pytest.approx(getattr(ro, name), rel=1e-12)
    assert rr.sup["bracket_sq"] == pytest.approx(scale * ro.sup["bracket_sq"], rel=1e-12)
    assert D.energy_I(r, r.t) == pytest.approx(D.energy_I(orig, orig.t), rel=1e-12)


def test_family_ode_examples():
    assert family_ode_rhs(0.0, 0.0) == (0.0, 0.0, 0.0, 0.0)
    assert family_ode_rhs(2.0, 0.0)[0] == pytest.approx(-6.0)
    dPhi, dPsi, _, _ = family_ode_rhs(2.0, 6.0)
    assert dPhi == pytest.approx(-8.0) and dPsi == pytest.approx(-24.0)
    with pytest.raises(DomainError):
        family_ode_rhs(-1.0, 0.0)


def test_closed_form_examples():
    t = np.linspace(0.1, 50, 40)
    Phi, b, z = family_closed_form(t, 0.0)
    assert np.allclose(t * Phi, 2.0 / 3.0, rtol=1e-15)
    _, b1, z1 = family_closed_form(1.0, 0.7)
    assert b1 == pytest.approx(1.0) and z1 == pytest.approx(1.0)


@given(st.floats(0.0, 5.0), st.floats(0.2, 10.0))
@settings(max_examples=30, deadline=None)
def test_closed_form_satisfies_ode(C, t):
    h = 1e-5 * t
    Phi = family_closed_form(t, C)[0]
    dPhi = (family_closed_form(t + h, C)[0] - family_closed_form(t - h, C)[0]) / (2 * h)
    _, bp, zp = family_closed_form(t + h, C)
    _, bm, zm = family_closed_form(t - h, C)
    ode = family_ode_rhs(float(Phi), 0.0)
    assert dPhi == pytest.approx(ode[0], rel=1e-8)
    assert (np.log(bp) - np.log(bm)) / (2 * h) == pytest.approx(ode[2], rel=1e-8)
    assert (np.log(zp) - np.log(zm)) / (2 * h) == pytest.approx(ode[3], rel=1e-8)


@pytest.mark.parametrize("C", [0.0, 0.4, 3.0])
def test_integrate_family_matches_closed_form(C):
    t = np.linspace(0.2, 20, 60)
    fam = integrate_family(CanonicalFamilyParams(C=C), (0.2, 20), t_eval=t)
    Phi, b, z = family_closed_form(t, C)
    assert np.allclose(fam.Phi, Phi, rtol=1e-10)
    assert np.allclose(fam.block_factor, b, rtol=1e-10)
    assert np.allclose(fam.center_factor, z, rtol=1e-10)
    assert np.allclose(fam.g, t)
    assert np.all(t * fam.Phi <= 2.0 / 3.0 + 1e-12)


def test_family_long_time_asymptotics():
    fam = integrate_family(CanonicalFamilyParams(C=2.0), (1.0, 1e5), t_eval=[1e5])
    assert fam.t[0] * fam.Phi[0] == pytest.approx(2.0 / 3.0, rel=1e-4)


@given(st.floats(0.0, 3.0), st.floats(0.0, 4.0), st.floats(0.7, 5.0))
@settings(max_examples=20, deadline=None)
def test_family_state_reproduces_family_rates(C, psi0, t):
    p = CanonicalFamilyParams(C=C, psi0=psi0, block=np.array([[1.3, 0.2], [0.2, 0.7]]), c=1.4)
    fam = integrate_family(p, (min(t, 1.0), max(t, 1.0)), t_eval=[t])
    s = family_state(p, t, fam=fam)
    sf = D.scalar_fields(s)
    assert sf["bracket_sq"][0] == pytest.approx(fam.Phi[0], rel=1e-10)
    assert sf["hg_sq"][0] == pytest.approx(fam.Psi[0], rel=1e-10, abs=1e-14)
    _, _, r0, rz = family_ode_rhs(fam.Phi[0], fam.Psi[0])
    dG = rhs_G(s)[0]
    assert np.allclose(dG[:2, :2], r0 * s.G[0, :2, :2], rtol=1e-10, atol=1e-12)
    assert dG[2, 2] == pytest.approx(rz * s.G[0, 2, 2], rel=1e-10, abs=1e-12)
    assert np.allclose(dG[:2, 2], 0.0, atol=1e-14)


def test_family_backward_blowup_reported():
    # with Psi(1) = 4 the backward solution is singular before t = 1/2
    with pytest.raises(DomainError):
        integrate_family(CanonicalFamilyParams(psi0=4.0), (0.4, 1.0))


def test_params_validation():
    with pytest.raises(DomainError):
        CanonicalFamilyParams(C=-1.0)
    with pytest.raises(DomainError):
        CanonicalFamilyParams(a=2.0)
    with pytest.raises(DomainError):
        CanonicalFamilyParams(block=np.diag([1.0, -1.0]))


def test_rigidity_family_and_flat():
    p = CanonicalFamilyParams(C=0.5, psi0=1.0)
    rep = rigidity_report(family_state(p, 2.0))
    assert max(rep.values()) <= 1e-8
    rep = rigidity_report(homogeneous_state(LieStructure.abelian(), np.eye(3)))
    assert max(rep.values()) == 0.0


def test_rigidity_direct_recomputation():
    s = random_state(Grid(64), HEIS, seed=6, h0=0.4)
    rep = rigidity_report(s)
    assert all(v > 0 for v in rep.values())
    sf = D.scalar_fields(s)
    assert rep["trace_dg"] == pytest.approx(sf["trace_dg"].max(), rel=1e-12)
    assert rep["trh2"] == pytest.approx(sf["trh2"].max(), rel=1e-12)
    assert rep["dg_oscillation"] == pytest.approx(np.ptp(sf["dg_sq"]), rel=1e-12)
    assert rep["a_speed"] == pytest.approx(np.linalg.norm(rhs_a(s), axis=1).max(), rel=1e-12)
    # coordinate path for |D^2 G - DG DG|
    k = D.kinematics(s)
    Gi = k.Gi
    M = k.DDG - (k.P @ Gi @ k.P) / s.g[:, None, None]
    second = np.sqrt(np.einsum("nij,njk,nkl,nli->n", Gi, M, Gi, M))
    assert rep["second_order"] == pytest.approx(second.max(), rel=1e-10)
    # sum_i DG(eta_i, zeta)^2 = (P G^{-1} P)_33 / G_33 for the unit center zeta = e3 / sqrt(G_33)
    dz = np.sqrt((k.P @ Gi @ k.P)[:, 2, 2] / (s.g * s.G[:, 2, 2]))
    assert rep["dg_center"] == pytest.approx(dz.max(), rel=1e-10)


def test_compare_to_family_requires_coverage(short_traj):
    with pytest.raises(ValueError):
        compare_to_family(short_traj, [4.0])


def test_compare_to_family_on_family_run():
    p = CanonicalFamilyParams(C=0.0)
    s = family_state(p, 0.5)
    tr = evolve(s, 4.0, StepController(error_tol=1e-11), snapshot_cadence=0.05)
    (res,) = compare_to_family(tr, [2.0])
    assert res.trace_dg <= 1e-12 and res.trh2_t <= 1e-12 and res.a_speed <= 1e-12
    assert res.off_block <= 1e-12
    assert res.C_original == pytest.approx(0.0, abs=1e-6)
    assert res.fit_rms <= 1e-8
