import numpy as np
import pytest

from nilflow import diagnostics as D
from nilflow.algebra import LieStructure
from nilflow.errors import DomainError
from nilflow.family import CanonicalFamilyParams, family_state
from nilflow.flow import StepController, Trajectory, evolve, homogeneous_state, random_state
from nilflow.grid import Grid
from nilflow.harness import (QUANTITIES, LadderRun, audit_records, consistency_check, fit_order,
                             homogeneous_oracle, ladder_report, maximum_principle_audit,
                             state_is_homogeneous)

HEIS = LieStructure.heisenberg(1.0)
ABEL = LieStructure.abelian()


def test_stationary_flat_abelian_residual_zero():
    s = homogeneous_state(ABEL, np.diag([1.0, 2.0, 0.5]))
    tr = evolve(s, 0.3, StepController(), snapshot_cadence=0.1)
    for q in QUANTITIES:
        rep = consistency_check(tr, q)
        assert rep.max_residual == 0.0
        assert np.all(rep.residual_sup >= 0)


def test_homogeneous_bracket_residual_second_order():
    s = homogeneous_state(HEIS, np.eye(3))
    res = []
    deltas = [0.1, 0.05, 0.025]
    for d in deltas:
        tr = evolve(s, 0.5 + d, StepController(error_tol=1e-10), snapshot_cadence=d)
        rep = consistency_check(tr, "bracket")
        j = int(round(0.5 / d)) - 1
        assert rep.times[j] == pytest.approx(0.5)
        res.append(rep.residual_sup[j])
    assert fit_order(deltas, res) >= 1.9


def test_consistency_check_cadence_errors():
    s = homogeneous_state(HEIS, np.eye(3))
    tr = evolve(s, 0.1, StepController(), snapshot_cadence=0.1)
    with pytest.raises(ValueError):
        consistency_check(tr, "bracket")
    tr = evolve(s, 0.3, StepController(), snapshot_cadence=0.1)
    with pytest.raises(ValueError):
        consistency_check(tr, "bracket", max_cadence=0.01)
    with pytest.raises(ValueError):
        consistency_check(tr, "nope")
    uneven = Trajectory()
    for st_, d in zip(tr.states, tr.derivs):
        uneven.append(st_, d)
    uneven.states[1].t = 0.12
    with pytest.raises(ValueError):
        consistency_check(uneven, "bracket")


def test_fit_order_and_ladder_report_synthetic():
    h = np.array([0.4, 0.2, 0.1])
    assert fit_order(h, 3 * h**2) == pytest.approx(2.0)
    x = np.linspace(0, 1, 8)
    runs = [LadderRun(64 * 2**k, d, {"bracket": 1e-9 + np.sin(x) * d**2}) for k, d in enumerate([0.016, 0.004, 0.001])]
    rep = ladder_report(runs, "bracket")
    assert rep.extrapolated == pytest.approx(1e-9, rel=1e-5)
    assert rep.order == pytest.approx(2.0, abs=1e-3)
    assert rep.passed(min_order=1.99)
    assert not rep.passed(min_order=2.5)
    assert rep.ladder[0] == pytest.approx((2 * np.pi / 64, 0.016))


def test_oracle_examples():
    t = np.linspace(0, 1, 11)
    o = homogeneous_oracle(HEIS, np.eye(3), 1.0, 0.0, (0.0, 1.0), t_eval=t)
    assert o.Phi[-1] == pytest.approx(0.5, rel=1e-10)
    assert np.allclose(o.G[:, 2, 2], (3 * t + 1) ** (-1 / 3), rtol=1e-10)
    assert np.allclose(o.Phi_closed, o.Phi, rtol=1e-10)
    a = homogeneous_oracle(ABEL, np.diag([1.0, 2.0, 3.0]), 1.0, 0.0, (0.0, 1.0))
    assert np.allclose(a.G, np.diag([1.0, 2.0, 3.0]), atol=0)
    assert a.Phi_closed is None


def test_oracle_with_h_matches_family_ode():
    # on a diagonal metric the oracle must follow the (Phi, Psi) system
    from nilflow.family import family_ode_rhs
    o = homogeneous_oracle(HEIS, np.diag([1.0, 1.5, 0.7]), 1.0, 0.8, (0.0, 0.5), t_eval=[0.0, 1e-4])
    dPhi, dPsi, _, _ = family_ode_rhs(o.Phi[0], o.Psi[0])
    assert (o.Phi[1] - o.Phi[0]) / 1e-4 == pytest.approx(dPhi, rel=1e-3)
    assert (o.Psi[1] - o.Psi[0]) / 1e-4 == pytest.approx(dPsi, rel=1e-3)


def test_oracle_rejects_inhomogeneous_input():
    with pytest.raises(DomainError):
        homogeneous_oracle(HEIS, np.tile(np.eye(3), (4, 1, 1)), 1.0, 0.0, (0.0, 1.0))
    with pytest.raises(DomainError):
        homogeneous_oracle(HEIS, np.eye(3), np.ones(4), 0.0, (0.0, 1.0))


def test_flow_agrees_with_oracle():
    G0 = np.array([[1.2, 0.1, 0.0], [0.1, 0.9, 0.05], [0.0, 0.05, 1.1]])
    s = homogeneous_state(HEIS, G0, h0=0.8)
    tr = evolve(s, 1.0, StepController(), snapshot_cadence=1.0)
    o = homogeneous_oracle(HEIS, G0, 1.0, 0.8, (0.0, 1.0), t_eval=[1.0])
    G = tr.states[-1].G[0]
    assert np.max(np.abs(G - o.G[-1])) / np.max(np.abs(o.G[-1])) <= 1e-6
    assert state_is_homogeneous(s) and not state_is_homogeneous(random_state(Grid(16), HEIS))


def test_audit_family_sharpness_witness():
    s = family_state(CanonicalFamilyParams(C=0.0), 0.5)
    tr = evolve(s, 3.0, StepController(error_tol=1e-10), observers=[D.record],
                snapshot_cadence=0.5, diagnostics_cadence=0.1)
    rep = maximum_principle_audit(tr)
    vals = [r[0].mon_bracket for r in tr.records]
    assert np.allclose(vals, 2 / 3, atol=1e-6)
    assert rep["ok"] and not rep["flags"]


def test_audit_adversarial_start_above_threshold():
    # t0 = 1 with t |[,]|^2 = 5: hypothesis fails, monitor decreases, nothing flagged
    s = homogeneous_state(HEIS, np.diag([1.0, 1.0, 2.5]), t=1.0)
    assert D.record(s).mon_bracket == pytest.approx(5.0)
    tr = evolve(s, 6.0, StepController(), observers=[D.record], snapshot_cadence=1.0, diagnostics_cadence=0.25)
    rep = maximum_principle_audit(tr)
    m = rep["monitors"]["mon_bracket"]
    assert not m["hypothesis"] and m["decreasing_while_above"]
    assert not rep["flags"]


def test_audit_flags_violation():
    recs = [D.record(homogeneous_state(ABEL, np.eye(3), t=t)) for t in (0.0, 0.5, 1.0)]
    recs[2].mon_q = 3.0
    rep = audit_records(recs)
    assert [f[0] for f in rep["flags"]] == ["mon_q"]
    assert not rep["ok"]


def test_audit_d2_growth_detected():
    recs = [D.record(homogeneous_state(ABEL, np.eye(3), t=t)) for t in np.linspace(0, 1, 8)]
    for k, r in enumerate(recs):
        r.mon_d2 = float(k)
    rep = audit_records(recs)
    assert not rep["d2_bounded"] and rep["ok"]
