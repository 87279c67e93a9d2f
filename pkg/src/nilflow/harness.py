"""Numerical certification of the scalar evolution identities and independent oracles."""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import diagnostics as D
from .algebra import bracket_norm_sq, check_spd, hg_norm_sq
from .errors import DomainError
from .flow import StepController, evolve
from .grid import Grid

QUANTITIES = ("bracket", "hg", "dg", "trh2", "sum")


# --------------------------------------------------------- consistency check

@dataclass
class ConsistencyReport:
    quantity: str
    times: np.ndarray
    residual_sup: np.ndarray  # per sampled time
    ladder: list = field(default_factory=list)  # (dx, delta) per rung
    ladder_residuals: list = field(default_factory=list)
    order: float = float("nan")
    extrapolated: float = float("nan")
    scale: float = float("nan")  # sup of the predicted rate, for relative reading

    @property
    def max_residual(self):
        return float(np.max(self.residual_sup)) if len(self.residual_sup) else 0.0

    def passed(self, min_order=2.0, max_extrapolated=1e-6):
        return bool(self.order >= min_order and self.extrapolated <= max_extrapolated)

    def as_dict(self):
        return {
            "quantity": self.quantity,
            "times": [float(t) for t in self.times],
            "residual_sup": [float(r) for r in self.residual_sup],
            "ladder": [[float(a), float(b)] for a, b in self.ladder],
            "ladder_residuals": [float(r) for r in self.ladder_residuals],
            "order": float(self.order),
            "extrapolated": float(self.extrapolated),
        }


def _uniform_cadence(times, rtol=1e-9):
    if len(times) < 3:
        raise ValueError("consistency check needs at least three snapshots")
    dt = np.diff(times)
    if np.any(np.abs(dt - dt[0]) > rtol * max(1.0, abs(times[-1]))):
        raise ValueError("snapshots must be equally spaced")
    return float(dt[0])


def residual_field(traj, quantity, j):
    """Centered-difference rate of f at snapshot j minus Delta f + R at that snapshot."""
    delta = traj.states[j + 1].t - traj.states[j - 1].t
    fp = D.quantity_field(traj.states[j + 1], quantity)
    fm = D.quantity_field(traj.states[j - 1], quantity)
    pred = D.heat_operator_rhs(traj.states[j], quantity)
    return (fp - fm) / delta - pred, pred


def consistency_check(traj, quantity, max_cadence=None):
    """Sup-norm identity residual at every interior snapshot (delta = snapshot cadence)."""
    if quantity not in QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}")
    delta = _uniform_cadence(traj.times)
    if max_cadence is not None and delta > max_cadence:
        raise ValueError(f"cadence {delta} is coarser than {max_cadence}")
    res, scale = [], 0.0
    for j in range(1, len(traj) - 1):
        r, pred = residual_field(traj, quantity, j)
        res.append(float(np.max(np.abs(r))))
        scale = max(scale, float(np.max(np.abs(pred))))
    rep = ConsistencyReport(quantity, traj.times[1:-1], np.array(res))
    rep.scale = scale
    return rep


def fit_order(h, err):
    """Least-squares slope of log(err) against log(h)."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    if np.any(err <= 0):
        return float("inf")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class LadderRun:
    N: int
    delta: float
    residuals: dict  # quantity -> residual field at the check time (common points)


def ladder_runs(make_state, rungs=((64, 0.016), (128, 0.004), (256, 0.001)), n_steps=4,
                quantities=QUANTITIES, error_tol=1e-10, cfl_sigma=0.2, method="fd4"):
    """Evolve make_state(grid) on each (N, delta) rung to t_c = n_steps * delta_0.

    The check time t_c is common to all rungs; residuals are restricted to the
    grid points of the coarsest rung.
    """
    N0, d0 = rungs[0]
    t_c = n_steps * d0
    out = []
    for N, delta in rungs:
        if N % N0:
            raise ValueError("ladder grids must refine the coarsest grid")
        k = int(round(t_c / delta))
        if not np.isclose(k * delta, t_c, rtol=1e-12, atol=0):
            raise ValueError("check time must be a multiple of every delta")
        s0 = make_state(Grid(N, method=method))
        ctrl = StepController(cfl_sigma=cfl_sigma, error_tol=error_tol)
        traj = evolve(s0, s0.t + (k + 1) * delta, ctrl, snapshot_cadence=delta)
        stride = N // N0
        res = {q: residual_field(traj, q, k)[0][::stride] for q in quantities}
        out.append(LadderRun(N, delta, res))
    return out


def ladder_report(runs, quantity, grid_length=2 * np.pi):
    """Order fit in delta and pointwise Richardson extrapolation from the two finest rungs."""
    deltas = [r.delta for r in runs]
    sups = [float(np.max(np.abs(r.residuals[quantity]))) for r in runs]
    ratio = deltas[-2] / deltas[-1]
    p = 2.0
    fine, mid = runs[-1].residuals[quantity], runs[-2].residuals[quantity]
    ext = (ratio**p * fine - mid) / (ratio**p - 1.0)
    rep = ConsistencyReport(quantity, np.array([]), np.array([]))
    rep.ladder = [(grid_length / r.N, r.delta) for r in runs]
    rep.ladder_residuals = sups
    rep.order = fit_order(deltas, sups)
    rep.extrapolated = float(np.max(np.abs(ext)))
    return rep


# -------------------------------------------------------- homogeneous oracle

def _ricci_nilpotent(C, G):
    """Ricci tensor of a left-invariant metric on a nilpotent group, by explicit loops.

    Ric(e_i, e_j) = -1/2 sum G([e_i, e_k], [e_j, e_l]) G^{kl}
                    + 1/4 sum G(e_i, [e_k, e_l]) G(e_j, [e_k', e_l']) G^{kk'} G^{ll'}
    """
    Gi = np.linalg.inv(G)
    n = 3
    br = np.zeros((n, n, n))  # br[i, k] = vector [e_i, e_k]
    for i in range(n):
        for k in range(n):
            for p in range(n):
                br[i, k, p] = C[p, i, k]
    Ric = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                for l in range(n):
                    acc -= 0.5 * (br[i, k] @ G @ br[j, l]) * Gi[k, l]
            for k in range(n):
                for l in range(n):
                    for kk in range(n):
                        for ll in range(n):
                            acc += 0.25 * (G[i] @ br[k, l]) * (G[j] @ br[kk, ll]) * Gi[k, kk] * Gi[l, ll]
            Ric[i, j] = acc
    return Ric


def _h_square(G, h0):
    Gi = np.linalg.inv(G)
    H = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        H[i, j, k] = h0
        H[j, i, k] = -h0
    out = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    for kk in range(3):
                        for ll in range(3):
                            out[i, j] += H[i, k, l] * H[j, kk, ll] * Gi[k, kk] * Gi[l, ll]
    return out


@dataclass
class OracleSolution:
    t: np.ndarray
    G: np.ndarray  # (T, 3, 3)
    g: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    Phi_closed: np.ndarray = None  # H = 0 Heisenberg only


def homogeneous_oracle(lie, G0, g0, h0, t_range, t_eval=None, rtol=1e-12, atol=1e-14):
    """Independent DOP853 solve of dG/dt = -2 Ric + H^2/2, dg/dt = 0 for x-independent data."""
    G0 = np.asarray(G0, dtype=float)
    if G0.shape != (3, 3):
        raise DomainError("homogeneous oracle needs a single 3x3 fiber metric")
    check_spd(G0)
    if np.ndim(g0) or np.ndim(h0):
        raise DomainError("homogeneous oracle needs constant g and h0")
    t0, t1 = t_range
    t_eval = np.linspace(t0, t1, 11) if t_eval is None else np.asarray(t_eval, float)
    C = np.asarray(lie.C)

    def f(t, y):
        G = y.reshape(3, 3)
        G = 0.5 * (G + G.T)
        return (-2.0 * _ricci_nilpotent(C, G) + 0.5 * _h_square(G, h0)).ravel()

    sol = solve_ivp(f, (t0, t1), G0.ravel(), method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    Gs = sol.y.T.reshape(-1, 3, 3)
    Phi = np.array([bracket_norm_sq(lie, G) for G in Gs])
    Psi = np.array([hg_norm_sq(lie, G, h0) for G in Gs])
    out = OracleSolution(sol.t, Gs, np.full(sol.t.size, float(g0)), Phi, Psi)
    if h0 == 0 and not lie.is_abelian:
        out.Phi_closed = 1.0 / (1.5 * (sol.t - t0) + 1.0 / Phi[0])
    return out


def state_is_homogeneous(s, atol=1e-14):
    return bool(np.ptp(s.G, axis=0).max() <= atol and np.ptp(s.g) <= atol
                and not np.any(s.a) and not np.any(s.m) and not s.full_h)


# ---------------------------------------------------- maximum principle audit

THRESHOLDS = {"mon_bracket": 2.0 / 3.0, "mon_hg": 2.0, "mon_q": 2.0}


def audit_records(records, tol=1e-3):
    """Audit a time-ordered list of DiagnosticsRecord against the type-III thresholds.

    A monitor whose initial value exceeds its threshold is outside the
    hypothesis; it is reported as decreasing or not rather than flagged.
    """
    t = np.array([r.t for r in records])
    report = {"flags": [], "monitors": {}, "d2_bounded": True}
    for name, thr in THRESHOLDS.items():
        v = np.array([getattr(r, name) for r in records])
        applies = t[0] == 0 or v[0] <= thr + tol
        entry = {"threshold": thr, "max": float(v.max()), "hypothesis": bool(applies)}
        if applies:
            bad = np.nonzero(v > thr + tol)[0]
            report["flags"] += [(name, float(t[i]), float(v[i])) for i in bad]
        else:
            above = v > thr
            dv = np.diff(v)
            entry["decreasing_while_above"] = bool(np.all(dv[above[:-1]] <= tol))
        report["monitors"][name] = entry
    d2 = np.array([r.mon_d2 for r in records])
    tail = d2[len(d2) // 2:]
    if tail.size >= 3:
        report["d2_bounded"] = bool(np.isfinite(tail).all() and not np.all(np.diff(tail) > 0))
    report["d2_max"] = float(np.nanmax(d2))
    # d2_bounded is informational: short runs from t0 = 0 grow t^2 d2 before any scaling regime
    report["ok"] = not report["flags"]
    return report


def maximum_principle_audit(traj, tol=1e-3):
    """Audit the trajectory's DiagnosticsRecord observations (or its snapshots when none were taken)."""
    recs = [r for rec in traj.records for r in rec if isinstance(r, D.DiagnosticsRecord)]
    if not recs:
        recs = [D.record(s) for s in traj.states]
    return audit_records(recs, tol)


__all__ = [
    "ConsistencyReport", "LadderRun", "OracleSolution", "QUANTITIES", "THRESHOLDS",
    "audit_records", "consistency_check", "fit_order", "homogeneous_oracle", "ladder_report",
    "ladder_runs", "maximum_principle_audit", "residual_field", "state_is_homogeneous",
]
