"""Blowdown rescaling, the canonical limit family and comparison of rescaled runs to it."""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from . import diagnostics as D
from .algebra import LieStructure
from .errors import DomainError
from .flow import Trajectory, homogeneous_state, rhs_a
from .grid import integrate

FAMILY_A = 1.5


# ------------------------------------------------------------------ rescaling

def _a_slice(N):
    return slice(10 * N, 13 * N)


def rescale_state(s, scale):
    """(G, g, h0, m)(t) -> (G, g, h0, m)(scale t) / scale, a unchanged."""
    out = s.scaled(1.0 / scale)
    out.t = s.t / scale
    return out


def rescale(traj, s, t_lo=None, t_hi=None):
    """Parabolic blowdown of a trajectory: state at time t is the scaled state at time s t.

    The optional window [t_lo, t_hi] (in rescaled time) must be covered by the input.
    """
    if s <= 0:
        raise DomainError("rescale factor must be > 0")
    ts = traj.times
    tol = 1e-12 * max(1.0, abs(ts[-1]))
    if t_lo is not None and s * t_lo < ts[0] - tol:
        raise ValueError(f"trajectory starts at {ts[0]}, window needs {s * t_lo}")
    if t_hi is not None and s * t_hi > ts[-1] + tol:
        raise ValueError(f"trajectory ends at {ts[-1]}, window needs {s * t_hi}")
    out = Trajectory()
    aslc = _a_slice(traj.states[0].N)
    for st, d in zip(traj.states, traj.derivs):
        # d/dt [y(s t) / s] = y'(s t) for the scaled fields, and s a'(s t) for a
        dk = d.copy()
        dk[aslc] *= s
        out.append(rescale_state(st, s), dk)
    out.records = list(traj.records)
    out.record_times = [t / s for t in traj.record_times]
    return out


# ------------------------------------------------------------- family ODEs

def family_ode_rhs(Phi, Psi):
    """(dPhi, dPsi, log-rate on the complement of the center, log-rate on the center)."""
    if Phi < 0 or Psi < 0:
        raise DomainError("family norms must be nonnegative")
    dPhi = -1.5 * Phi**2 - Psi * Phi / 6.0
    dPsi = -0.5 * Psi**2 - 0.5 * Psi * Phi
    return dPhi, dPsi, 0.5 * Phi + Psi / 6.0, -0.5 * Phi + Psi / 6.0


def family_closed_form(t, C):
    """Phi and the two block factors for the H-free family, normalized at t = 1."""
    if C < 0:
        raise DomainError("C must be >= 0")
    t = np.asarray(t, dtype=float)
    at = FAMILY_A * t + C
    ratio = at / (FAMILY_A + C)
    return 1.0 / at, ratio ** (1.0 / 3.0), ratio ** (-1.0 / 3.0)


@dataclass
class CanonicalFamilyParams:
    """Family member normalized at t = 1: |[,]|^2 = 1/(a + C) and |H^G|^2 = psi0 there."""

    C: float = 0.0
    psi0: float = 0.0
    block: np.ndarray = field(default_factory=lambda: np.eye(2))
    g1: float = 1.0
    c: float = 1.0
    a: float = FAMILY_A

    def __post_init__(self):
        if self.a != FAMILY_A:
            raise DomainError("the family constant a is fixed to 3/2")
        if self.C < 0 or self.psi0 < 0:
            raise DomainError("C and psi0 must be >= 0")
        if self.g1 <= 0:
            raise DomainError("g1 must be > 0")
        self.block = np.asarray(self.block, dtype=float)
        if self.block.shape != (2, 2) or np.linalg.eigvalsh(self.block).min() <= 0:
            raise DomainError("block must be a 2x2 SPD matrix")

    @property
    def phi1(self):
        return 1.0 / (self.a + self.C)

    @property
    def center1(self):
        """G(e3, e3) at t = 1 fixed by |[,]|^2 = 2 c^2 G33 / det(block)."""
        return self.phi1 * np.linalg.det(self.block) / (2.0 * self.c**2)

    def G1(self):
        G = np.zeros((3, 3))
        G[:2, :2] = self.block
        G[2, 2] = self.center1
        return G

    @property
    def h0(self):
        """h0 with h0^2 / det G1 = psi0 / 6."""
        return float(np.sqrt(self.psi0 * np.linalg.det(self.G1()) / 6.0))


@dataclass
class FamilyTrajectory:
    t: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    block_factor: np.ndarray  # multiplies the block of G1
    center_factor: np.ndarray  # multiplies G1[2, 2]
    g: np.ndarray
    params: CanonicalFamilyParams

    def G(self, i):
        G = self.params.G1()
        G[:2, :2] *= self.block_factor[i]
        G[2, 2] *= self.center_factor[i]
        return G


def integrate_family(p, t_range, t_eval=None, rtol=1e-12, atol=1e-14):
    """Solve the family system (Phi, Psi, log factors) from t = 1 across t_range with solve_ivp."""
    t_lo, t_hi = t_range
    if not 0 < t_lo <= t_hi:
        raise ValueError("t_range must satisfy 0 < t_lo <= t_hi")
    if t_eval is None:
        t_eval = np.linspace(t_lo, t_hi, 101)
    t_eval = np.asarray(t_eval, dtype=float)

    def f(t, y):
        Phi, Psi = max(y[0], 0.0), max(y[1], 0.0)
        dPhi, dPsi, r0, rz = family_ode_rhs(Phi, Psi)
        return [dPhi, dPsi, r0, rz]

    y1 = np.array([p.phi1, p.psi0, 0.0, 0.0])
    out = np.empty((4, t_eval.size))
    out[:, t_eval == 1.0] = y1[:, None]
    for mask in (t_eval > 1.0, t_eval < 1.0):
        if not mask.any():
            continue
        pts = t_eval[mask]
        order = np.argsort(np.abs(pts - 1.0), kind="stable")
        end = pts[order][-1]
        sol = solve_ivp(f, (1.0, end), y1, method="DOP853", t_eval=pts[order], rtol=rtol, atol=atol)
        if not sol.success or sol.y.shape[1] != pts.size:
            raise DomainError(f"family solution does not extend to t = {end} ({sol.message})")
        vals = np.empty((4, pts.size))
        vals[:, order] = sol.y
        out[:, mask] = vals
    return FamilyTrajectory(t_eval, out[0], out[1], np.exp(out[2]), np.exp(out[3]), p.g1 * t_eval, p)


def family_state(p, t, N=16, L=2 * np.pi, fam=None):
    """Homogeneous FlowState of the family at time t (a = 0, m = 0, g = t g1)."""
    fam = fam if fam is not None else integrate_family(p, (min(t, 1.0), max(t, 1.0)), t_eval=[t])
    lie = LieStructure.heisenberg(p.c)
    G = fam.G(int(np.argmin(np.abs(fam.t - t))))
    return homogeneous_state(lie, G, g=p.g1 * t, h0=p.h0, N=N, L=L, t=t)


# ----------------------------------------------------------- blowdown check

@dataclass
class BlowdownResidual:
    scale: float
    window: tuple
    q_dev: float  # sup |t q_sum - 2|
    trace_dg: float  # sup |DG(., .)|
    trh2_t: float  # sup t tr_g H^2
    sb_int: float  # sup over the window of t int S_B dV / sqrt(t)
    off_block: float  # sup |DG(., zeta)| components
    a_speed: float  # sup |d a / dt|
    C_fit: float  # C in rescaled time
    C_original: float  # scale * C_fit, the constant in the original time variable
    fit_rms: float

    def components(self):
        return {k: getattr(self, k) for k in
                ("q_dev", "trace_dg", "trh2_t", "sb_int", "off_block", "a_speed")}


def _fit_C(t, tphi):
    """Least-squares C in t Phi = t / (3/2 t + C)."""
    def res(c):
        return t / (FAMILY_A * t + c[0]) - tphi

    c0 = max(np.median(t / tphi - FAMILY_A * t), -0.5 * FAMILY_A * t.min())
    sol = least_squares(res, [c0], bounds=([-FAMILY_A * t.min() * (1 - 1e-9)], [np.inf]))
    return float(sol.x[0]), float(np.sqrt(np.mean(sol.fun**2)))


def blowdown_residual(traj, scale, window=(0.5, 2.0), n_samples=25):
    t_lo, t_hi = window
    rtraj = rescale(traj, scale, t_lo, t_hi)
    ts = np.linspace(t_lo, t_hi, n_samples)
    q_dev = trace = trh2 = sb = off = aspd = 0.0
    tphi = np.empty(n_samples)
    for i, t in enumerate(ts):
        s = rtraj.state_at(t)
        pc = D.pieces(s)
        Q = pc.dg + pc.trh2
        q_dev = max(q_dev, float(np.max(np.abs(t * Q - 2.0))))
        trace = max(trace, float(np.max(np.abs(pc.tr_p))))
        trh2 = max(trh2, float(t * np.max(pc.trh2)))
        sb = max(sb, t * integrate(D.S_B(s, pc), s.g, s.grid) / np.sqrt(t))
        off = max(off, float(np.max(np.sqrt(np.sum(pc.f.p[:, :, 2] ** 2, axis=1)))))
        aspd = max(aspd, float(np.max(np.linalg.norm(rhs_a(s), axis=1))))
        tphi[i] = t * np.max(pc.bracket)
    tail = ts >= ts[0] + 2.0 * (ts[-1] - ts[0]) / 3.0
    C, rms = _fit_C(ts[tail], tphi[tail])
    return BlowdownResidual(scale, tuple(window), q_dev, trace, trh2, sb, off, aspd, C, scale * C, rms)


def compare_to_family(traj, scales, window=(0.5, 2.0), n_samples=25):
    """One BlowdownResidual per scale (ordered as given)."""
    need = max(scales) * window[1]
    if traj.times[-1] < need * (1 - 1e-12):
        raise ValueError(f"trajectory must reach t = {need} for the largest scale")
    return [blowdown_residual(traj, s, window, n_samples) for s in scales]


# ----------------------------------------------------------------- rigidity

def rigidity_report(s):
    """Sup-norm residuals of the conclusions that hold when S_B vanishes."""
    pc = D.pieces(s)
    f = pc.f
    p, q = f.p, f.q

    def osc(v):
        return float(np.max(v) - np.min(v))

    blk = q[:, :2, :2] - 0.5 * pc.dg[:, None, None] * np.eye(2)
    return {
        "trace_dg": float(np.max(np.abs(pc.tr_p))),
        "trh2": float(np.max(pc.trh2)),
        "second_order": float(np.max(np.sqrt(np.sum((q - p @ p) ** 2, axis=(1, 2))))),
        "bracket_oscillation": osc(pc.bracket),
        "dg_oscillation": osc(pc.dg),
        "hg_oscillation": osc(pc.hg),
        "dg_center": float(np.max(np.sqrt(np.sum(p[:, :, 2] ** 2, axis=1)))),
        "block_second_order": float(np.max(np.sqrt(np.sum(blk**2, axis=(1, 2))))),
        "a_speed": float(np.max(np.linalg.norm(rhs_a(s), axis=1))),
    }


__all__ = [
    "BlowdownResidual", "CanonicalFamilyParams", "FamilyTrajectory", "blowdown_residual",
    "compare_to_family", "family_closed_form", "family_ode_rhs", "family_state",
    "integrate_family", "rescale", "rescale_state", "rigidity_report",
]
