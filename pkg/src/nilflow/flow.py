"""Canonical-gauge flow for (G, g, a, H) over the circle and its explicit integrator."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .algebra import LEVI_CIVITA, LieStructure, ad_matrix
from .errors import DomainError, IntegrationError
from .grid import Grid, ad_sym, christoffel, deriv, deriv2


@dataclass(frozen=True)
class Conventions:
    """Sign choices the decomposed equations leave to convention.

    a_sign:  orientation of the connection-coefficient velocity relative to
             tr_G D G([., eta], .) + H^2(v, eta)/2.
    bx_sign: sign of the mixed component B(e_k, d/dx).
    frame_sign: sign of the moving-frame correction h0 eps_{kij} R^k in dm/dt.
    The defaults are the ones for which the scalar evolution identities hold
    (see tests/test_identities.py).
    """

    a_sign: float = -1.0
    bx_sign: float = 1.0
    frame_sign: float = -1.0


DEFAULT_CONVENTIONS = Conventions()

_EPS9 = LEVI_CIVITA.reshape(3, 9)


@dataclass
class FlowState:
    t: float
    grid: Grid
    lie: LieStructure
    G: np.ndarray  # (N, 3, 3) SPD
    g: np.ndarray  # (N,) > 0
    a: np.ndarray  # (N, 3)
    h0: object  # float, or (N,) array in full-H debug mode
    m: np.ndarray  # (N, 3, 3) antisymmetric, m_ij = H(d/dx, e_i, e_j)

    @property
    def N(self):
        return self.grid.N

    @property
    def full_h(self):
        return np.ndim(self.h0) > 0

    def h0_field(self):
        """h0 broadcastable against (N, 3, 3)."""
        return np.reshape(self.h0, (-1, 1, 1)) if self.full_h else float(self.h0)

    def copy(self):
        h0 = np.array(self.h0, dtype=float) if self.full_h else float(self.h0)
        return replace(self, G=self.G.copy(), g=self.g.copy(), a=self.a.copy(), m=self.m.copy(), h0=h0)

    def validate(self):
        if not np.all(np.isfinite(self.G)) or not np.all(np.isfinite(self.g)):
            raise DomainError("state contains non-finite values")
        if np.any(self.g <= 0):
            raise DomainError(f"base metric lost positivity (min g = {self.g.min():.3e})")
        lam = np.linalg.eigvalsh(self.G).min()
        if lam <= 0:
            raise DomainError(f"fiber metric lost positive definiteness (min eigenvalue {lam:.3e})")
        return self

    def shifted(self, cells):
        """Cyclic shift of every field by a whole number of grid cells."""
        h0 = np.roll(self.h0, cells) if self.full_h else self.h0
        return replace(self, G=np.roll(self.G, cells, 0), g=np.roll(self.g, cells),
                       a=np.roll(self.a, cells, 0), m=np.roll(self.m, cells, 0), h0=h0)

    def scaled(self, s):
        """(G, g, h0, m) -> s * (G, g, h0, m) with a fixed (parabolic scaling of the fields)."""
        h0 = s * np.asarray(self.h0) if self.full_h else s * float(self.h0)
        return replace(self, G=s * self.G, g=s * self.g, m=s * self.m, h0=h0, a=self.a.copy())


def homogeneous_state(lie, G, g=1.0, h0=0.0, N=16, L=2 * np.pi, t=0.0, a=None, m=None):
    grid = Grid(N, L)
    G = np.broadcast_to(np.asarray(G, dtype=float), (N, 3, 3)).copy()
    a = np.zeros((N, 3)) if a is None else np.broadcast_to(np.asarray(a, float), (N, 3)).copy()
    m = np.zeros((N, 3, 3)) if m is None else np.broadcast_to(np.asarray(m, float), (N, 3, 3)).copy()
    return FlowState(t, grid, lie, G, np.full(N, float(g)), a, float(h0), m)


def _series(rng, x, L, modes, amp, shape, constant=False):
    out = np.zeros((x.size,) + shape)
    if constant:
        out += amp * rng.standard_normal(shape)
    for k in range(1, modes + 1):
        th = 2 * np.pi * k * x / L
        ca = amp * rng.standard_normal(shape) / k
        sa = amp * rng.standard_normal(shape) / k
        out += np.multiply.outer(np.cos(th), ca) + np.multiply.outer(np.sin(th), sa)
    return out


def random_state(grid, lie, seed=0, amp_G=0.3, amp_g=0.2, amp_a=0.2, amp_m=0.2, modes=4, h0=0.0, t0=0.0):
    """Smooth generic initial data: G = exp(S(x)), g = exp(sigma(x)), Fourier a and m."""
    rng = np.random.default_rng(seed)
    x = grid.x
    S = _series(rng, x, grid.L, modes, amp_G, (3, 3), constant=True)
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    lam, V = np.linalg.eigh(S)
    G = (V * np.exp(lam)[:, None, :]) @ np.swapaxes(V, 1, 2)
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    g = np.exp(_series(rng, x, grid.L, modes, amp_g, ()))
    a = _series(rng, x, grid.L, modes, amp_a, (3,), constant=True)
    m = _series(rng, x, grid.L, modes, amp_m, (3, 3))
    m = 0.5 * (m - np.swapaxes(m, 1, 2))
    return FlowState(float(t0), grid, lie, G, g, a, float(h0), m)


# ---------------------------------------------------------------- kinematics

@dataclass
class Kinematics:
    """Derived fields shared by the right-hand sides and the diagnostics."""

    Gi: np.ndarray
    A: np.ndarray  # ad_a, A[n, p, i]
    P: np.ndarray  # D_x G
    DP: np.ndarray  # fiber-covariant d/dx of D_x G (no Christoffel)
    gam: np.ndarray  # Christoffel symbol
    ginv: np.ndarray
    dm: np.ndarray  # d m / dx
    HX: np.ndarray  # (D_x H)(d/dx, e_i, e_j)
    h0: object
    Z: np.ndarray  # Z[n, p, a, b] = G^{ka} G^{lb} C^p_{kl}

    @property
    def DDG(self):
        """(D_. D G)_. in coordinates: g^{-1} (D_x D_x G - Gamma D_x G)."""
        return self.ginv[:, None, None] * (self.DP - self.gam[:, None, None] * self.P)


def kinematics(s):
    grid = s.grid
    A = ad_matrix(s.lie, s.a)
    Gi = np.linalg.inv(s.G)
    adG = ad_sym(s.G, A)
    P = deriv(s.G, grid) - adG
    DP = deriv2(s.G, grid) - deriv(adG, grid) - ad_sym(P, A)
    gam = christoffel(s.g, grid)
    dm = deriv(s.m, grid)
    HX = dm - ad_sym(s.m, A) - gam[:, None, None] * s.m
    Z = Gi[:, None] @ s.lie.C[None] @ Gi[:, None]
    return Kinematics(Gi, A, P, DP, gam, 1.0 / s.g, dm, HX, s.h0_field(), Z)


def _sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def _antisym(X):
    return 0.5 * (X - np.swapaxes(X, -1, -2))


def _bracket_blocks(lie, G, Gi, Z):
    """tr_G G([., e_i], [., e_j]) and G_{pi} K^{pq} G_{qj} with K^{pq} = G G C^p C^q."""
    C9 = lie.C.reshape(3, 9)
    n = G.shape[0]
    # X[n, (k i), l, j] = sum_{p, q} C^p_{ki} G_{pq} C^q_{lj}
    X = ((C9.T @ G) @ C9).reshape(n, 3, 3, 3, 3)
    T1 = np.einsum("nkl,nkilj->nij", Gi, X)
    K = Z.reshape(n, 3, 9) @ C9.T
    return T1, G @ K @ G


def vertical_h_sq(G, h0):
    """G^{kk'} G^{ll'} H_{ikl} H_{jk'l'} for H = h0 eps, i.e. 2 h0^2 G / det G."""
    return 2.0 * np.asarray(h0) ** 2 * G / np.linalg.det(G)[:, None, None]


def rhs_G(s, kin=None):
    k = kin if kin is not None else kinematics(s)
    gi = k.ginv[:, None, None]
    T1, GKG = _bracket_blocks(s.lie, s.G, k.Gi, k.Z)
    Hsq = vertical_h_sq(s.G, k.h0) + 2.0 * gi * (s.m @ k.Gi @ np.swapaxes(s.m, 1, 2))
    out = gi * (k.DP - k.gam[:, None, None] * k.P) - gi * (k.P @ k.Gi @ k.P) + T1 - 0.5 * GKG + 0.5 * Hsq
    return _sym(out)


def rhs_g(s, kin=None):
    k = kin if kin is not None else kinematics(s)
    X = k.Gi @ k.P
    Y = k.Gi @ s.m
    return 0.5 * np.sum(X * np.swapaxes(X, 1, 2), axis=(1, 2)) - 0.5 * np.sum(Y * np.swapaxes(Y, 1, 2), axis=(1, 2))


def _a_velocity_raw(s, k):
    """G^{pk}[G^{ij} C^q_{ik} (D_xG)_{qj} + 1/2 G^{ii'} G^{jj'} m_{ij} h0 eps_{ki'j'}]."""
    n = s.N
    u = (k.P @ k.Gi).reshape(n, 9) @ s.lie.C.reshape(9, 3)
    W = k.Gi @ s.m @ k.Gi
    h0 = np.reshape(s.h0, (-1, 1)) if s.full_h else float(s.h0)
    u = u + 0.5 * h0 * (W.reshape(n, 9) @ _EPS9.T)
    return (k.Gi @ u[:, :, None])[:, :, 0]


def rhs_a(s, kin=None, conv=DEFAULT_CONVENTIONS):
    k = kin if kin is not None else kinematics(s)
    return conv.a_sign * _a_velocity_raw(s, k)


def compute_B(s, kin=None, conv=DEFAULT_CONVENTIONS):
    """Return (B_vv, B_vx): B(e_i, e_j) as (N,3,3) and B(e_k, d/dx) as (N,3)."""
    k = kin if kin is not None else kinematics(s)
    Bv = k.ginv[:, None, None] * k.HX + _B_rest_lower(s, k)
    return Bv, _B_mixed(s, k, conv)


def _B_rest_lower(s, k):
    """B(e_i, e_j) without the g^{-1} D_x H term."""
    gi = k.ginv[:, None, None]
    dgh = -gi * (k.P @ k.Gi @ s.m + s.m @ k.Gi @ k.P)
    # 1/2 G^{kk'} G^{ll'} C^p_{kl} [G_{pi} H_{k'l'j} - G_{pj} H_{k'l'i}],  H = h0 eps
    Y = k.Z.reshape(s.N, 3, 9) @ _EPS9.reshape(9, 3)
    GY = np.swapaxes(s.G, 1, 2) @ Y * k.h0
    return dgh + 0.5 * (GY - np.swapaxes(GY, 1, 2))


def _B_mixed(s, k, conv):
    z = (k.Gi @ s.m @ k.Gi).reshape(s.N, 9) @ s.lie.C.reshape(3, 9).T
    return conv.bx_sign * 0.5 * (s.G @ z[:, :, None])[:, :, 0]


def rhs_H(s, kin=None, conv=DEFAULT_CONVENTIONS):
    """Return (dh0/dt, dm/dt).

    dh0/dt is the vertical component of dB, -B([e1,e2],e3) + cyclic, which
    vanishes identically; in full-H mode it is evaluated numerically.
    """
    k = kin if kin is not None else kinematics(s)
    grid = s.grid
    rest = _B_rest_lower(s, k)
    gi = k.ginv
    # g^{-1}(dm - ad m - Gamma m): differentiate g^{-1} dm with the compact stencil
    lower = -gi[:, None, None] * (ad_sym(s.m, k.A) + k.gam[:, None, None] * s.m) + rest
    d_upper = gi[:, None, None] * deriv2(s.m, grid) + deriv(gi, grid)[:, None, None] * k.dm
    Bv = gi[:, None, None] * k.HX + rest
    DB = d_upper + deriv(lower, grid) - ad_sym(Bv, k.A)
    Bx = _B_mixed(s, k, conv)
    dB = DB - (Bx @ s.lie.C.reshape(3, 9)).reshape(s.N, 3, 3)
    R = _a_velocity_raw(s, k)
    h0 = np.reshape(s.h0, (-1, 1, 1)) if s.full_h else float(s.h0)
    dm = dB + conv.frame_sign * h0 * (R @ _EPS9).reshape(s.N, 3, 3)
    dm = _antisym(dm)
    if s.full_h:
        C = s.lie.C
        dh0 = -(np.einsum("k,nk->n", C[:, 0, 1], Bv[:, :, 2])
                + np.einsum("k,nk->n", C[:, 1, 2], Bv[:, :, 0])
                + np.einsum("k,nk->n", C[:, 2, 0], Bv[:, :, 1]))
    else:
        dh0 = 0.0
    return dh0, dm


def gauge_vector(s, kin=None):
    """q = -1/2 g^{-1} G^{ij} (D_xG)_{ij}, coordinate component; diagnostic only."""
    k = kin if kin is not None else kinematics(s)
    return -0.5 * k.ginv * np.einsum("nij,nji->n", k.Gi, k.P)


# ------------------------------------------------------------ packing and RHS

def pack(s):
    parts = [s.G.ravel(), s.g, s.a.ravel(), s.m.ravel(), np.atleast_1d(np.asarray(s.h0, dtype=float))]
    return np.concatenate(parts)


def unpack(y, template, t=None):
    N = template.N
    i = 0
    G = y[i:i + 9 * N].reshape(N, 3, 3); i += 9 * N
    g = y[i:i + N]; i += N
    a = y[i:i + 3 * N].reshape(N, 3); i += 3 * N
    m = y[i:i + 9 * N].reshape(N, 3, 3); i += 9 * N
    h0 = y[i:].copy() if template.full_h else float(y[i])
    return FlowState(template.t if t is None else t, template.grid, template.lie,
                     G.copy(), g.copy(), a.copy(), h0, m.copy())


def rhs_vector(s, conv=DEFAULT_CONVENTIONS):
    k = kinematics(s)
    dG = rhs_G(s, k)
    dg = rhs_g(s, k)
    da = rhs_a(s, k, conv)
    dh0, dm = rhs_H(s, k, conv)
    dh0 = np.atleast_1d(np.asarray(dh0, dtype=float))
    if not s.full_h:
        dh0 = np.zeros(1)
    return np.concatenate([dG.ravel(), dg, da.ravel(), dm.ravel(), dh0])


# ------------------------------------------------------------------ stepping

@dataclass
class StepController:
    cfl_sigma: float = 0.2
    dt_min: float = 1e-12
    dt_max: float = 1.0
    error_tol: float = 1e-8
    conv: Conventions = DEFAULT_CONVENTIONS
    dt_next: float = field(default=None, repr=False)
    rejected: int = field(default=0, repr=False)
    accepted: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0 < self.cfl_sigma <= 1:
            raise ValueError("cfl_sigma must lie in (0, 1]")

    def cfl_limit(self, s):
        return self.cfl_sigma * s.grid.dx**2 * float(np.min(s.g))


# Bogacki-Shampine 3(2) pair, first-same-as-last
_BS_A2 = 0.5
_BS_A3 = 0.75
_BS_B = (2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0)
_BS_E = (2.0 / 9.0 - 7.0 / 24.0, 1.0 / 3.0 - 0.25, 4.0 / 9.0 - 1.0 / 3.0, -0.125)


def _bs_trial(f, y, dt, k1):
    k2 = f(y + dt * _BS_A2 * k1)
    k3 = f(y + dt * _BS_A3 * k2)
    y_new = y + dt * (_BS_B[0] * k1 + _BS_B[1] * k2 + _BS_B[2] * k3)
    k4 = f(y_new)
    err = dt * (_BS_E[0] * k1 + _BS_E[1] * k2 + _BS_E[2] * k3 + _BS_E[3] * k4)
    return y_new, err, k4


def error_ratio(err, y, tol):
    return float(np.max(np.abs(err) / (tol * (1.0 + np.abs(y)))))


def _is_valid(s):
    try:
        s.validate()
    except DomainError:
        return False
    return True


def _advance(s, ctrl, k1=None, t_stop=None):
    """One accepted adaptive step; returns (new_state, derivative at the new state, dt)."""
    conv = ctrl.conv

    def f(y):
        return rhs_vector(unpack(y, s), conv)

    y = pack(s)
    if k1 is None:
        k1 = f(y)
    cap = min(ctrl.cfl_limit(s), ctrl.dt_max)
    dt = cap if ctrl.dt_next is None else min(ctrl.dt_next, cap)
    while True:
        landing = False
        if t_stop is not None and s.t + dt >= t_stop - 1e-12 * max(1.0, abs(t_stop)):
            dt = t_stop - s.t
            landing = True
        if dt < ctrl.dt_min:
            raise IntegrationError(f"step size {dt:.3e} fell below dt_min at t={s.t:.6g}", state=s)
        y_new, err, k4 = _bs_trial(f, y, dt, k1)
        ratio = error_ratio(err, y, ctrl.error_tol)
        t_new = t_stop if landing else s.t + dt
        new = unpack(y_new, s, t_new)
        if ratio <= 1.0 and _is_valid(new):
            ctrl.accepted += 1
            grow = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** (-1.0 / 3.0)))
            if not landing:
                ctrl.dt_next = dt * grow
            return new, k4, dt
        ctrl.rejected += 1
        shrink = 0.5 if not np.isfinite(ratio) or ratio == 0 else max(0.1, 0.9 * ratio ** (-1.0 / 3.0))
        dt = dt * min(shrink, 0.9)


def step(s, ctrl, t_stop=None):
    """One adaptive explicit Runge-Kutta step (Bogacki-Shampine 3(2)) capped by the CFL rule."""
    try:
        s.validate()
    except DomainError as exc:
        raise IntegrationError(str(exc), state=s) from exc
    new, _, _ = _advance(s, ctrl, None, t_stop)
    return new


def local_error_estimate(s, dt, conv=DEFAULT_CONVENTIONS):
    """Embedded-pair error estimate for a single trial step of size dt (max-norm)."""
    def f(y):
        return rhs_vector(unpack(y, s), conv)

    y = pack(s)
    _, err, _ = _bs_trial(f, y, dt, f(y))
    return float(np.max(np.abs(err)))


# ---------------------------------------------------------------- trajectory

@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    derivs: list = field(default_factory=list)  # packed time derivatives at the snapshots
    records: list = field(default_factory=list)  # observer outputs at the diagnostics cadence
    record_times: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def append(self, state, dydt):
        self.states.append(state)
        self.derivs.append(dydt)

    def state_at(self, t):
        """Cubic Hermite interpolation between the bracketing snapshots."""
        ts = self.times
        if t < ts[0] - 1e-12 * max(1, abs(ts[0])) or t > ts[-1] + 1e-12 * max(1, abs(ts[-1])):
            raise ValueError(f"time {t} outside trajectory window [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t))
        if j < len(ts) and math.isclose(ts[j], t, rel_tol=0, abs_tol=1e-14 * max(1, abs(t))):
            return self.states[j].copy()
        j = min(max(j, 1), len(ts) - 1)
        t0, t1 = ts[j - 1], ts[j]
        h = t1 - t0
        u = (t - t0) / h
        y0, y1 = pack(self.states[j - 1]), pack(self.states[j])
        d0, d1 = self.derivs[j - 1], self.derivs[j]
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        y = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
        return unpack(y, self.states[0], t)


def _cadence_times(t0, t_end, cadence):
    if cadence is None:
        return [t_end]
    n = max(1, math.ceil((t_end - t0) / cadence - 1e-9))
    out = [t0 + k * cadence for k in range(1, n)]
    out.append(t_end)
    return out


def evolve(s0, t_end, ctrl, observers=(), snapshot_cadence=None, diagnostics_cadence=None):
    """Integrate from s0.t to t_end; snapshots (with derivatives) and observer records at cadences.

    Observers are callables ``obs(state) -> record``; their outputs are stored in
    ``traj.records`` as tuples, one per diagnostics time.
    """
    if t_end < s0.t:
        raise ValueError("t_end must not precede the initial time")
    try:
        s0.validate()
    except DomainError as exc:
        raise IntegrationError(str(exc), state=s0) from exc
    traj = Trajectory()
    k = rhs_vector(s0, ctrl.conv)
    traj.append(s0.copy(), k)

    def observe(state):
        if observers:
            traj.records.append(tuple(obs(state) for obs in observers))
            traj.record_times.append(state.t)

    observe(s0)
    if t_end == s0.t:
        return traj
    snap_times = _cadence_times(s0.t, t_end, snapshot_cadence)
    diag_times = _cadence_times(s0.t, t_end, diagnostics_cadence or snapshot_cadence)
    stops = sorted(set(snap_times) | set(diag_times))
    snap_set, diag_set = set(snap_times), set(diag_times)
    s = s0
    for t_stop in stops:
        while s.t < t_stop:
            s, k, _ = _advance(s, ctrl, k, t_stop)
        if t_stop in snap_set:
            traj.append(s.copy(), k.copy())
        if t_stop in diag_set:
            observe(s)
    return traj
