"""Scalar quantities of the flow, the energy functional and the type-III monitors.

Pointwise contractions are done in a G-orthonormal fiber frame eta_1..3 with
eta_3 = e3/sqrt(G_33) (the unit center), paired with the unit base vector
v = g^{-1/2} d/dx.  The frame comes from the "upper" Cholesky factor
G = U U^T, whose inverse is upper triangular, so its last row is along e3.
"""

from dataclasses import dataclass

import numpy as np

from .algebra import LEVI_CIVITA
from .errors import DomainError
from .flow import kinematics, rhs_a
from .grid import integrate, laplace_beltrami

_FLIP = np.eye(3)[::-1]


def upper_cholesky(G):
    Lo = np.linalg.cholesky(_FLIP @ G @ _FLIP)
    return _FLIP @ Lo @ _FLIP


@dataclass
class Frame:
    """Orthonormal-frame components of the first- and second-order data at each point."""

    E: np.ndarray  # U^{-1}
    C: np.ndarray  # bracket constants in the frame, C[n, c, a, b]
    p: np.ndarray  # D_v G
    q: np.ndarray  # (D_v D G)_v
    w: np.ndarray  # H(v, ., .)
    dw: np.ndarray  # (D_v H)(v, ., .)
    hv: np.ndarray  # H(eta_1, eta_2, eta_3)


def frame(s, kin=None):
    k = kin if kin is not None else kinematics(s)
    try:
        U = upper_cholesky(s.G)
    except np.linalg.LinAlgError as exc:
        raise DomainError("fiber metric is not positive definite") from exc
    E = np.linalg.inv(U)
    Et = np.swapaxes(E, 1, 2)

    def on(X):
        return E @ X @ Et

    rg = 1.0 / np.sqrt(s.g)
    gi = k.ginv
    C = np.einsum("nap,nbq,rpq,nrc->ncab", E, E, s.lie.C, U, optimize=True)
    p = rg[:, None, None] * on(k.P)
    q = gi[:, None, None] * on(k.DP - k.gam[:, None, None] * k.P)
    w = rg[:, None, None] * on(s.m)
    dw = gi[:, None, None] * on(k.HX)
    hv = np.asarray(s.h0) * np.linalg.det(E)
    return Frame(E, C, p, q, w, dw, np.broadcast_to(hv, (s.N,)).copy())


def _sq(X):
    return np.sum(X.reshape(X.shape[0], -1) ** 2, axis=1)


@dataclass
class Pieces:
    """Frame tensors assembled into the building blocks of the evolution identities."""

    bracket: np.ndarray
    hg: np.ndarray
    dg: np.ndarray
    trh2: np.ndarray
    tr_p: np.ndarray
    T: np.ndarray
    V: np.ndarray  # DG([., *], .)
    r: np.ndarray  # H^2(v, eta_i)
    X: np.ndarray  # H(v, ., .) contracted into the bracket
    f: Frame


def pieces(s, kin=None):
    f = frame(s, kin)
    C, p, w = f.C, f.p, f.w
    T = (np.einsum("nda,ndbc->nabc", p, C)
         - np.einsum("nbd,nadc->nabc", p, C)
         + np.einsum("ncd,nadb->nabc", p, C))
    V = np.einsum("ncab,nca->nb", C, p)
    r = f.hv[:, None] * np.einsum("ibc,nbc->ni", LEVI_CIVITA, w)
    X = np.einsum("nab,ncab->nc", w, C)
    return Pieces(bracket=_sq(C), hg=6.0 * f.hv**2, dg=_sq(p), trh2=_sq(w),
                  tr_p=np.trace(p, axis1=1, axis2=2), T=T, V=V, r=r, X=X, f=f)


def S_A(s, pc=None):
    pc = pc if pc is not None else pieces(s)
    return _sq(pc.T) + _sq(pc.X) + pc.hg * pc.bracket / 6.0


def S_B(s, pc=None):
    """Defect density of the |DG|^2 + tr_g H^2 evolution; |DG|^2_Z read as D_vG(zeta, zeta)^2."""
    pc = pc if pc is not None else pieces(s)
    f = pc.f
    p, q, w, dw = f.p, f.q, f.w, f.dw
    first = q - p @ p + w @ np.swapaxes(w, 1, 2)
    second = dw - w @ p - p @ w
    p3 = p[:, :, 2]
    return (2.0 * _sq(first) + 2.0 * _sq(second)
            + pc.bracket * (pc.tr_p - 2.0 * p[:, 2, 2]) ** 2
            + 2.0 * pc.bracket * (p3[:, 0] ** 2 + p3[:, 1] ** 2)
            + 2.0 * _sq(pc.V) + 2.0 * _sq(pc.V + pc.r)
            + 2.0 * _sq(pc.X) + pc.hg * pc.tr_p**2 / 3.0)


def d2_norm(pc):
    """|D^2 G|^2 + |DH|^2 (mixed components of DH counted with their 3 slot placements)."""
    return _sq(pc.f.q) + 3.0 * _sq(pc.f.dw)


def scalar_fields(s, kin=None):
    """Per-point scalars; returns a dict of (N,) arrays."""
    kin = kin if kin is not None else kinematics(s)
    pc = pieces(s, kin)
    return {
        "bracket_sq": pc.bracket,
        "hg_sq": pc.hg,
        "dg_sq": pc.dg,
        "trh2": pc.trh2,
        "q_sum": pc.dg + pc.trh2,
        "trace_dg": np.abs(pc.tr_p),
        "s_a": S_A(s, pc),
        "s_b": S_B(s, pc),
        "d2": d2_norm(pc),
    }


def energy_I(s, tau):
    """tau * integral (|DG|^2 + tr_g H^2 + 2/tau) dV_g / sqrt(tau)."""
    if tau <= 0:
        raise DomainError("energy needs tau > 0")
    pc = pieces(s)
    Q = pc.dg + pc.trh2
    return tau * integrate(Q + 2.0 / tau, s.g, s.grid) / np.sqrt(tau)


def energy_rate(s, tau):
    """-tau int S_B dV/sqrt(tau) - tau/4 int (Q - 2/tau)^2 dV/sqrt(tau)."""
    pc = pieces(s)
    Q = pc.dg + pc.trh2
    sb = S_B(s, pc)
    return (-tau * integrate(sb, s.g, s.grid) - 0.25 * tau * integrate((Q - 2.0 / tau) ** 2, s.g, s.grid)) / np.sqrt(tau)


def volume(s):
    return integrate(np.ones(s.N), s.g, s.grid)


def diameter(s):
    """Half the circumference of (S^1, g)."""
    return 0.5 * volume(s)


# --------------------------------------------------- evolution identity sides

def evolution_rhs(s, quantity, kin=None):
    """The reaction part of d/dt f = Delta f + R for the five scalar identities.

    Returns (f, R) pointwise; quantity in {"bracket", "hg", "dg", "trh2", "sum"}.
    """
    pc = pieces(s, kin)
    f = pc.f
    p, q, w, dw = f.p, f.q, f.w, f.dw
    Phi, Psi, dg, trh2, trp = pc.bracket, pc.hg, pc.dg, pc.trh2, pc.tr_p
    if quantity == "bracket":
        return Phi, -1.5 * Phi**2 - S_A(s, pc)
    if quantity == "hg":
        return Psi, -0.5 * Psi**2 - Psi * (0.5 * Phi + trp**2 + trh2)
    if quantity == "sum":
        Q = dg + trh2
        return Q, -0.5 * Q**2 - S_B(s, pc)
    wwpp = np.einsum("nab,ncd,nac,nbd->n", w, w, p, p)
    w2pp = np.einsum("nab,ncb,nad,ncd->n", w, w, p, p)
    dwwp = np.einsum("nab,ncb,nac->n", dw, w, p)
    rV = np.einsum("ni,ni->n", pc.r, pc.V)
    if quantity == "dg":
        p3 = p[:, :, 2]
        R = (-0.5 * dg**2 - 2.0 * _sq(q - p @ p)
             - Phi * (trp - 2.0 * p[:, 2, 2]) ** 2
             - 2.0 * Phi * (p3[:, 0] ** 2 + p3[:, 1] ** 2)
             - 4.0 * _sq(pc.V) - 2.0 * rV - 0.5 * dg * trh2
             - 2.0 * wwpp - 2.0 * w2pp - Psi * trp**2 / 3.0 + 4.0 * dwwp)
        return dg, R
    if quantity == "trh2":
        wwq = np.einsum("nab,ncb,nac->n", w, w, q)
        w4 = np.einsum("nab,ncb,nad,ncd->n", w, w, w, w)
        R = (-2.0 * _sq(dw) + 4.0 * dwwp - 4.0 * wwq + 2.0 * w2pp - 2.0 * wwpp
             - 0.5 * trh2 * dg - 2.0 * rV - 2.0 * _sq(pc.X) - 2.0 * w4
             - 2.0 * _sq(pc.r) - 0.5 * trh2**2)
        return trh2, R
    raise ValueError(f"unknown quantity {quantity!r}")


def quantity_field(s, quantity):
    return evolution_rhs(s, quantity)[0]


def heat_operator_rhs(s, quantity):
    """Delta f + R, the predicted time derivative of the scalar."""
    f, R = evolution_rhs(s, quantity)
    return laplace_beltrami(f, s.g, s.grid) + R


# ----------------------------------------------------------------- records

RECORD_FIELDS = ("bracket_sq", "hg_sq", "dg_sq", "trh2", "q_sum", "trace_dg", "s_a", "s_b", "d2")

SERIES_COLUMNS = (
    ["t"]
    + [f"{name}_{stat}" for name in RECORD_FIELDS for stat in ("sup", "mean")]
    + ["energy_I", "energy_rate", "volume", "diameter", "mon_bracket", "mon_hg", "mon_q", "mon_d2"]
)


@dataclass
class DiagnosticsRecord:
    t: float
    sup: dict
    mean: dict
    energy_I: float
    energy_rate: float
    volume: float
    diameter: float
    mon_bracket: float
    mon_hg: float
    mon_q: float
    mon_d2: float

    def row(self):
        vals = [self.t]
        for name in RECORD_FIELDS:
            vals += [self.sup[name], self.mean[name]]
        vals += [self.energy_I, self.energy_rate, self.volume, self.diameter,
                 self.mon_bracket, self.mon_hg, self.mon_q, self.mon_d2]
        return vals


def record(s):
    """DiagnosticsRecord for a state with tau = t; the energy entries are NaN at t = 0."""
    sf = scalar_fields(s)
    vol = volume(s)
    sup = {k: float(np.max(sf[k])) for k in RECORD_FIELDS}
    mean = {k: integrate(sf[k], s.g, s.grid) / vol for k in RECORD_FIELDS}
    t = float(s.t)
    if t > 0:
        Q = sf["q_sum"]
        eI = t * integrate(Q + 2.0 / t, s.g, s.grid) / np.sqrt(t)
        rate = (-t * integrate(sf["s_b"], s.g, s.grid)
                - 0.25 * t * integrate((Q - 2.0 / t) ** 2, s.g, s.grid)) / np.sqrt(t)
    else:
        eI = rate = float("nan")
    return DiagnosticsRecord(
        t=t, sup=sup, mean=mean, energy_I=eI, energy_rate=rate, volume=vol, diameter=0.5 * vol,
        mon_bracket=t * sup["bracket_sq"], mon_hg=t * sup["hg_sq"],
        mon_q=t * sup["q_sum"], mon_d2=t * t * sup["d2"],
    )


def a_speed(s):
    """sup over x of |d a / dt| (coordinate components)."""
    return float(np.max(np.linalg.norm(rhs_a(s), axis=1)))
