"""Three-dimensional two-step nilpotent fiber algebra.

The adjoint bundle over the circle is trivialized by a single global frame
``e1, e2, e3`` with constant structure constants ``C[k, i, j] = C^k_{ij}``
(so ``[e_i, e_j] = sum_k C[k, i, j] e_k``) and ``e3`` spanning the center.
All norms are full index contractions without 1/k! factors.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

CENTER_INDEX = 2  # zero-based index of e3

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_j, _i, _k] = -1.0


@dataclass(frozen=True)
class LieStructure:
    kind: str
    c: float = 1.0
    C: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.C is None:
            C = np.zeros((3, 3, 3))
            if self.kind == "heisenberg":
                C[2, 0, 1] = self.c
                C[2, 1, 0] = -self.c
            elif self.kind != "abelian":
                raise ValueError(f"unknown algebra kind {self.kind!r}")
            object.__setattr__(self, "C", C)
        C = np.asarray(self.C, dtype=float)
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @classmethod
    def heisenberg(cls, c=1.0):
        if c <= 0:
            raise ValueError("structure-constant scale c must be > 0")
        return cls("heisenberg", float(c))

    @classmethod
    def abelian(cls):
        return cls("abelian", 0.0)

    @classmethod
    def from_constants(cls, C, kind="custom"):
        """Wrap raw constants ``C[k, i, j]`` (not validated; see validate_structure)."""
        return cls(kind, float(np.max(np.abs(C))), np.array(C, dtype=float))

    @property
    def is_abelian(self):
        return not np.any(self.C)


def validate_structure(L, atol=1e-12):
    """Return the names of violated LieStructure invariants (empty when valid)."""
    C = L.C
    bad = []
    if not np.allclose(C, -np.transpose(C, (0, 2, 1)), atol=atol, rtol=0):
        bad.append("antisymmetry")
    # sum_m C^m_ij C^l_mk + cyclic(i, j, k)
    jac = (
        np.einsum("mij,lmk->ijkl", C, C)
        + np.einsum("mjk,lmi->ijkl", C, C)
        + np.einsum("mki,lmj->ijkl", C, C)
    )
    if not np.allclose(jac, 0.0, atol=atol, rtol=0):
        bad.append("jacobi")
    off_center = np.abs(C[:CENTER_INDEX]).max(initial=0.0)
    center_acts = max(np.abs(C[:, CENTER_INDEX, :]).max(), np.abs(C[:, :, CENTER_INDEX]).max())
    if off_center > atol or center_acts > atol:
        bad.append("nilpotency")
    if not np.allclose(np.einsum("kkj->j", C), 0.0, atol=atol, rtol=0):
        bad.append("tracelessness")
    return bad


def ad_matrix(L, a):
    """Matrix of ad_a: ``A[..., p, i] = sum_k a^k C^p_{ki}``. Accepts a of shape (3,) or (N, 3)."""
    a = np.asarray(a, dtype=float)
    return (a @ L.C.transpose(1, 0, 2).reshape(3, 9)).reshape(a.shape[:-1] + (3, 3))


def check_spd(G, what="G"):
    G = np.asarray(G, dtype=float)
    lam = np.linalg.eigvalsh(G)
    if not np.all(np.isfinite(lam)) or lam.min() <= 0.0:
        raise DomainError(f"{what} is not symmetric positive definite (min eigenvalue {lam.min():.3e})")
    return G


def bracket_norm_sq(L, G):
    """|[,]|^2 = G^{ii'} G^{jj'} C^k_{ij} C^{k'}_{i'j'} G_{kk'} by brute-force contraction."""
    G = check_spd(G)
    Gi = np.linalg.inv(G)
    return np.einsum("...ia,...jb,kij,lab,...kl->...", Gi, Gi, L.C, L.C, G)


def hg_norm_sq(L, G, h0):
    """|H^G|^2 for the purely vertical torsion H_{ijk} = h0 eps_{ijk}."""
    G = check_spd(G)
    Gi = np.linalg.inv(G)
    H = np.multiply.outer(np.asarray(h0, dtype=float), LEVI_CIVITA)
    return np.einsum("...ijk,...abc,...ia,...jb,...kc->...", H, H, Gi, Gi, Gi)


def unit_center(G):
    """zeta = e3 / sqrt(G_33), pointwise; shape (..., 3)."""
    G = np.asarray(G, dtype=float)
    z = np.zeros(G.shape[:-1])
    z[..., CENTER_INDEX] = 1.0 / np.sqrt(G[..., CENTER_INDEX, CENTER_INDEX])
    return z
