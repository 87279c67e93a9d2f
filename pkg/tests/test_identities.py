"""Instantaneous check of the scalar evolution identities against the flow vector field.

The time derivative of each scalar along the vector field is taken by a
centered difference in the state direction, on a spectral grid so that
spatial truncation is negligible.
"""

import itertools

import numpy as np
import pytest

from nilflow import diagnostics as D
from nilflow.algebra import LieStructure
from nilflow.flow import Conventions, DEFAULT_CONVENTIONS, pack, random_state, rhs_vector, unpack
from nilflow.grid import Grid, laplace_beltrami
from nilflow.harness import QUANTITIES


def _rate_mismatch(s, quantity, conv=DEFAULT_CONVENTIONS, eps=1e-5):
    F = rhs_vector(s, conv)
    y = pack(s)
    fp = D.quantity_field(unpack(y + eps * F, s), quantity)
    fm = D.quantity_field(unpack(y - eps * F, s), quantity)
    rate = (fp - fm) / (2 * eps)
    pred = D.heat_operator_rhs(s, quantity)
    return np.max(np.abs(rate - pred)) / np.max(np.abs(pred))


@pytest.fixture(scope="module")
def spectral_state():
    return random_state(Grid(64, method="spectral"), LieStructure.heisenberg(1.0), seed=1, modes=3, h0=0.7)


@pytest.mark.parametrize("quantity", QUANTITIES)
def test_identity_holds_instantaneously(spectral_state, quantity):
    assert _rate_mismatch(spectral_state, quantity) < 1e-7


@pytest.mark.parametrize("seed", [2, 9])
def test_identities_other_data(seed):
    s = random_state(Grid(64, method="spectral"), LieStructure.heisenberg(0.7), seed=seed, modes=3,
                     amp_m=0.4, h0=-0.3)
    for q in QUANTITIES:
        assert _rate_mismatch(s, q) < 1e-7, q


def test_component_identities_sum(spectral_state):
    s = spectral_state
    fd, Rd = D.evolution_rhs(s, "dg")
    ft, Rt = D.evolution_rhs(s, "trh2")
    fs, Rs = D.evolution_rhs(s, "sum")
    assert np.allclose(fd + ft, fs, rtol=1e-13, atol=1e-13)
    assert np.allclose(Rd + Rt, Rs, rtol=1e-10, atol=1e-10 * np.max(np.abs(Rs)))


def test_sum_reaction_is_nonpositive_defect(spectral_state):
    s = spectral_state
    f, R = D.evolution_rhs(s, "sum")
    assert np.all(R <= -0.5 * f**2 + 1e-12)
    assert np.all(D.S_B(s) >= 0)


def test_non_default_conventions_break_identities(spectral_state):
    for signs in itertools.product([1.0, -1.0], repeat=3):
        conv = Conventions(*signs)
        if conv == DEFAULT_CONVENTIONS:
            continue
        worst = max(_rate_mismatch(spectral_state, q, conv) for q in QUANTITIES)
        assert worst > 1e-4, signs


def test_laplacian_of_constant_vanishes(spectral_state):
    s = spectral_state
    assert np.max(np.abs(laplace_beltrami(np.ones(s.N), s.g, s.grid))) < 1e-12
