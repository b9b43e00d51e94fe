"""Tests for the exact finite-chain oracle."""

import numpy as np
import pytest

from opent.edoracle import (
    DenseSuperket,
    build_liouvillian,
    charge_expectations,
    evolve_exact,
    exact_operator_schmidt,
    initial_superket,
    superket_from_matrix,
)
from opent.lindblad import IDENTITY_SUPERKET, ModelParams
from opent.observables import check_decomposition, operator_entanglement, sector_probabilities

PARAMS = ModelParams(J=1.0, gamma=0.25, dt=0.5)


def test_site_count_validation():
    with pytest.raises(ValueError):
        build_liouvillian(1, PARAMS)
    with pytest.raises(ValueError):
        build_liouvillian(9, PARAMS)


def test_identity_superket_is_null_vector():
    for n in (2, 3, 4):
        liouv = build_liouvillian(n, PARAMS)
        rho = initial_superket("identity", n)
        assert np.max(np.abs(liouv @ rho.data)) < 1e-13
        assert rho.trace() == pytest.approx(1.0, abs=1e-13)


def test_left_identity_covector_is_null():
    n = 3
    liouv = build_liouvillian(n, PARAMS)
    iota = np.array([1.0])
    for _ in range(n):
        iota = np.kron(iota, IDENTITY_SUPERKET)
    assert np.max(np.abs(iota @ liouv)) < 1e-13


def test_n2_singlet_is_stationary():
    liouv = build_liouvillian(2, PARAMS)
    rho0 = initial_superket("singlet_pairs", 2)
    assert np.max(np.abs(liouv @ rho0.data)) < 1e-13
    rho_t = evolve_exact(rho0, liouv, t=10.0, tol=1e-12)
    assert np.max(np.abs(rho_t.to_matrix() - rho0.to_matrix())) < 1e-10


def test_n2_neel_relaxes_to_sector_restricted_stationary_state():
    liouv = build_liouvillian(2, PARAMS)
    rho0 = initial_superket("neel", 2)
    traces = []
    rho_t = rho0
    for t in (5.0, 40.0):
        rho_t = evolve_exact(rho0, liouv, t=t, tol=1e-11)
        traces.append(rho_t.trace())
    # the late-time vector lies in the generator's kernel
    assert np.max(np.abs(liouv @ rho_t.data)) < 1e-8
    assert traces == pytest.approx([1.0, 1.0], abs=1e-10)
    # it keeps the initial charge sector expectation
    qk, qb = charge_expectations(rho_t)


def test_richardson_self_convergence():
    liouv = build_liouvillian(4, ModelParams(J=1.0, gamma=0.5, dt=0.5))
    rho0 = initial_superket("neel", 4)
    a = evolve_exact(rho0, liouv, t=2.0, tol=1e-8)
    b = evolve_exact(rho0, liouv, t=2.0, tol=5e-9)
    assert np.max(np.abs(a.data - b.data)) < 1e-8


def test_trace_and_hermiticity_preserved():
    liouv = build_liouvillian(4, PARAMS)
    rho0 = initial_superket("singlet_pairs", 4)
    rho_t = evolve_exact(rho0, liouv, t=1.5, tol=1e-10)
    assert rho_t.trace() == pytest.approx(1.0, abs=1e-9)
    assert rho_t.herm_residual() < 1e-9


def test_charge_conservation_in_time():
    liouv = build_liouvillian(4, ModelParams(J=1.0, gamma=0.5, dt=0.5))
    rho0 = initial_superket("neel", 4)
    q0 = charge_expectations(rho0)
    rho_t = evolve_exact(rho0, liouv, t=3.0, tol=1e-11)
    qt = charge_expectations(rho_t)
    assert qt[0] == pytest.approx(q0[0], abs=1e-10)
    assert qt[1] == pytest.approx(q0[1], abs=1e-10)


# -- exact Schmidt spectra ---------------------------------------------------


def test_identity_schmidt_is_trivial():
    rho = initial_superket("identity", 4)
    for cut in (1, 2, 3):
        snap = exact_operator_schmidt(rho, cut)
        assert snap.chi == 1
        assert snap.entries[0] == (0, 0, pytest.approx(1.0))
        assert operator_entanglement(snap) == pytest.approx(0.0, abs=1e-12)


def test_singlet_pair_schmidt_through_the_pair():
    rho = initial_superket("singlet_pairs", 2)
    snap = exact_operator_schmidt(rho, 1)
    lam2 = sorted((lam**2 for _, _, lam in snap.entries), reverse=True)
    assert lam2 == pytest.approx([0.25, 0.25, 0.25, 0.25], abs=1e-13)
    assert operator_entanglement(snap) == pytest.approx(2.0, abs=1e-12)
    # ket/bra charge labels of the four Schmidt operators
    charges = sorted((qk, qb) for qk, qb, _ in snap.entries)
    assert charges == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    assert snap.bond == 0


def test_singlet_chain_inter_pair_cut_is_trivial():
    rho = initial_superket("singlet_pairs", 4)
    snap = exact_operator_schmidt(rho, 2)
    assert snap.chi == 1
    assert snap.bond == 1
    assert snap.entries[0][:2] == (0, 0)


def test_neel_schmidt_charges():
    rho = initial_superket("neel", 4)
    snap = exact_operator_schmidt(rho, 1)
    assert snap.chi == 1
    assert snap.entries[0][:2] == (1, 1)
    snap2 = exact_operator_schmidt(rho, 2)
    assert snap2.entries[0][:2] == (0, 0)


def test_oracle_snapshots_satisfy_decomposition_identity():
    liouv = build_liouvillian(4, PARAMS)
    rho = evolve_exact(initial_superket("singlet_pairs", 4), liouv, t=0.8, tol=1e-10)
    for cut in (1, 2, 3):
        snap = exact_operator_schmidt(rho, cut)
        assert check_decomposition(snap) < 1e-12
        probs = sector_probabilities(snap)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-10)


def test_spectrum_mirror_symmetry_under_hermiticity():
    liouv = build_liouvillian(4, PARAMS)
    rho = evolve_exact(initial_superket("singlet_pairs", 4), liouv, t=1.0, tol=1e-10)
    snap = exact_operator_schmidt(rho, 2)
    assert snap.herm_dev < 1e-10


def test_cut_validation():
    rho = initial_superket("identity", 3)
    with pytest.raises(ValueError):
        exact_operator_schmidt(rho, 0)
    with pytest.raises(ValueError):
        exact_operator_schmidt(rho, 3)
