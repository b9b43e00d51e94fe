"""Tests for the infinite-MPDO engine: states, gates, canonical form, checkpoints."""

import numpy as np
import pytest

from opent.edoracle import (
    build_liouvillian,
    evolve_exact,
    exact_operator_schmidt,
    initial_superket,
)
from opent.impdo import (
    BlowUpError,
    CheckpointError,
    UnitCellMPDO,
    apply_gate,
    canonicalize,
    checkpoint_load,
    checkpoint_save,
    evolve,
    init_state,
    isometry_residual,
    trace_transfer_eigenvalue,
)
from opent.lindblad import GateSet, ModelParams
from opent.observables import (
    check_decomposition,
    operator_entanglement,
    sector_probabilities,
)

PARAMS = ModelParams(J=1.0, gamma=0.25, dt=0.5)


def spectra_match(a, b, atol):
    n = max(a.chi, b.chi)
    va = list(a.values()) + [0.0] * (n - a.chi)
    vb = list(b.values()) + [0.0] * (n - b.chi)
    return max(abs(x - y) for x, y in zip(va, vb)) < atol


# -- initial states ---------------------------------------------------------------


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        init_state("w_state")


def test_identity_state():
    st = init_state("identity")
    assert st.chi(0) == st.chi(1) == 1
    assert operator_entanglement(st.snapshot(0)) == pytest.approx(0.0, abs=1e-12)
    assert operator_entanglement(st.snapshot(1)) == pytest.approx(0.0, abs=1e-12)
    assert trace_transfer_eigenvalue(st) == pytest.approx(1.0, abs=1e-12)


def test_singlet_state_spectra():
    st = init_state("singlet_pairs")
    intra = st.snapshot(0)
    lam2 = [lam**2 for _, _, lam in intra.entries]
    assert lam2 == pytest.approx([0.25] * 4, abs=1e-14)
    assert sorted((qk, qb) for qk, qb, _ in intra.entries) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    assert operator_entanglement(intra) == pytest.approx(2.0, abs=1e-12)
    assert st.chi(1) == 1
    assert operator_entanglement(st.snapshot(1)) == pytest.approx(0.0, abs=1e-12)


def test_neel_state_charges():
    st = init_state("neel")
    assert st.chi(0) == st.chi(1) == 1
    assert st.snapshot(0).entries[0][:2] == (1, 1)
    assert st.snapshot(1).entries[0][:2] == (0, 0)
    # alternating site charges: Gamma1 carries (+1,+1), Gamma2 (-1,-1)
    (key1,) = st.gammas[0].blocks
    (key2,) = st.gammas[1].blocks
    assert tuple(key1[1]) == (1, 1)
    assert tuple(key2[1]) == (-1, -1)


def test_initial_states_match_oracle_spectra():
    for kind in ("singlet_pairs", "triplet_pairs", "neel"):
        st = init_state(kind)
        rho = initial_superket(kind, 4)
        assert spectra_match(st.snapshot(0), exact_operator_schmidt(rho, 1), 1e-12)
        assert spectra_match(st.snapshot(1), exact_operator_schmidt(rho, 2), 1e-12)


# -- gate application ----------------------------------------------------------------


def test_identity_gate_leaves_state_unchanged():
    gs = GateSet(PARAMS)
    for kind in ("singlet_pairs", "neel"):
        st = init_state(kind)
        before = [st.snapshot(0).entries, st.snapshot(1).entries]
        apply_gate(st, gs.gate(0.0), 0, chi_max=64, eps_trunc=1e-12)
        apply_gate(st, gs.gate(0.0), 1, chi_max=64, eps_trunc=1e-12)
        for bond in (0, 1):
            after = st.snapshot(bond).entries
            assert len(after) == len(before[bond])
            for a, b in zip(sorted(after), sorted(before[bond])):
                assert a[:2] == b[:2]
                assert a[2] == pytest.approx(b[2], abs=1e-12)


def test_singlet_intra_pair_gate_is_stationary():
    # the pair operator is a fixed point of the two-site generator
    gs = GateSet(PARAMS)
    st = init_state("singlet_pairs")
    before = st.snapshot(0).entries
    apply_gate(st, gs.gate(0.7), 0, chi_max=64, eps_trunc=1e-12)
    after = st.snapshot(0).entries
    assert len(after) == len(before)
    for a, b in zip(sorted(after), sorted(before)):
        assert a[2] == pytest.approx(b[2], abs=1e-12)
    assert st.trace_dev < 1e-12


def test_gate_application_records_truncation():
    gs = GateSet(ModelParams(J=1.0, gamma=0.5, dt=0.25))
    st = init_state("neel")
    for _ in range(12):
        for parity, tau in gs.schedule:
            apply_gate(st, gs.gate(tau), 0 if parity == "odd" else 1, chi_max=8, eps_trunc=1e-12)
    assert st.trunc_total > 0.0
    assert st.chi(0) <= 8 and st.chi(1) <= 8


def test_blowup_detected():
    st = init_state("neel")
    bad = init_state("neel").gammas[0]
    for key in bad.blocks:
        bad.blocks[key] = bad.blocks[key] * np.nan
    st.gammas[0] = bad
    gs = GateSet(PARAMS)
    with pytest.raises(BlowUpError):
        apply_gate(st, gs.gate(0.5), 0, chi_max=16, eps_trunc=1e-12)


# -- canonical form -------------------------------------------------------------------


def test_initial_states_are_canonical():
    for kind in ("singlet_pairs", "triplet_pairs", "neel", "identity"):
        assert isometry_residual(init_state(kind)) < 1e-12


def test_canonicalize_is_idempotent_on_canonical_states():
    st = init_state("singlet_pairs")
    before = [st.snapshot(b).entries for b in (0, 1)]
    res = canonicalize(st, tol=1e-10)
    assert res < 1e-10
    for bond in (0, 1):
        after = st.snapshot(bond).entries
        for a, b in zip(after, before[bond]):
            assert a[:2] == b[:2]
            assert a[2] == pytest.approx(b[2], abs=1e-12)


def test_canonicalize_undoes_pure_gauge_rescaling():
    st = init_state("singlet_pairs")
    lam_before = st.snapshot(0).entries
    # rescale one Gamma by 2 and the other by 1/2: pure gauge on the bond
    st.gammas[0] = st.gammas[0].scale(2.0)
    st.gammas[1] = st.gammas[1].scale(0.5)
    canonicalize(st, tol=1e-12)
    assert isometry_residual(st) < 1e-10
    lam_after = st.snapshot(0).entries
    for a, b in zip(lam_after, lam_before):
        assert a[2] == pytest.approx(b[2], abs=1e-10)


def test_canonicalize_restores_isometry_after_dissipative_steps():
    params = ModelParams(J=1.0, gamma=0.5, dt=0.25)
    gs = GateSet(params)
    st = init_state("neel")
    for _ in range(10):
        for parity, tau in gs.schedule:
            apply_gate(st, gs.gate(tau), 0 if parity == "odd" else 1, chi_max=64, eps_trunc=1e-12)
    drifted = isometry_residual(st)
    assert drifted > 1e-3  # nonunitary steps degrade the gauge badly
    res = canonicalize(st, tol=1e-10, chi_max=64, eps_trunc=1e-12)
    assert res < 1e-10
    # once canonical, the gauge fix is stable: a second pass moves nothing
    spectra = [st.snapshot(b).entries for b in (0, 1)]
    canonicalize(st, tol=1e-10, chi_max=64, eps_trunc=1e-12)
    for bond in (0, 1):
        after = st.snapshot(bond).entries
        assert len(after) == len(spectra[bond])
        for a, b in zip(after, spectra[bond]):
            assert a[2] == pytest.approx(b[2], abs=1e-10)


def test_canonicalize_recovers_true_schmidt_values():
    # after one nonunitary step the raw lambdas are gauge-distorted; the
    # canonical form brings them to the oracle's exact Schmidt spectrum
    params = ModelParams(J=1.0, gamma=0.5, dt=0.25)
    gs = GateSet(params)
    st = init_state("neel")
    for parity, tau in gs.schedule:
        apply_gate(st, gs.gate(tau), 0 if parity == "odd" else 1, chi_max=128, eps_trunc=1e-13)
    liouv = build_liouvillian(6, params)
    rho = evolve_exact(initial_superket("neel", 6), liouv, t=0.25, tol=1e-13)
    ed = exact_operator_schmidt(rho, 2)
    before = st.snapshot(1)
    canonicalize(st, tol=1e-11, chi_max=128, eps_trunc=1e-13)
    after = st.snapshot(1)

    def dev(snap):
        n = max(snap.chi, ed.chi)
        a = list(snap.values()) + [0.0] * (n - snap.chi)
        b = list(ed.values()) + [0.0] * (n - ed.chi)
        return max(abs(x - y) for x, y in zip(a, b))

    assert dev(after) < dev(before)
    assert dev(after) < 1e-3  # remaining deviation is Trotter + finite size


# -- evolution vs the oracle -----------------------------------------------------------


def test_identity_evolution_is_stationary():
    st = init_state("identity")
    snaps = evolve(st, PARAMS, t_max=10.0, chi_max=64, eps_trunc=1e-12)
    assert all(operator_entanglement(s) < 1e-10 for s in snaps)
    assert st.trace_dev < 1e-10


def test_one_step_neel_matches_oracle():
    # one fourth-order step vs the exact N=6 oracle, both middle bonds;
    # agreement at dt=0.25 is Trotter+finite-size limited (measured 1.1e-4 /
    # 8.2e-4 on the two bonds) and improves toward the oracle as dt shrinks
    for dt, bound in ((0.25, 2e-3), (0.05, 5e-6)):
        params = ModelParams(J=1.0, gamma=0.5, dt=dt)
        st = init_state("neel")
        evolve(st, params, t_max=dt, chi_max=128, eps_trunc=1e-13, emit_initial=False)
        liouv = build_liouvillian(6, params)
        rho = evolve_exact(initial_superket("neel", 6), liouv, t=dt, tol=1e-13)
        assert spectra_match(st.snapshot(0), exact_operator_schmidt(rho, 3), bound)
        assert spectra_match(st.snapshot(1), exact_operator_schmidt(rho, 2), bound)


def test_short_singlet_run_matches_oracle_within_lightcone():
    params = ModelParams(J=1.0, gamma=0.25, dt=0.05)
    st = init_state("singlet_pairs")
    evolve(st, params, t_max=0.25, chi_max=256, eps_trunc=1e-13, emit_initial=False)
    liouv = build_liouvillian(8, params)
    rho = evolve_exact(initial_superket("singlet_pairs", 8), liouv, t=0.25, tol=1e-12)
    ed = exact_operator_schmidt(rho, 4, time=0.25)
    it = st.snapshot(1)
    # measured 6.8e-5, dominated by the N=8 boundary tail (Jt)^4/4!
    assert abs(operator_entanglement(ed) - operator_entanglement(it)) < 2e-4
    pe, pi = sector_probabilities(ed), sector_probabilities(it)
    for k in set(pe) | set(pi):
        assert pe.get(k, 0.0) == pytest.approx(pi.get(k, 0.0), abs=1e-5)


def test_every_snapshot_satisfies_exact_identities():
    params = ModelParams(J=1.0, gamma=0.5, dt=0.25)
    st = init_state("singlet_pairs")
    snaps = evolve(st, params, t_max=2.0, chi_max=128, eps_trunc=1e-12)
    assert len(snaps) > 0
    for s in snaps:
        assert abs(sum(lam**2 for _, _, lam in s.entries) - 1.0) < 1e-10
        assert check_decomposition(s) < 1e-12
    # mirror symmetry of the spectrum survives hard chi=128 truncation
    # (mirror-pair-aware cuts; residual drift scales with the trunc weight)
    assert max(s.herm_dev for s in snaps) < 1e-5


def test_evolution_validation():
    st = init_state("neel")
    with pytest.raises(ValueError):
        evolve(st, PARAMS, t_max=0.0)
    with pytest.raises(ValueError):
        evolve(st, PARAMS, t_max=1.0, observe_every=0)


# -- checkpoints -----------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    params = ModelParams(J=1.0, gamma=0.5, dt=0.25)
    st = init_state("singlet_pairs")
    evolve(st, params, t_max=1.0, chi_max=64, eps_trunc=1e-12, emit_initial=False)
    path = tmp_path / "state.opnt"
    checkpoint_save(st, path)
    back = checkpoint_load(path)
    assert back.time == st.time
    assert back.step == st.step
    assert back.kind == st.kind
    for lam_a, lam_b in zip(back.lambdas, st.lambdas):
        assert set(lam_a.values) == set(lam_b.values)
        for q in lam_a.values:
            assert np.array_equal(lam_a.values[q], lam_b.values[q])
    for g_a, g_b in zip(back.gammas, st.gammas):
        assert set(g_a.blocks) == set(g_b.blocks)
        for k in g_a.blocks:
            assert np.array_equal(g_a.blocks[k], g_b.blocks[k])


def test_resume_equals_uninterrupted(tmp_path):
    params = ModelParams(J=1.0, gamma=0.5, dt=0.25)
    full = init_state("singlet_pairs")
    evolve(full, params, t_max=2.0, chi_max=64, eps_trunc=1e-12, emit_initial=False)

    half = init_state("singlet_pairs")
    evolve(half, params, t_max=1.0, chi_max=64, eps_trunc=1e-12, emit_initial=False)
    path = tmp_path / "half.opnt"
    checkpoint_save(half, path)
    resumed = checkpoint_load(path)
    evolve(resumed, params, t_max=2.0, chi_max=64, eps_trunc=1e-12, emit_initial=False)

    assert resumed.time == pytest.approx(full.time, abs=1e-12)
    for bond in (0, 1):
        a, b = resumed.snapshot(bond), full.snapshot(bond)
        assert a.chi == b.chi
        for x, y in zip(a.entries, b.entries):
            assert x[:2] == y[:2]
            assert x[2] == pytest.approx(y[2], abs=1e-12)


def test_truncated_checkpoint_rejected(tmp_path):
    st = init_state("neel")
    path = tmp_path / "state.opnt"
    checkpoint_save(st, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        checkpoint_load(path)
    path.write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(CheckpointError):
        checkpoint_load(path)
