"""Tests for spectrum observables: entropies, sectors, multiplets, identities."""

import math

import numpy as np
import pytest

from opent.observables import (
    SpectrumSnapshot,
    check_appendix_relations,
    check_decomposition,
    delta_resolved,
    detect_multiplets,
    hermiticity_residual,
    operator_entanglement,
    resolved_entanglement,
    sector_probabilities,
    shannon_entropy,
)


def snap(entries, **kw):
    return SpectrumSnapshot(time=kw.pop("time", 0.0), bond=kw.pop("bond", 0), entries=tuple(entries), **kw)


def test_snapshot_sorts_and_validates():
    s = snap([(0, 0, 0.6), (2, 0, 0.8)])
    assert s.entries[0] == (2, 0, 0.8)
    with pytest.raises(ValueError):
        snap([(0, 0, 1.0), (2, 0, 0.5)])
    with pytest.raises(ValueError):
        snap([(0, 0, -1.0)])


def test_operator_entanglement_basics():
    assert operator_entanglement(snap([(0, 0, 1.0)])) == pytest.approx(0.0, abs=1e-14)
    four = snap([(1, 1, 0.5), (1, -1, 0.5), (-1, 1, 0.5), (-1, -1, 0.5)])
    assert operator_entanglement(four) == pytest.approx(2.0, abs=1e-14)
    mixed = snap([(0, 0, math.sqrt(0.5)), (2, 0, 0.5), (-2, 0, 0.5)])
    assert operator_entanglement(mixed) == pytest.approx(1.5, abs=1e-14)


def test_sector_probabilities():
    assert sector_probabilities(snap([(0, 0, 1.0)])) == {0: pytest.approx(1.0)}
    s = snap([(0, 0, math.sqrt(0.5)), (2, 0, 0.5), (-2, 0, 0.5)])
    probs = sector_probabilities(s)
    assert probs == {
        -2: pytest.approx(0.25),
        0: pytest.approx(0.5),
        2: pytest.approx(0.25),
    }
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)
    # bra-side label option
    probs_b = sector_probabilities(s, "Sz_bra")
    assert probs_b == {0: pytest.approx(1.0)}


def test_resolved_entanglement():
    s = snap([(0, 0, math.sqrt(0.5)), (2, 0, 0.5), (-2, 0, 0.5)])
    res = resolved_entanglement(s)
    assert res == {0: pytest.approx(0.0, abs=1e-14), 2: pytest.approx(0.0, abs=1e-14), -2: pytest.approx(0.0, abs=1e-14)}
    # two equal entries in one sector give one bit regardless of the sector weight
    s2 = snap([(0, 0, math.sqrt(0.45)), (0, 0, math.sqrt(0.45)), (2, 0, math.sqrt(0.1))])
    assert resolved_entanglement(s2)[0] == pytest.approx(1.0, abs=1e-12)


def test_decomposition_identity():
    # S_op = 1.5 = 0.5*0 + 0.5*1 + 1.0 for {1/2 at q=0; 1/4,1/4 at q=2}
    s = snap([(0, 0, math.sqrt(0.5)), (2, 0, 0.5), (2, 0, 0.5)])
    assert operator_entanglement(s) == pytest.approx(1.5, abs=1e-14)
    assert check_decomposition(s) < 1e-14
    assert check_decomposition(snap([(0, 0, 1.0)])) < 1e-15
    rng = np.random.default_rng(3)
    for _ in range(10):
        vals = rng.random(12)
        vals /= np.sqrt((vals**2).sum())
        qks = rng.integers(-3, 4, size=12) * 2
        s = snap([(int(q), 0, float(v)) for q, v in zip(qks, vals)])
        assert check_decomposition(s) < 1e-12


def test_shannon_entropy_convention():
    assert shannon_entropy({0: 1.0}) == 0.0
    assert shannon_entropy({0: 0.5, 1: 0.5, 2: 0.0}) == pytest.approx(1.0)


# -- multiplets -------------------------------------------------------------------


def test_detect_multiplets_simple():
    a, b = 0.5, math.sqrt(1.0 - 3 * 0.25)
    s = snap([(-2, 0, a), (0, 0, a), (2, 0, a), (0, 0, b)])
    table, p_s, s_op_s = detect_multiplets(s)
    assert table.consistent
    got = sorted((m.s2, round(m.lam, 12)) for m in table.multiplets)
    assert got == [(0, round(b, 12)), (2, round(a, 12))]
    assert p_s[2] == pytest.approx(3 * a * a, abs=1e-12)
    assert p_s[0] == pytest.approx(b * b, abs=1e-12)
    assert sum(p_s.values()) == pytest.approx(1.0, abs=1e-12)
    assert s_op_s[2] == pytest.approx(math.log2(3), abs=1e-12)
    assert s_op_s[0] == pytest.approx(0.0, abs=1e-12)


def test_detect_multiplets_singlet_intra_bond():
    # ket-graded singlet-pair spectrum: two spin-1/2 multiplets at fixed qb
    s = snap([(1, 1, 0.5), (1, -1, 0.5), (-1, 1, 0.5), (-1, -1, 0.5)])
    table, p_s, s_op_s = detect_multiplets(s)
    assert table.consistent
    assert [m.s2 for m in table.multiplets] == [1, 1]
    # members of one multiplet share the bra label
    for m in table.multiplets:
        qbs = {s.entries[i][1] for i in m.entry_ids}
        assert len(qbs) == 1
    assert p_s == {1: pytest.approx(1.0, abs=1e-12)}
    assert s_op_s[1] == pytest.approx(2.0, abs=1e-12)


def test_multiplet_sector_relation():
    # p_S = (2S+1)(p_{Sz=S} - p_{Sz=S+1}) under exact degeneracy
    a, c = 0.4, 0.2
    b = math.sqrt(1.0 - 3 * a * a - c * c)
    s = snap([(-2, 0, a), (0, 0, a), (2, 0, a), (0, 0, b), (0, 0, c)])
    table, p_s, _ = detect_multiplets(s)
    assert table.consistent
    probs = sector_probabilities(s)
    for s2 in p_s:
        p_here = probs.get(s2, 0.0)
        p_next = probs.get(s2 + 2, 0.0)
        assert p_s[s2] == pytest.approx((s2 + 1) * (p_here - p_next), abs=1e-12)


def test_detect_multiplets_tolerance_widens_with_truncation():
    # truncation-split degeneracy: members drifted by ~eps around a=0.52,
    # well separated from the b ~ 0.43 singlet value
    a = 0.52
    eps = 3e-6
    entries = [(-2, 0, a), (0, 0, a * (1 + eps)), (2, 0, a * (1 - eps)), (0, 0, math.sqrt(1 - 3 * a * a))]
    vals = np.array([e[2] for e in entries])
    entries = [(q, qb, v / np.sqrt((vals**2).sum())) for (q, qb, _), v in zip(entries, vals)]
    strict = detect_multiplets(snap(entries), eps_mult=1e-8)[0]
    assert not strict.consistent
    loose = detect_multiplets(snap(entries), eps_mult=1e-4)[0]
    assert loose.consistent
    assert loose.residual == pytest.approx(2 * eps, rel=1e-2)


def test_detect_multiplets_leftover_flagged():
    # an entry at negative qk with no positive partner cannot be grouped
    s = snap([(-2, 0, 0.6), (0, 0, 0.8)])
    table, _, _ = detect_multiplets(s)
    assert not table.consistent
    assert math.isinf(table.residual)


def test_appendix_relations_trivial_and_synthetic():
    s0 = snap([(0, 0, 1.0)])
    table, p_s, s_op_s = detect_multiplets(s0)
    rp, rs = check_appendix_relations(p_s, s_op_s, s0)
    assert rp < 1e-15 and rs < 1e-15

    a, b = 0.5, 0.5
    s = snap([(-2, 0, a), (0, 0, a), (2, 0, a), (0, 0, b)])
    table, p_s, s_op_s = detect_multiplets(s)
    rp, rs = check_appendix_relations(p_s, s_op_s, s)
    assert rp < 1e-12
    assert rs < 1e-12


def test_delta_resolved():
    series = [(1.0, {0: 1.0, 2: 1.0, -2: 1.0}), (2.0, {0: 1.5, 2: 1.2, -2: 1.2})]
    out = delta_resolved(series)
    assert out[0][1] == {0: pytest.approx(0.0), 2: pytest.approx(0.0), -2: pytest.approx(0.0)}
    assert out[1][1][2] == pytest.approx(-0.3)
    assert out[1][1][2] == pytest.approx(out[1][1][-2])
    with pytest.raises(ValueError):
        delta_resolved([(0.5, {2: 1.0})])


def test_hermiticity_residual():
    sym = [(1, -1, 0.6), (-1, 1, 0.6), (0, 0, math.sqrt(1 - 2 * 0.36))]
    assert hermiticity_residual(sym) < 1e-15
    asym = [(1, -1, 0.8), (-1, 1, 0.6)]
    assert hermiticity_residual(asym) == pytest.approx(0.2, abs=1e-12)
    orphan = [(2, 0, 0.9), (0, 0, math.sqrt(1 - 0.81))]
    assert hermiticity_residual(orphan) == pytest.approx(0.9, abs=1e-12)
