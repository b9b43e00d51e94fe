"""Entanglement observables on charge-labeled Schmidt spectra.

A snapshot is the full operator-space Schmidt spectrum at one bond, each value
labeled by the accumulated (qk, qb) charge of the left half.  All sector keys
used here are doubled integers (2*Sz or 2*S) so half-integer sectors stay
exact; probabilities and resolved entropies follow

    S_op = sum_q p_q S_op,q - sum_q p_q log2 p_q

with p_q = sum_i lambda_{q,i}^2 and the renormalized coefficients
lambda-hat = lambda / sqrt(p_q).  Spin sectors are reconstructed from the
(2S+1)-fold degeneracy of the spectrum across consecutive qk sectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpectrumSnapshot",
    "Multiplet",
    "MultipletTable",
    "operator_entanglement",
    "sector_probabilities",
    "resolved_entanglement",
    "check_decomposition",
    "detect_multiplets",
    "check_appendix_relations",
    "delta_resolved",
    "shannon_entropy",
    "hermiticity_residual",
]


def _xlog2x(p: float) -> float:
    return 0.0 if p <= 0.0 else p * math.log2(p)


def shannon_entropy(probs) -> float:
    """-sum p log2 p with the 0 log 0 := 0 convention."""
    return -sum(_xlog2x(p) for p in (probs.values() if isinstance(probs, dict) else probs))


@dataclass(frozen=True)
class SpectrumSnapshot:
    """Charge-labeled Schmidt spectrum at one bond and one time.

    ``entries`` holds (qk, qb, lambda) sorted descending by lambda; the
    squared values sum to one.  Diagnostics travel with the spectrum so
    downstream consumers can judge its quality.
    """

    time: float
    bond: int
    entries: tuple  # ((qk, qb, lam), ...)
    trace_dev: float = 0.0
    herm_dev: float = 0.0
    trunc_weight: float = 0.0

    def __post_init__(self):
        ent = tuple(
            (int(qk), int(qb), float(lam))
            for qk, qb, lam in sorted(self.entries, key=lambda e: (-e[2], e[0], e[1]))
        )
        object.__setattr__(self, "entries", ent)
        if any(lam < 0 for _, _, lam in ent):
            raise ValueError("negative Schmidt value in snapshot")
        total = sum(lam * lam for _, _, lam in ent)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"snapshot spectrum not normalized: sum lambda^2 = {total!r}")

    @property
    def chi(self) -> int:
        return len(self.entries)

    def values(self) -> np.ndarray:
        return np.array([lam for _, _, lam in self.entries])


def operator_entanglement(snap: SpectrumSnapshot) -> float:
    """S_op = -sum lambda^2 log2 lambda^2, in bits."""
    lam2 = snap.values() ** 2
    total = float(lam2.sum())
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"unnormalized spectrum (sum lambda^2 = {total!r})")
    return -sum(_xlog2x(float(p)) for p in lam2)


def _sector_key(entry, label: str) -> int:
    qk, qb, _ = entry
    if label == "Sz_ket":
        return qk
    if label == "Sz_bra":
        return qb
    raise ValueError(f"unknown sector label {label!r}")


def sector_probabilities(snap: SpectrumSnapshot, label: str = "Sz_ket") -> dict[int, float]:
    """Probability of each half-system magnetization sector (doubled keys)."""
    probs: dict[int, float] = {}
    for entry in snap.entries:
        q = _sector_key(entry, label)
        probs[q] = probs.get(q, 0.0) + entry[2] ** 2
    return dict(sorted(probs.items()))


def resolved_entanglement(snap: SpectrumSnapshot, label: str = "Sz_ket") -> dict[int, float]:
    """Entanglement of the renormalized spectrum within each sector."""
    groups: dict[int, list[float]] = {}
    for entry in snap.entries:
        groups.setdefault(_sector_key(entry, label), []).append(entry[2] ** 2)
    out = {}
    for q, lam2 in sorted(groups.items()):
        p = sum(lam2)
        if p <= 0.0:
            continue
        out[q] = -sum(_xlog2x(x / p) for x in lam2)
    return out


def check_decomposition(snap: SpectrumSnapshot, label: str = "Sz_ket") -> float:
    """Residual of S_op = sum p_q S_op,q - sum p_q log2 p_q (exact identity)."""
    s_full = operator_entanglement(snap)
    probs = sector_probabilities(snap, label)
    resolved = resolved_entanglement(snap, label)
    s_avg = sum(probs[q] * resolved.get(q, 0.0) for q in probs)
    return abs(s_full - (s_avg + shannon_entropy(probs)))


# -- spin-sector reconstruction -----------------------------------------------


@dataclass(frozen=True)
class Multiplet:
    s2: int  # doubled total spin
    lam: float  # mean Schmidt value of the members
    entry_ids: tuple  # indices into snapshot.entries, one per qk in {-s2..s2}
    qb: int  # common bra label of the members
    spread: float  # relative mismatch (max-min)/mean among members


@dataclass(frozen=True)
class MultipletTable:
    multiplets: tuple
    residual: float  # worst relative mismatch; inf when grouping failed

    @property
    def consistent(self) -> bool:
        return math.isfinite(self.residual)


def detect_multiplets(
    snap: SpectrumSnapshot, eps_mult: float | None = None
) -> tuple[MultipletTable, dict[int, float], dict[int, float]]:
    """Group the spectrum into (2S+1)-fold ket-spin multiplets.

    Works from the largest qk downward: an entry with no equal-value partner
    at qk+2 seeds a spin S = qk/2 multiplet, which then claims its nearest
    equal-value partner in every sector qk-2, ..., -qk.  The default matching
    tolerance widens with the accumulated truncation weight, which is what
    splits exact degeneracies.  Returns the table plus the spin-sector
    probabilities p_S and resolved entanglements S_op,S (doubled-spin keys).
    Unmatched leftovers yield a partial table flagged with infinite residual.
    """
    if eps_mult is None:
        eps_mult = max(1e-6, 10.0 * math.sqrt(max(snap.trunc_weight, 0.0)))
    entries = snap.entries
    by_qk: dict[int, list[int]] = {}
    for i, (qk, _, _) in enumerate(entries):
        by_qk.setdefault(qk, []).append(i)  # snapshot order: descending lambda
    unclaimed = {i for i in range(len(entries))}

    multiplets = []
    failed = False
    worst = 0.0
    for qk in sorted(by_qk, reverse=True):
        if qk < 0:
            break  # members of negative sectors are claimed from above
        for seed in by_qk[qk]:
            if seed not in unclaimed:
                continue
            unclaimed.discard(seed)
            _, seed_qb, seed_lam = entries[seed]
            members = [seed]
            ok = True
            for m in range(qk - 2, -qk - 2, -2):
                cands = [i for i in by_qk.get(m, ()) if i in unclaimed]
                if not cands:
                    ok = False
                    break
                best = min(
                    cands,
                    key=lambda i: (abs(entries[i][2] - seed_lam), entries[i][1] != seed_qb, i),
                )
                if abs(entries[best][2] - seed_lam) > eps_mult * max(seed_lam, 1e-300):
                    ok = False
                    break
                unclaimed.discard(best)
                members.append(best)
            if not ok:
                failed = True
                continue
            vals = [entries[i][2] for i in members]
            mean = sum(vals) / len(vals)
            spread = (max(vals) - min(vals)) / mean if mean > 0 else 0.0
            worst = max(worst, spread)
            multiplets.append(
                Multiplet(
                    s2=qk,
                    lam=mean,
                    entry_ids=tuple(members),
                    qb=seed_qb,
                    spread=spread,
                )
            )
    if unclaimed:
        failed = True
    table = MultipletTable(tuple(multiplets), float("inf") if failed else worst)

    p_s: dict[int, float] = {}
    groups: dict[int, list[float]] = {}
    for mult in multiplets:
        lam2 = [entries[i][2] ** 2 for i in mult.entry_ids]
        p_s[mult.s2] = p_s.get(mult.s2, 0.0) + sum(lam2)
        groups.setdefault(mult.s2, []).extend(lam2)
    s_op_s = {}
    for s2, lam2 in sorted(groups.items()):
        p = p_s[s2]
        s_op_s[s2] = -sum(_xlog2x(x / p) for x in lam2) if p > 0 else 0.0
    return table, dict(sorted(p_s.items())), s_op_s


def check_appendix_relations(
    p_s: dict[int, float],
    s_op_s: dict[int, float],
    snap: SpectrumSnapshot,
    p_floor: float = 1e-12,
) -> tuple[float, float]:
    """Residuals of the sector-relation identities.

    Checks p_Sz = sum_{S>=|Sz|} p_S/(2S+1) and the corresponding resolved
    entanglement relation against the directly computed magnetization-sector
    quantities; returns the max abs deviation of each.  Sectors with direct
    probability below ``p_floor`` are skipped in the entanglement relation.
    """
    direct_p = sector_probabilities(snap)
    direct_s = resolved_entanglement(snap)
    res_p = 0.0
    res_s = 0.0
    for sz2, p_direct in direct_p.items():
        compatible = [
            s2 for s2 in p_s if s2 >= abs(sz2) and (s2 - abs(sz2)) % 2 == 0
        ]
        pred_p = sum(p_s[s2] / (s2 + 1) for s2 in compatible)
        res_p = max(res_p, abs(pred_p - p_direct))
        if p_direct > p_floor:
            acc = 0.0
            for s2 in compatible:
                if p_s[s2] <= 0.0:
                    continue
                acc += p_s[s2] * (s_op_s[s2] - math.log2(p_s[s2])) / (s2 + 1)
            pred_s = acc / p_direct + math.log2(p_direct)
            res_s = max(res_s, abs(pred_s - direct_s[sz2]))
    return res_p, res_s


def delta_resolved(series) -> list:
    """Subtract the Sz=0 resolved entanglement pointwise in time.

    ``series`` is an iterable of (time, {doubled Sz: S_op,Sz}); the Sz=0
    sector must be present at every time.
    """
    out = []
    for time, sectors in series:
        if 0 not in sectors:
            raise ValueError(f"Sz=0 sector missing at time {time}")
        base = sectors[0]
        out.append((time, {sz2: val - base for sz2, val in sectors.items()}))
    return out


def hermiticity_residual(entries) -> float:
    """Asymmetry of a labeled spectrum under (qk, qb) -> (qb, qk).

    Compares the sorted value lists of mirrored sectors; a missing mirror
    sector contributes its partner's largest value.
    """
    groups: dict[tuple[int, int], list[float]] = {}
    for qk, qb, lam in entries:
        groups.setdefault((qk, qb), []).append(lam)
    for vals in groups.values():
        vals.sort(reverse=True)
    worst = 0.0
    for (qk, qb), vals in groups.items():
        mirror = groups.get((qb, qk))
        if mirror is None:
            worst = max(worst, vals[0])
            continue
        n = max(len(vals), len(mirror))
        a = vals + [0.0] * (n - len(vals))
        b = mirror + [0.0] * (n - len(mirror))
        worst = max(worst, max(abs(x - y) for x, y in zip(a, b)))
    return worst
