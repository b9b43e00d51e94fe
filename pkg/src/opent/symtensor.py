"""Charge-graded block-sparse tensors for operator-space spin-chain simulations.

Every tensor index is graded into sectors labeled by a pair of integer U(1)
charges ``(qk, qb)``: the doubled magnetization of the ket side and of the bra
side of the operator space (doubled so that half-integer spin stays exact).
A tensor stores one dense block per charge-conserving combination of sector
labels; all tensors in this package have total charge zero, i.e. the signed
sum of charges over the indices of every stored block vanishes.

The module provides the handful of primitives everything else is built from:
pairwise contraction, index fusion (invertible), globally-truncated SVD, and
dense matrix exponentials for small gate generators.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.linalg


class SymTensorError(ValueError):
    """Structural error in a graded-tensor operation (sector/shape mismatch)."""


class TruncationError(SymTensorError):
    """SVD truncation left an empty spectrum, or the input was degenerate."""


class Charge(NamedTuple):
    """Doubled (ket, bra) magnetization labels of one sector."""

    qk: int
    qb: int

    def __add__(self, other):
        return Charge(self.qk + other.qk, self.qb + other.qb)

    def __sub__(self, other):
        return Charge(self.qk - other.qk, self.qb - other.qb)

    def __neg__(self):
        return Charge(-self.qk, -self.qb)

    def flipped(self) -> "Charge":
        """Swap ket and bra labels (hermitian-conjugation partner)."""
        return Charge(self.qb, self.qk)


ZERO = Charge(0, 0)

IN = 1
OUT = -1


@dataclass(frozen=True)
class GradedIndex:
    """One tensor index: ordered charge sectors with degeneracies and a flow direction.

    Sectors are kept sorted ascending by charge, so block layouts and dense
    embeddings are canonical.  ``direction`` is +1 (incoming) or -1 (outgoing);
    two indices can be contracted when their sector lists are equal and their
    directions are opposite.
    """

    sectors: tuple[tuple[Charge, int], ...]
    direction: int = IN

    def __post_init__(self):
        if self.direction not in (IN, OUT):
            raise SymTensorError(f"direction must be +1 or -1, got {self.direction}")
        secs = tuple((Charge(*q), int(d)) for q, d in self.sectors)
        if any(d <= 0 for _, d in secs):
            raise SymTensorError("sector degeneracies must be positive")
        charges = [q for q, _ in secs]
        if len(set(charges)) != len(charges):
            raise SymTensorError("sector charges must be unique within an index")
        if list(charges) != sorted(charges):
            secs = tuple(sorted(secs))
        object.__setattr__(self, "sectors", secs)

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.sectors)

    @property
    def charges(self) -> tuple[Charge, ...]:
        return tuple(q for q, _ in self.sectors)

    def degeneracy(self, q: Charge) -> int:
        for c, d in self.sectors:
            if c == q:
                return d
        return 0

    def offset(self, q: Charge) -> int:
        """Start position of sector ``q`` in the canonical dense layout."""
        pos = 0
        for c, d in self.sectors:
            if c == q:
                return pos
            pos += d
        raise SymTensorError(f"sector {q} not present in index")

    def dual(self) -> "GradedIndex":
        return GradedIndex(self.sectors, -self.direction)

    def same_sectors(self, other: "GradedIndex") -> bool:
        return self.sectors == other.sectors


def _signed(q: Charge, direction: int) -> Charge:
    return q if direction == IN else -q


class ChargeTensor:
    """Block-sparse tensor with total charge zero.

    ``blocks`` maps a per-index charge assignment (tuple of Charge) to a dense
    complex array whose shape matches the sector degeneracies.
    """

    __slots__ = ("indices", "blocks")

    def __init__(self, indices: Sequence[GradedIndex], blocks: dict, check: bool = True):
        self.indices = tuple(indices)
        self.blocks = blocks
        if check:
            self._check()

    def _check(self):
        nd = len(self.indices)
        for key, arr in self.blocks.items():
            if len(key) != nd:
                raise SymTensorError(f"block key {key} does not match rank {nd}")
            tot = ZERO
            for q, idx in zip(key, self.indices):
                tot = tot + _signed(Charge(*q), idx.direction)
            if tot != ZERO:
                raise SymTensorError(f"block {key} violates charge conservation")
            shape = tuple(idx.degeneracy(Charge(*q)) for q, idx in zip(key, self.indices))
            if 0 in shape:
                raise SymTensorError(f"block {key} references missing sectors")
            if arr.shape != shape:
                raise SymTensorError(f"block {key} shape {arr.shape} != sectors {shape}")

    @property
    def ndim(self) -> int:
        return len(self.indices)

    def copy(self) -> "ChargeTensor":
        return ChargeTensor(self.indices, {k: v.copy() for k, v in self.blocks.items()}, check=False)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.vdot(b, b).real for b in self.blocks.values())))

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(b))) for b in self.blocks.values()), default=0.0)

    def isfinite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks.values())

    def scale(self, factor: complex) -> "ChargeTensor":
        return ChargeTensor(self.indices, {k: v * factor for k, v in self.blocks.items()}, check=False)

    def __add__(self, other: "ChargeTensor") -> "ChargeTensor":
        if self.indices != other.indices:
            raise SymTensorError("cannot add tensors with different indices")
        out = {k: v.copy() for k, v in self.blocks.items()}
        for k, v in other.blocks.items():
            if k in out:
                out[k] = out[k] + v
            else:
                out[k] = v.copy()
        return ChargeTensor(self.indices, out, check=False)

    def __sub__(self, other: "ChargeTensor") -> "ChargeTensor":
        return self + other.scale(-1.0)

    def conj(self) -> "ChargeTensor":
        """Complex conjugation; flips all index directions."""
        return ChargeTensor(
            tuple(idx.dual() for idx in self.indices),
            {k: v.conj() for k, v in self.blocks.items()},
            check=False,
        )

    def transpose(self, perm: Sequence[int]) -> "ChargeTensor":
        perm = tuple(perm)
        if sorted(perm) != list(range(self.ndim)):
            raise SymTensorError(f"invalid permutation {perm}")
        idxs = tuple(self.indices[p] for p in perm)
        blocks = {
            tuple(key[p] for p in perm): np.ascontiguousarray(np.transpose(arr, perm))
            for key, arr in self.blocks.items()
        }
        return ChargeTensor(idxs, blocks, check=False)

    def to_dense(self) -> np.ndarray:
        arr = np.zeros(tuple(idx.dim for idx in self.indices), dtype=np.complex128)
        for key, block in self.blocks.items():
            sl = tuple(
                slice(idx.offset(Charge(*q)), idx.offset(Charge(*q)) + idx.degeneracy(Charge(*q)))
                for q, idx in zip(key, self.indices)
            )
            arr[sl] = block
        return arr

    # -- constructors ------------------------------------------------------

    @staticmethod
    def from_dense(arr: np.ndarray, indices: Sequence[GradedIndex], leak_tol: float = 1e-12) -> "ChargeTensor":
        """Slice a dense array into charge blocks, rejecting off-block weight.

        ``leak_tol`` is relative to the Frobenius norm of ``arr``.
        """
        indices = tuple(indices)
        if arr.shape != tuple(idx.dim for idx in indices):
            raise SymTensorError(f"dense shape {arr.shape} does not match indices")
        blocks = {}
        remainder = np.array(arr, dtype=np.complex128, copy=True)
        for key in itertools.product(*(idx.charges for idx in indices)):
            tot = ZERO
            for q, idx in zip(key, indices):
                tot = tot + _signed(q, idx.direction)
            if tot != ZERO:
                continue
            sl = tuple(
                slice(idx.offset(q), idx.offset(q) + idx.degeneracy(q))
                for q, idx in zip(key, indices)
            )
            block = np.ascontiguousarray(arr[sl], dtype=np.complex128)
            remainder[sl] = 0.0
            if block.any():
                blocks[key] = block
        total = float(np.linalg.norm(arr))
        leak = float(np.linalg.norm(remainder))
        if total > 0 and leak > leak_tol * total:
            raise SymTensorError(
                f"dense array has charge-violating weight {leak:.3e} "
                f"(relative {leak / total:.3e})"
            )
        return ChargeTensor(indices, blocks, check=False)

    @staticmethod
    def eye(index: GradedIndex) -> "ChargeTensor":
        """Graded identity matrix with legs ``[index, index.dual()]``."""
        blocks = {(q, q): np.eye(d, dtype=np.complex128) for q, d in index.sectors}
        return ChargeTensor((index, index.dual()), blocks, check=False)

    @staticmethod
    def random(indices: Sequence[GradedIndex], rng: np.random.Generator) -> "ChargeTensor":
        """Dense-per-allowed-block random tensor (tests)."""
        indices = tuple(indices)
        blocks = {}
        for key in itertools.product(*(idx.charges for idx in indices)):
            tot = ZERO
            for q, idx in zip(key, indices):
                tot = tot + _signed(q, idx.direction)
            if tot != ZERO:
                continue
            shape = tuple(idx.degeneracy(q) for q, idx in zip(key, indices))
            blocks[key] = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return ChargeTensor(indices, blocks, check=False)


# -- contraction -----------------------------------------------------------


def contract(a: ChargeTensor, b: ChargeTensor, pairs: Sequence[tuple[int, int]]) -> ChargeTensor:
    """Contract paired indices of two tensors.

    ``pairs`` lists ``(axis_of_a, axis_of_b)``; paired indices must have equal
    sector lists and opposite directions.  Remaining indices appear in the
    order (a-remaining..., b-remaining...).
    """
    pairs = [(int(i), int(j)) for i, j in pairs]
    for i, j in pairs:
        if not (0 <= i < a.ndim and 0 <= j < b.ndim):
            raise SymTensorError(f"contraction pair ({i},{j}) out of range")
        ia, ib = a.indices[i], b.indices[j]
        if not ia.same_sectors(ib):
            raise SymTensorError(f"paired indices {i},{j} have different sectors")
        if ia.direction == ib.direction:
            raise SymTensorError(f"paired indices {i},{j} have equal directions")
    a_axes = [i for i, _ in pairs]
    b_axes = [j for _, j in pairs]
    if len(set(a_axes)) != len(a_axes) or len(set(b_axes)) != len(b_axes):
        raise SymTensorError("repeated axis in contraction pairs")
    a_keep = [i for i in range(a.ndim) if i not in a_axes]
    b_keep = [j for j in range(b.ndim) if j not in b_axes]
    out_indices = tuple(a.indices[i] for i in a_keep) + tuple(b.indices[j] for j in b_keep)

    # bucket b's blocks by the charges on contracted axes
    buckets: dict[tuple, list] = {}
    for kb, vb in b.blocks.items():
        c = tuple(kb[j] for j in b_axes)
        buckets.setdefault(c, []).append((kb, vb))

    out_blocks: dict[tuple, np.ndarray] = {}
    for ka in sorted(a.blocks):
        va = a.blocks[ka]
        c = tuple(ka[i] for i in a_axes)
        for kb, vb in buckets.get(c, ()):
            res = np.tensordot(va, vb, axes=(a_axes, b_axes))
            key = tuple(ka[i] for i in a_keep) + tuple(kb[j] for j in b_keep)
            if key in out_blocks:
                out_blocks[key] += res
            else:
                out_blocks[key] = res
    if not out_indices:
        # full contraction to a scalar: represent as 0-dim tensor
        total = sum(out_blocks.values()) if out_blocks else np.zeros((), np.complex128)
        return ChargeTensor((), {(): np.asarray(total, dtype=np.complex128)}, check=False)
    return ChargeTensor(out_indices, out_blocks, check=False)


def scalar(t: ChargeTensor) -> complex:
    if t.ndim != 0:
        raise SymTensorError("not a scalar tensor")
    return complex(t.blocks.get((), np.zeros((), np.complex128)))


# -- fusion ----------------------------------------------------------------


@dataclass(frozen=True)
class FuseRecord:
    """Bookkeeping to invert one ``fuse`` call.

    ``groups`` holds, per fused axis, the original indices and, per fused
    charge, the ordered list of original charge combinations with their
    extents in the fused sector.
    """

    axis: int
    original: tuple[GradedIndex, ...]
    fused: GradedIndex
    layout: dict  # Charge -> list of (combo, start, shape)


def _fuse_layout(indices: Sequence[GradedIndex], direction: int):
    """Enumerate charge combos of a group, ordered lexicographically."""
    per_charge: dict[Charge, list] = {}
    for combo in itertools.product(*(idx.sectors for idx in indices)):
        tot = ZERO
        for (q, _), idx in zip(combo, indices):
            tot = tot + _signed(q, idx.direction)
        fused_q = tot if direction == IN else -tot
        size = 1
        for _, d in combo:
            size *= d
        per_charge.setdefault(fused_q, []).append((tuple(q for q, _ in combo), size))
    layout = {}
    sectors = []
    for q in sorted(per_charge):
        combos = sorted(per_charge[q])
        entries = []
        pos = 0
        for combo, size in combos:
            entries.append((combo, pos, size))
            pos += size
        layout[q] = entries
        sectors.append((q, pos))
    return GradedIndex(tuple(sectors), direction), layout


def fuse(t: ChargeTensor, axes: Sequence[int]) -> tuple[ChargeTensor, FuseRecord]:
    """Fuse a contiguous group of axes into one index.

    The group must be adjacent (permute first if needed).  Fused sector
    charges are component-wise sums of the member charges (signed by flow);
    the operation is exactly invertible through :func:`unfuse`.
    """
    axes = sorted(int(a) for a in axes)
    if not axes:
        raise SymTensorError("empty fuse group")
    if axes != list(range(axes[0], axes[0] + len(axes))):
        raise SymTensorError(f"fuse group {axes} is not adjacent")
    a0 = axes[0]
    group = tuple(t.indices[a] for a in axes)
    direction = group[0].direction
    fused_idx, layout = _fuse_layout(group, direction)
    positions = {q: {combo: (start, size) for combo, start, size in entries} for q, entries in layout.items()}

    new_indices = t.indices[:a0] + (fused_idx,) + t.indices[a0 + len(axes):]
    out: dict[tuple, np.ndarray] = {}
    for key, block in t.blocks.items():
        combo = tuple(key[a] for a in axes)
        tot = ZERO
        for q, idx in zip(combo, group):
            tot = tot + _signed(Charge(*q), idx.direction)
        fq = tot if direction == IN else -tot
        start, size = positions[fq][combo]
        new_key = key[:a0] + (fq,) + key[a0 + len(axes):]
        pre = block.shape[:a0]
        post = block.shape[a0 + len(axes):]
        flat = block.reshape(pre + (size,) + post)
        dest = out.get(new_key)
        if dest is None:
            shape = pre + (fused_idx.degeneracy(fq),) + post
            dest = np.zeros(shape, dtype=np.complex128)
            out[new_key] = dest
        dest[(slice(None),) * a0 + (slice(start, start + size),)] = flat
    rec = FuseRecord(axis=a0, original=group, fused=fused_idx, layout=layout)
    return ChargeTensor(new_indices, out, check=False), rec


def unfuse(t: ChargeTensor, rec: FuseRecord) -> ChargeTensor:
    """Invert :func:`fuse`; splits axis ``rec.axis`` back into the originals."""
    a0 = rec.axis
    if a0 >= t.ndim or not t.indices[a0].same_sectors(rec.fused):
        raise SymTensorError("tensor does not carry the fused index of this record")
    new_indices = t.indices[:a0] + rec.original + t.indices[a0 + 1:]
    out: dict[tuple, np.ndarray] = {}
    for key, block in t.blocks.items():
        fq = Charge(*key[a0])
        for combo, start, size in rec.layout[fq]:
            sl = (slice(None),) * a0 + (slice(start, start + size),)
            piece = block[sl]
            if not piece.any():
                continue
            shape = tuple(idx.degeneracy(q) for idx, q in zip(rec.original, combo))
            pre = block.shape[:a0]
            post = block.shape[a0 + 1:]
            new_key = key[:a0] + combo + key[a0 + 1:]
            out[new_key] = np.ascontiguousarray(piece.reshape(pre + shape + post))
    return ChargeTensor(new_indices, out, check=False)


# -- truncated SVD ----------------------------------------------------------


@dataclass
class SvdResult:
    u: ChargeTensor
    values: list  # [(Charge, float)] in global descending order
    vh: ChargeTensor
    trunc_weight: float  # discarded sum of squares, relative to the full spectrum
    bond: GradedIndex  # the new bond index (direction OUT on u's last leg)
    dropped_group: bool = False  # a degenerate group at the edge was dropped whole
    raw_norm: float = 1.0  # Frobenius norm of the input matrix


def svd_truncate(
    t: ChargeTensor,
    row_axes: Sequence[int],
    col_axes: Sequence[int],
    chi_max: int | None,
    eps_trunc: float = 0.0,
    normalize: bool = True,
    degeneracy_rtol: float = 1e-10,
    mirror_pairs: bool = False,
    flip_pairs: bool = False,
) -> SvdResult:
    """Blockwise SVD with a single global truncation across sectors.

    Singular values are sorted descending over all sectors; at most
    ``chi_max`` are kept and values with ``value**2 < eps_trunc`` (relative to
    the total sum of squares) are dropped.  Degenerate groups at the
    truncation edge are kept whole when they fit and dropped whole otherwise.
    Kept values are renormalized to unit sum of squares when ``normalize``.

    ``mirror_pairs`` additionally equalizes the kept counts of every bond
    sector q with its ket/bra-swapped partner (exact degeneracy of hermitian
    operators); ``flip_pairs`` does the same for the spin-flipped partner -q
    (exact degeneracy of flip-symmetric states).  Once roundoff drift exceeds
    the degeneracy tolerance a plain value cut can split such a pair, seeding
    an O(lambda_cut) symmetry error that feeds back; trimming to matched
    counts over the symmetry orbit keeps the truncated state symmetric by
    construction.
    """
    if chi_max is not None and chi_max < 1:
        raise TruncationError("chi_max must be >= 1")
    if eps_trunc < 0:
        raise TruncationError("eps_trunc must be >= 0")
    row_axes = [int(a) for a in row_axes]
    col_axes = [int(a) for a in col_axes]
    if sorted(row_axes + col_axes) != list(range(t.ndim)):
        raise SymTensorError("row/col axes must bipartition the tensor")
    tp = t.transpose(tuple(row_axes) + tuple(col_axes))
    nrow = len(row_axes)
    mat, row_rec = fuse(tp, list(range(nrow)))
    # after fusing rows the tensor is [row, col...]; fuse the cols
    mat, col_rec = fuse(mat, list(range(1, mat.ndim)))

    if not mat.isfinite():
        raise TruncationError("non-finite entries in SVD input")

    # per-sector SVD; conservation ties the col charge to the row charge
    pieces = {}
    total2 = 0.0
    for key, block in mat.blocks.items():
        qr = Charge(*key[0])
        u, s, vh = np.linalg.svd(block, full_matrices=False)
        pieces[qr] = (key, u, s, vh)
        total2 += float(np.sum(s**2))
    if total2 == 0.0 or not pieces:
        raise TruncationError("input matrix has no weight")

    entries = []  # (value, charge, position within sector)
    for qr in sorted(pieces):
        _, _, s, _ = pieces[qr]
        for i, v in enumerate(s):
            entries.append((float(v), qr, i))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))

    keep = len(entries)
    if chi_max is not None:
        keep = min(keep, chi_max)
    if eps_trunc > 0.0:
        thr = eps_trunc * total2
        while keep > 0 and entries[keep - 1][0] ** 2 < thr:
            keep -= 1
    dropped_group = False
    if keep < len(entries) and keep > 0:
        # degenerate group straddling the cut: keep whole if it fits chi_max
        v_edge = entries[keep - 1][0]
        lo = keep - 1
        while lo > 0 and abs(entries[lo - 1][0] - v_edge) <= degeneracy_rtol * v_edge:
            lo -= 1
        hi = keep
        while hi < len(entries) and abs(entries[hi][0] - v_edge) <= degeneracy_rtol * v_edge:
            hi += 1
        if hi > keep:  # group straddles
            if chi_max is None or hi <= chi_max:
                keep = hi
            else:
                keep = lo
                dropped_group = True
    if keep == 0:
        raise TruncationError("all singular values truncated (degenerate input)")

    kept = entries[:keep]
    if mirror_pairs or flip_pairs:
        kept = _equalize_orbit_counts(kept, mirror_pairs, flip_pairs) or kept
    kept2 = sum(v * v for v, _, _ in kept)
    trunc_weight = max(0.0, 1.0 - kept2 / total2)
    scale = 1.0 / np.sqrt(kept2) if normalize else 1.0

    # the bond sector label carries the signed row charge so that both the
    # u and vh blocks conserve charge regardless of the row flow direction
    row_dir = mat.indices[0].direction
    kept_by_sector: dict[Charge, list[int]] = {}
    for v, q, i in kept:
        kept_by_sector.setdefault(q, []).append(i)
    bond_sectors = tuple(
        (_signed(q, row_dir), len(pos)) for q, pos in sorted(kept_by_sector.items())
    )
    bond = GradedIndex(bond_sectors, OUT)

    u_blocks = {}
    vh_blocks = {}
    values = [(_signed(q, row_dir), v * scale) for v, q, _ in kept]
    for q, pos in kept_by_sector.items():
        key, u, s, vh = pieces[q]
        qc = Charge(*key[1])
        qbond = _signed(q, row_dir)
        u_blocks[(q, qbond)] = np.ascontiguousarray(u[:, pos])
        vh_blocks[(qbond, qc)] = np.ascontiguousarray(vh[pos, :])
    u_t = ChargeTensor((mat.indices[0], bond), u_blocks, check=False)
    vh_t = ChargeTensor((bond.dual(), mat.indices[1]), vh_blocks, check=False)

    # restore the original row/col leg structure
    u_t = unfuse(u_t, row_rec)
    vh_t = unfuse(vh_t, col_rec)
    return SvdResult(
        u=u_t,
        values=values,
        vh=vh_t,
        trunc_weight=float(trunc_weight),
        bond=bond,
        dropped_group=dropped_group,
        raw_norm=float(np.sqrt(total2)),
    )


def _equalize_orbit_counts(kept, mirror: bool, flip: bool):
    """Trim kept entries so symmetry-related sectors match in count.

    The orbit of a sector charge is generated by ket/bra swap (``mirror``)
    and/or global spin flip q -> -q (``flip``); each sector is trimmed to the
    smallest count on its orbit, dropping its lowest values.  Returns the new
    list, or None when trimming would empty the spectrum.
    """
    counts: dict[Charge, int] = {}
    for _, q, _ in kept:
        counts[q] = counts.get(q, 0) + 1
    budget: dict[Charge, int] = {}
    for q in counts:
        orbit = {q}
        frontier = [q]
        while frontier:
            x = frontier.pop()
            partners = []
            if mirror:
                partners.append(x.flipped())
            if flip:
                partners.append(-x)
            for p in partners:
                if p not in orbit:
                    orbit.add(p)
                    frontier.append(p)
        if len(orbit) > 1:
            budget[q] = min(counts.get(p, 0) for p in orbit)
    if not budget:
        return kept
    out = []
    seen: dict[Charge, int] = {}
    for entry in kept:  # already in descending-value order
        q = entry[1]
        limit = budget.get(q)
        n = seen.get(q, 0)
        if limit is not None and n >= limit:
            continue
        seen[q] = n + 1
        out.append(entry)
    return out if out else None


# -- dense matrix exponential ------------------------------------------------


def dense_expm(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Matrix exponential of a small dense generator.

    Accurate to better than 1e-12 (relative) for the bounded matrices this
    package produces; ``tol`` below the double-precision floor is rejected.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SymTensorError(f"dense_expm needs a square matrix, got shape {m.shape}")
    if m.shape[0] > 64:
        raise SymTensorError("dense_expm is limited to dimension <= 64")
    if not np.all(np.isfinite(m)):
        raise SymTensorError("non-finite entries in dense_expm input")
    if tol < 1e-13:
        raise SymTensorError("requested tolerance is below the double-precision floor")
    out = scipy.linalg.expm(np.asarray(m, dtype=np.complex128))
    if not np.all(np.isfinite(out)):
        raise SymTensorError("matrix exponential overflowed")
    return out
