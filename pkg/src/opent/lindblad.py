"""Two-site Liouvillian of the exchange-coupled, exchange-dissipated chain.

The model couples neighboring spin-1/2 sites coherently through the exchange
operator P = 2 S_i.S_{i+1} + 1/2 (the swap) with strength J, and dissipatively
through the jump operator L = P with strength gamma.  Density matrices are
vectorized row-of-ket (x) column-of-bra, so left multiplication by A is
A (x) I; with P real, symmetric and unitary the two-site generator reduces to

    L# = -i J (P_k - P_b) + gamma (P_k P_b - 1)

where P_k swaps the two ket labels and P_b the two bra labels of the
vectorized pair.  The single-site operator basis is sqrt(2) |k><b| with
charges (qk, qb) = (2 m_k, 2 m_b); in that basis the generator is a signed
combination of permutation matrices and conserves (qk, qb) per superket.

Time stepping uses the fourth-order Trotter splitting
U(dt1) U(dt2) U(dt3) U(dt2) U(dt1) with dt1 = dt2 = dt/(4 - 4^(1/3)),
dt3 = dt - 2 dt1 - 2 dt2 and U(s) = exp(L_odd s/2) exp(L_even s) exp(L_odd s/2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .symtensor import IN, Charge, ChargeTensor, GradedIndex, dense_expm

# single-site operator basis sqrt(2)|k><b|, ordered like the graded index
# sectors (ascending charge): down-down, down-up, up-down, up-up
SITE_LABELS = ((-1, -1), (-1, 1), (1, -1), (1, 1))

PHYS = GradedIndex(tuple((Charge(*kb), 1) for kb in SITE_LABELS), IN)

# trivially graded variant: one zero-charge sector of dimension 4, used for
# states (like the infinite-temperature one) that are not charge-homogeneous
PHYS_TRIVIAL = GradedIndex(((Charge(0, 0), 4),), IN)

# identity superket components in the site basis (I = (s_dd + s_uu)/sqrt(2))
IDENTITY_SUPERKET = np.array([1 / np.sqrt(2), 0.0, 0.0, 1 / np.sqrt(2)], dtype=np.complex128)


@dataclass(frozen=True)
class ModelParams:
    """Coupling J (sets the time unit 1/J), dissipation gamma, time step dt."""

    J: float
    gamma: float
    dt: float

    def __post_init__(self):
        if not self.J > 0:
            raise ValueError(f"J must be positive, got {self.J}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def _pair_permutation(swap_ket: bool, swap_bra: bool) -> np.ndarray:
    """16x16 permutation acting on the two-site superket basis."""
    mat = np.zeros((16, 16))
    for i1, (k1, b1) in enumerate(SITE_LABELS):
        for i2, (k2, b2) in enumerate(SITE_LABELS):
            kk1, kk2 = (k2, k1) if swap_ket else (k1, k2)
            bb1, bb2 = (b2, b1) if swap_bra else (b1, b2)
            j1 = SITE_LABELS.index((kk1, bb1))
            j2 = SITE_LABELS.index((kk2, bb2))
            mat[4 * i1 + i2, 4 * j1 + j2] = 1.0
    return mat


P_KET = _pair_permutation(True, False)
P_BRA = _pair_permutation(False, True)
P_BOTH = _pair_permutation(True, True)


def exchange_superop(params: ModelParams) -> np.ndarray:
    """The 16x16 two-site generator -iJ(P_k - P_b) + gamma (P_k P_b - 1)."""
    lam = -1j * params.J * (P_KET - P_BRA) + params.gamma * (P_BOTH - np.eye(16))
    return lam.astype(np.complex128)


def trotter_schedule(dt: float) -> list[tuple[str, float]]:
    """Flattened (parity, tau) gate sequence of one fourth-order step.

    Adjacent odd half-steps of consecutive substeps are merged; the tau sums
    per parity each equal dt.  The middle substep is negative by construction.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    d1 = dt / (4.0 - 4.0 ** (1.0 / 3.0))
    d3 = dt - 4.0 * d1
    subs = [d1, d1, d3, d1, d1]
    seq: list[tuple[str, float]] = []
    for tau in subs:
        for parity, s in (("odd", tau / 2.0), ("even", tau), ("odd", tau / 2.0)):
            if seq and seq[-1][0] == parity:
                seq[-1] = (parity, seq[-1][1] + s)
            else:
                seq.append((parity, s))
    return seq


class GateSet:
    """Cached Trotter gates of one model, graded to match a physical index.

    Each gate is exp(generator * tau) reshaped to a 4-leg tensor
    [s1_out, s2_out, s1_in, s2_in] whose in-legs contract with the state's
    physical legs.
    """

    def __init__(self, params: ModelParams, phys: GradedIndex = PHYS):
        self.params = params
        self.phys = phys
        self.generator = exchange_superop(params)
        self.schedule = trotter_schedule(params.dt)
        self._cache: dict[float, ChargeTensor] = {}
        # stationarity of the identity superket, both sides (trace preservation)
        iota2 = np.kron(IDENTITY_SUPERKET, IDENTITY_SUPERKET)
        if np.max(np.abs(self.generator @ iota2)) > 1e-13:
            raise AssertionError("generator does not annihilate the identity superket")
        if np.max(np.abs(iota2 @ self.generator)) > 1e-13:
            raise AssertionError("generator is not trace preserving")

    def gate(self, tau: float) -> ChargeTensor:
        """4-leg gate tensor for one tau (may be negative per the schedule)."""
        if not np.isfinite(tau):
            raise ValueError(f"tau must be finite, got {tau}")
        cached = self._cache.get(tau)
        if cached is not None:
            return cached
        g = dense_expm(self.generator * tau)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("gate exponential produced non-finite entries")
        # row index is (s1_out, s2_out), column index (s1_in, s2_in)
        arr = g.reshape(4, 4, 4, 4)
        indices = (self.phys, self.phys, self.phys.dual(), self.phys.dual())
        tensor = ChargeTensor.from_dense(arr, indices, leak_tol=1e-11)
        self._cache[tau] = tensor
        return tensor
