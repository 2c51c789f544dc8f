"""Truncated two-species occupation basis and ladder operator algebra.

The Hilbert space is the tensor product of two truncated bosonic Fock
spaces: the nonrelativistic species lives on all lattice momentum modes
with at most ``cap_psi`` total quanta, the relativistic species on the
cutoff modes with at most ``cap_a`` quanta.  States are stored as complex
matrices of shape (dim_psi, dim_a); flat indexing is row-major, matching
``scipy.sparse.kron(op_psi, op_a)``.

Truncation is hard compression: creating past a cap drops that component
and the discarded squared norm is reported as leakage, so every compressed
operator stays exactly hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

from .lattice import ModeGrid

__all__ = [
    "SpeciesBasis",
    "FockBasis",
    "QuantumState",
    "build_basis",
    "apply_ladder",
    "commutator_check",
    "sector_project",
    "one_particle_project",
    "number_norm",
]


def _enumerate_occupations(n_modes: int, cap: int) -> np.ndarray:
    """All occupation tuples with total <= cap, sorted by (total, lex).

    Sorting by total first makes every fixed-total sector a contiguous
    slice, so sector projection never needs a scan.
    """
    occs = []

    def rec(prefix, remaining, slots):
        if slots == 0:
            occs.append(tuple(prefix))
            return
        for n in range(remaining + 1):
            rec(prefix + [n], remaining - n, slots - 1)

    for total in range(cap + 1):
        block = []

        def rec_total(prefix, remaining, slots):
            if slots == 1:
                block.append(tuple(prefix) + (remaining,))
                return
            for n in range(remaining + 1):
                rec_total(prefix + [n], remaining - n, slots - 1)

        rec_total([], total, n_modes)
        occs.extend(sorted(block))
    return np.array(occs, dtype=np.int64)


@dataclass
class SpeciesBasis:
    """Occupation basis for one species over a fixed mode list."""

    mode_indices: np.ndarray      # grid node index per mode
    cap: int
    occupations: np.ndarray       # (dim, n_modes) int
    totals: np.ndarray            # (dim,) int
    index: dict                   # occupation tuple -> row

    _ladders: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.occupations.shape[0]

    @property
    def n_modes(self) -> int:
        return self.occupations.shape[1]

    def sector_slice(self, total: int) -> slice:
        start = int(np.searchsorted(self.totals, total, side="left"))
        stop = int(np.searchsorted(self.totals, total, side="right"))
        return slice(start, stop)

    def rank(self, occupation) -> int:
        return self.index[tuple(int(n) for n in occupation)]

    def ladder(self, mode: int, kind: str) -> sp.csr_matrix:
        """Sparse annihilation/creation matrix for one mode (cached).

        ``annihilate`` carries sqrt(n); ``create`` carries sqrt(n+1) and is
        the compression P a^dagger P: transitions past the cap are absent.
        """
        if kind not in ("create", "annihilate"):
            raise ValueError(f"unknown ladder kind {kind!r}")
        if not 0 <= mode < self.n_modes:
            raise ValueError(f"mode {mode} out of range for {self.n_modes} modes")
        key = (mode, kind)
        if key in self._ladders:
            return self._ladders[key]
        rows, cols, vals = [], [], []
        occs = self.occupations
        for col in range(self.dim):
            n = occs[col, mode]
            if kind == "annihilate":
                if n == 0:
                    continue
                target = occs[col].copy()
                target[mode] -= 1
                rows.append(self.index[tuple(target)])
                cols.append(col)
                vals.append(np.sqrt(float(n)))
            else:
                if self.totals[col] == self.cap:
                    continue  # compressed away: cap leakage
                target = occs[col].copy()
                target[mode] += 1
                rows.append(self.index[tuple(target)])
                cols.append(col)
                vals.append(np.sqrt(float(n + 1)))
        mat = sp.csr_matrix(
            (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
            shape=(self.dim, self.dim),
            dtype=complex,
        )
        self._ladders[key] = mat
        return mat

    def energy_table(self, per_mode: np.ndarray) -> np.ndarray:
        """Diagonal of dGamma(per_mode): dot(occupation, per_mode) per row."""
        return self.occupations @ np.asarray(per_mode, dtype=float)


def _build_species(mode_indices: np.ndarray, cap: int) -> SpeciesBasis:
    if cap < 0:
        raise ValueError("cap must be nonnegative")
    occs = _enumerate_occupations(len(mode_indices), cap)
    totals = occs.sum(axis=1)
    index = {tuple(row): i for i, row in enumerate(occs.tolist())}
    expected = comb(cap + len(mode_indices), len(mode_indices))
    assert occs.shape[0] == expected
    return SpeciesBasis(np.asarray(mode_indices), cap, occs, totals, index)


@dataclass
class FockBasis:
    """Product basis (psi occupations) x (a occupations) with caps."""

    grid: ModeGrid
    psi: SpeciesBasis
    a: SpeciesBasis

    @property
    def dim(self) -> int:
        return self.psi.dim * self.a.dim

    @property
    def shape(self) -> tuple[int, int]:
        return (self.psi.dim, self.a.dim)

    def flat_rank(self, psi_occupation, a_occupation) -> int:
        return self.psi.rank(psi_occupation) * self.a.dim + self.a.rank(a_occupation)

    def flat_unrank(self, idx: int) -> tuple[tuple, tuple]:
        i, j = divmod(idx, self.a.dim)
        return tuple(self.psi.occupations[i]), tuple(self.a.occupations[j])

    def sector_totals(self) -> tuple[np.ndarray, np.ndarray]:
        """(N1, N2) totals as broadcastable (dim_psi, 1) and (1, dim_a)."""
        return self.psi.totals[:, None], self.a.totals[None, :]

    def vacuum_index(self) -> tuple[int, int]:
        return self.psi.rank((0,) * self.psi.n_modes), self.a.rank((0,) * self.a.n_modes)


def build_basis(grid: ModeGrid, cap_psi: int, cap_a: int) -> FockBasis:
    """Enumerate the truncated basis: psi on all modes, a on chi-modes."""
    psi = _build_species(np.arange(grid.n_nodes), cap_psi)
    a = _build_species(grid.chi_modes, cap_a)
    return FockBasis(grid, psi, a)


@dataclass
class QuantumState:
    """Complex amplitudes on a FockBasis plus accumulated truncation leakage."""

    basis: FockBasis
    amps: np.ndarray            # (dim_psi, dim_a) complex
    leakage: float = 0.0

    @classmethod
    def zero(cls, basis: FockBasis) -> "QuantumState":
        return cls(basis, np.zeros(basis.shape, dtype=complex))

    @classmethod
    def vacuum(cls, basis: FockBasis) -> "QuantumState":
        state = cls.zero(basis)
        state.amps[basis.vacuum_index()] = 1.0
        return state

    def copy(self) -> "QuantumState":
        return QuantumState(self.basis, self.amps.copy(), self.leakage)

    @property
    def flat(self) -> np.ndarray:
        return self.amps.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def inner(self, other: "QuantumState") -> complex:
        return complex(np.vdot(self.amps, other.amps))

    def normalized(self) -> "QuantumState":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return QuantumState(self.basis, self.amps / n, self.leakage)

    def sector_weights(self) -> dict[tuple[int, int], float]:
        """Squared norm per (N1, N2) sector."""
        out = {}
        for p in range(self.basis.psi.cap + 1):
            sp_ = self.basis.psi.sector_slice(p)
            if sp_.start == sp_.stop:
                continue
            for n in range(self.basis.a.cap + 1):
                sa = self.basis.a.sector_slice(n)
                w = float(np.linalg.norm(self.amps[sp_, sa]) ** 2)
                if w > 0.0:
                    out[(p, n)] = w
        return out


def apply_ladder(species: str, kind: str, mode: int, state: QuantumState) -> QuantumState:
    """Apply one creation/annihilation operator; tracks cap leakage.

    ``species`` is "psi" or "a"; ``mode`` indexes that species' mode list.
    Creation on components at the species cap is compressed to zero and the
    discarded squared norm is added to the output's ``leakage``.
    """
    basis = state.basis
    if species == "psi":
        sb = basis.psi
    elif species == "a":
        sb = basis.a
    else:
        raise ValueError(f"unknown species {species!r}")
    mat = sb.ladder(mode, kind)

    leak = state.leakage
    if kind == "create":
        at_cap = sb.totals == sb.cap
        if species == "psi":
            cut = state.amps[at_cap, :]
            occ = sb.occupations[at_cap, mode]
        else:
            cut = state.amps[:, at_cap].T
            occ = sb.occupations[at_cap, mode]
        if cut.size:
            leak += float(np.sum((occ[:, None] + 1.0) * np.abs(cut) ** 2))

    if species == "psi":
        out = mat @ state.amps
    else:
        # (1 x B) acting on the state matrix S is S @ B.T == (B @ S.T).T
        out = np.ascontiguousarray((mat @ state.amps.T).T)
    return QuantumState(basis, out, leak)


def commutator_check(species: str, i: int, j: int, state: QuantumState) -> float:
    """|| ([a_i, a_j^dagger] - delta_ij) state ||, exact CCR diagnostic.

    Vanishes (to roundoff) whenever the state has species total <= cap - 1;
    at the cap the residual equals the boundary leakage and is returned, not
    asserted.
    """
    created = apply_ladder(species, "create", j, state)
    term1 = apply_ladder(species, "annihilate", i, created)
    annihilated = apply_ladder(species, "annihilate", i, state)
    term2 = apply_ladder(species, "create", j, annihilated)
    res = term1.amps - term2.amps
    if i == j:
        res = res - state.amps
    return float(np.linalg.norm(res))


def sector_project(state: QuantumState, p: int, n: int) -> QuantumState:
    """Zero all amplitudes outside the (N1, N2) = (p, n) sector."""
    out = QuantumState.zero(state.basis)
    sl_p = state.basis.psi.sector_slice(p)
    sl_n = state.basis.a.sector_slice(n)
    out.amps[sl_p, sl_n] = state.amps[sl_p, sl_n]
    return out


def one_particle_project(state: QuantumState) -> QuantumState:
    """Projector onto the (0,1) + (1,0) sectors (single total quantum)."""
    out = QuantumState.zero(state.basis)
    for p, n in ((0, 1), (1, 0)):
        sl_p = state.basis.psi.sector_slice(p)
        sl_n = state.basis.a.sector_slice(n)
        out.amps[sl_p, sl_n] = state.amps[sl_p, sl_n]
    return out


def number_norm(state: QuantumState, delta: float) -> float:
    """Number-weighted norm ||(N+1)**(delta/2) state||.

    Computed as sqrt(sum (p + n + 1)**delta |amplitude|^2) over sectors.
    """
    n1, n2 = state.basis.sector_totals()
    weights = (n1 + n2 + 1.0) ** float(delta)
    return float(np.sqrt(np.sum(weights * np.abs(state.amps) ** 2)))
