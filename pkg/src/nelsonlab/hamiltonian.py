"""Hamiltonian and fluctuation-generator assembly on the truncated basis.

Operators are stored species-factorized: a sum of Kronecker terms
coeff * (psi_op x a_op), applied to the (dim_psi, dim_a) amplitude matrix
without ever materializing the flat product matrix.  This keeps the
coherent-sandwich instances (millions of states) inside desk memory; flat
sparse matrices are available through ``OperatorRep.to_sparse`` for the
dense oracles and small-dimension tests.

The interaction is assembled in momentum representation with periodic
wrap-around of q +/- k:

    H_I = lam * sum_k f0(k) [ T(k) x a(k)  +  T(k)^dagger x a^dagger(k) ],
    T(k) = sum_q psi^dagger(q+k) psi(q),

with form factor f0(k) = c_chi * (2*omega(k))**(-1/2) on cutoff modes.  The
quadratic fluctuation generator V(t) is the second-order piece of the
Weyl-conjugated Hamiltonian around the classical solution: four bilinear
families psi# a# with kernels built from u(t), plus the second quantization
of the multiplication operator c * A(t,x) on the psi species.  All builders
produce exactly hermitian compressions (adjoint pairs reuse identical
floats).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .classical import build_A
from .fock import FockBasis, QuantumState
from .lattice import ModeGrid

__all__ = [
    "CouplingConfig",
    "KronTerm",
    "OperatorRep",
    "build_H0",
    "build_HI",
    "build_H",
    "build_V",
    "FluctuationTerms",
    "smoothstep",
    "sigma_weights",
    "apply_sigma_cutoff",
    "apply_R_cutoff",
]


@dataclass(frozen=True)
class CouplingConfig:
    """Coupling constant plus the shared interaction form factor."""

    lam: float
    grid: ModeGrid

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("coupling must be nonnegative")

    @property
    def f0(self) -> np.ndarray:
        return self.grid.f0()


def _right_plan(mat: sp.spmatrix):
    """Precompute how to apply ``X @ mat.T`` to a state matrix.

    Single-ladder operators have at most one entry per column with distinct
    target rows, so the product is a pure gather; anything denser falls back
    to a sparse matmul on the transposed state.
    """
    coo = mat.tocoo()
    col_counts = np.bincount(coo.col, minlength=mat.shape[1])
    if len(coo.row) == len(set(coo.row.tolist())) and col_counts.max(initial=0) <= 1:
        return ("gather", coo.row.copy(), coo.col.copy(), coo.data.copy())
    return ("matmul", mat.tocsr())


@dataclass
class KronTerm:
    """One coeff * (psi_op x a_op) contribution; None means identity."""

    coeff: complex
    psi: sp.csr_matrix | None = None
    a: sp.csr_matrix | None = None
    psi_diag: np.ndarray | None = None
    a_diag: np.ndarray | None = None
    _a_plan: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.a is not None and self._a_plan is None:
            self._a_plan = _right_plan(self.a)

    def apply_into(self, x: np.ndarray, out: np.ndarray, scale: complex = 1.0) -> None:
        """out += scale * coeff * (psi x a) @ x, species by species."""
        c = scale * self.coeff
        if self.psi_diag is not None:
            y = self.psi_diag[:, None] * x
        elif self.psi is not None:
            y = self.psi @ x
        else:
            y = x
        if self.a_diag is not None:
            out += c * (y * self.a_diag[None, :])
        elif self.a is not None:
            kind = self._a_plan[0]
            if kind == "gather":
                _, rows, cols, vals = self._a_plan
                out[:, rows] += (c * vals)[None, :] * y[:, cols]
            else:
                out += c * np.ascontiguousarray((self._a_plan[1] @ y.T).T)
        else:
            if y is x:
                out += c * x
            else:
                out += c * y

    def adjoint(self) -> "KronTerm":
        return KronTerm(
            np.conj(self.coeff),
            None if self.psi is None else self.psi.conj().T.tocsr(),
            None if self.a is None else self.a.conj().T.tocsr(),
            None if self.psi_diag is None else np.conj(self.psi_diag),
            None if self.a_diag is None else np.conj(self.a_diag),
        )

    def to_sparse(self, shape_psi: int, shape_a: int) -> sp.csr_matrix:
        p = self.psi
        if p is None:
            p = sp.diags(self.psi_diag) if self.psi_diag is not None else sp.identity(shape_psi)
        a = self.a
        if a is None:
            a = sp.diags(self.a_diag) if self.a_diag is not None else sp.identity(shape_a)
        return (self.coeff * sp.kron(p, a)).tocsr()


class OperatorRep:
    """Linear operator on a FockBasis as a sum of Kronecker terms.

    ``sandwich`` (optional) is a positive weight matrix W over (N1, N2)
    applied on both sides, used for the smooth number cutoff sigma_nu and
    the hard projector R_nu.
    """

    def __init__(self, basis: FockBasis, terms: list[KronTerm], hermitian: bool,
                 sandwich: np.ndarray | None = None):
        self.basis = basis
        self.terms = terms
        self.hermitian = hermitian
        self.sandwich = sandwich

    @property
    def dim(self) -> int:
        return self.basis.dim

    def apply(self, amps: np.ndarray) -> np.ndarray:
        x = amps if self.sandwich is None else self.sandwich * amps
        out = np.zeros_like(x)
        for term in self.terms:
            term.apply_into(x, out)
        if self.sandwich is not None:
            out *= self.sandwich
        return out

    def apply_state(self, state: QuantumState) -> QuantumState:
        return QuantumState(self.basis, self.apply(state.amps), state.leakage)

    def matvec(self, flat: np.ndarray) -> np.ndarray:
        return self.apply(flat.reshape(self.basis.shape)).reshape(-1)

    def expectation(self, state: QuantumState) -> complex:
        return complex(np.vdot(state.amps, self.apply(state.amps)))

    def scaled(self, factor: complex) -> "OperatorRep":
        terms = [
            KronTerm(factor * t.coeff, t.psi, t.a, t.psi_diag, t.a_diag, t._a_plan)
            for t in self.terms
        ]
        return OperatorRep(self.basis, terms, self.hermitian and np.isreal(factor), self.sandwich)

    def plus(self, other: "OperatorRep") -> "OperatorRep":
        if other.basis is not self.basis:
            raise ValueError("operators live on different bases")
        if (self.sandwich is None) != (other.sandwich is None):
            raise ValueError("cannot add operators with mismatched sandwich weights")
        return OperatorRep(self.basis, self.terms + other.terms,
                           self.hermitian and other.hermitian, self.sandwich)

    def to_sparse(self, max_dim: int = 500_000) -> sp.csr_matrix:
        if self.dim > max_dim:
            raise ValueError(f"flat sparse assembly refused at dim {self.dim}")
        dp, da = self.basis.shape
        mat = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for term in self.terms:
            mat = mat + term.to_sparse(dp, da)
        if self.sandwich is not None:
            d = sp.diags(self.sandwich.reshape(-1))
            mat = (d @ mat @ d).tocsr()
        return mat

    def hermiticity_defect(self) -> float:
        m = self.to_sparse()
        d = m - m.conj().T
        return 0.0 if d.nnz == 0 else float(np.max(np.abs(d.data)))

    def dump_csv(self, path) -> None:
        """Debug dump of the flat sparse entries as (row, col, re, im)."""
        import csv

        m = self.to_sparse().tocoo()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "re", "im"])
            order = np.lexsort((m.col, m.row))
            for i in order:
                writer.writerow([int(m.row[i]), int(m.col[i]),
                                 format(m.data[i].real, ".17g"),
                                 format(m.data[i].imag, ".17g")])


# -- concrete builders --------------------------------------------------------

def _transfer_op(basis: FockBasis, k_node: int) -> sp.csr_matrix:
    """T(k) = sum_q psi^dagger(q+k) psi(q) on the psi species (wrapped)."""
    grid = basis.grid
    psi = basis.psi
    out = None
    for q_pos, q_node in enumerate(psi.mode_indices):
        target_node = grid.add_modes(int(q_node), k_node)
        q_target = int(np.where(psi.mode_indices == target_node)[0][0])
        piece = psi.ladder(q_target, "create") @ psi.ladder(q_pos, "annihilate")
        out = piece if out is None else out + piece
    return out.tocsr()


def build_H0(basis: FockBasis, grid: ModeGrid | None = None) -> OperatorRep:
    """Free Hamiltonian: diagonal kinetic + dispersion number weights."""
    grid = grid or basis.grid
    e_psi = basis.psi.energy_table(grid.kinetic[basis.psi.mode_indices])
    e_a = basis.a.energy_table(grid.omega[basis.a.mode_indices])
    terms = [
        KronTerm(1.0, psi_diag=e_psi.astype(complex)),
        KronTerm(1.0, a_diag=e_a.astype(complex)),
    ]
    return OperatorRep(basis, terms, hermitian=True)


def build_HI(basis: FockBasis, config: CouplingConfig) -> OperatorRep:
    """Interaction lam * sum_k f0(k) [T(k) x a_k + T(k)^dag x a_k^dag]."""
    grid = config.grid
    f0 = config.f0
    terms = []
    for k_pos, k_node in enumerate(basis.a.mode_indices):
        t_k = _transfer_op(basis, int(k_node))
        coeff = config.lam * f0[k_pos]
        down = KronTerm(coeff, psi=t_k, a=basis.a.ladder(k_pos, "annihilate"))
        terms.append(down)
        terms.append(down.adjoint())
    return OperatorRep(basis, terms, hermitian=True)


def build_H(basis: FockBasis, config: CouplingConfig) -> OperatorRep:
    return build_H0(basis, config.grid).plus(build_HI(basis, config))


# -- quadratic fluctuation generator ------------------------------------------

class FluctuationTerms:
    """Fixed operator family behind V(t); only scalar kernels depend on t.

    V(t) = sum_j,k f0(k) [ u_hat_j psi^dag(j+k) a_k         (+-)
                         + conj(u_hat_j) psi(j-k) a_k       (--)
                         + u_hat_j psi^dag(j-k) a^dag_k     (++)
                         + conj(u_hat_j) psi(j+k) a^dag_k ] (-+)
         + sum_kappa g_hat(kappa) T(kappa) x 1              (V0)

    with g_hat(kappa) = f0(kappa) (alpha(kappa) + conj(alpha(-kappa))), the
    momentum kernel of the multiplication operator c * A(x).  Terms sharing
    an a-side operator are grouped, so every assembled V(t) is a sum of just
    2 * m_a + 1 Kronecker terms whose psi factors are cheap sparse linear
    combinations.  The down/up groups for each k are exact adjoints
    (conjugate scalars on identical ladder matrices), so assembled
    operators are exactly hermitian.
    """

    def __init__(self, basis: FockBasis):
        self.basis = basis
        grid = basis.grid
        psi = basis.psi
        a = basis.a
        self.f0 = grid.f0()
        node_to_psi = {int(n): i for i, n in enumerate(psi.mode_indices)}

        # groups: (a_op | None, [(psi_matrix, family, j_pos, k_pos), ...])
        groups = []
        for k_pos, k_node in enumerate(a.mode_indices):
            down, up = [], []
            for j_pos, j_node in enumerate(psi.mode_indices):
                p_plus = node_to_psi[grid.add_modes(int(j_node), int(k_node))]
                p_minus = node_to_psi[grid.sub_modes(int(j_node), int(k_node))]
                down.append((psi.ladder(p_plus, "create"), "+-", j_pos, k_pos))
                down.append((psi.ladder(p_minus, "annihilate"), "--", j_pos, k_pos))
                up.append((psi.ladder(p_minus, "create"), "++", j_pos, k_pos))
                up.append((psi.ladder(p_plus, "annihilate"), "-+", j_pos, k_pos))
            groups.append((a.ladder(k_pos, "annihilate"), down))
            groups.append((a.ladder(k_pos, "create"), up))
        v0 = [(_transfer_op(basis, int(k_node)), "0", None, k_pos)
              for k_pos, k_node in enumerate(a.mode_indices)]
        groups.append((None, v0))
        self.groups = groups

    def _kernels(self, u: np.ndarray, alpha: np.ndarray):
        grid = self.basis.grid
        u_hat = grid.fft(u)[self.basis.psi.mode_indices]
        full = np.zeros(grid.n_nodes, dtype=complex)
        full[grid.chi_modes] = alpha
        g_hat = self.f0 * (full[grid.chi_modes]
                           + np.conj(full[grid.neg_index][grid.chi_modes]))
        return u_hat, g_hat

    def _member_coeff(self, family, j_pos, k_pos, u_hat, g_hat) -> complex:
        if family == "0":
            return g_hat[k_pos]
        f = self.f0[k_pos]
        uj = u_hat[j_pos]
        return f * (uj if family in ("+-", "++") else np.conj(uj))

    def freeze(self, u: np.ndarray, alpha: np.ndarray,
               extra: list | None = None) -> list[KronTerm]:
        """Assemble the grouped Kronecker terms of V at one time.

        ``extra`` optionally adds a fixed psi-side matrix per group (used to
        fold the interaction-picture H_I into the same products).
        """
        u_hat, g_hat = self._kernels(u, alpha)
        terms = []
        for idx, (a_op, members) in enumerate(self.groups):
            acc = None
            for mat, fam, j_pos, k_pos in members:
                c = self._member_coeff(fam, j_pos, k_pos, u_hat, g_hat)
                scaled = c * mat
                acc = scaled if acc is None else acc + scaled
            if extra is not None and extra[idx] is not None:
                acc = acc + extra[idx]
            terms.append(KronTerm(1.0, psi=acc.tocsr(), a=a_op))
        return terms

    def v_minus_minus_norm(self, u: np.ndarray) -> float:
        """Hilbert-Schmidt norm of the (--) kernel: ||f0||_2 ||u||_2."""
        return float(np.linalg.norm(self.f0) * np.linalg.norm(u))

    def assemble(self, u: np.ndarray, alpha: np.ndarray) -> OperatorRep:
        return OperatorRep(self.basis, self.freeze(u, alpha), hermitian=True)


def build_V(basis: FockBasis, u: np.ndarray, alpha: np.ndarray,
            terms: FluctuationTerms | None = None) -> OperatorRep:
    """Static fluctuation generator at one time, from classical fields."""
    terms = terms or FluctuationTerms(basis)
    return terms.assemble(np.asarray(u, dtype=complex), np.asarray(alpha, dtype=complex))


# -- number cutoffs ------------------------------------------------------------

def smoothstep(s) -> np.ndarray:
    """C1 cubic profile: 1 on [0,1], 0 on [2,inf), 1-3r^2+2r^3 between."""
    s = np.asarray(s, dtype=float)
    r = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - 3.0 * r**2 + 2.0 * r**3


def sigma_weights(basis: FockBasis, nu: float) -> np.ndarray:
    """sigma_1((N1+N2)/nu) as a (dim_psi, dim_a) weight matrix."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    n1, n2 = basis.sector_totals()
    return smoothstep((n1 + n2) / float(nu))


def apply_sigma_cutoff(op: OperatorRep, nu: float) -> OperatorRep:
    """Smooth total-number regularization sigma_nu O sigma_nu."""
    w = sigma_weights(op.basis, nu)
    if op.sandwich is not None:
        w = w * op.sandwich
    return OperatorRep(op.basis, op.terms, op.hermitian, sandwich=w)


def apply_R_cutoff(op: OperatorRep, nu: int) -> OperatorRep:
    """Hard per-species projector sandwich R_nu O R_nu (N1<=nu and N2<=nu)."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    n1, n2 = op.basis.sector_totals()
    mask = ((n1 <= nu) & (n2 <= nu)).astype(float)
    if op.sandwich is not None:
        mask = mask * op.sandwich
    return OperatorRep(op.basis, op.terms, op.hermitian, sandwich=mask)
