"""Periodic momentum lattice: discretization, dispersion, cutoff, Fourier transforms.

The continuum is replaced by a periodic box [0, L)^d sampled at M points per
axis (M odd, so the momentum node set is symmetric under k -> -k).  Momentum
nodes are k_n = 2*pi*n/L with integer n in [-(M-1)/2, (M-1)/2], stored in
natural FFT order.  All fields are plain l2 vectors over the nodes and the
discrete Fourier transform is unitary (symmetric 1/sqrt(M^d) normalization),
so Plancherel holds with no volume bookkeeping.

The single coupling normalization shared by the classical and quantum sides
lives here: interaction kernels carry ``c_chi = coupling_scale * M**(-d/2)``,
which absorbs the continuum (2*pi)**(-3/2) factor and the Riemann-sum volume
weights.  With that choice the classical field equations driven by
``coupling_scale * A(x)`` are exactly the mean-field limit of the lattice
Hamiltonian built in :mod:`nelsonlab.hamiltonian`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ModeGrid", "build_grid", "cutoff_mask"]

# relative slack for the |k| <= sigma comparison, so nodes exactly on the
# cutoff radius are not lost to floating point noise
_CHI_RTOL = 1e-12


@dataclass(frozen=True)
class ModeGrid:
    """Immutable spatial/momentum discretization shared by all modules.

    Attributes
    ----------
    dimension : int
        Number of axes (1, 2 or 3).
    length : float
        Box length L per axis.
    points : int
        Nodes per axis M (odd).
    mass_boson : float
        Relativistic field mass mu >= 0.
    mass_particle : float
        Nonrelativistic mass appearing in the kinetic term k^2/(2*Mp).
    sigma : float
        Cutoff radius in momentum units; chi(k) = 1 iff |k| <= sigma.
    coupling_scale : float
        Dimensionless interaction strength; the lattice constant is
        c_chi = coupling_scale / sqrt(M^d).
    exclude_zero_mode_when_massless : bool
        With mu = 0 the k = 0 node makes (2*omega)**(-1/2) infinite; either
        reject mu = 0 (default) or drop k = 0 from the cutoff set.
    """

    dimension: int
    length: float
    points: int
    mass_boson: float
    mass_particle: float
    sigma: float
    coupling_scale: float = 1.0
    exclude_zero_mode_when_massless: bool = False

    # derived tables, filled by build_grid
    k_vectors: np.ndarray = field(repr=False, default=None)
    k_index: np.ndarray = field(repr=False, default=None)
    omega: np.ndarray = field(repr=False, default=None)
    chi: np.ndarray = field(repr=False, default=None)
    x_vectors: np.ndarray = field(repr=False, default=None)
    neg_index: np.ndarray = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return self.points**self.dimension

    @property
    def c_chi(self) -> float:
        """Lattice constant attached to every interaction kernel."""
        return self.coupling_scale * self.points ** (-self.dimension / 2)

    @property
    def c_potential(self) -> float:
        """Constant multiplying A(x) in the classical Schroedinger equation.

        Equals c_chi * sqrt(M^d) = coupling_scale; kept as a named quantity so
        the classical and quantum builders visibly share one normalization.
        """
        return self.coupling_scale

    @property
    def chi_modes(self) -> np.ndarray:
        """Indices of the momentum nodes passing the cutoff."""
        return np.flatnonzero(self.chi)

    @property
    def ksq(self) -> np.ndarray:
        return np.sum(self.k_vectors**2, axis=1)

    @property
    def kinetic(self) -> np.ndarray:
        """Free dispersion of the nonrelativistic species, k^2/(2*Mp)."""
        return self.ksq / (2.0 * self.mass_particle)

    def f0(self) -> np.ndarray:
        """Interaction form factor c_chi*(2*omega)**(-1/2) on chi-modes."""
        om = self.omega[self.chi_modes]
        return self.c_chi / np.sqrt(2.0 * om)

    # -- unitary Fourier transform ------------------------------------------

    def _cube(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f).reshape((self.points,) * self.dimension)

    def fft(self, f: np.ndarray) -> np.ndarray:
        """Position field -> momentum field, unitary normalization."""
        if f.size != self.n_nodes:
            raise ValueError(f"field length {f.size} != grid size {self.n_nodes}")
        out = np.fft.fftn(self._cube(f)) / np.sqrt(self.n_nodes)
        return out.reshape(-1)

    def ifft(self, g: np.ndarray) -> np.ndarray:
        """Momentum field -> position field, inverse of :meth:`fft`."""
        if g.size != self.n_nodes:
            raise ValueError(f"field length {g.size} != grid size {self.n_nodes}")
        out = np.fft.ifftn(self._cube(g)) * np.sqrt(self.n_nodes)
        return out.reshape(-1)

    def add_modes(self, i: int, j: int) -> int:
        """Index of the (periodically wrapped) momentum sum k_i + k_j."""
        n = (self.k_index[i] + self.k_index[j]) % self.points
        return int(np.ravel_multi_index(tuple(n), (self.points,) * self.dimension))

    def sub_modes(self, i: int, j: int) -> int:
        """Index of the wrapped momentum difference k_i - k_j."""
        n = (self.k_index[i] - self.k_index[j]) % self.points
        return int(np.ravel_multi_index(tuple(n), (self.points,) * self.dimension))


def build_grid(
    dimension: int,
    length: float,
    points: int,
    mass_boson: float,
    mass_particle: float,
    sigma: float,
    coupling_scale: float = 1.0,
    exclude_zero_mode_when_massless: bool = False,
) -> ModeGrid:
    """Construct a :class:`ModeGrid` with all derived tables populated.

    Raises
    ------
    ValueError
        For even or too-small M (breaks the k -> -k symmetry), non-positive
        L or particle mass, negative mu or sigma, and for mu = 0 when the
        zero mode is kept in the cutoff set.
    """
    if dimension not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    if points % 2 == 0 or points < 3:
        raise ValueError("points per axis must be odd and >= 3")
    if length <= 0 or mass_particle <= 0:
        raise ValueError("box length and particle mass must be positive")
    if mass_boson < 0 or sigma < 0:
        raise ValueError("boson mass and cutoff radius must be nonnegative")

    m = points
    # integer momentum labels in natural FFT order: 0, 1, ..., -1
    n_axis = np.rint(np.fft.fftfreq(m, d=1.0 / m)).astype(np.int64)
    grids = np.meshgrid(*([n_axis] * dimension), indexing="ij")
    k_index = np.stack([g.reshape(-1) for g in grids], axis=1)
    k_vectors = (2.0 * np.pi / length) * k_index.astype(float)

    kabs = np.sqrt(np.sum(k_vectors**2, axis=1))
    omega = np.sqrt(kabs**2 + mass_boson**2)
    chi = kabs <= sigma * (1.0 + _CHI_RTOL) + _CHI_RTOL

    if mass_boson == 0.0 and sigma >= 0.0:
        zero = kabs == 0.0
        if np.any(chi & zero):
            if not exclude_zero_mode_when_massless:
                raise ValueError(
                    "mu = 0 with k = 0 inside the cutoff makes the form factor "
                    "singular; set exclude_zero_mode_when_massless=True or use mu > 0"
                )
            chi = chi & ~zero

    x_axis = np.arange(m) * (length / m)
    xg = np.meshgrid(*([x_axis] * dimension), indexing="ij")
    x_vectors = np.stack([g.reshape(-1) for g in xg], axis=1)

    neg = (-k_index) % m
    shape = (m,) * dimension
    neg_index = np.ravel_multi_index(tuple(neg.T), shape)

    return ModeGrid(
        dimension=dimension,
        length=length,
        points=points,
        mass_boson=mass_boson,
        mass_particle=mass_particle,
        sigma=sigma,
        coupling_scale=coupling_scale,
        exclude_zero_mode_when_massless=exclude_zero_mode_when_massless,
        k_vectors=k_vectors,
        k_index=k_index,
        omega=omega,
        chi=chi,
        x_vectors=x_vectors,
        neg_index=neg_index,
    )


def cutoff_mask(grid: ModeGrid) -> np.ndarray:
    """Boolean chi table over momentum nodes (copy; the grid stays frozen)."""
    return grid.chi.copy()
