"""Field averages, normal-ordered transition amplitudes and rate fits.

Quantum averages are contracted against elementary tensors of mode-space
test vectors: the creation string's adjoint and the annihilation string are
both applied as annihilation strings to the evolved state, so no cap is
ever crossed and the fixed-particle selection rules (q = r) hold as exact
structural zeros.  Classical predictions contract the same test vectors
against the solution of the classical system, with a trapezoid average over
the phase-rotated family for the two-sided product states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classical import ThetaFamily, Trajectory
from .fock import QuantumState

__all__ = [
    "NormalOrderSpec",
    "ExperimentResult",
    "field_average",
    "normal_ordered_average",
    "classical_prediction",
    "classical_field_tensor",
    "rate_fit",
]


@dataclass(frozen=True)
class NormalOrderSpec:
    """Exponents and elementary-tensor test vectors for one amplitude.

    ``g_create_psi`` etc. hold one normalized mode-space vector per operator
    factor; the exponents are their counts (q, r, h, l) with q+r+h+l >= 1.
    """

    g_create_psi: tuple = ()
    g_annihilate_psi: tuple = ()
    g_create_a: tuple = ()
    g_annihilate_a: tuple = ()

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("need at least one operator factor (delta >= 1)")
        for group in (self.g_create_psi, self.g_annihilate_psi,
                      self.g_create_a, self.g_annihilate_a):
            for vec in group:
                n = np.linalg.norm(vec)
                if abs(n - 1.0) > 1e-10:
                    raise ValueError("tensor factors must be normalized")

    @property
    def q(self) -> int:
        return len(self.g_create_psi)

    @property
    def r(self) -> int:
        return len(self.g_annihilate_psi)

    @property
    def h(self) -> int:
        return len(self.g_create_a)

    @property
    def l(self) -> int:
        return len(self.g_annihilate_a)

    @property
    def delta(self) -> int:
        return self.q + self.r + self.h + self.l


def _annihilate(state: QuantumState, species: str, coeffs: np.ndarray) -> QuantumState:
    """sum_m coeffs[m] (annihilation on mode m) applied to the state."""
    basis = state.basis
    sb = basis.psi if species == "psi" else basis.a
    out = np.zeros_like(state.amps)
    for m, c in enumerate(coeffs):
        if c == 0.0:
            continue
        mat = sb.ladder(m, "annihilate")
        if species == "psi":
            out += c * (mat @ state.amps)
        else:
            out += c * np.ascontiguousarray((mat @ state.amps.T).T)
    return QuantumState(basis, out)


def field_average(state: QuantumState, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Rescaled one-point functions <lam psi_q> and <lam a_k> over modes."""
    basis = state.basis
    psi_avg = np.empty(basis.psi.n_modes, dtype=complex)
    for m in range(basis.psi.n_modes):
        psi_avg[m] = np.vdot(state.amps, basis.psi.ladder(m, "annihilate") @ state.amps)
    a_avg = np.empty(basis.a.n_modes, dtype=complex)
    for m in range(basis.a.n_modes):
        mat = basis.a.ladder(m, "annihilate")
        a_avg[m] = np.vdot(state.amps, np.ascontiguousarray((mat @ state.amps.T).T))
    return lam * psi_avg, lam * a_avg


def normal_ordered_average(state: QuantumState, spec: NormalOrderSpec, lam: float) -> complex:
    """lam^delta < state | prod psi^dag(g) prod psi(conj g) ... | state >.

    The creation factors enter linearly in their vectors (continuum
    convention psi^dag(g) = sum g_q psi^dag_q after contraction with conj(g)
    of the kernel), so the bra side applies annihilations smeared with g and
    the ket side annihilations smeared with conj(g).
    """
    bra = state
    for g in spec.g_create_psi:
        bra = _annihilate(bra, "psi", np.asarray(g, dtype=complex))
    for g in spec.g_create_a:
        bra = _annihilate(bra, "a", np.asarray(g, dtype=complex))
    ket = state
    for g in spec.g_annihilate_psi:
        ket = _annihilate(ket, "psi", np.conj(np.asarray(g, dtype=complex)))
    for g in spec.g_annihilate_a:
        ket = _annihilate(ket, "a", np.conj(np.asarray(g, dtype=complex)))
    return lam**spec.delta * bra.inner(ket)


def classical_field_tensor(spec: NormalOrderSpec, u_hat: np.ndarray,
                           alpha: np.ndarray) -> complex:
    """Contraction of the classical tensor at one time against the test vectors."""
    val = 1.0 + 0.0j
    for g in spec.g_create_psi:
        val *= np.vdot(g, np.conj(u_hat))
    for g in spec.g_annihilate_psi:
        val *= np.vdot(g, u_hat)
    for g in spec.g_create_a:
        val *= np.vdot(g, np.conj(alpha))
    for g in spec.g_annihilate_a:
        val *= np.vdot(g, alpha)
    return complex(val)


def classical_prediction(spec: NormalOrderSpec, source, t: float,
                         psi_mode_indices: np.ndarray | None = None) -> complex:
    """Limit value of the normal-ordered average from classical solutions.

    ``source`` is a single :class:`Trajectory` (coherent/mixed families) or
    a :class:`ThetaFamily` (two-sided product family), in which case the
    member contractions are trapezoid-averaged over theta.
    """
    def contract(traj: Trajectory) -> complex:
        grid = traj.grid
        u_hat = grid.fft(traj.u_at(t))
        if psi_mode_indices is not None:
            u_hat = u_hat[psi_mode_indices]
        return classical_field_tensor(spec, u_hat, traj.alpha_at(t))

    if isinstance(source, ThetaFamily):
        vals = np.array([contract(member) for member in source.members])
        return source.average(vals)
    return contract(source)


def rate_fit(lams, errors) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(lambda).

    Returns (slope, rms residual of the fit).  Requires >= 3 points and
    strictly positive errors.
    """
    lams = np.asarray(lams, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(lams) < 3:
        raise ValueError("rate fit needs at least 3 lambda points")
    if np.any(errors <= 0.0):
        raise ValueError("rate fit needs strictly positive errors")
    x = np.log(lams)
    y = np.log(errors)
    coeffs, res = np.polyfit(x, y, 1, full=False), None
    fit = np.polyval(coeffs, x)
    res = float(np.sqrt(np.mean((y - fit) ** 2)))
    return float(coeffs[0]), res


@dataclass
class ExperimentResult:
    """Lambda-sweep record bundle serialized by the harness."""

    name: str
    lams: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    slope: float | None = None
    slope_residual: float | None = None
    rows: list = field(default_factory=list)          # CSV payload
    assertions: list = field(default_factory=list)    # dicts: name/value/bound/passed
    diagnostics: dict = field(default_factory=dict)
    runtime: float = 0.0

    def check(self, name: str, value, bound, ok: bool) -> None:
        self.assertions.append(
            {"name": name, "value": value, "bound": bound, "passed": bool(ok)}
        )

    def check_le(self, name: str, value: float, bound: float) -> None:
        self.check(name, float(value), bound, float(value) <= bound)

    def check_range(self, name: str, value: float, lo: float, hi: float) -> None:
        self.check(name, float(value), [lo, hi], lo <= float(value) <= hi)

    def check_true(self, name: str, ok: bool, value=None) -> None:
        self.check(name, value, None, ok)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)

    def fit_rates(self) -> None:
        if len(self.lams) >= 3 and all(e > 0 for e in self.errors):
            self.slope, self.slope_residual = rate_fit(self.lams, self.errors)
