"""Classical Schroedinger / Klein-Gordon system on the mode grid.

State is the pair (u, alpha): u a complex field on position nodes, alpha a
complex amplitude per cutoff momentum node.  The evolution solved here is

    i du/dt     = k^2/(2*Mp) u + c * A(x) u
    i dalpha/dt = omega alpha + c * (2*omega)**(-1/2) F(|u|^2)

with c = grid.c_potential and A built in momentum space as

    A_hat(k) = (2*omega(k))**(-1/2) * (alpha(k) + conj(alpha(-k))) * chi(k),

which forces A to be exactly real.  Three independent integrators are
provided: a Strang-split stepper (production), Picard iteration on the
Duhamel integral form (oracle for short horizons), and an adaptive ODE
oracle built on scipy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .lattice import ModeGrid

__all__ = [
    "ClassicalState",
    "Trajectory",
    "ThetaFamily",
    "SolverError",
    "build_A",
    "step_strang",
    "solve",
    "picard_solve",
    "ode_oracle",
    "solve_theta_family",
    "export_trajectory_csv",
]


class SolverError(RuntimeError):
    """Raised on NaN/overflow or charge-drift instability."""


@dataclass
class ClassicalState:
    """Snapshot (u, alpha) at time t.

    ``u`` lives on all position nodes, ``alpha`` only on chi-passing momentum
    nodes (in the order of ``grid.chi_modes``).
    """

    u: np.ndarray
    alpha: np.ndarray
    t: float

    def copy(self) -> "ClassicalState":
        return ClassicalState(self.u.copy(), self.alpha.copy(), self.t)

    @property
    def charge(self) -> float:
        return float(np.linalg.norm(self.u))


def _alpha_full(alpha: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Scatter chi-mode amplitudes onto the full momentum grid."""
    full = np.zeros(grid.n_nodes, dtype=complex)
    full[grid.chi_modes] = alpha
    return full


def build_A(alpha: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Real position-space field A from the cutoff momentum amplitudes.

    A = F^-1[(2*omega)**(-1/2) (alpha(k) + conj(alpha(-k))) chi(k)].  The
    chi-mode set is closed under k -> -k (M odd), so the spectrum is
    conjugate-even and A is real to roundoff; the imaginary remainder is
    discarded after an internal check.
    """
    if alpha.shape != (len(grid.chi_modes),):
        raise ValueError("alpha must be supported exactly on the chi modes")
    full = _alpha_full(alpha, grid)
    a_hat = (full + np.conj(full[grid.neg_index])) / np.sqrt(2.0 * grid.omega)
    a_hat[~grid.chi] = 0.0
    a = grid.ifft(a_hat)
    imag_max = float(np.max(np.abs(a.imag))) if a.size else 0.0
    if imag_max > 1e-10 * max(1.0, float(np.max(np.abs(a.real)))):
        raise SolverError(f"A acquired an imaginary part of size {imag_max:.3e}")
    return a.real


def _source(u: np.ndarray, grid: ModeGrid) -> np.ndarray:
    """Driving term c*(2*omega)**(-1/2) F(|u|^2) restricted to chi-modes."""
    rho_hat = grid.fft(np.abs(u) ** 2)
    modes = grid.chi_modes
    return grid.c_potential * rho_hat[modes] / np.sqrt(2.0 * grid.omega[modes])


def step_strang(state: ClassicalState, dt: float, grid: ModeGrid) -> ClassicalState:
    """One Strang step: half kinetic, full interaction, half kinetic.

    The interaction substep is exactly solvable: A is invariant during it
    (the source spectrum is conjugate-even, so alpha(k) + conj(alpha(-k))
    does not move), and |u| is pointwise invariant under the pure phase
    rotation, so the alpha source is constant.  Both species therefore
    evolve by closed-form flows and the step is exactly norm-preserving
    in u.
    """
    if dt == 0.0:
        return state.copy()
    modes = grid.chi_modes
    kin_half = np.exp(-1j * grid.kinetic * (dt / 2.0))
    om_half = np.exp(-1j * grid.omega[modes] * (dt / 2.0))

    u = grid.ifft(kin_half * grid.fft(state.u))
    alpha = om_half * state.alpha

    a_field = build_A(alpha, grid)
    u = u * np.exp(-1j * grid.c_potential * a_field * dt)
    alpha = alpha - 1j * dt * _source(u, grid)

    u = grid.ifft(kin_half * grid.fft(u))
    alpha = om_half * alpha

    if not (np.all(np.isfinite(u.view(float))) and np.all(np.isfinite(alpha.view(float)))):
        raise SolverError(f"non-finite field values after step at t={state.t}")
    return ClassicalState(u, alpha, state.t + dt)


@dataclass
class Trajectory:
    """Uniformly sampled classical trajectory with spline evaluation."""

    grid: ModeGrid
    times: np.ndarray
    us: np.ndarray        # (n_t, n_nodes) complex
    alphas: np.ndarray    # (n_t, n_chi) complex

    def __post_init__(self):
        self._u_spline = None
        self._alpha_spline = None

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def _check(self, t: float):
        lo, hi = sorted((self.t0, self.t1))
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise ValueError(f"time {t} outside stored trajectory [{lo}, {hi}]")

    def _order(self):
        # CubicSpline needs increasing abscissae; backward runs store
        # decreasing times
        if self.times[-1] >= self.times[0]:
            return self.times, self.us, self.alphas
        return self.times[::-1], self.us[::-1], self.alphas[::-1]

    def u_at(self, t: float) -> np.ndarray:
        self._check(t)
        if len(self.times) == 1:
            return self.us[0].copy()
        if self._u_spline is None:
            ts, us, _ = self._order()
            self._u_spline = CubicSpline(ts, us, axis=0)
        return self._u_spline(t)

    def alpha_at(self, t: float) -> np.ndarray:
        self._check(t)
        if len(self.times) == 1:
            return self.alphas[0].copy()
        if self._alpha_spline is None:
            ts, _, als = self._order()
            self._alpha_spline = CubicSpline(ts, als, axis=0)
        return self._alpha_spline(t)

    def state_at(self, t: float) -> ClassicalState:
        return ClassicalState(self.u_at(t), self.alpha_at(t), t)

    def A_at(self, t: float) -> np.ndarray:
        return build_A(self.alpha_at(t), self.grid)

    def interaction_energy_at(self, t: float) -> float:
        """c * sum_x A(t,x) |u(t,x)|^2, the integrand of the W-phase."""
        u = self.u_at(t)
        return float(self.grid.c_potential * np.sum(self.A_at(t) * np.abs(u) ** 2))

    @property
    def charge_drift(self) -> float:
        charges = np.linalg.norm(self.us, axis=1)
        ref = charges[0]
        if ref == 0.0:
            return float(np.max(np.abs(charges)))
        return float(np.max(np.abs(charges - ref)) / ref)


def solve(
    u0: np.ndarray,
    alpha0: np.ndarray,
    T: float,
    dt: float,
    grid: ModeGrid,
    drift_threshold: float = 1e-6,
) -> Trajectory:
    """Strang trajectory on [0, T] sampled every dt.

    dt must divide T (to 1e-9 relative); T < 0 integrates backwards with
    step -|dt|.  Raises :class:`SolverError` if the relative charge drift
    exceeds ``drift_threshold``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T == 0.0:
        state = ClassicalState(np.asarray(u0, dtype=complex), np.asarray(alpha0, dtype=complex), 0.0)
        return Trajectory(grid, np.zeros(1), state.u[None, :].copy(), state.alpha[None, :].copy())
    n = int(round(abs(T) / dt))
    if abs(n * dt - abs(T)) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"dt={dt} does not divide T={T}")
    step = dt if T > 0 else -dt

    state = ClassicalState(np.asarray(u0, dtype=complex), np.asarray(alpha0, dtype=complex), 0.0)
    times = np.empty(n + 1)
    us = np.empty((n + 1, grid.n_nodes), dtype=complex)
    alphas = np.empty((n + 1, len(grid.chi_modes)), dtype=complex)
    times[0], us[0], alphas[0] = 0.0, state.u, state.alpha
    for i in range(n):
        state = step_strang(state, step, grid)
        times[i + 1], us[i + 1], alphas[i + 1] = state.t, state.u, state.alpha
    traj = Trajectory(grid, times, us, alphas)
    if traj.charge_drift > drift_threshold:
        raise SolverError(f"charge drift {traj.charge_drift:.3e} exceeds {drift_threshold:.1e}")
    return traj


# -- Picard iteration oracle -------------------------------------------------

def picard_solve(
    u0: np.ndarray,
    alpha0: np.ndarray,
    T: float,
    grid: ModeGrid,
    tol: float = 1e-10,
    max_iter: int = 60,
    n_t: int = 200,
) -> tuple[Trajectory, dict]:
    """Fixed point of the Duhamel integral map, trapezoid quadrature.

    Iterates the integral system on a uniform grid of ``n_t + 1`` times until
    successive iterates differ by less than ``tol`` in the C0 norm
    sup_t (||du||_2 + ||dalpha||_2).  Returns the trajectory and diagnostics
    with the per-iteration contraction factors.  Raises
    :class:`SolverError` when the map fails to contract (T too large).
    """
    if T <= 0:
        raise ValueError("picard_solve needs T > 0")
    h = T / n_t
    times = np.linspace(0.0, T, n_t + 1)
    modes = grid.chi_modes
    om = grid.omega[modes]

    u0 = np.asarray(u0, dtype=complex)
    alpha0 = np.asarray(alpha0, dtype=complex)
    u0_hat = grid.fft(u0)

    # free evolutions, computed once
    kin_phase = np.exp(-1j * np.outer(times, grid.kinetic))
    om_phase = np.exp(-1j * np.outer(times, om))
    free_u = np.array([grid.ifft(kin_phase[j] * u0_hat) for j in range(n_t + 1)])
    free_alpha = om_phase * alpha0[None, :]

    w = np.full(n_t + 1, h)
    w[0] = w[-1] = h / 2.0

    us = free_u.copy()
    alphas = free_alpha.copy()
    factors = []
    prev_delta = None
    for _ in range(max_iter):
        # integrand of the u equation, moved to momentum space so the free
        # propagator acts diagonally
        integ_u = np.empty_like(us)
        integ_a = np.empty_like(alphas)
        for j in range(n_t + 1):
            a_field = build_A(alphas[j], grid)
            integ_u[j] = grid.fft(grid.c_potential * a_field * us[j])
            rho_hat = grid.fft(np.abs(us[j]) ** 2)
            integ_a[j] = grid.c_potential * rho_hat[modes] / np.sqrt(2.0 * om)

        new_us = np.empty_like(us)
        new_alphas = np.empty_like(alphas)
        for j in range(n_t + 1):
            wj = w.copy()
            wj[j] = h / 2.0
            wj[j + 1:] = 0.0
            if j == 0:
                new_us[j] = free_u[0]
                new_alphas[j] = free_alpha[0]
                continue
            acc_u = (kin_phase[j][None, :] / kin_phase[:j + 1]) * integ_u[:j + 1]
            new_us[j] = free_u[j] - 1j * grid.ifft(np.sum(wj[:j + 1, None] * acc_u, axis=0))
            acc_a = (om_phase[j][None, :] / om_phase[:j + 1]) * integ_a[:j + 1]
            new_alphas[j] = free_alpha[j] - 1j * np.sum(wj[:j + 1, None] * acc_a, axis=0)

        delta = float(
            np.max(
                np.linalg.norm(new_us - us, axis=1)
                + np.linalg.norm(new_alphas - alphas, axis=1)
            )
        )
        us, alphas = new_us, new_alphas
        if prev_delta is not None and prev_delta > 0:
            factors.append(delta / prev_delta)
        prev_delta = delta
        if delta < tol:
            break
    else:
        raise SolverError(
            f"Picard iteration did not reach tol={tol:.1e} in {max_iter} iterations "
            f"(last update {prev_delta:.3e}); reduce T"
        )
    if factors and min(factors) >= 1.0:
        raise SolverError(
            f"Picard map is not contracting (factor {min(factors):.3f} >= 1); reduce T"
        )
    diag = {"iterations": len(factors) + 2, "contraction_factors": factors, "final_update": prev_delta}
    return Trajectory(grid, times, us, alphas), diag


def ode_oracle(
    u0: np.ndarray,
    alpha0: np.ndarray,
    T: float,
    grid: ModeGrid,
    rtol: float = 1e-11,
    atol: float = 1e-12,
    n_sample: int = 101,
) -> Trajectory:
    """High-order adaptive reference solution (DOP853 on the stacked system)."""
    n_u = grid.n_nodes
    modes = grid.chi_modes
    om = grid.omega[modes]
    u0 = np.asarray(u0, dtype=complex)
    alpha0 = np.asarray(alpha0, dtype=complex)

    def pack(u, alpha):
        return np.concatenate([u.view(float), alpha.view(float)])

    def unpack(y):
        u = np.ascontiguousarray(y[: 2 * n_u]).view(complex)
        alpha = np.ascontiguousarray(y[2 * n_u:]).view(complex)
        return u, alpha

    def rhs(_t, y):
        u, alpha = unpack(y)
        a_field = build_A(alpha, grid)
        du = -1j * (grid.ifft(grid.kinetic * grid.fft(u)) + grid.c_potential * a_field * u)
        rho_hat = grid.fft(np.abs(u) ** 2)
        dalpha = -1j * (om * alpha + grid.c_potential * rho_hat[modes] / np.sqrt(2.0 * om))
        return pack(du, dalpha)

    t_eval = np.linspace(0.0, T, n_sample)
    sol = solve_ivp(rhs, (0.0, T), pack(u0, alpha0), method="DOP853",
                    rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise SolverError(f"ODE oracle failed: {sol.message}")
    us = np.empty((n_sample, n_u), dtype=complex)
    alphas = np.empty((n_sample, len(modes)), dtype=complex)
    for j in range(n_sample):
        us[j], alphas[j] = unpack(sol.y[:, j])
    return Trajectory(grid, t_eval, us, alphas)


# -- theta-rotated family ----------------------------------------------------

@dataclass
class ThetaFamily:
    """Trajectories for initial data (u0, exp(-i*theta_j) alpha0)."""

    u0: np.ndarray
    alpha0: np.ndarray
    thetas: np.ndarray
    members: list[Trajectory]

    def average(self, values: np.ndarray) -> complex:
        """Trapezoid average over theta of per-member ``values``.

        The samples are equally spaced on the periodic interval [0, 2*pi),
        so the trapezoid rule reduces to the plain mean.
        """
        return complex(np.mean(np.asarray(values)))


def solve_theta_family(
    u0: np.ndarray,
    alpha0: np.ndarray,
    n_theta: int,
    T: float,
    dt: float,
    grid: ModeGrid,
) -> ThetaFamily:
    """Solve one trajectory per theta_j = 2*pi*j/n_theta (n_theta even, >= 4)."""
    if n_theta < 4 or n_theta % 2 != 0:
        raise ValueError("n_theta must be even and >= 4")
    thetas = 2.0 * np.pi * np.arange(n_theta) / n_theta
    members = [
        solve(u0, np.exp(-1j * th) * np.asarray(alpha0, dtype=complex), T, dt, grid)
        for th in thetas
    ]
    return ThetaFamily(np.asarray(u0, dtype=complex), np.asarray(alpha0, dtype=complex), thetas, members)


def export_trajectory_csv(traj: Trajectory, path) -> None:
    """Write t plus Re/Im of every u node and alpha mode, one row per sample."""
    import csv

    n_u = traj.us.shape[1]
    n_a = traj.alphas.shape[1]
    header = ["t"]
    header += [f"{part}_u{i}" for i in range(n_u) for part in ("re", "im")]
    header += [f"{part}_alpha{i}" for i in range(n_a) for part in ("re", "im")]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j, t in enumerate(traj.times):
            row = [format(t, ".17g")]
            for z in traj.us[j]:
                row += [format(z.real, ".17g"), format(z.imag, ".17g")]
            for z in traj.alphas[j]:
                row += [format(z.real, ".17g"), format(z.imag, ".17g")]
            writer.writerow(row)
