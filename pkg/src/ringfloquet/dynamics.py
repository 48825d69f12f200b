"""Time evolution in the moving eigenbasis.

With psi(t) = sum_n c_n(t) psi_n(t) the Schroedinger equation becomes

    i dc/dt = h(t) c,   h_nm(t) = E_n(t) delta_nm + A_nm(t),

with h periodic of period T. The exponential midpoint rule
c <- exp(-i h(t + dt/2) dt) c is used; since h is periodic the one-period step
matrices are computed once and reused for every period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import FiberingDefect, UnitarityLoss, ValidationError


class PeriodicGenerator:
    """Trigonometric interpolant of h(t) from samples on the uniform period grid."""

    def __init__(self, energies, coupling, omega):
        self.energies = np.asarray(energies, dtype=float)
        self.coupling = np.asarray(coupling, dtype=complex)
        self.omega = float(omega)
        self.n_bands, self.n_time = self.energies.shape
        n_t = self.n_time
        self._e_hat = np.fft.fft(self.energies, axis=-1) / n_t
        self._a_hat = np.fft.fft(self.coupling, axis=-1) / n_t
        p = np.fft.fftfreq(n_t, 1.0 / n_t)
        # split the Nyquist mode symmetrically so the interpolant of real data stays real
        self._p = p
        self._nyq = (n_t % 2 == 0)

    @classmethod
    def from_model(cls, spectrum, coupling, omega):
        return cls(spectrum.energies, coupling.A, omega)

    @property
    def T(self):
        return 2.0 * math.pi / self.omega

    def _phases(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ph = np.exp(1j * self.omega * np.outer(self._p, t))  # (n_t, len t)
        if self._nyq:
            k = self.n_time // 2
            ph[k] = np.cos(self.omega * k * t)
        return ph

    def energies_at(self, t):
        """E_n(t) for an array of times; shape (n_bands, len t)."""
        return np.real(self._e_hat @ self._phases(t))

    def coupling_at(self, t):
        """A(t); shape (n_bands, n_bands, len t)."""
        return self._a_hat @ self._phases(t)

    def h(self, t):
        """h(t) for an array of times; shape (len t, n_bands, n_bands)."""
        E = self.energies_at(t)
        A = np.moveaxis(self.coupling_at(t), -1, 0)
        H = A.copy()
        idx = np.arange(self.n_bands)
        H[:, idx, idx] += E.T
        return 0.5 * (H + np.conj(np.swapaxes(H, 1, 2)))

    def gauge(self, phases):
        """Generator of G c with G = diag exp(i g_n(t)), sampled on the same grid.

        ``phases`` is g_n(t_k) of shape (n_bands, n_time); the result is
        G h G^{-1} - (dg/dt) on the diagonal.
        """
        n_t = self.n_time
        d = np.fft.ifft(1j * self.omega * np.fft.fftfreq(n_t, 1.0 / n_t) * np.fft.fft(phases, axis=-1), axis=-1).real
        G = np.exp(1j * phases)
        A = self.coupling * G[:, None, :] * np.conj(G)[None, :, :]
        return PeriodicGenerator(self.energies - d, A, self.omega)


@dataclass
class EvolutionConfig:
    n_periods: int = 10
    steps_per_period: int = None  # default: max(8 N_bands, 256)
    initial_state: np.ndarray = None  # coefficients in the psi_n(0) basis
    tail_thresholds: tuple = ()
    record_every: int = 1
    tol_unitary: float = 1e-10

    def resolved(self, n_bands):
        steps = self.steps_per_period or max(8 * n_bands, 256)
        if steps < 8 * n_bands:
            raise ValidationError(f"steps_per_period={steps} < 8 N_bands={8 * n_bands}")
        c0 = self.initial_state
        if c0 is None:
            c0 = np.zeros(n_bands, complex)
            c0[0] = 1.0
        c0 = np.asarray(c0, dtype=complex)
        if c0.shape != (n_bands,):
            raise ValidationError(f"initial state has shape {c0.shape}, expected ({n_bands},)")
        if abs(np.linalg.norm(c0) - 1.0) > 1e-12:
            raise ValidationError("initial state must be normalised to 1 +- 1e-12")
        if self.n_periods < 0 or self.record_every < 1:
            raise ValidationError("n_periods >= 0 and record_every >= 1 required")
        return steps, c0


@dataclass
class EnergyTrace:
    times: np.ndarray
    energy: np.ndarray
    tails: dict = field(default_factory=dict)
    unitarity_defect: np.ndarray = None
    populations: np.ndarray = None
    final_state: np.ndarray = None
    step_defect: float = 0.0

    def to_rows(self):
        keys = sorted(self.tails)
        for i, t in enumerate(self.times):
            yield [t, self.energy[i]] + [self.tails[r][i] for r in keys] + [self.unitarity_defect[i]]


def step_matrices(gen, steps_per_period):
    """Midpoint step unitaries exp(-i h(t_j + dt/2) dt) over one period."""
    dt = gen.T / steps_per_period
    mids = (np.arange(steps_per_period) + 0.5) * dt
    H = gen.h(mids)
    P = np.empty_like(H)
    for j in range(steps_per_period):
        P[j] = expm(-1j * dt * H[j])
    return P


def period_map(gen, steps_per_period, P=None):
    """u(T, 0) as the ordered product of the step unitaries."""
    P = step_matrices(gen, steps_per_period) if P is None else P
    U = np.eye(gen.n_bands, dtype=complex)
    for Pj in P:
        U = Pj @ U
    return U


def _unitarity(U):
    return float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))))


def propagate(ecfg, gen, include_coupling=False):
    """Evolve the initial state for ``n_periods`` periods; see EnergyTrace.

    The energy is sum_n E_n(t) |c_n|^2, the expectation of H(t) in the moving
    eigenbasis. For abstract models H(t) = H_0 + V(t) is the generator itself
    and ``include_coupling`` selects <c, h(t) c> instead.
    """
    steps, c = ecfg.resolved(gen.n_bands)
    P = step_matrices(gen, steps)
    step_defect = max(_unitarity(Pj) for Pj in P)
    if step_defect > ecfg.tol_unitary:
        raise UnitarityLoss(f"step unitaries deviate by {step_defect:.3g}; reduce the step size")
    dt = gen.T / steps
    grid = np.arange(steps) * dt
    E_grid = gen.energies_at(grid)  # (n_bands, steps)
    H_grid = gen.h(grid) if include_coupling else None
    total = ecfg.n_periods * steps
    n_rec = total // ecfg.record_every + 1
    times = np.empty(n_rec)
    energy = np.empty(n_rec)
    defect = np.empty(n_rec)
    pops = np.empty((n_rec, gen.n_bands))
    rec = 0
    for s in range(total + 1):
        if s % ecfg.record_every == 0:
            prob = np.abs(c) ** 2
            times[rec] = s * dt
            if include_coupling:
                energy[rec] = float(np.real(np.vdot(c, H_grid[s % steps] @ c)))
            else:
                energy[rec] = float(E_grid[:, s % steps] @ prob)
            defect[rec] = abs(math.sqrt(prob.sum()) - 1.0)
            pops[rec] = prob
            rec += 1
        if s < total:
            c = P[s % steps] @ c
    E_rec = E_grid[:, (np.round(times / dt).astype(int)) % steps]
    tails = {}
    for r in ecfg.tail_thresholds:
        mask = E_rec.T > r
        tails[float(r)] = np.sqrt(np.sum(np.where(mask, pops, 0.0), axis=1))
    if defect.max() > ecfg.tol_unitary:
        raise UnitarityLoss(f"norm drifted by {defect.max():.3g}")
    return EnergyTrace(times, energy, tails, defect, pops, c, step_defect)


def evolve_states(gen, C0, times, steps_per_period):
    """States at the given grid-aligned times for each column of C0."""
    P = step_matrices(gen, steps_per_period)
    dt = gen.T / steps_per_period
    idx = np.round(np.asarray(times) / dt).astype(int)
    if np.any(np.abs(idx * dt - np.asarray(times)) > 1e-9 * gen.T):
        raise ValidationError("times must lie on the step grid")
    out = np.empty((len(idx),) + C0.shape, complex)
    C = np.array(C0, dtype=complex)
    order = np.argsort(idx)
    s = 0
    for i in order:
        while s < idx[i]:
            C = P[s % steps_per_period] @ C
            s += 1
        out[i] = C
    return out


def floquet_eigenphases(gen, steps_per_period, tol_unitary=1e-10):
    """Eigenvalues of u(T, 0), sorted by argument, and the period map itself."""
    U = period_map(gen, steps_per_period)
    defect = _unitarity(U)
    if defect > tol_unitary:
        raise UnitarityLoss(f"period map deviates from unitarity by {defect:.3g}")
    lam = np.linalg.eigvals(U)
    lam = lam[np.argsort(np.angle(lam))]
    return lam, U


def quasienergy_distance(phases, energies, T):
    """For each quasi-energy e, the distance of exp(-i e T) to the nearest phase."""
    target = np.exp(-1j * np.asarray(energies) * T)
    return np.min(np.abs(target[:, None] - np.asarray(phases)[None, :]), axis=1)


@dataclass
class FloquetDecomposition:
    """U(t) = F(t) exp(-i G t) F(0)^{-1} in the moving basis.

    ``F(t)[:, m]`` holds the coefficients of the m-th Floquet mode at time t,
    ``e_inf[m]`` its quasi-energy.
    """

    e_inf: np.ndarray
    omega: float
    modes: np.ndarray  # (2 N_f + 1, n_bands, n_bands): Fourier components F_d
    t_grid: np.ndarray
    samples: np.ndarray  # F(t_k), (len t_grid, n_bands, n_bands)
    fibering_defect: float = 0.0
    periodicity_defect: float = 0.0

    def F(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        d = np.arange(self.modes.shape[0]) - (self.modes.shape[0] - 1) // 2
        ph = np.exp(1j * self.omega * np.outer(t, d))  # (len t, n_d)
        return np.einsum("td,dnm->tnm", ph, self.modes)

    def propagator(self, t):
        """Reconstructed u(t, 0) for each time in ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        F0inv = np.linalg.inv(self.F(0.0)[0])
        Ft = self.F(t)
        return np.einsum("tnm,tm,mk->tnk", Ft, np.exp(-1j * np.outer(t, self.e_inf)), F0inv)

    def to_dict(self):
        return {
            "e_inf": [float(e) for e in self.e_inf],
            "omega": self.omega,
            "fibering_defect": self.fibering_defect,
            "periodicity_defect": self.periodicity_defect,
        }


def toeplitz_defect(V, index, guard):
    """sup |V[(j1+1, n), (k1+1, m)] - V[(j1, n), (k1, m)]| over inner Fourier indices."""
    n_f, nb = index.n_f, index.n_bands
    lim = n_f - guard - 1
    if lim < 0:
        return 0.0
    rows = np.arange(-lim, lim)  # j1 with j1 + 1 also inner
    worst = 0.0
    for j1 in rows:
        for k1 in rows:
            a = V[index.flat(j1 + 1, 0):index.flat(j1 + 1, 0) + nb, index.flat(k1 + 1, 0):index.flat(k1 + 1, 0) + nb]
            b = V[index.flat(j1, 0):index.flat(j1, 0) + nb, index.flat(k1, 0):index.flat(k1, 0) + nb]
            worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def build_floquet_decomposition(kam, M, t_grid=None, tol_fibering=1e-5, bands=None):
    """Floquet modes from the j1 = 0 eigenvectors of a converged KAM run.

    The eigenvector of M with home index (0, m) is sum_{d, n} v_{(d, n)}
    exp(i omega t d) psi_n(t); its coefficient vector at time t is the m-th
    column of F(t). ``bands`` restricts the Toeplitz check to bands below it.
    """
    index = M.index
    V = kam.eigenvectors  # columns: eigenvectors in the input basis
    nb, n_f = index.n_bands, index.n_f
    check = V
    if bands is not None:
        keep = index.j2 < bands
        check = np.where(keep[:, None] & keep[None, :], V, 0.0)
    defect = toeplitz_defect(check, index, M.guard)
    if defect > tol_fibering:
        raise FiberingDefect(f"Toeplitz deviation of the eigenvector matrix {defect:.3g} > {tol_fibering:g}")
    cols = index.flat(0, np.arange(nb))
    modes = np.empty((2 * n_f + 1, nb, nb), complex)
    for a, d in enumerate(range(-n_f, n_f + 1)):
        modes[a] = V[index.flat(d, 0):index.flat(d, 0) + nb][:, cols]
    e_inf = np.real(np.diagonal(kam.final_matrix))[cols]
    T = 2.0 * math.pi / M.omega
    if t_grid is None:
        t_grid = np.arange(M.meta.get("N_time", 64)) * (T / M.meta.get("N_time", 64))
    dec = FloquetDecomposition(e_inf, M.omega, modes, np.asarray(t_grid), None, defect)
    dec.samples = dec.F(t_grid)
    dec.periodicity_defect = float(np.max(np.abs(dec.F(T)[0] - dec.F(0.0)[0])))
    return dec
