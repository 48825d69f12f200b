"""Abstract driven models H(t) = H_0 + V(t) with growing gaps.

Levels are labelled n = 1, 2, ... and built from their increments,

    E_{n+1} - E_n = c n^alpha,   so   E_n = e0 + c sum_{j<n} j^alpha,

which makes the gap certificate min_n (E_{n+1} - E_n)/n^alpha = c exact. With
alpha = 1 and c = 2 this is E_n = e0 + n(n - 1).

V(t) = sum_{|p| <= P} V_p exp(i p omega t) is Hermitian at every t
(V_{-p} = V_p^*) with entries of size g <|n - m|>^(-tau) times a seeded random
phase; the p = 0 diagonal is zero so V does not shift the mean levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import EvolutionConfig, PeriodicGenerator, propagate
from .floquet import assemble_from_samples
from .sieve import SieveConfig, constant_levels, is_nonresonant, resonance_intervals, widest_gap_midpoint


@dataclass(frozen=True)
class AbstractModel:
    alpha: float
    c: float
    g: float
    tau_syn: float
    seed: int
    n_levels: int
    e0: float
    levels: np.ndarray  # E_1 .. E_N
    fourier: np.ndarray  # V_p for p = -P .. P, shape (2P + 1, N, N)

    @property
    def in_theory(self):
        return self.alpha > 0

    @property
    def n_fourier(self):
        return (self.fourier.shape[0] - 1) // 2

    def gap_certificate(self):
        n = np.arange(1, self.n_levels)
        return float(np.min(np.diff(self.levels) / n**self.alpha))

    def V(self, t, omega):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = np.arange(-self.n_fourier, self.n_fourier + 1)
        ph = np.exp(1j * omega * np.outer(t, p))
        return np.einsum("tp,pnm->nmt", ph, self.fourier)

    def generator(self, omega, n_time=64):
        """Periodic generator sampled on n_time points (levels fixed in t)."""
        t = np.arange(n_time) * (2.0 * math.pi / omega / n_time)
        E = np.repeat(self.levels[:, None], n_time, axis=1)
        A = self.V(t, omega)
        return PeriodicGenerator(E, 0.5 * (A + np.conj(np.swapaxes(A, 0, 1))), omega)

    def floquet_matrix(self, omega, n_f, n_time=64, guard=0):
        gen = self.generator(omega, n_time)
        meta = {"alpha": self.alpha, "c": self.c, "g": self.g, "tau_syn": self.tau_syn,
                "seed": self.seed, "N_f": n_f, "N_bands": self.n_levels, "N_time": n_time}
        return assemble_from_samples(gen.energies, gen.coupling, omega, n_f, guard=guard, g=self.g, meta=meta)


def level_ladder(alpha, c, n_levels, e0=0.0):
    n = np.arange(1, n_levels)
    return e0 + np.concatenate([[0.0], np.cumsum(c * n.astype(float) ** alpha)])


def synthesize(alpha, c, g, tau_syn, seed, n_levels=24, n_fourier=2, e0=0.0):
    """Seeded model; identical arguments give bitwise identical arrays."""
    rng = np.random.default_rng(seed)
    levels = level_ladder(alpha, c, n_levels, e0)
    i = np.arange(n_levels)
    mag = g * (1.0 + (i[:, None] - i[None, :]).astype(float) ** 2) ** (-tau_syn / 2.0)
    P = n_fourier
    fourier = np.zeros((2 * P + 1, n_levels, n_levels), complex)
    for p in range(1, P + 1):
        phase = np.exp(2j * math.pi * rng.random((n_levels, n_levels)))
        Vp = mag * phase / p**2
        fourier[P + p] = Vp
        fourier[P - p] = Vp.conj().T
    phase0 = np.exp(2j * math.pi * rng.random((n_levels, n_levels)))
    V0 = np.triu(mag * phase0, 1)
    fourier[P] = V0 + V0.conj().T
    return AbstractModel(alpha, c, g, tau_syn, seed, n_levels, e0, levels, fourier)


def good_frequency(model, window, gamma=1e-3, n_max=None, sigma=3.0):
    """A sieve-passing frequency: midpoint of the widest gap for the model's levels."""
    n_max = model.n_levels - 1 if n_max is None else n_max
    cfg = SieveConfig(window, gamma, sigma=sigma, levels=constant_levels(model.levels), n_max=n_max)
    rep = resonance_intervals(cfg)
    return widest_gap_midpoint(rep), cfg, rep


@dataclass
class BoundednessVerdict:
    bounded: bool
    ratio: float
    tail_max: float
    early_max: float
    sup_energy: float


def energy_boundedness(gen, c0, n_periods, early_periods=10, tail_from=None, steps_per_period=None,
                       include_coupling=True, ratio_bound=1.1, tail_bound=0.01, record_every=None):
    """Run the dynamics and compare sup_t energy with the early-time maximum."""
    nb = gen.n_bands
    steps = steps_per_period or max(8 * nb, 256)
    levels_now = np.sort(gen.energies.mean(axis=1))
    r = levels_now[nb - 5] if tail_from is None else tail_from
    ecfg = EvolutionConfig(n_periods=n_periods, steps_per_period=steps, initial_state=c0,
                           tail_thresholds=(r,), record_every=record_every or max(1, steps // 32))
    tr = propagate(ecfg, gen, include_coupling=include_coupling)
    T = gen.T
    early = tr.energy[tr.times <= early_periods * T + 1e-12]
    early_max = float(early.max())
    sup = float(tr.energy.max())
    ratio = sup / early_max if early_max > 0 else math.inf
    tail = float(tr.tails[float(r)].max())
    return BoundednessVerdict(ratio <= ratio_bound and tail < tail_bound, ratio, tail, early_max, sup), tr


def alpha_sweep(alphas, g, omega_samples, c=2.0, tau_syn=3.0, seed=0, n_levels=16, n_periods=1000,
                initial_band=1):
    """Rows (alpha, omega, bounded, max energy ratio, in_theory)."""
    rows = []
    for alpha in alphas:
        model = synthesize(alpha, c, g, tau_syn, seed, n_levels)
        gen_cache = {}
        for omega in omega_samples:
            gen = gen_cache.setdefault(omega, model.generator(omega))
            c0 = np.zeros(n_levels, complex)
            c0[initial_band] = 1.0
            verdict, _ = energy_boundedness(gen, c0, n_periods)
            rows.append({"alpha": float(alpha), "omega": float(omega), "bounded": bool(verdict.bounded),
                         "ratio": verdict.ratio, "tail": verdict.tail_max, "in_theory": model.in_theory})
    return rows


def nonresonant_for_model(model, omega, window, gamma=1e-3):
    cfg = SieveConfig(window, gamma, levels=constant_levels(model.levels), n_max=model.n_levels - 1)
    return is_nonresonant(omega, cfg)
