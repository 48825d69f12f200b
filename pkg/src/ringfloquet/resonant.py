"""Resonant frequencies omega in Q (pi/L)^2.

The gauge G(t) = diag exp(i g_n(t)) with

    g_n(t) = (4g/(L omega)) (-1)^(n+1) sin(omega t)

removes the oscillating part of the coupling shift of E_n(t) and satisfies
G(T) = I. After the gauge the generator differs from the diagonal
(n pi/L)^2 + omega/2 + <W> + 4g/L by a residual whose diagonal is O(1/n) and
whose off-diagonal part is the gauged coupling. Compactness of the residual is
probed by its Hilbert-Schmidt norm under band doubling, and the essential
spectrum of U(T) by clustering of eigenphases around the predicted points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NotResonant
from .sieve import classify_rational


def gauge_phases(cfg, t, n_bands=None):
    """g_n(t) for n < n_bands; shape (n_bands,) or (n_bands, len t)."""
    n_bands = cfg.N_bands if n_bands is None else n_bands
    n = np.arange(n_bands)
    sign = np.where(n % 2 == 0, -1.0, 1.0)  # (-1)^(n+1)
    amp = 4.0 * cfg.g / (cfg.L * cfg.omega)
    t = np.asarray(t, dtype=float)
    # sin(omega t) from the exact phase 2 pi t/T, so that g_n(T) = 0 exactly
    r = t / cfg.T
    phase = (2.0 * math.pi) * np.mod(r, 1.0)
    # whole and half periods (up to rounding in t / T) are exact zeros of sin
    half = np.abs(2.0 * r - np.round(2.0 * r)) <= 8.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(2.0 * r))
    s = np.where(half, 0.0, np.sin(phase))
    return amp * (sign[:, None] * s[None, ...] if s.ndim else sign * s)


def reference_levels(cfg, n_bands=None):
    """(n pi/L)^2 + omega/2 + <W> + 4g/L."""
    n = np.arange(cfg.N_bands if n_bands is None else n_bands)
    return (n * math.pi / cfg.L) ** 2 + cfg.omega / 2.0 + cfg.mean_W + 4.0 * cfg.g / cfg.L


def predicted_phases(cfg, n_bands=None):
    return np.exp(-1j * reference_levels(cfg, n_bands) * cfg.T)


@dataclass
class Residual:
    matrix: np.ndarray
    hs_norm: float


def residual_perturbation(cfg, spectrum, coupling, k):
    """Residual at grid time t_k; returns the matrix and its Hilbert-Schmidt norm."""
    nb = spectrum.n_bands
    t = cfg.t_grid[k]
    g = gauge_phases(cfg, t, nb)
    n = np.arange(nb)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    A = coupling.A[:, :, k]
    R = A * np.exp(1j * (g[:, None] - g[None, :]))
    cos_t = math.cos(cfg.phase_grid[k])
    diag = spectrum.energies[:, k] + np.real(np.diagonal(A)) + (4.0 * cfg.g / cfg.L) * sign * cos_t
    R[n, n] = diag - reference_levels(cfg, nb)
    return Residual(R, float(np.sqrt(np.sum(np.abs(R) ** 2))))


def hs_profile(cfg, spectrum, coupling):
    """Hilbert-Schmidt norms of the residual over the time grid."""
    return np.array([residual_perturbation(cfg, spectrum, coupling, k).hs_norm for k in range(cfg.N_time)])


def diagonal_residual_scale(cfg, spectrum, coupling, bands):
    """Fitted C in sup_t |R_nn(t)| ~ C/n over ``bands``."""
    sup = np.zeros(spectrum.n_bands)
    for k in range(cfg.N_time):
        sup = np.maximum(sup, np.abs(np.diagonal(residual_perturbation(cfg, spectrum, coupling, k).matrix)))
    n = np.asarray(bands)
    return float(np.median(sup[n] * n)), sup


def match_phases_to_bands(U_eigvecs):
    """Eigenvector index assigned to each band by maximal overlap."""
    rows, cols = linear_sum_assignment(-np.abs(U_eigvecs))
    perm = np.empty_like(cols)
    perm[rows] = cols
    return perm


@dataclass
class ResonantReport:
    omega: float
    p: int
    q: int
    predicted: np.ndarray
    computed: np.ndarray
    distances: np.ndarray
    nearest_distances: np.ndarray
    bulk: np.ndarray
    decile_medians: list = field(default_factory=list)
    hs_norm: float = math.nan
    residual_scale: float = math.nan
    threshold: float = math.nan
    passed: bool = False

    def to_dict(self):
        return {
            "omega": self.omega,
            "p": self.p,
            "q": self.q,
            "hs_norm": self.hs_norm,
            "residual_scale": self.residual_scale,
            "threshold": self.threshold,
            "passed": bool(self.passed),
            "decile_medians": [[int(a), float(b)] for a, b in self.decile_medians],
            "distances": [float(d) for d in self.distances],
            "predicted": [[float(z.real), float(z.imag)] for z in self.predicted],
            "computed": [[float(z.real), float(z.imag)] for z in self.computed],
        }


def decile_medians(values, bands, n_groups=10):
    """Median of ``values`` over consecutive groups of ``bands``; pairs (first band, median)."""
    out = []
    for chunk in np.array_split(np.asarray(bands), n_groups):
        if chunk.size:
            out.append((int(chunk[0]), float(np.median(values[chunk]))))
    return out


def essential_spectrum_check(cfg, spectrum, coupling, phases, eigvecs, bulk=None):
    """Compare U(T) eigenphases with the predicted essential spectrum points.

    ``phases`` and ``eigvecs`` are the eigenvalues and eigenvectors (columns,
    moving-basis coefficients) of u(T, 0). Bulk bands default to
    [N/4, N - 5): low bands carry the large O(1/n) corrections and the top
    bands the truncation error.
    """
    cls = classify_rational(cfg.omega, cfg.L)
    if not cls.resonant:
        raise NotResonant(f"omega (L/pi)^2 = {cls.ratio!r} is not detectably rational")
    nb = spectrum.n_bands
    if bulk is None:
        bulk = np.arange(max(1, nb // 4), max(nb // 4 + 1, nb - 5))
    pred = predicted_phases(cfg, nb)
    perm = match_phases_to_bands(eigvecs)
    comp = np.asarray(phases)[perm]
    dist = np.abs(comp - pred)
    points = np.unique(np.round(pred, 12))
    nearest = np.min(np.abs(np.asarray(phases)[:, None] - points[None, :]), axis=1)
    scale, _ = diagonal_residual_scale(cfg, spectrum, coupling, bulk)
    n_med = float(np.median(bulk))
    threshold = 5.0 * cfg.T * scale / n_med
    med = float(np.median(dist[bulk]))
    return ResonantReport(
        omega=cfg.omega, p=cls.p, q=cls.q, predicted=pred, computed=comp, distances=dist,
        nearest_distances=nearest, bulk=bulk, decile_medians=decile_medians(dist, bulk),
        hs_norm=float(hs_profile(cfg, spectrum, coupling).max()), residual_scale=scale,
        threshold=threshold, passed=med < threshold,
    )
