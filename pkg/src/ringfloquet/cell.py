"""Spectral data of the twisted cell Hamiltonian H(t, omega, g).

H(t) = -d^2/dx^2 + (omega/L) x + W(x) on (0, L) with the boundary conditions

    exp(i omega t) psi'(L) - psi'(0) = 0,
    g (exp(i omega t) psi(L) - psi(0)) = -psi'(0).

Writing psi = a u + b v in terms of the fundamental solutions and using the
unit Wronskian, the 2x2 boundary determinant divided by exp(i omega t) is the
real function

    F(E) = u'(L) + g (u(L) + v'(L) - 2 cos(omega t)),

whose zeros are the eigenvalues. Bands are numbered n = 0, 1, 2, ... with
n = 0 the Neumann ground state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.linalg import eigh_tridiagonal

from .errors import (
    BracketCollision,
    DegenerateProjection,
    GapTooSmall,
    RootNotFound,
    ValidationError,
)
from .shooting import CellPropagator

BRACKET_CAP = 1.0  # C0, the largest allowed bracket half-width
_SCAN_POINTS = 33
_CHEB_START = 32
_CHEB_MAX = 512


@dataclass(frozen=True)
class ModelConfig:
    """Physical and numerical parameters of a driven-ring run.

    ``w_cos[k]`` and ``w_sin[k]`` multiply cos(2 pi k x/L) and sin(2 pi k x/L);
    ``w_sin[0]`` is ignored. ``N_f`` and ``guard`` size the Floquet matrix:
    Fourier indices run over [-N_f, N_f], and the outer ``guard`` Fourier
    indices and top ``guard`` bands are excluded from inner-block claims.
    """

    L: float = math.pi
    omega: float = 1.0
    g: float = 0.05
    w_cos: tuple = ()
    w_sin: tuple = ()
    N_bands: int = 32
    N_time: int = 256
    tol_eig: float = 1e-10
    tol_unitary: float = 1e-10
    n_x: int = 1024
    N_f: int = 8
    guard: int = 4

    def __post_init__(self):
        object.__setattr__(self, "w_cos", tuple(float(a) for a in self.w_cos))
        object.__setattr__(self, "w_sin", tuple(float(b) for b in self.w_sin))
        self.validate()

    def validate(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValidationError("L > 0 violated")
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValidationError("omega > 0 violated")
        if not (self.g >= 0 and math.isfinite(self.g)):
            raise ValidationError("g >= 0 violated")
        if self.N_bands < 1:
            raise ValidationError("N_bands >= 1 violated")
        n = self.N_time
        if n < 2 or n & (n - 1):
            raise ValidationError("N_time must be a power of two")
        if self.tol_eig <= 0 or self.tol_unitary <= 0:
            raise ValidationError("tolerances must be positive")
        if self.n_x < 8 or self.n_x % 2:
            raise ValidationError("n_x must be an even integer >= 8")
        if self.N_f < 0 or self.guard < 0:
            raise ValidationError("N_f >= 0 and guard >= 0 violated")
        if not all(map(math.isfinite, self.w_cos + self.w_sin)):
            raise ValidationError("W coefficients must be finite")
        # T is 2 pi/omega; grid phases are formed as 2 pi k/N_time, never via T
        if abs(self.T * self.omega - 2 * math.pi) > 8 * np.finfo(float).eps * 2 * math.pi:
            raise ValidationError("T * omega != 2 pi in floating point")

    @property
    def T(self):
        return 2.0 * math.pi / self.omega

    @property
    def mean_W(self):
        return self.w_cos[0] if self.w_cos else 0.0

    @property
    def t_grid(self):
        return np.arange(self.N_time) * (self.T / self.N_time)

    @property
    def phase_grid(self):
        """omega * t_k on the time grid, formed exactly as 2 pi k / N_time."""
        return 2.0 * np.pi * np.arange(self.N_time) / self.N_time

    def with_(self, **changes):
        return replace(self, **changes)

    def propagator(self):
        return CellPropagator(self.L, self.omega, self.w_cos, self.w_sin, self.n_x)


@dataclass
class SecularContext:
    """Everything needed to evaluate the secular function at one time t.

    ``omega = 0`` is allowed here (static limit) even though a ModelConfig
    requires omega > 0.
    """

    t: float
    omega: float
    g: float
    L: float = math.pi
    w_cos: tuple = ()
    w_sin: tuple = ()
    n_x: int = 1024
    _prop: CellPropagator = field(default=None, init=False, repr=False)

    @classmethod
    def from_config(cls, cfg, t):
        return cls(t, cfg.omega, cfg.g, cfg.L, cfg.w_cos, cfg.w_sin, cfg.n_x)

    @property
    def propagator(self):
        if self._prop is None:
            self._prop = CellPropagator(self.L, self.omega, self.w_cos, self.w_sin, self.n_x)
        return self._prop


def secular_value(ctx, E):
    """F(E) = u'(L) + g (u(L) + v'(L) - 2 cos(omega t)); zeros are eigenvalues."""
    u, up, v, vp = ctx.propagator.ends(E)
    f = up + ctx.g * (u + vp - 2.0 * math.cos(ctx.omega * ctx.t))
    return f[0] if np.ndim(E) == 0 else f


def asymptotic_model(cfg, n, t):
    """Four-term large-n model of E_n(t): Neumann level, ramp mean, <W>, coupling."""
    n = np.asarray(n)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    return (
        (n * math.pi / cfg.L) ** 2
        + cfg.omega / 2.0
        + cfg.mean_W
        + (4.0 * cfg.g / cfg.L) * (1.0 - sign * np.cos(cfg.omega * np.asarray(t)))
    )


@dataclass
class BandSpectrum:
    """Eigenvalue curves E[n, k] = E_n(t_k) and, once phase fixed, boundary traces."""

    cfg: ModelConfig
    energies: np.ndarray
    reference_energies: np.ndarray
    traces0: np.ndarray = None
    tracesL: np.ndarray = None
    norm_data: np.ndarray = None
    root_residual: float = 0.0

    @property
    def t(self):
        return self.cfg.t_grid

    @property
    def n_bands(self):
        return self.energies.shape[0]

    def means(self):
        return self.energies.mean(axis=1)


@dataclass
class CouplingTensor:
    """A[n, m, k] = <psi_n, D_t psi_m>(t_k) with D_t = -i d/dt."""

    A: np.ndarray
    hermiticity_defect: float = 0.0


def _half_widths(centers, cap=BRACKET_CAP):
    """Bracket half-widths: a third of the gap to the nearest neighbour, capped."""
    up = np.diff(centers, axis=0)
    if np.any(up <= 0):
        raise ValidationError("bracket centres are not increasing; g too large for bracketing")
    gap = np.empty_like(centers)
    gap[:-1] = up
    gap[-1] = up[-1] if len(up) else BRACKET_CAP * 3.0
    gap[1:] = np.minimum(gap[1:], up)
    return np.minimum(gap / 3.0, cap)


def _fd_neumann_guess(prop, n_levels, e_top):
    """Rough Neumann levels from a symmetrised second-order difference scheme.

    The grid is chosen so that the O(E^2 h^2) error stays well below the level
    spacing 2 sqrt(E) pi/L up to ``e_top``.
    """
    L = prop.L
    n_fd = int(max(2000, 2.0 * L * max(e_top, 1.0) ** 0.75))
    h = L / n_fd
    x = np.linspace(0.0, L, n_fd + 1)
    d = 2.0 / h**2 + prop.potential(x)
    e = np.full(n_fd, -1.0 / h**2)
    e[0] = e[-1] = -math.sqrt(2.0) / h**2  # ghost-point rows, trapezoid-symmetrised
    return eigh_tridiagonal(d, e, select="i", select_range=(0, n_levels - 1), eigvals_only=True)


def neumann_levels(prop, n_levels, tol=1e-12):
    """Decoupled (g = 0) cell levels: zeros of u'(L), numbered from the ground state."""
    n = np.arange(n_levels + 1)
    model = (n * math.pi / prop.L) ** 2 + prop.omega / 2.0 + (prop.w_cos[0] if prop.w_cos else 0.0)
    guess = _fd_neumann_guess(prop, n_levels + 1, model[-1] + 4.0 * math.sqrt(model[-1]))
    half = _half_widths(guess[:, None], cap=np.inf)
    levels, _ = _solve_roots(prop, 0.0, guess[:-1, None], half[:-1], np.ones(1), tol)
    return levels[:, 0]


def first_order_shift(prop, levels, g, phases):
    """g |u_n(L) exp(i theta) - u_n(0)|^2 / ||u_n||^2 for the Neumann functions u_n."""
    prof = prop.profiles(levels)
    u = prof[0]
    norm2 = prop.weights @ (u * u)
    uL = u[-1]
    cos = np.cos(phases)[None, :]
    return g * (uL[:, None] ** 2 - 2.0 * uL[:, None] * cos + 1.0) / norm2[:, None]


def _chebyshev_fits(prop, lo, hi):
    """Chebyshev fits of u'(L) and u(L) + v'(L) on [lo_n, hi_n] for every band."""
    n_b = lo.size
    deg = np.full(n_b, _CHEB_START)
    fits = [None] * n_b
    todo = np.arange(n_b)
    while todo.size:
        nodes, owner = [], []
        for i in todo:
            xs = np.cos(np.pi * (np.arange(deg[i]) + 0.5) / deg[i])
            nodes.append(0.5 * (hi[i] + lo[i]) + 0.5 * (hi[i] - lo[i]) * xs)
            owner.append(np.full(deg[i], i))
        nodes = np.concatenate(nodes)
        owner = np.concatenate(owner)
        u, up, v, vp = prop.ends(nodes)
        again = []
        for i in todo:
            sel = owner == i
            xs = (2 * nodes[sel] - (hi[i] + lo[i])) / (hi[i] - lo[i])
            cp = C.chebfit(xs, up[sel], deg[i] - 1)
            cs = C.chebfit(xs, u[sel] + vp[sel], deg[i] - 1)
            tail = max(np.abs(cp[-4:]).max() / np.abs(cp).max(), np.abs(cs[-4:]).max() / np.abs(cs).max())
            if tail > 1e-13 and deg[i] < _CHEB_MAX:
                deg[i] *= 2
                again.append(i)
            else:
                fits[i] = (cp, cs)
        todo = np.array(again, dtype=int)
    return fits


def _solve_roots(prop, g, centers, half, cos_theta, tol):
    """Secular roots E[n, k] in the brackets centers +- half (one root each)."""
    n_b, n_t = centers.shape
    lo_b, hi_b = centers - half, centers + half
    lo, hi = lo_b.min(axis=1), hi_b.max(axis=1)
    fits = _chebyshev_fits(prop, lo, hi)
    roots = np.empty((n_b, n_t))
    dF = np.empty((n_b, n_t))
    shift = g * (-2.0 * cos_theta)
    for n in range(n_b):
        cp, cs = fits[n]
        scale = 2.0 / (hi[n] - lo[n])
        mid = 0.5 * (hi[n] + lo[n])

        def F(E, k_idx=slice(None)):
            xs = (E - mid) * scale
            return C.chebval(xs, cp) + g * C.chebval(xs, cs) + shift[k_idx]

        grid = lo_b[n][:, None] + (hi_b[n] - lo_b[n])[:, None] * np.linspace(0, 1, _SCAN_POINTS)[None, :]
        vals = C.chebval((grid - mid) * scale, cp) + g * C.chebval((grid - mid) * scale, cs) + shift[:, None]
        changes = np.signbit(vals[:, 1:]) != np.signbit(vals[:, :-1])
        count = changes.sum(axis=1)
        for k in range(n_t):
            if count[k] == 0:
                raise RootNotFound(n, k)
            if count[k] > 1:
                raise BracketCollision(n, k, int(count[k]))
        j = changes.argmax(axis=1)
        a = grid[np.arange(n_t), j]
        b = grid[np.arange(n_t), j + 1]
        fa = vals[np.arange(n_t), j]
        for _ in range(64):
            m = 0.5 * (a + b)
            fm = F(m)
            left = np.signbit(fm) == np.signbit(fa)
            a = np.where(left, m, a)
            fa = np.where(left, fm, fa)
            b = np.where(left, b, m)
            if np.all(b - a <= 1e-15 * np.maximum(1.0, np.abs(m))):
                break
        roots[n] = 0.5 * (a + b)
        xs = (roots[n] - mid) * scale
        dF[n] = (C.chebval(xs, C.chebder(cp)) + g * C.chebval(xs, C.chebder(cs))) * scale
    # Newton polish against the direct secular function (removes fit error)
    residual = np.inf
    for _ in range(4):
        u, up, v, vp = prop.ends(roots.ravel())
        f = (up + g * (u + vp)).reshape(n_b, n_t) + shift[None, :]
        step = f / dF
        roots = roots - step
        residual = float(np.max(np.abs(step) / np.maximum(1.0, np.abs(roots))))
        if residual <= tol:
            break
    return roots, residual


def solve_band_spectrum(cfg):
    """Solve E_n(t_k) for n < N_bands on the uniform time grid."""
    prop = cfg.propagator()
    phases = cfg.phase_grid
    ref = neumann_levels(prop, cfg.N_bands + 1, cfg.tol_eig)
    centers = ref[:, None] + first_order_shift(prop, ref, cfg.g, phases)
    half = _half_widths(centers)
    energies, res = _solve_roots(prop, cfg.g, centers[:-1], half[:-1], np.cos(phases), cfg.tol_eig)
    return BandSpectrum(cfg, energies, ref[:-1], root_residual=res)


def _null_vector(ends, g, zeta):
    """(a, b) with psi = a u + b v satisfying both boundary conditions."""
    u, up, v, vp = ends
    r1 = np.array([zeta * up, zeta * vp - 1.0])
    r2 = np.array([g * (zeta * u - 1.0), g * zeta * v + 1.0])
    use1 = np.linalg.norm(r1, axis=0) > np.linalg.norm(r2, axis=0)
    row = np.where(use1, r1, r2)
    return row[1], -row[0]


class EigenBasis:
    """Phase-fixed eigenfunctions psi_n(t_k) = a u + b v, stored as coefficients.

    Profiles on the x grid are regenerated band by band on request so the
    full (band, time, x) array is never held in memory.
    """

    def __init__(self, cfg, spectrum, coeffs, prop):
        self.cfg = cfg
        self.spectrum = spectrum
        self.coeffs = coeffs  # (N_bands, N_time, 2) complex
        self.prop = prop

    @property
    def x(self):
        return self.prop.x

    @property
    def weights(self):
        return self.prop.weights

    def samples(self, n):
        """psi_n(t_k, x_j) as a complex array (N_time, n_x + 1)."""
        prof = self.prop.profiles(self.spectrum.energies[n])
        a, b = self.coeffs[n, :, 0], self.coeffs[n, :, 1]
        return (a[:, None] * prof[0].T) + (b[:, None] * prof[2].T)

    def reference(self, n):
        """The normalised g = 0 eigenfunction psi_n^0 on the x grid (real)."""
        u0 = self.prop.profiles([self.spectrum.reference_energies[n]])[0][:, 0]
        return u0 / math.sqrt(np.dot(self.weights, u0 * u0))

    def inner(self, f, g):
        """<f, g> in L^2(0, L) along the last axis."""
        return np.sum(np.conj(f) * g * self.weights, axis=-1)


def phase_fixed_eigenbasis(cfg, spectrum):
    """Normalise and phase-fix eigenfunctions; populate the boundary traces.

    psi_n(t) = P_n(t) psi_n^0 / ||P_n(t) psi_n^0|| with psi_n^0 the real
    Neumann-decoupled eigenfunction, so <psi_n^0, psi_n(t)> > 0 on the grid
    and psi_n is T-periodic by construction.
    """
    prop = cfg.propagator()
    w = prop.weights
    zeta = np.exp(1j * cfg.phase_grid)
    n_b, n_t = spectrum.energies.shape
    coeffs = np.empty((n_b, n_t, 2), complex)
    traces0 = np.empty((n_b, n_t), complex)
    tracesL = np.empty((n_b, n_t), complex)
    norms = np.empty((n_b, n_t))
    for n in range(n_b):
        E = np.append(spectrum.energies[n], spectrum.reference_energies[n])
        prof = prop.profiles(E)
        u, v = prof[0], prof[2]
        a, b = _null_vector(prof[:, -1, :n_t], cfg.g, zeta)
        uu = w @ (u[:, :n_t] ** 2)
        uv = w @ (u[:, :n_t] * v[:, :n_t])
        vv = w @ (v[:, :n_t] ** 2)
        norm = np.sqrt(np.abs(a) ** 2 * uu + 2 * np.real(np.conj(a) * b) * uv + np.abs(b) ** 2 * vv)
        u0 = u[:, n_t]
        u0 = u0 / math.sqrt(w @ (u0 * u0))
        overlap = (a * (w @ (u0[:, None] * u[:, :n_t])) + b * (w @ (u0[:, None] * v[:, :n_t]))) / norm
        proj = np.abs(overlap)
        bad = proj < 0.5
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise DegenerateProjection(n, k, float(proj[k]))
        phase = np.conj(overlap) / proj / norm
        a, b = a * phase, b * phase
        coeffs[n, :, 0], coeffs[n, :, 1] = a, b
        traces0[n] = a
        tracesL[n] = a * prof[0, -1, :n_t] + b * prof[2, -1, :n_t]
        norms[n] = proj
    spec = replace(spectrum, traces0=traces0, tracesL=tracesL, norm_data=norms)
    return EigenBasis(cfg, spec, coeffs, prop)


def _time_derivative(samples, omega):
    """Spectral d/dt along axis 0 of T-periodic samples on the uniform grid."""
    n_t = samples.shape[0]
    p = np.fft.fftfreq(n_t, d=1.0 / n_t)
    if n_t % 2 == 0:
        p[n_t // 2] = 0.0
    shape = (n_t,) + (1,) * (samples.ndim - 1)
    return np.fft.ifft(np.fft.fft(samples, axis=0) * (1j * omega * p).reshape(shape), axis=0)


def coupling_by_time_derivative(basis, bands=None):
    """<psi_n, -i d/dt psi_m>(t_k) for the given bands by FFT differentiation.

    Returns an array (len(bands), len(bands), N_time).
    """
    cfg = basis.cfg
    bands = range(basis.spectrum.n_bands) if bands is None else bands
    bands = list(bands)
    psi = [basis.samples(n) for n in bands]
    dpsi = [_time_derivative(p, cfg.omega) for p in psi]
    out = np.empty((len(bands), len(bands), cfg.N_time), complex)
    for i, p in enumerate(psi):
        for j, d in enumerate(dpsi):
            out[i, j] = -1j * basis.inner(p, d)
    return out


def coupling_matrix(cfg, basis):
    """CouplingTensor from boundary traces (off-diagonal) and FFT (diagonal).

    Off the diagonal, <psi_m, D_t psi_n> = g omega (conj(a_m) b_n - conj(b_m) a_n)
    / (E_n - E_m) with a = exp(i omega t) psi(L), b = psi(0): the form
    derivative of g |f><f|, f = exp(-i omega t) delta_L - delta_0.
    """
    spec = basis.spectrum
    E = spec.energies
    n_b, n_t = E.shape
    a = np.exp(1j * cfg.phase_grid)[None, :] * spec.tracesL
    b = spec.traces0
    diff = E[None, :, :] - E[:, None, :]  # E_n - E_m at [m, n]
    off = ~np.eye(n_b, dtype=bool)
    small = np.abs(diff[off]) < 10 * cfg.tol_eig
    if small.any():
        raise GapTooSmall(f"eigenvalue gap below {10 * cfg.tol_eig:g}")
    num = np.conj(a)[:, None, :] * b[None, :, :] - np.conj(b)[:, None, :] * a[None, :, :]
    A = np.zeros((n_b, n_b, n_t), complex)
    safe = np.where(off[:, :, None], diff, 1.0)
    A[off] = (cfg.g * cfg.omega * num / safe)[off]
    if cfg.g:
        for n in range(n_b):
            psi = basis.samples(n)
            A[n, n] = np.real(-1j * basis.inner(psi, _time_derivative(psi, cfg.omega)))
    herm = A - np.conj(np.transpose(A, (1, 0, 2)))
    defect = float(np.max(np.abs(herm))) if A.size else 0.0
    A = 0.5 * (A + np.conj(np.transpose(A, (1, 0, 2))))
    return CouplingTensor(A, defect)


@dataclass
class GapReport:
    min_ratio: float
    argmin: tuple
    passed: bool
    margin: float


def verify_gap_growth(spectrum, tol_eig=None):
    """min over n, k of (E_{n+1} - E_n)/(n + 1); passes if above 10 tol_eig."""
    E = spectrum.energies
    if E.shape[0] < 3:
        raise ValidationError("gap growth needs at least 3 bands")
    tol = spectrum.cfg.tol_eig if tol_eig is None else tol_eig
    ratio = np.diff(E, axis=0) / (np.arange(E.shape[0] - 1) + 1.0)[:, None]
    idx = np.unravel_index(np.argmin(ratio), ratio.shape)
    value = float(ratio[idx])
    return GapReport(value, (int(idx[0]), int(idx[1])), value > 10 * tol, 10 * tol)


def neumann_kernel(x, y, z, L):
    """R^N(x, y; z), the resolvent kernel of the Neumann Laplacian on (0, L)."""
    k = np.sqrt(complex(z))
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    return np.real(-np.cos(k * lo) * np.cos(k * (hi - L)) / (k * np.sin(k * L)))


def krein_function(ctx, z, n_nodes=400):
    """G(z) = <f, R_0(z) f> for f = exp(-i omega t) delta_L - delta_0 (real z).

    R_0 = R^N - R^N (1 + V R^N)^{-1} V R^N with V = (omega/L) x + W, solved by
    Nystrom on Gauss-Legendre nodes. Eigenvalues of H(t) are zeros of
    1 + g G(z) away from the spectrum of H_0.
    """
    L = ctx.L
    cos_t = math.cos(ctx.omega * ctx.t)
    r00 = neumann_kernel(0.0, 0.0, z, L)
    r0L = neumann_kernel(0.0, L, z, L)
    rLL = neumann_kernel(L, L, z, L)
    G = r00 + rLL - 2.0 * cos_t * r0L
    potential = ctx.propagator.potential
    if ctx.omega == 0 and not any(ctx.w_cos) and not any(ctx.w_sin):
        return G
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)
    x = 0.5 * L * (xg + 1.0)
    w = 0.5 * L * wg
    V = potential(x)
    K = neumann_kernel(x[:, None], x[None, :], z, L)
    zeta = complex(math.cos(ctx.omega * ctx.t), math.sin(ctx.omega * ctx.t))
    phi = np.conj(zeta) * neumann_kernel(x, L, z, L) - neumann_kernel(x, 0.0, z, L)
    y = np.linalg.solve(np.eye(n_nodes) + (V[:, None] * K) * w[None, :], V * phi)
    return float(np.real(G - np.sum(w * np.conj(phi) * y)))
