"""Matrix of the Floquet Hamiltonian K = D_t + H(t) in the basis

    phi_j(t, x) = exp(i omega t j1) psi_{j2}(t, x) / sqrt(T),

    M_jk = (1/T) int_0^T exp(-i (j1 - k1) omega t)
           [(k1 omega + E_{k2}(t)) delta_{j2 k2} + <psi_{j2}, D_t psi_{k2}>(t)] dt.

Flattening: index = (j1 + N_f) * N_bands + j2, i.e. Fourier-major, so each
N_bands x N_bands block is one (j1, k1) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AliasError, OverflowGuard


@dataclass(frozen=True)
class FloquetIndex:
    n_f: int
    n_bands: int

    @property
    def dim(self):
        return (2 * self.n_f + 1) * self.n_bands

    def flat(self, j1, j2):
        return (np.asarray(j1) + self.n_f) * self.n_bands + np.asarray(j2)

    def unflat(self, i):
        i = np.asarray(i)
        return i // self.n_bands - self.n_f, i % self.n_bands

    @property
    def j1(self):
        return np.repeat(np.arange(-self.n_f, self.n_f + 1), self.n_bands)

    @property
    def j2(self):
        return np.tile(np.arange(self.n_bands), 2 * self.n_f + 1)

    def distance(self):
        """l1 index distance |j1 - k1| + |j2 - k2| for all pairs."""
        j1, j2 = self.j1, self.j2
        return np.abs(j1[:, None] - j1[None, :]) + np.abs(j2[:, None] - j2[None, :])

    def inner(self, guard=0, frac=None):
        """Boolean mask of the inner block.

        With ``guard`` the outer ``guard`` Fourier indices and the top
        ``guard`` bands are dropped; with ``frac`` only |j1| <= frac * N_f and
        j2 < frac * N_bands are kept.
        """
        j1, j2 = self.j1, self.j2
        if frac is not None:
            return (np.abs(j1) <= frac * self.n_f) & (j2 < max(1.0, frac * self.n_bands))
        return (np.abs(j1) <= self.n_f - guard) & (j2 < self.n_bands - guard)


@dataclass
class FloquetMatrix:
    entries: np.ndarray
    index: FloquetIndex
    omega: float
    g: float = 0.0
    guard: int = 0
    diag_model: np.ndarray = None
    symmetrization_correction: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.index.dim

    def inner_mask(self, frac=None):
        return self.index.inner(self.guard, frac)


def fourier_coefficients(samples, p):
    """(1/T) int exp(-i p omega t) f(t) dt from uniform samples along the last axis."""
    n_t = samples.shape[-1]
    return (np.fft.fft(samples, axis=-1) / n_t)[..., np.mod(p, n_t)]


def assemble_from_samples(energies, coupling, omega, n_f, guard=0, g=0.0, meta=None):
    """Assemble M from E[n, k] and A[n, m, k] sampled on a uniform period grid."""
    n_b, n_t = energies.shape
    if n_t < 4 * n_f:
        raise AliasError(f"N_time={n_t} < 4 N_f={4 * n_f}; Fourier integrals would alias")
    index = FloquetIndex(n_f, n_b)
    p = np.arange(-2 * n_f, 2 * n_f + 1)
    e_hat = fourier_coefficients(energies, p)  # (n_b, 4 n_f + 1)
    a_hat = fourier_coefficients(coupling, p)  # (n_b, n_b, 4 n_f + 1)
    blocks = np.array(a_hat, copy=True)
    idx = np.arange(n_b)
    blocks[idx, idx, :] += e_hat
    M = np.empty((index.dim, index.dim), complex)
    for a in range(2 * n_f + 1):
        for b in range(2 * n_f + 1):
            # rows j1 = a - n_f, cols k1 = b - n_f, p = j1 - k1
            M[a * n_b:(a + 1) * n_b, b * n_b:(b + 1) * n_b] = blocks[:, :, a - b + 2 * n_f]
    j1 = index.j1
    M[np.diag_indices(index.dim)] += omega * j1
    defect = float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0
    M = 0.5 * (M + M.conj().T)
    diag_model = omega * j1 + energies.mean(axis=1)[index.j2]
    return FloquetMatrix(M, index, omega, g, guard, diag_model, defect / 2.0, dict(meta or {}))


def assemble(cfg, spectrum, coupling, n_f=None):
    n_f = cfg.N_f if n_f is None else n_f
    meta = {"L": cfg.L, "omega": cfg.omega, "g": cfg.g, "N_f": n_f,
            "N_bands": spectrum.n_bands, "N_time": cfg.N_time, "guard": cfg.guard}
    return assemble_from_samples(spectrum.energies, coupling.A, cfg.omega, n_f,
                                 guard=cfg.guard, g=cfg.g, meta=meta)


def offdiag(M):
    M = np.asarray(getattr(M, "entries", M))
    out = M.copy()
    out[np.diag_indices_from(out)] = 0.0
    return out


def decay_profile(M, floor=1e-12):
    """Sup of |entries| at each l1 index distance d >= 1, and a power-law fit.

    Returns (profile, exponent) where profile is a list of (d, sup) and the
    exponent is the least-squares slope of log sup against log d over the
    distances whose sup exceeds ``floor`` times the largest one (nan if fewer
    than two such points).
    """
    dist = M.index.distance()
    A = np.abs(M.entries)
    dmax = int(dist.max())
    sup = np.zeros(dmax + 1)
    np.maximum.at(sup, dist.ravel(), A.ravel())
    profile = [(d, float(sup[d])) for d in range(1, dmax + 1)]
    d = np.arange(1, dmax + 1)
    s = sup[1:]
    keep = s > floor * (s.max() if s.size and s.max() > 0 else 1.0)
    keep &= s > 0
    if keep.sum() < 2:
        return profile, float("nan")
    slope = np.polyfit(np.log(d[keep]), np.log(s[keep]), 1)[0]
    return profile, float(slope)


def finite_norm(M, r=0.0, delta=0.0, M_other=None, omega_other=None, index=None):
    """Truncated weighted norm sum_d exp(|d| r) <|d|>^delta sup_{i-j=d} |M_ij|.

    ``d`` runs over index differences in Z^2 with |d| the l1 length and
    <x> = (1 + x^2)^(1/2). If a second matrix at frequency ``omega_other`` is
    supplied, the sup also includes the difference quotient in omega.
    """
    if r < 0 or delta < 0:
        raise ValueError("r and delta must be non-negative")
    index = getattr(M, "index", index)
    ent = np.asarray(getattr(M, "entries", M))
    if index is None:
        raise ValueError("an index is needed to group entries by Z^2 offset")
    val = np.abs(ent)
    if M_other is not None:
        other = np.asarray(getattr(M_other, "entries", M_other))
        dw = float(omega_other) - float(M.omega)
        if dw == 0:
            raise ValueError("the two frequencies must differ")
        val = val + np.abs(other - ent) / abs(dw)
    j1, j2 = index.j1, index.j2
    dj1 = j1[:, None] - j1[None, :]
    dj2 = j2[:, None] - j2[None, :]
    w2 = 2 * index.n_bands - 1
    key = (dj1 + 2 * index.n_f) * w2 + (dj2 + index.n_bands - 1)
    sup = np.zeros((4 * index.n_f + 1) * w2)
    np.maximum.at(sup, key.ravel(), val.ravel())
    o1, o2 = np.divmod(np.arange(sup.size), w2)
    length = np.abs(o1 - 2 * index.n_f) + np.abs(o2 - (index.n_bands - 1))
    if r * length.max(initial=0) > 700:
        raise OverflowGuard(f"exp(|d| r) overflows for r={r} at |d|={length.max()}")
    weight = np.exp(length * r) * (1.0 + length.astype(float) ** 2) ** (delta / 2.0)
    return float(np.sum(weight * sup))


def matrix_rows(M):
    """(i, j, re, im) for every non-zero entry, row-major; the text export format."""
    ent = np.asarray(getattr(M, "entries", M))
    ii, jj = np.nonzero(ent)
    vals = ent[ii, jj]
    return [(int(i), int(j), float(v.real), float(v.imag)) for i, j, v in zip(ii, jj, vals)]


def matrix_from_rows(rows, dim):
    out = np.zeros((dim, dim), complex)
    for i, j, re, im in rows:
        out[int(i), int(j)] = complex(float(re), float(im))
    return out
