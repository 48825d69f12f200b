"""Iterative KAM diagonalisation of a finite Floquet matrix.

Starting from M_1 = B_1 M the scheme iterates

    W_n = M_{n;ij} / (M_{n;ii} - M_{n;jj})   (i != j, non-resonant entries),
    U_n = exp(W_n) U_{n-1},
    M_{n+1} = exp(W_n) M_n exp(-W_n) + U_n (D_{n+1} M) U_n^*,

so that M_n = U_n (B_n M) U_n^* at every step. Here D_d M keeps the entries at
l1 index distance d and B_n M = sum_{d <= n} D_d M. Entries whose divisor is
below gamma_n |i - j|^(-sigma), or which are too large relative to their
divisor for a perturbative step, are left in place and logged.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linear_sum_assignment

from .errors import AllResonant, NotConverged, Resonant, SeriesDivergence, UnitarityLoss
from .floquet import decay_profile, offdiag

log = logging.getLogger(__name__)

SERIES_TOL = 1e-14
W_SAFETY = 5.0
BLOCK_RATIO = 0.5


def _entries(M):
    return np.asarray(getattr(M, "entries", M))


def _distance(M, index=None):
    index = getattr(M, "index", index)
    if index is None:
        n = _entries(M).shape[0]
        i = np.arange(n)
        return np.abs(i[:, None] - i[None, :])
    return index.distance()


def band_part(M, d, index=None, dist=None):
    """D_d M: the entries of M at l1 index distance exactly ``d``."""
    A = _entries(M)
    dist = _distance(M, index) if dist is None else dist
    return np.where(dist == d, A, 0.0)


def offdiag_max(A):
    A = _entries(A)
    if A.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(offdiag(A))))


@dataclass
class ResonanceHit:
    i: int
    j: int
    divisor: float
    entry: float
    k: int = None
    n: int = None
    m: int = None

    def to_dict(self):
        return {key: getattr(self, key) for key in ("i", "j", "divisor", "entry", "k", "n", "m")}


def _hit(i, j, div, entry, index):
    hit = ResonanceHit(int(i), int(j), float(div), float(entry))
    if index is not None:
        a1, a2 = index.unflat(i)
        b1, b2 = index.unflat(j)
        # orient so that k = j1 - k1 >= 0; the divisor reads omega k + e_m - e_n
        if a1 < b1:
            a1, a2, b1, b2 = b1, b2, a1, a2
        hit.k, hit.n, hit.m = int(a1 - b1), int(b2), int(a2)
    return hit


def generator(Mn, gamma_n, sigma, dist=None, index=None, significant=0.0, block_ratio=BLOCK_RATIO):
    """Solve [W, diag M_n] = -(non-resonant part of O M_n).

    Returns (W, hits, divisor_floor). Entries with |M_ij| <= ``significant``
    are ignored; an entry is blocked when its divisor is below
    gamma_n |i-j|^(-sigma) or when |M_ij| > block_ratio |divisor|.
    """
    A = _entries(Mn)
    n = A.shape[0]
    if dist is None:
        dist = _distance(Mn, index)
    diag = np.real(np.diagonal(A))
    div = diag[:, None] - diag[None, :]
    off = ~np.eye(n, dtype=bool)
    mag = np.abs(A)
    active = off & (mag > significant)
    with np.errstate(divide="ignore"):
        floor = gamma_n * np.where(dist > 0, dist, 1).astype(float) ** (-sigma)
    blocked = active & ((np.abs(div) < floor) | (mag > block_ratio * np.abs(div)))
    used = active & ~blocked
    W = np.zeros_like(A, dtype=complex)
    W[used] = A[used] / div[used]
    hits = []
    if blocked.any():
        ii, jj = np.nonzero(np.triu(blocked))
        hits = [_hit(i, j, div[i, j], mag[i, j], index) for i, j in zip(ii, jj)]
    divisor_floor = float(np.min(np.abs(div[used]))) if used.any() else math.inf
    if active.any() and not used.any():
        raise AllResonant(f"all {int(active.sum()) // 2} significant off-diagonal pairs are resonance-blocked",
                          report={"hits": [h.to_dict() for h in hits]})
    return W, hits, divisor_floor


def conjugate_series(W, A, tol=SERIES_TOL, max_order=200):
    """exp(W) A exp(-W) by the Lie-Schwinger series sum_k ad_W^k(A)/k!."""
    out = A.astype(complex, copy=True)
    term = out
    norms = []
    for k in range(1, max_order + 1):
        term = (W @ term - term @ W) / k
        nrm = float(np.max(np.abs(term))) if term.size else 0.0
        out = out + term
        norms.append(nrm)
        if nrm < tol:
            return out
        if len(norms) >= 4 and norms[-1] > norms[-2] > norms[-3] > norms[-4]:
            raise SeriesDivergence(f"Lie-Schwinger terms grew for 3 consecutive orders (order {k})")
    raise SeriesDivergence(f"Lie-Schwinger series not converged after {max_order} orders")


def conjugate_expm(W, A):
    """exp(W) A exp(-W) by scaling-and-squaring; W is anti-Hermitian."""
    E = expm(W)
    return E @ A @ E.conj().T, E


@dataclass
class KamState:
    step: int
    M_n: np.ndarray
    U_n: np.ndarray
    included_band: int
    norms: list = field(default_factory=list)  # (||O M_n||_max, ||W_n||_max)
    divisor_floor: float = math.inf
    hits: list = field(default_factory=list)
    unitarity_defect: float = 0.0

    @classmethod
    def start(cls, M, dist=None):
        A = _entries(M)
        dist = _distance(M) if dist is None else dist
        M1 = np.where(dist <= 1, A, 0.0).astype(complex)
        return cls(1, M1, np.eye(A.shape[0], dtype=complex), 1, [])


def kam_step(state, full_M, gamma_n, sigma, dist=None, index=None, method="expm",
             significant=0.0, tol_unitary=1e-10, block_ratio=BLOCK_RATIO):
    """One iteration; ``method`` is 'expm', 'series' or 'both' (cross-checked)."""
    A = _entries(full_M)
    index = getattr(full_M, "index", index)
    dist = _distance(full_M, index) if dist is None else dist
    W, hits, floor = generator(state.M_n, gamma_n, sigma, dist, index, significant, block_ratio)
    w_norm = float(np.max(np.abs(W))) if W.size else 0.0
    if w_norm * W.shape[0] >= W_SAFETY and np.linalg.norm(W, 2) >= W_SAFETY:
        raise SeriesDivergence(f"||W_n|| = {np.linalg.norm(W, 2):.3g} exceeds the safety bound {W_SAFETY}")
    if method == "series":
        Mc = conjugate_series(W, state.M_n)
        E = expm(W)
    else:
        Mc, E = conjugate_expm(W, state.M_n)
        if method == "both":
            Ms = conjugate_series(W, state.M_n)
            diff = float(np.max(np.abs(Ms - Mc)))
            if diff > 1e-10 * max(1.0, float(np.max(np.abs(Mc)))):
                raise SeriesDivergence(f"series and expm conjugations differ by {diff:.3g}")
    U = E @ state.U_n
    nxt = state.included_band + 1
    D = np.where(dist == nxt, A, 0.0)
    if D.any():
        Mc = Mc + U @ D @ U.conj().T
    Mc = 0.5 * (Mc + Mc.conj().T)
    defect = float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))))
    if defect > tol_unitary:
        raise UnitarityLoss(f"||U*U - I||_max = {defect:.3g} at step {state.step}")
    return KamState(
        step=state.step + 1,
        M_n=Mc,
        U_n=U,
        included_band=nxt,
        norms=state.norms + [(offdiag_max(state.M_n), w_norm)],
        divisor_floor=min(state.divisor_floor, floor),
        hits=hits,
        unitarity_defect=defect,
    )


@dataclass
class KamSchedule:
    gamma: float = None  # default: sqrt of the largest off-diagonal entry
    mu: float = 2.0
    sigma: float = 3.0
    max_steps: int = 400
    tol_offdiag: float = 1e-8
    method: str = "expm"
    block_ratio: float = BLOCK_RATIO

    def gamma_n(self, n):
        return self.gamma * float(n) ** (-self.mu)


@dataclass
class KamReport:
    converged: bool
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    resonance_hits: list
    norm_history: list
    steps: int = 0
    final_offdiag: float = math.nan
    divisor_floor: float = math.inf
    assignment: np.ndarray = None
    matched_eigenvalues: np.ndarray = None
    band_norms: list = field(default_factory=list)
    contraction_K: float = math.nan
    contraction_K_all: float = math.nan
    quadratic_K: float = math.nan
    significant_band: int = 0
    gamma: float = math.nan
    final_matrix: np.ndarray = None
    unitarity_defect: float = 0.0

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "steps": int(self.steps),
            "final_offdiag": float(self.final_offdiag),
            "divisor_floor": float(self.divisor_floor),
            "gamma": float(self.gamma),
            "contraction_K": float(self.contraction_K),
            "contraction_K_all": float(self.contraction_K_all),
            "quadratic_K": float(self.quadratic_K),
            "significant_band": int(self.significant_band),
            "unitarity_defect": float(self.unitarity_defect),
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "matched_eigenvalues": [float(e) for e in self.matched_eigenvalues]
            if self.matched_eigenvalues is not None else None,
            "resonance_hits": [h.to_dict() for h in self.resonance_hits],
            "norm_history": [[float(a), float(b)] for a, b in self.norm_history],
        }


def match_labels(U):
    """Pair final eigenvectors (columns of U^*) with input basis vectors.

    Returns perm with perm[i] = index of the eigenvector assigned to basis
    vector i, maximising the summed overlaps |<e_i, U^* e_k>|.
    """
    overlap = np.abs(U.conj().T)
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty_like(cols)
    perm[rows] = cols
    return perm


def fit_contraction(off_by_step, band_norms, start, floor=0.0):
    """Smallest K with ||OM_{n+1}|| <= K ||OM_n||^2 + ||D_{n+1} M|| for n >= start.

    ``off_by_step[n]`` is ||O M_n||_max (index 0 unused) and ``band_norms[d]``
    is ||D_d M||_max. Steps with ||O M_n|| <= floor are skipped, since entries
    below the solver threshold are deliberately left in place.
    """
    K = 0.0
    for n in range(max(start, 1), len(off_by_step) - 1):
        a, b = off_by_step[n], off_by_step[n + 1]
        d = band_norms[n + 1] if n + 1 < len(band_norms) else 0.0
        if a <= floor:
            continue
        K = max(K, (b - d) / a**2)
    return K


def eigenvector_decay(report, index=None, floor=1e-12):
    """Sup of |(U_inf^*)_{jk}| at each l1 distance |j-k| >= 1 and its log-log slope."""
    V = np.abs(report.eigenvectors)
    if index is None:
        i = np.arange(V.shape[0])
        dist = np.abs(i[:, None] - i[None, :])
    else:
        dist = index.distance()
    dmax = int(dist.max())
    sup = np.zeros(dmax + 1)
    np.maximum.at(sup, dist.ravel(), V.ravel())
    d = np.arange(1, dmax + 1)
    s = sup[1:]
    keep = (s > floor * max(s.max(initial=0.0), 1e-300)) & (s > 0)
    if keep.sum() < 2:
        return list(zip(d.tolist(), s.tolist())), float("nan")
    slope = np.polyfit(np.log(d[keep]), np.log(s[keep]), 1)[0]
    return list(zip(d.tolist(), s.tolist())), float(slope)


def run(M, schedule=None, raise_on_failure=True, index=None):
    """Run the KAM iteration to convergence on a Floquet (or plain Hermitian) matrix."""
    schedule = schedule or KamSchedule()
    A = _entries(M).astype(complex)
    index = getattr(M, "index", index)
    dist = index.distance() if index is not None else _distance(A)
    n = A.shape[0]
    om_max = offdiag_max(A)
    gamma = schedule.gamma if schedule.gamma is not None else math.sqrt(om_max)
    sched = KamSchedule(gamma, schedule.mu, schedule.sigma, schedule.max_steps,
                        schedule.tol_offdiag, schedule.method, schedule.block_ratio)
    dmax = int(dist.max()) if n > 1 else 0
    band_norms = [0.0] + [float(np.max(np.abs(np.where(dist == d, A, 0.0)))) for d in range(1, dmax + 1)]
    significant_band = max([d for d in range(1, dmax + 1) if band_norms[d] > schedule.tol_offdiag], default=0)
    if index is not None and n > 1:
        _, expo = decay_profile(type("_M", (), {"index": index, "entries": A})())
        if expo > -2:  # nan (no off-diagonal entries) is fine
            warnings.warn(f"off-diagonal decay exponent {expo:.3g} > -2", RuntimeWarning)
    # tiny entries cannot matter at the requested tolerance and are not solved for
    significant = 1e-3 * schedule.tol_offdiag

    state = KamState.start(A, dist)
    history = []
    remainders = []  # (||O M_n||, off-diagonal of the conjugated M_n before the new band is added)
    hits = []
    stalled = 0
    while True:
        om = offdiag_max(state.M_n)
        if state.included_band >= dmax and om < schedule.tol_offdiag:
            break
        if state.step > sched.max_steps:
            break
        try:
            nxt = kam_step(state, A, sched.gamma_n(state.step), sched.sigma, dist, index,
                           sched.method, significant, block_ratio=sched.block_ratio)
        except AllResonant as exc:
            # nothing can be eliminated; keep adding bands (which may change
            # nothing) and let the final check decide
            hits = [_hit(h["i"], h["j"], h["divisor"], h["entry"], index) for h in exc.report["hits"]]
            if state.included_band >= dmax:
                history.append((om, 0.0))
                break
            D = np.where(dist == state.included_band + 1, A, 0.0)
            state = KamState(state.step + 1, state.M_n + state.U_n @ D @ state.U_n.conj().T, state.U_n,
                             state.included_band + 1, state.norms + [(om, 0.0)], state.divisor_floor, hits)
            history.append((om, 0.0))
            continue
        hits = nxt.hits
        history.append(nxt.norms[-1])
        if not hits:
            D = np.where(dist == state.included_band + 1, A, 0.0)
            rest = nxt.M_n - nxt.U_n @ D @ nxt.U_n.conj().T if D.any() else nxt.M_n
            remainders.append((om, offdiag_max(rest)))
        state = nxt
        if state.included_band >= dmax and hits:
            # only blocked entries left and they no longer shrink: resonant
            om_new = offdiag_max(state.M_n)
            stalled = stalled + 1 if om_new >= 0.999 * om else 0
            if stalled >= 3:
                break

    Mf = state.M_n
    final_off = offdiag_max(Mf)
    eig = np.real(np.diagonal(Mf)).copy()
    perm = match_labels(state.U_n)
    off_by_step = [math.nan] + [h[0] for h in history] + [final_off]
    K = fit_contraction(off_by_step, band_norms, significant_band, floor=100 * significant)
    K_all = fit_contraction(off_by_step, band_norms, 1, floor=100 * significant)
    # remainders at the level of the deliberately unsolved entries carry no information
    quad = [r / a**2 for a, r in remainders if a > 100 * significant and r > 100 * significant]
    K_quad = max(quad) if quad else math.nan
    report = KamReport(
        converged=final_off < schedule.tol_offdiag,
        eigenvalues=eig,
        eigenvectors=state.U_n.conj().T,
        resonance_hits=hits,
        norm_history=history,
        steps=state.step,
        final_offdiag=final_off,
        divisor_floor=state.divisor_floor,
        assignment=perm,
        matched_eigenvalues=eig[perm],
        band_norms=band_norms,
        contraction_K=K,
        contraction_K_all=K_all,
        quadratic_K=K_quad,
        significant_band=significant_band,
        gamma=gamma,
        final_matrix=Mf,
        unitarity_defect=state.unitarity_defect,
    )
    if report.converged or not raise_on_failure:
        return report
    remaining = [h for h in hits if h.entry >= schedule.tol_offdiag]
    if remaining:
        remaining.sort(key=lambda h: -h.entry)
        top = remaining[0]
        raise Resonant(
            f"{len(remaining)} resonant pairs remain; dominant (k, n, m) = ({top.k}, {top.n}, {top.m}) "
            f"with divisor {top.divisor:.3g}",
            report=report,
            witnesses=remaining,
        )
    raise NotConverged(f"off-diagonal max {final_off:.3g} after {state.step} steps", report=report)
