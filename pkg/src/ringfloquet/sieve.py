"""Diophantine frequency sieve.

At level l the frequencies with

    |omega k + e_m(omega) - e_n(omega)| < gamma_l (k + n - m)^(-sigma),
    gamma_l = gamma / l^mu,   k >= 1,  0 <= m < n <= n_max,

are removed from the window [omega_lo, omega_hi]. Level energies come either
from the large-n surrogate e_n = (n pi/L)^2 + omega/2 + <W> + 4g/L, for which
e_n - e_m does not depend on omega and every interval has a closed form, or
from a user callable e(n, omega) with Lipschitz constant below one, handled by
monotone root finding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .errors import AmbiguousNearRational, TruncationWarning, ValidationError

TRUNCATION_SHARE = 1e-3


def surrogate_levels(L=math.pi, g=0.0, mean_W=0.0):
    """e(n, omega) = (n pi/L)^2 + omega/2 + <W> + 4g/L."""
    scale = (math.pi / L) ** 2

    def e(n, omega):
        return scale * np.asarray(n, dtype=float) ** 2 + 0.5 * omega + mean_W + 4.0 * g / L

    e.affine = True
    return e


def constant_levels(values):
    """Levels frozen in omega, e.g. band means computed at one frequency."""
    values = np.asarray(values, dtype=float)

    def e(n, omega):
        return values[np.asarray(n)]

    e.affine = True
    e.n_available = values.size
    return e


@dataclass
class SieveConfig:
    omega_window: tuple = (0.7, 1.4)
    gamma: float = 1e-3
    sigma: float = 3.0
    mu: float = 2.0
    n_level: int = 1
    levels: object = None  # callable e(n, omega); default: surrogate with L = pi
    n_max: int = 40
    k_max: int = None  # default: smallest k beyond which no resonance is possible

    def __post_init__(self):
        lo, hi = map(float, self.omega_window)
        if not (0 < lo < hi):
            raise ValidationError("omega window must satisfy 0 < omega_lo < omega_hi")
        self.omega_window = (lo, hi)
        if self.gamma < 0 or self.sigma <= 0 or self.n_level < 1 or self.n_max < 1:
            raise ValidationError("gamma >= 0, sigma > 0, n_level >= 1, n_max >= 1 required")
        if self.levels is None:
            self.levels = surrogate_levels()
        avail = getattr(self.levels, "n_available", None)
        if avail is not None and self.n_max >= avail:
            raise ValidationError(f"n_max={self.n_max} exceeds the {avail} supplied levels")
        gaps = np.diff(self.levels(np.arange(self.n_max + 1), 0.5 * (lo + hi)))
        if np.any(np.diff(gaps) <= 0):
            warnings.warn("level gaps are not increasing (growing-gap precondition)", RuntimeWarning)

    def gamma_level(self, level):
        return self.gamma / float(level) ** self.mu

    def resolved_k_max(self):
        if self.k_max is not None:
            return int(self.k_max)
        lo, hi = self.omega_window
        spread = max(np.max(self.levels(np.arange(self.n_max + 1), w)) - self.levels(0, w) for w in (lo, hi))
        return max(1, int(math.floor((spread + self.gamma) / lo)) + 1)


@dataclass
class Interval:
    lo: float
    hi: float
    k: int
    m: int
    n: int
    level: int

    @property
    def length(self):
        return self.hi - self.lo


@dataclass
class SieveReport:
    window: tuple
    excluded_intervals: list
    total_measure: float
    level_measures: list = field(default_factory=list)
    raw_count: int = 0
    truncation_share: float = 0.0

    def contains(self, omega):
        for iv in self.excluded_intervals:
            if iv.lo <= omega <= iv.hi:
                return iv
        return None

    def gaps(self):
        """Complement of the excluded set inside the window, as (lo, hi) pairs."""
        lo, hi = self.window
        out, cur = [], lo
        for iv in self.excluded_intervals:
            if iv.lo > cur:
                out.append((cur, iv.lo))
            cur = max(cur, iv.hi)
        if cur < hi:
            out.append((cur, hi))
        return out

    def to_dict(self):
        return {
            "window": list(self.window),
            "total_measure": self.total_measure,
            "level_measures": list(self.level_measures),
            "raw_count": self.raw_count,
            "truncation_share": self.truncation_share,
            "excluded_intervals": [
                {"lo": iv.lo, "hi": iv.hi, "k": iv.k, "m": iv.m, "n": iv.n, "level": iv.level}
                for iv in self.excluded_intervals
            ],
        }


def _affine_candidates(cfg, width_scale):
    """All raw intervals (lo, hi, k, m, n) for omega-independent differences."""
    lo_w, hi_w = cfg.omega_window
    n_idx = np.arange(cfg.n_max + 1)
    # e_n - e_m is omega independent; evaluate the omega/2 part at 0
    e = cfg.levels(n_idx, 0.0)
    m, n = np.triu_indices(cfg.n_max + 1, k=1)
    delta = e[n] - e[m]
    k_max = cfg.resolved_k_max()
    rows = []
    for k in range(1, k_max + 1):
        half = width_scale * (k + n - m).astype(float) ** (-cfg.sigma) / k
        center = delta / k
        sel = (center + half > lo_w) & (center - half < hi_w)
        if sel.any():
            rows.append(np.column_stack([
                np.maximum(center[sel] - half[sel], lo_w),
                np.minimum(center[sel] + half[sel], hi_w),
                np.full(sel.sum(), k), m[sel], n[sel],
            ]))
    if not rows:
        return np.empty((0, 5))
    return np.vstack(rows)


def _general_candidates(cfg, width_scale):
    """Raw intervals for a monotone f(omega) = omega k + e_m(omega) - e_n(omega)."""
    lo_w, hi_w = cfg.omega_window
    e = cfg.levels
    k_max = cfg.resolved_k_max()
    out = []
    for n in range(1, cfg.n_max + 1):
        for m in range(n):
            for k in range(1, k_max + 1):
                w = width_scale * (k + n - m) ** (-cfg.sigma)

                def f(x, k=k, m=m, n=n):
                    return x * k + float(e(m, x)) - float(e(n, x))

                f_lo, f_hi = f(lo_w), f(hi_w)
                if f_lo >= w:
                    break  # f increases with k, larger k only moves further right
                if f_hi <= -w:
                    continue
                a = lo_w if f_lo >= -w else brentq(lambda x: f(x) + w, lo_w, hi_w, xtol=1e-15)
                b = hi_w if f_hi <= w else brentq(lambda x: f(x) - w, lo_w, hi_w, xtol=1e-15)
                if b > a:
                    out.append((a, b, k, m, n))
    return np.array(out, dtype=float).reshape(-1, 5)


def _merge(raw):
    """Union of raw (lo, hi, k, m, n, level) rows.

    Each merged piece keeps the widest raw witness and the lowest level.
    """
    if raw.shape[0] == 0:
        return []
    raw = raw[np.lexsort((raw[:, 1], raw[:, 0]))]
    # a new piece starts wherever lo exceeds the running max of earlier hi's
    run_hi = np.maximum.accumulate(raw[:, 1])
    starts = np.flatnonzero(np.r_[True, raw[1:, 0] > run_hi[:-1]])
    ends = np.r_[starts[1:], raw.shape[0]]
    width = raw[:, 1] - raw[:, 0]
    merged = []
    for a, b in zip(starts, ends):
        best = raw[a + int(np.argmax(width[a:b]))]
        merged.append(Interval(float(raw[a, 0]), float(run_hi[b - 1]), int(best[2]), int(best[3]),
                               int(best[4]), int(raw[a:b, 5].min())))
    return merged


def _measure(intervals):
    return float(sum(iv.length for iv in intervals))


def resonance_intervals(cfg):
    """Excluded set over all levels up to ``cfg.n_level``."""
    affine = getattr(cfg.levels, "affine", False)
    build = _affine_candidates if affine else _general_candidates
    all_raw = []
    level_measures = []
    previous = 0.0
    trunc_share = 0.0
    for level in range(1, cfg.n_level + 1):
        raw = build(cfg, cfg.gamma_level(level))
        all_raw.append(np.column_stack([raw, np.full(raw.shape[0], level)]))
        union = _merge(np.vstack(all_raw))
        total = _measure(union)
        level_measures.append(total - previous)
        previous = total
        if level == 1 and raw.shape[0]:
            edge = raw[raw[:, 4] == cfg.n_max]
            trunc_share = float(np.sum(edge[:, 1] - edge[:, 0]) / max(np.sum(raw[:, 1] - raw[:, 0]), 1e-300))
    stacked = np.vstack(all_raw) if all_raw else np.empty((0, 6))
    intervals = _merge(stacked)
    if trunc_share > TRUNCATION_SHARE:
        warnings.warn(
            f"levels at n_max={cfg.n_max} contribute {trunc_share:.2%} of the raw excluded length",
            TruncationWarning,
        )
    return SieveReport(cfg.omega_window, intervals, _measure(intervals), level_measures,
                       int(stacked.shape[0]), trunc_share)


@dataclass
class Membership:
    passed: bool
    witness: Interval = None

    def __bool__(self):
        return self.passed


def is_nonresonant(omega, cfg, report=None):
    lo, hi = cfg.omega_window
    if not lo <= omega <= hi:
        raise ValidationError(f"omega={omega} outside the window [{lo}, {hi}]")
    report = report or resonance_intervals(cfg)
    hit = report.contains(omega)
    if hit is None:
        return Membership(True)
    # report the raw triple that actually covers omega rather than the merged witness
    e = cfg.levels
    best = None
    for k in range(1, cfg.resolved_k_max() + 1):
        for n in range(1, cfg.n_max + 1):
            m = np.arange(n)
            f = np.abs(omega * k + e(m, omega) - e(n, omega))
            for level in range(1, cfg.n_level + 1):
                w = cfg.gamma_level(level) * (k + n - m).astype(float) ** (-cfg.sigma)
                ok = np.flatnonzero(f < w)
                if ok.size:
                    i = ok[np.argmin(f[ok] / w[ok])]
                    score = f[i] / w[i]
                    if best is None or score < best[0]:
                        best = (score, Interval(hit.lo, hit.hi, k, int(m[i]), n, level))
    return Membership(False, best[1] if best else hit)


def widest_gap_midpoint(report, margin=0.0):
    """Midpoint of the widest non-excluded gap, optionally shrunk by ``margin``."""
    gaps = [(b - a, a, b) for a, b in report.gaps() if b - a > 2 * margin]
    if not gaps:
        raise ValidationError("no non-excluded gap in the window")
    _, a, b = max(gaps)
    return 0.5 * (a + b)


def lipschitz_seminorm(levels, omegas, n_max):
    """Empirical sup |Delta(e_n - e_m)/Delta omega| on a frequency grid."""
    omegas = np.asarray(omegas, dtype=float)
    n = np.arange(n_max + 1)
    E = np.array([levels(n, w) for w in omegas])  # (grid, n)
    dE = np.diff(E, axis=0) / np.diff(omegas)[:, None]
    diff = dE[:, :, None] - dE[:, None, :]
    return float(np.max(np.abs(diff)))


@dataclass
class RationalClass:
    resonant: bool
    p: int = None
    q: int = None
    ratio: float = math.nan

    def __str__(self):
        return f"resonant {self.p}/{self.q}" if self.resonant else "non-rational-detectable"


def _convergents(x, q_cap):
    """Continued-fraction convergents p/q of x (float), up to denominator q_cap."""
    h0, h1 = 0, 1
    k0, k1 = 1, 0
    frac = Fraction(x)  # exact binary value of the float
    while True:
        a = math.floor(frac)
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        if k1 > q_cap:
            return
        yield h1, k1
        rest = frac - a
        if rest == 0:
            return
        frac = 1 / rest


def classify_rational(omega, L, tol=1e-12, q_max=10**6, isolation=1e-3):
    """Decide whether r = omega (L/pi)^2 is rational.

    A convergent p/q (q <= q_max) matches when |r - p/q| <= tol relative to
    max(1, r) and the approximation is isolated, |r - p/q| q^2 <= isolation;
    ordinary convergents of irrationals have |r - p/q| q^2 of order one.
    """
    if omega <= 0 or L <= 0:
        raise ValidationError("omega > 0 and L > 0 required")
    r = omega * (L / math.pi) ** 2
    scale = max(1.0, abs(r))
    conv = list(_convergents(r, q_max))
    for i, (p, q) in enumerate(conv):
        err = abs(r - p / q)
        if err <= tol * scale and err * q * q <= isolation * scale:
            if i + 1 < len(conv):
                p2, q2 = conv[i + 1]
                if abs(r - p2 / q2) <= tol * scale:
                    raise AmbiguousNearRational(f"both {p}/{q} and {p2}/{q2} match omega (L/pi)^2 = {r!r}")
            return RationalClass(True, p, q, r)
    return RationalClass(False, ratio=r)
