"""Fundamental solutions of -psi'' + V(x) psi = E psi across one cell.

The cell potential is V(x) = (omega/L) x + W(x) with W a finite Fourier sum.
It does not depend on time, so the fundamental solutions are functions of the
energy alone; the time dependence of the cell problem sits entirely in the
boundary conditions.

Integration uses the fourth-order Magnus method on a uniform grid, vectorised
over a batch of energies. For y = (psi, psi') the one-step exponent is

    Omega = [[a, h], [h (Vbar - E), -a]],  a = sqrt(3) h^2 (V1 - V2) / 12,

with V1, V2 the potential at the two Gauss-Legendre nodes of the step. The
commutator term does not depend on E, and the 2x2 exponential is evaluated in
closed form, so the method stays phase accurate for E far above the potential.
"""

from __future__ import annotations

import numpy as np

from .errors import IntegratorError

_GAUSS_OFFSET = np.sqrt(3.0) / 6.0


def cell_potential(x, L, omega, w_cos=(), w_sin=()):
    """V(x) = (omega/L) x + sum_k a_k cos(2 pi k x/L) + b_k sin(2 pi k x/L)."""
    x = np.asarray(x, dtype=float)
    v = (omega / L) * x
    for k, a in enumerate(w_cos):
        if a:
            v = v + a * np.cos(2.0 * np.pi * k * x / L)
    for k, b in enumerate(w_sin):
        if b and k:
            v = v + b * np.sin(2.0 * np.pi * k * x / L)
    return v


def simpson_weights(n_steps, h):
    if n_steps % 2:
        raise ValueError("Simpson weights need an even number of steps")
    w = np.empty(n_steps + 1)
    w[0::2] = 2.0
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


class CellPropagator:
    """Magnus propagator for the cell ODE, cached per potential.

    ``u`` solves u(0)=1, u'(0)=0 and ``v`` solves v(0)=0, v'(0)=1.
    """

    def __init__(self, L, omega, w_cos=(), w_sin=(), n_x=1024):
        if n_x < 8 or n_x % 2:
            raise ValueError("n_x must be an even integer >= 8")
        self.L = float(L)
        self.omega = float(omega)
        self.w_cos = tuple(w_cos)
        self.w_sin = tuple(w_sin)
        self.n_x = int(n_x)
        self.h = self.L / self.n_x
        self.x = np.linspace(0.0, self.L, self.n_x + 1)
        left = self.x[:-1]
        v1 = self.potential(left + (0.5 - _GAUSS_OFFSET) * self.h)
        v2 = self.potential(left + (0.5 + _GAUSS_OFFSET) * self.h)
        self._vbar = 0.5 * (v1 + v2)
        self._alpha = np.sqrt(3.0) * self.h**2 / 12.0 * (v1 - v2)
        self.weights = simpson_weights(self.n_x, self.h)

    def potential(self, x):
        return cell_potential(x, self.L, self.omega, self.w_cos, self.w_sin)

    def _sweep(self, E, store):
        E = np.atleast_1d(np.asarray(E, dtype=float))
        h = self.h
        u = np.ones_like(E)
        up = np.zeros_like(E)
        v = np.zeros_like(E)
        vp = np.ones_like(E)
        if store:
            out = np.empty((4, self.n_x + 1, E.size))
            out[:, 0] = u, up, v, vp
        for j in range(self.n_x):
            a = self._alpha[j]
            q = self._vbar[j] - E
            kappa2 = a * a + h * h * q
            theta = np.sqrt(np.abs(kappa2))
            osc = kappa2 < 0.0
            c = np.where(osc, np.cos(theta), np.cosh(theta))
            # sin(theta)/theta resp. sinh(theta)/theta, both -> 1 at theta = 0
            safe = np.where(theta > 0.0, theta, 1.0)
            s = np.where(osc, np.sinc(theta / np.pi), np.where(theta > 0.0, np.sinh(theta) / safe, 1.0))
            m11 = c + s * a
            m22 = c - s * a
            m12 = s * h
            m21 = s * h * q
            u, up = m11 * u + m12 * up, m21 * u + m22 * up
            v, vp = m11 * v + m12 * vp, m21 * v + m22 * vp
            if store:
                out[:, j + 1] = u, up, v, vp
        ends = np.array([u, up, v, vp])
        bad = ~np.isfinite(ends).all(axis=0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            col = out[:, :, i] if store else None
            x_fail = self.L
            if col is not None:
                first = np.flatnonzero(~np.isfinite(col).all(axis=0))
                x_fail = float(self.x[first[0]]) if first.size else self.L
            raise IntegratorError(
                f"non-finite fundamental solution at E={E[i]!r} (x={x_fail:.6g})",
                energy=float(E[i]),
                x=x_fail,
            )
        return out if store else ends

    def ends(self, E):
        """(u(L), u'(L), v(L), v'(L)) for each energy in ``E``."""
        return self._sweep(E, store=False)

    def profiles(self, E):
        """Array (4, n_x + 1, len(E)) of u, u', v, v' on the grid ``self.x``."""
        return self._sweep(E, store=True)
