import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import cached
from ringfloquet.cell import ModelConfig
from ringfloquet.dynamics import PeriodicGenerator, floquet_eigenphases
from ringfloquet.errors import NotResonant
from ringfloquet.resonant import (
    decile_medians,
    essential_spectrum_check,
    gauge_phases,
    hs_profile,
    match_phases_to_bands,
    predicted_phases,
    reference_levels,
    residual_perturbation,
)

RES40 = dict(omega=2.0, g=0.05, N_bands=40, N_time=64, N_f=2)
RES80 = dict(omega=2.0, g=0.05, N_bands=80, N_time=64, N_f=2, n_x=2048)


def resonant_report(p):
    gen = PeriodicGenerator.from_model(p.spectrum, p.coupling, p.cfg.omega)
    _, U = floquet_eigenphases(gen, 8 * p.spectrum.n_bands)
    w, V = np.linalg.eig(U)
    return essential_spectrum_check(p.cfg, p.spectrum, p.coupling, w, V), U


@pytest.fixture(scope="module")
def res40():
    p = cached(**RES40)
    rep, U = resonant_report(p)
    return p, rep, U


@pytest.fixture(scope="module")
def res80():
    p = cached(**RES80)
    rep, _ = resonant_report(p)
    return p, rep


# ---------------------------------------------------------------- gauge


def test_gauge_phase_examples():
    cfg = ModelConfig(g=0.1, omega=2.0)
    assert np.all(gauge_phases(cfg, 0.0) == 0.0)
    assert np.all(gauge_phases(cfg, cfg.T) == 0.0)
    quarter = gauge_phases(cfg, cfg.T / 4, 6)
    expected = 0.2 / math.pi * np.array([-1, 1, -1, 1, -1, 1])  # (-1)^(n+1)
    assert np.allclose(quarter, expected, atol=1e-15, rtol=0)


@given(st.floats(0.1, 5.0), st.floats(0.0, 0.5), st.integers(0, 50))
def test_gauge_vanishes_at_whole_periods(omega, g, m):
    cfg = ModelConfig(omega=omega, g=g)
    assert np.all(gauge_phases(cfg, m * cfg.T, 8) == 0.0)


def test_gauge_matches_integral():
    cfg = ModelConfig(g=0.07, omega=1.3)
    t = np.linspace(0, cfg.T, 2001)
    n = np.arange(5)
    integrand = (4 * cfg.g / cfg.L) * ((-1.0) ** (n + 1))[:, None] * np.cos(cfg.omega * t)[None, :]
    dt = t[1] - t[0]
    cum = np.concatenate([np.zeros((5, 1)), np.cumsum(0.5 * (integrand[:, 1:] + integrand[:, :-1]) * dt, axis=1)],
                         axis=1)
    assert np.abs(cum - gauge_phases(cfg, t, 5)).max() < 1e-6


def test_predicted_points_unit_modulus():
    cfg = ModelConfig(omega=2.0, g=0.05, w_cos=(0.2,))
    z = predicted_phases(cfg, 30)
    assert np.allclose(np.abs(z), 1.0, atol=1e-15)
    n = np.arange(30)
    assert np.allclose(reference_levels(cfg, 30), n**2 + 1.0 + 0.2 + 0.2 / math.pi)


# ---------------------------------------------------------------- residual


def test_residual_offdiagonal_is_gauged_coupling(res40):
    p = res40[0]
    for k in (0, 5, 17):
        R = residual_perturbation(p.cfg, p.spectrum, p.coupling, k).matrix
        g = gauge_phases(p.cfg, p.cfg.t_grid[k], p.spectrum.n_bands)
        expected = np.exp(1j * (g[:, None] - g[None, :])) * p.coupling.A[:, :, k]
        off = ~np.eye(R.shape[0], dtype=bool)
        assert np.abs(R[off] - expected[off]).max() < 1e-12


def test_residual_diagonal_decays(res40):
    p = res40[0]
    diag = np.array([np.abs(np.diagonal(residual_perturbation(p.cfg, p.spectrum, p.coupling, k).matrix))
                     for k in range(0, 64, 8)]).max(axis=0)
    n = np.arange(5, 35)
    assert np.max(diag[n] * n) <= 2 * np.max(diag[5:10] * np.arange(5, 10))


def test_static_residual_is_diagonal():
    p = cached(omega=1e-3, g=0.0, N_bands=12, N_time=8, N_f=1, guard=0)
    R = residual_perturbation(p.cfg, p.spectrum, p.coupling, 0).matrix
    assert np.abs(R - np.diag(np.diagonal(R))).max() == 0.0
    n = np.arange(1, 12)
    assert np.all(np.abs(np.diagonal(R))[1:] * n < 1.0)
    assert residual_perturbation(p.cfg, p.spectrum, p.coupling, 0).hs_norm <= math.sqrt(np.sum(1.0 / n**2)) + 1.0


def test_hs_norm_saturates_under_doubling(res40, res80):
    h40 = res40[1].hs_norm
    h80 = res80[1].hs_norm
    assert np.isfinite(h40)
    assert abs(h80 - h40) / h80 < 0.05


def test_hs_profile_is_finite(res40):
    p = res40[0]
    prof = hs_profile(p.cfg, p.spectrum, p.coupling)
    assert prof.shape == (p.cfg.N_time,) and np.isfinite(prof).all()


# ---------------------------------------------------------------- clustering


def test_clustering_passes_and_decays(res40):
    _, rep, _ = res40
    assert rep.passed and (rep.p, rep.q) == (2, 1)
    med = [m for _, m in rep.decile_medians]
    assert all(a > b for a, b in zip(med, med[1:]))
    # consistent with O(1/n): n times the median stays bounded
    scaled = [n * m for n, m in rep.decile_medians]
    assert max(scaled) <= 1.5 * scaled[0]


def test_distances_stable_under_band_doubling(res40, res80):
    d40 = res40[1].distances
    d80 = res80[1].distances
    bands = res40[1].bulk
    assert np.max(np.abs(d40[bands] - d80[bands]) / d80[bands]) < 0.1


def test_every_eigenphase_near_a_predicted_point(res40):
    _, rep, _ = res40
    assert np.all(np.abs(np.abs(rep.computed) - 1) < 1e-10)
    assert np.median(rep.nearest_distances) < rep.threshold


def test_zero_coupling_phases_match_levels():
    p = cached(omega=2.0, g=0.0, N_bands=16, N_time=16, N_f=1, guard=0)
    rep, U = resonant_report(p)
    exact = np.exp(-1j * p.spectrum.means() * p.cfg.T)
    assert np.abs(rep.computed - exact).max() < 1e-10
    # only the O(1/n) Airy correction separates them from the predicted points
    assert np.all(np.diff(rep.distances[2:]) < 0)


def test_eigenphases_gauge_invariant(res40):
    p, _, U = res40
    gen = PeriodicGenerator.from_model(p.spectrum, p.coupling, p.cfg.omega)
    phases = gauge_phases(p.cfg, p.cfg.t_grid, p.spectrum.n_bands)
    gauged = gen.gauge(phases)
    _, Ug = floquet_eigenphases(gauged, 8 * p.spectrum.n_bands)
    a = np.linalg.eigvals(U)
    b = np.linalg.eigvals(Ug)
    assert np.abs(a[:, None] - b[None, :]).min(axis=1).max() < 1e-8


def test_not_resonant_raises():
    p = cached(omega=math.sqrt(2.0), g=0.0, N_bands=6, N_time=8, N_f=1, guard=0)
    with pytest.raises(NotResonant):
        essential_spectrum_check(p.cfg, p.spectrum, p.coupling, np.ones(6), np.eye(6))


def test_report_serialises(res40):
    d = res40[1].to_dict()
    assert d["p"] == 2 and d["q"] == 1 and len(d["distances"]) == 40


def test_match_phases_permutation():
    P = np.eye(5)[[3, 0, 4, 1, 2]]
    perm = match_phases_to_bands(P)
    assert all(P[n, perm[n]] == 1 for n in range(5))


def test_decile_medians_groups():
    v = np.arange(20, dtype=float)
    out = decile_medians(v, np.arange(20), 4)
    assert out == [(0, 2.0), (5, 7.0), (10, 12.0), (15, 17.0)]
