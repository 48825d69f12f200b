import math

import numpy as np
import pytest

from conftest import GOLDEN_OMEGA, cached
from oracles import dop853_evolve
from ringfloquet.dynamics import (
    EvolutionConfig,
    PeriodicGenerator,
    build_floquet_decomposition,
    evolve_states,
    floquet_eigenphases,
    period_map,
    propagate,
    quasienergy_distance,
)
from ringfloquet.errors import UnitarityLoss, ValidationError
from ringfloquet.kam import run


def _gen(p):
    return PeriodicGenerator.from_model(p.spectrum, p.coupling, p.cfg.omega)


def _basis_state(n_bands, *bands):
    c = np.zeros(n_bands, complex)
    c[list(bands)] = 1.0
    return c / np.linalg.norm(c)


@pytest.fixture(scope="module")
def kam_gen(ring_kam):
    return _gen(ring_kam)


@pytest.fixture(scope="module")
def decomposition(ring_kam):
    M = ring_kam.floquet()
    return M, build_floquet_decomposition(run(M), M)


# ---------------------------------------------------------------- generator


def test_generator_interpolates_samples(kam_gen, ring_kam):
    grid = ring_kam.cfg.t_grid
    assert np.allclose(kam_gen.energies_at(grid), ring_kam.spectrum.energies, atol=1e-12, rtol=0)
    H = kam_gen.h(grid[:5])
    assert np.abs(H - np.conj(np.swapaxes(H, 1, 2))).max() == 0.0


def test_generator_is_periodic(kam_gen):
    t = np.array([0.3, 1.7])
    assert np.abs(kam_gen.h(t) - kam_gen.h(t + kam_gen.T)).max() < 1e-12


# ---------------------------------------------------------------- decoupled case


def test_zero_coupling_phases_and_energy(ring_static):
    gen = _gen(ring_static)
    lam, U = floquet_eigenphases(gen, 128)
    means = ring_static.spectrum.means()
    expected = np.exp(-1j * means * gen.T)
    assert np.abs(np.diag(U) - expected).max() < 1e-12
    assert quasienergy_distance(lam, means, gen.T).max() < 1e-12
    c0 = _basis_state(gen.n_bands, 0, 2, 5)
    tr = propagate(EvolutionConfig(3, 128, c0), gen)
    E0 = float(ring_static.spectrum.energies[:, 0] @ np.abs(c0) ** 2)
    assert np.abs(tr.energy - E0).max() < 1e-12
    assert np.abs(tr.populations - tr.populations[0]).max() < 1e-13


# ---------------------------------------------------------------- integrator accuracy


def test_one_period_matches_refined_step_and_dop853(kam_gen):
    c0 = _basis_state(kam_gen.n_bands, 0)
    steps = 512
    coarse = period_map(kam_gen, steps) @ c0
    fine = period_map(kam_gen, 8 * steps) @ c0
    assert np.abs(coarse - fine).max() < 1e-6
    ref = dop853_evolve(lambda t: kam_gen.h(t)[0], c0, np.array([0.0, kam_gen.T]))[-1]
    assert np.abs(fine - ref).max() < 1e-7


def test_single_band_populations_return_after_one_period():
    # g = 0.05 at a sieve-passing frequency; bands 0 and 1 are excluded since
    # <E_1> - <E_0> lies within 0.2 of omega and they exchange a few percent
    p = cached(omega=GOLDEN_OMEGA, g=0.05, N_bands=16, N_time=64, N_f=6)
    U = period_map(_gen(p), 512)
    for n in range(2, 10):
        assert np.abs(np.abs(U[:, n]) ** 2 - np.eye(16)[n]).max() < 1e-3


def test_midpoint_rule_is_second_order(kam_gen):
    c0 = _basis_state(kam_gen.n_bands, 1)
    ref = period_map(kam_gen, 4096) @ c0
    e1 = np.abs(period_map(kam_gen, 256) @ c0 - ref).max()
    e2 = np.abs(period_map(kam_gen, 512) @ c0 - ref).max()
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def test_eigenphases_stable_under_step_doubling(kam_gen):
    a, _ = floquet_eigenphases(kam_gen, 512)
    b, _ = floquet_eigenphases(kam_gen, 1024)
    assert np.abs(a[:, None] - b[None, :]).min(axis=1).max() < 1e-6


def test_evolve_states_matches_period_map(kam_gen):
    C0 = np.eye(kam_gen.n_bands, dtype=complex)
    steps = 256
    out = evolve_states(kam_gen, C0, [kam_gen.T, 0.0, 2 * kam_gen.T], steps)
    U = period_map(kam_gen, steps)
    assert np.array_equal(out[1], C0)
    assert np.abs(out[0] - U).max() < 1e-13
    assert np.abs(out[2] - U @ U).max() < 1e-12
    with pytest.raises(ValidationError):
        evolve_states(kam_gen, C0, [0.1234 * kam_gen.T / steps], steps)


# ---------------------------------------------------------------- propagate contract


def test_norm_conserved_without_renormalisation(kam_gen):
    c0 = _basis_state(kam_gen.n_bands, 0, 1)
    tr = propagate(EvolutionConfig(20, 256, c0, record_every=16), kam_gen)
    assert tr.unitarity_defect.max() < 1e-10
    assert np.isrealobj(tr.energy)
    assert tr.step_defect < 1e-13
    assert len(tr.times) == 20 * 256 // 16 + 1


def test_unitarity_loss_raised(kam_gen):
    with pytest.raises(UnitarityLoss):
        propagate(EvolutionConfig(1, 256, tol_unitary=1e-18), kam_gen)


@pytest.mark.parametrize(
    "kw",
    [dict(steps_per_period=64), dict(initial_state=np.ones(16)), dict(initial_state=np.ones(3) / math.sqrt(3)),
     dict(n_periods=-1), dict(record_every=0)],
)
def test_evolution_config_validation(kw):
    with pytest.raises(ValidationError):
        EvolutionConfig(**kw).resolved(16)


def test_default_steps_resolve_fastest_phase():
    steps, c0 = EvolutionConfig().resolved(40)
    assert steps == 320 and c0[0] == 1.0


def test_tail_mass_small_at_nonresonant_frequency(ring_kam, kam_gen):
    r = float(ring_kam.spectrum.means()[kam_gen.n_bands - 5])
    tr = propagate(EvolutionConfig(50, 256, _basis_state(kam_gen.n_bands, 0), tail_thresholds=(r,),
                                   record_every=8), kam_gen)
    assert tr.tails[r].max() < 0.01
    early = tr.energy[tr.times <= 10 * kam_gen.T]
    assert tr.energy.max() <= 1.1 * early.max()


def test_energy_trace_stable_under_band_doubling():
    om = GOLDEN_OMEGA
    small = cached(omega=om, g=0.02, N_bands=16, N_time=64, N_f=6)
    large = cached(omega=om, g=0.02, N_bands=32, N_time=64, N_f=6)
    traces = []
    for p in (small, large):
        gen = _gen(p)
        c0 = _basis_state(gen.n_bands, 0, 1, 3)  # support on the lowest quarter of 16 bands
        traces.append(propagate(EvolutionConfig(10, 512, c0, record_every=8), gen).energy)
    rel = np.abs(traces[0] - traces[1]) / np.abs(traces[1])
    assert rel.max() < 1e-3


# ---------------------------------------------------------------- Floquet factorisation


def test_kam_quasienergies_match_eigenphases(kam_gen, decomposition):
    _, dec = decomposition
    lam, _ = floquet_eigenphases(kam_gen, 512)
    # exp(-i e T) depends on e only mod omega
    assert quasienergy_distance(lam, dec.e_inf, kam_gen.T).max() < 1e-5


def test_decomposition_reproduces_integrator(kam_gen, decomposition):
    M, dec = decomposition
    steps = 512
    assert dec.fibering_defect < 1e-5
    assert dec.periodicity_defect < 1e-6
    times = np.arange(0, 10 * steps + 1, 32) * (kam_gen.T / steps)
    S = evolve_states(kam_gen, np.eye(kam_gen.n_bands, dtype=complex), times, steps)
    R = dec.propagator(times)
    assert np.abs(S - R).max() < 1e-4


def test_decomposition_is_unitary_at_each_time(decomposition):
    _, dec = decomposition
    for F in dec.samples[::8]:
        assert np.abs(F.conj().T @ F - np.eye(F.shape[0])).max() < 1e-6


def test_decomposition_in_zero_coupling_limit(ring_static):
    M = ring_static.floquet()
    dec = build_floquet_decomposition(run(M), M)
    assert np.allclose(dec.e_inf, ring_static.spectrum.means(), atol=1e-12, rtol=0)
    assert np.abs(dec.F(np.linspace(0, 2 * np.pi, 5)) - np.eye(M.index.n_bands)).max() < 1e-12


def test_quasienergy_shift_is_order_g():
    om = GOLDEN_OMEGA
    C = {}
    for g in (0.02, 0.04):
        p = cached(omega=om, g=g, N_bands=16, N_time=64, N_f=6)
        M = p.floquet()
        dec = build_floquet_decomposition(run(M), M)
        bulk = slice(2, 12)
        C[g] = np.abs(dec.e_inf - p.spectrum.means())[bulk].max() / g
    assert np.isfinite(list(C.values())).all()
    assert max(C.values()) / min(C.values()) < 3.0


def test_decomposition_serialises(decomposition):
    _, dec = decomposition
    d = dec.to_dict()
    assert len(d["e_inf"]) == dec.e_inf.size and d["omega"] == dec.omega
