"""Wavefunction and density-matrix propagators, observables, Wigner."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import qchaos as q
from qchaos import (DensityState, GridOverflow, MeasurementRecord, ModelSpec,
                    NoisePath, NonfiniteState, PotentialSpec, SpatialGrid,
                    SpatialState, TraceDrift, coherent_state, energy,
                    evolve_lindblad, evolve_sse, isolated_step, lindblad_step,
                    moments, purity, sse_step, wigner_on_grid,
                    wigner_transform)

HARMONIC = PotentialSpec((0.0, 0.0, 0.5))  # V = x^2/2, omega = m = 1
DOUBLE_WELL = PotentialSpec((0.0, 0.0, -10.0, 0.0, 0.5))


def harmonic_model(hbar=1.0, **kw) -> ModelSpec:
    return ModelSpec(HARMONIC, hbar=hbar, **kw)


def random_state(grid: SpatialGrid, seed: int) -> SpatialState:
    rng = np.random.default_rng(seed)
    envelope = np.exp(-grid.x ** 2 / 4)
    psi = envelope * (rng.standard_normal(grid.n)
                      + 1j * rng.standard_normal(grid.n))
    return SpatialState(grid, psi).normalize()


class ScriptedNoise:
    """Feeds a prescribed increment sequence; used for refinement tests
    where the coarse path must be the pairwise sum of the fine one."""

    def __init__(self, increments, dt):
        self.increments = list(increments)
        self.dt = dt
        self.j = 0

    def next_dw(self) -> float:
        v = self.increments[self.j]
        self.j += 1
        return v


# ---------------------------------------------------------------------------
# states and validation

def test_coherent_state_moments():
    hb = 0.3
    g = SpatialGrid(-6.0, 6.0, 256, hbar=hb)
    st = coherent_state(g, 0.7, -0.4)
    mo = moments(st)
    assert mo.x == pytest.approx(0.7, abs=1e-10)
    assert mo.p == pytest.approx(-0.4, abs=1e-10)
    assert mo.Vx * mo.Vp == pytest.approx((hb / 2) ** 2, rel=1e-6)
    assert mo.Cxp == pytest.approx(0.0, abs=1e-10)


def test_chirped_gaussian_matches_closed_form():
    # psi ~ exp(-(alpha+i*beta) u^2 + i p0 u / hbar), u = x - x0:
    # Vx = 1/(4 alpha), Vp = hbar^2 (alpha^2+beta^2)/alpha, Cxp = -hbar beta/(2 alpha)
    alpha, beta, hb = 1.7, 0.9, 0.7
    x0, p0 = 0.4, -0.6
    g = SpatialGrid(-7.6, 8.4, 256, hbar=hb)
    u = g.x - x0
    psi = np.exp(-(alpha + 1j * beta) * u ** 2 + 1j * p0 * u / hb)
    mo = moments(SpatialState(g, psi).normalize())
    assert mo.x == pytest.approx(x0, abs=1e-10)
    assert mo.p == pytest.approx(p0, abs=1e-10)
    assert mo.Vx == pytest.approx(1 / (4 * alpha), abs=1e-10)
    assert mo.Vp == pytest.approx(hb ** 2 * (alpha ** 2 + beta ** 2) / alpha,
                                  abs=1e-10)
    assert mo.Cxp == pytest.approx(-hb * beta / (2 * alpha), abs=1e-10)
    # chirped Gaussians saturate the Schroedinger-Robertson bound
    assert mo.Vx * mo.Vp - mo.Cxp ** 2 == pytest.approx(hb ** 2 / 4, rel=1e-10)


@pytest.mark.parametrize("seed", [3, 14, 158])
def test_moments_match_direct_summation(seed):
    g = SpatialGrid(-6.0, 6.0, 128, hbar=0.7)
    stt = random_state(g, seed)
    mo = moments(stt)
    # independent oracle: explicit DFT matrix instead of the fft pipeline
    n, dx = g.n, g.dx
    F = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    psi_k = F @ stt.psi
    pk = g.hbar * g.k
    wk = np.abs(psi_k) ** 2
    pm = float((wk * pk).sum() / wk.sum())
    vp = float((wk * (pk - pm) ** 2).sum() / wk.sum())
    prob = np.abs(stt.psi) ** 2 * dx
    xm = float((prob * g.x).sum() / prob.sum())
    vx = float((prob * (g.x - xm) ** 2).sum() / prob.sum())
    p_psi = np.conj(F.T) @ (pk * psi_k) / n
    xp = float(np.sum(np.conj(stt.psi) * g.x * p_psi).real * dx / prob.sum())
    assert mo.x == pytest.approx(xm, abs=1e-10)
    assert mo.p == pytest.approx(pm, abs=1e-10)
    assert mo.Vx == pytest.approx(vx, abs=1e-10)
    assert mo.Vp == pytest.approx(vp, abs=1e-10)
    assert mo.Cxp == pytest.approx(xp - xm * pm, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), hbar=st.floats(0.1, 2.0))
def test_uncertainty_relation_for_pure_states(seed, hbar):
    g = SpatialGrid(-6.0, 6.0, 128, hbar=hbar)
    mo = moments(random_state(g, seed))
    assert mo.Vx >= 0 and mo.Vp >= 0
    assert mo.Vx * mo.Vp - mo.Cxp ** 2 >= (hbar / 2) ** 2 * (1 - 1e-6)


def test_pure_and_density_moments_agree():
    g = SpatialGrid(-6.0, 6.0, 128, hbar=0.7)
    stt = random_state(g, 5)
    a = moments(stt)
    b = moments(DensityState.from_pure(stt))
    for name in ("x", "p", "Vx", "Vp", "Cxp"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-10)
    m = harmonic_model(hbar=0.7)
    assert energy(stt, m) == pytest.approx(energy(DensityState.from_pure(stt), m),
                                           abs=1e-10)


def test_eigenstate_has_zero_momentum():
    g = SpatialGrid(-8.0, 8.0, 128, hbar=1.0)
    assert moments(coherent_state(g, 0.0, 0.0)).p == pytest.approx(0.0, abs=1e-12)


def test_state_validation_errors():
    g = SpatialGrid(-8.0, 8.0, 64, hbar=1.0)
    stt = coherent_state(g, 0.0, 0.0)
    bad = SpatialState(g, stt.psi * 1.1)
    with pytest.raises(NonfiniteState):
        bad.validate()
    edge = coherent_state(g, -7.5, 0.0)
    with pytest.raises(GridOverflow):
        edge.validate()
    with pytest.raises(ValueError):
        SpatialState(g, np.zeros(32))


def test_density_validation_errors():
    g = SpatialGrid(-8.0, 8.0, 64, hbar=1.0)
    rho = DensityState.from_pure(coherent_state(g, 0.0, 0.0))
    assert rho.trace() == pytest.approx(1.0, abs=1e-12)
    rho.validate()
    scaled = DensityState(g, rho.rho * 1.001)
    with pytest.raises(TraceDrift):
        scaled.validate()
    skew = rho.copy()
    skew.rho[3, 5] += 1e-3
    with pytest.raises(NonfiniteState, match="Hermiticity"):
        skew.validate()
    neg = rho.copy()
    shift = neg.rho[2, 2].real + 1e-2
    neg.rho[2, 2] = -1e-2
    neg.rho[32, 32] += shift  # keep the trace exact so only the sign trips
    with pytest.raises(NonfiniteState, match="diagonal"):
        neg.validate()
    with pytest.raises(ValueError):
        DensityState(g, np.zeros((3, 3)))


def test_purity_of_even_mixture_is_half():
    g = SpatialGrid(-8.0, 8.0, 128, hbar=0.25)
    a = DensityState.from_pure(coherent_state(g, 2.0, 0.0))
    b = DensityState.from_pure(coherent_state(g, -2.0, 0.0))
    mix = DensityState(g, 0.5 * (a.rho + b.rho))
    assert purity(a) == pytest.approx(1.0, abs=1e-10)
    assert purity(mix) == pytest.approx(0.5, abs=1e-3)


def test_measurement_record_window_averaging():
    rec = MeasurementRecord(dt=0.1, window=0.2)
    for v in (1.0, 2.0, 3.0, 4.0, 5.0):
        rec.append(v)
    tc, ybar = rec.averaged()
    np.testing.assert_allclose(tc, [0.1, 0.3])
    np.testing.assert_allclose(ybar, [15.0, 35.0])
    assert MeasurementRecord(dt=0.1).averaged()[0].size == 0


# ---------------------------------------------------------------------------
# isolated evolution

def test_energy_conserved_in_anharmonic_well():
    m = ModelSpec(DOUBLE_WELL, hbar=0.5)
    g = SpatialGrid(-2.0, 8.0, 256, hbar=0.5)
    stt = coherent_state(g, 3.4, 0.0, sigma_x=0.25)
    e0 = energy(stt, m)
    out = evolve_sse(stt, m, None, 1e-3, 1000)
    assert abs(energy(out, m) - e0) / abs(e0) < 1e-6


def test_ground_state_density_is_stationary():
    m = harmonic_model()
    g = SpatialGrid(-8.0, 8.0, 128, hbar=1.0)
    gs = coherent_state(g, 0.0, 0.0)
    d0 = np.abs(gs.psi) ** 2
    out = evolve_sse(gs, m, None, 1e-3, round(2 * math.pi / 1e-3))
    assert np.max(np.abs(np.abs(out.psi) ** 2 - d0)) < 1e-8


def test_coherent_state_follows_classical_cosine():
    m = harmonic_model()
    g = SpatialGrid(-8.0, 8.0, 256, hbar=1.0)
    stt = coherent_state(g, 1.0, 0.0)
    worst = 0.0
    for _ in range(200):
        stt = evolve_sse(stt, m, None, 1e-3, 31)
        worst = max(worst, abs(moments(stt).x - math.cos(stt.t)))
    assert worst < 1e-6


def test_isolated_step_ignores_measurement_strength():
    m = harmonic_model(k=5.0)
    g = SpatialGrid(-8.0, 8.0, 128, hbar=1.0)
    stt = coherent_state(g, 1.0, 0.0)
    a = isolated_step(stt.copy(), m, 1e-3)
    b = evolve_sse(stt.copy(), m.with_(k=0.0), None, 1e-3, 1)
    np.testing.assert_allclose(a.psi, b.psi, atol=1e-14)


def test_nonfinite_state_detected():
    m = harmonic_model()
    g = SpatialGrid(-8.0, 8.0, 64, hbar=1.0)
    stt = coherent_state(g, 0.0, 0.0)
    stt.psi[10] = math.nan
    with pytest.raises(NonfiniteState):
        evolve_sse(stt, m, None, 1e-3, 1, check_interval=1)


def test_position_boundary_overflow_detected():
    g = SpatialGrid(-6.0, 6.0, 256, hbar=0.25)
    m = ModelSpec(PotentialSpec((0.0,)), hbar=0.25)
    drifting = coherent_state(g, 0.0, 2.0)
    with pytest.raises(GridOverflow):
        evolve_sse(drifting, m, None, 1e-3, 2000, check_interval=10)


def test_momentum_boundary_overflow_detected():
    g = SpatialGrid(-6.0, 6.0, 256, hbar=0.25)
    m = ModelSpec(PotentialSpec((0.0,)), hbar=0.25)
    fast = coherent_state(g, -4.0, 0.9 * math.pi * 0.25 / g.dx)
    with pytest.raises(GridOverflow, match="momentum"):
        evolve_sse(fast, m, None, 1e-3, 2000, check_interval=10)


# ---------------------------------------------------------------------------
# conditioned evolution

def test_merged_steps_equal_repeated_single_steps():
    m = harmonic_model(k=1.0)
    g = SpatialGrid(-8.0, 8.0, 256, hbar=1.0)
    stt = coherent_state(g, 1.0, 0.0)
    na = NoisePath(seed=5, dt=1e-3)
    nb = na.clone()
    merged = evolve_sse(stt.copy(), m, na, 1e-3, 50)
    single = stt.copy()
    for _ in range(50):
        single, _ = sse_step(single, m, nb, 1e-3)
    assert np.max(np.abs(merged.psi - single.psi)) < 1e-12
    assert merged.t == pytest.approx(single.t)


def test_conditioned_evolution_requires_matching_noise():
    m = harmonic_model(k=1.0)
    g = SpatialGrid(-8.0, 8.0, 64, hbar=1.0)
    stt = coherent_state(g, 0.0, 0.0)
    with pytest.raises(ValueError):
        evolve_sse(stt, m, None, 1e-3, 1)
    with pytest.raises(ValueError):
        evolve_sse(stt, m, NoisePath(seed=0, dt=2e-3), 1e-3, 1)
    with pytest.raises(ValueError):
        sse_step(stt, m.with_(k=0.0), NoisePath(seed=0, dt=1e-3), 1e-3)


def test_record_shares_the_evolution_noise():
    # dy - dW/sqrt(8k) must be <x>*dt for an <x> inside the grid
    m = harmonic_model(k=2.0)
    g = SpatialGrid(-8.0, 8.0, 128, hbar=1.0)
    stt = coherent_state(g, 1.0, 0.0)
    noise = NoisePath(seed=21, dt=1e-3)
    replay = noise.clone()
    rec = MeasurementRecord(1e-3)
    evolve_sse(stt, m, noise, 1e-3, 200, record=rec)
    dws = np.array([replay.next_dw() for _ in range(200)])
    implied_x = (np.array(rec.samples) - dws / math.sqrt(16.0)) / 1e-3
    assert np.all(np.abs(implied_x) < 2.0)
    # the implied centroids trace the oscillation, not noise residue
    assert implied_x[0] == pytest.approx(1.0, abs=0.05)


def test_record_residual_noise_level():
    # windowed record average = windowed <x> average + noise of std
    # 1/sqrt(8 k T_w); checked at three measurement strengths
    g = SpatialGrid(-10.0, 10.0, 512, hbar=1.0)
    per, nwin, dt = 50, 250, 1e-3
    for k in (0.5, 2.0, 8.0):
        m = ModelSpec(PotentialSpec((0.0, 0.0, 8.0)), hbar=1.0, k=k)
        stt = coherent_state(g, 1.0, 0.0)
        noise = NoisePath(seed=123, dt=dt)
        resid = []
        for _ in range(nwin):
            xs = 0.0
            rec = MeasurementRecord(dt)
            for _ in range(per):
                xs += moments(stt).x
                stt, dy = sse_step(stt, m, noise, dt)
                rec.append(dy)
            resid.append(np.mean(rec.samples) / dt - xs / per)
        predicted = 1.0 / math.sqrt(8 * k * per * dt)
        assert np.std(resid) == pytest.approx(predicted, rel=0.10)


def test_halving_dt_changes_centroid_below_one_percent():
    m = ModelSpec(DOUBLE_WELL, hbar=0.1, k=5.0)
    g = SpatialGrid(0.5, 5.8, 512, hbar=0.1)
    st0 = coherent_state(g, 3.3, 0.0)
    rng = np.random.default_rng(11)
    n_c, dt_c = 500, 1e-3
    fine = rng.standard_normal(2 * n_c) * math.sqrt(dt_c / 2)
    coarse = fine[0::2] + fine[1::2]
    a = evolve_sse(st0.copy(), m, ScriptedNoise(coarse, dt_c), dt_c, n_c)
    b = evolve_sse(st0.copy(), m, ScriptedNoise(fine, dt_c / 2), dt_c / 2, 2 * n_c)
    xa, xb = moments(a).x, moments(b).x
    assert abs(xa - xb) / abs(xb) < 0.01


def test_conditioned_state_stays_normalized_and_pure():
    m = harmonic_model(k=2.0)
    g = SpatialGrid(-10.0, 10.0, 256, hbar=1.0)
    stt = coherent_state(g, 1.0, 0.0)
    out = evolve_sse(stt, m, NoisePath(seed=4, dt=1e-3), 1e-3, 1000)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    assert purity(DensityState.from_pure(out)) == pytest.approx(1.0, abs=1e-6)


def test_stability_warning_when_timestep_too_coarse():
    g = SpatialGrid(-10.0, 10.0, 256, hbar=1.0)
    m = harmonic_model(k=300.0)  # k*Vx*dt = 300*0.5*1e-3 = 0.15
    stt = coherent_state(g, 0.0, 0.0)
    with pytest.warns(RuntimeWarning, match="decrease dt"):
        evolve_sse(stt, m, NoisePath(seed=1, dt=1e-3), 1e-3, 1)


def test_strong_measurement_localizes_chaotic_state():
    res = {}
    for k in (0.01, 10.0):
        m = q.duffing_spec(hbar=1e-2, k=k)
        g = SpatialGrid(-6.0, 6.0, 8192, hbar=1e-2)
        stt = coherent_state(g, 1.0, 0.0)
        dt = m.drive_period / 1024
        out = evolve_sse(stt, m, NoisePath(seed=7, dt=dt), dt, 1024 * 8)
        res[k] = moments(out).Vx
    assert res[10.0] < 0.01
    assert res[0.01] > 1.0


# ---------------------------------------------------------------------------
# open (unconditioned) evolution

def test_unitary_limit_matches_wavefunction_evolution():
    m = harmonic_model(hbar=0.5)
    g = SpatialGrid(-8.0, 8.0, 128, hbar=0.5)
    stt = coherent_state(g, 1.2, 0.3)
    psi_out = evolve_sse(stt.copy(), m, None, 1e-3, 400)
    rho_out = evolve_lindblad(DensityState.from_pure(stt), m, 1e-3, 400)
    np.testing.assert_allclose(rho_out.rho,
                               DensityState.from_pure(psi_out).rho, atol=1e-10)
    assert abs(purity(rho_out) - 1.0) / 400 < 1e-8


def test_free_particle_momentum_diffusion_is_exactly_2d():
    g = SpatialGrid(-8.0, 8.0, 128, hbar=1.0)
    m = ModelSpec(PotentialSpec((0.0,)), hbar=1.0, D=0.3)
    rho = DensityState.from_pure(coherent_state(g, 0.0, 0.0))
    v0 = moments(rho).Vp
    out = evolve_lindblad(rho, m, 1e-3, 500)
    rate = (moments(out).Vp - v0) / 0.5
    assert rate == pytest.approx(2 * 0.3, rel=1e-6)


def test_backaction_contributes_like_environmental_diffusion():
    # k enters the master equation only through D + hbar^2 k
    g = SpatialGrid(-8.0, 8.0, 128, hbar=0.5)
    rho0 = DensityState.from_pure(coherent_state(g, 1.0, 0.0))
    a = evolve_lindblad(rho0.copy(), harmonic_model(hbar=0.5, k=2.0), 1e-3, 200)
    b = evolve_lindblad(rho0.copy(),
                        harmonic_model(hbar=0.5, D=0.5 ** 2 * 2.0), 1e-3, 200)
    np.testing.assert_allclose(a.rho, b.rho, atol=1e-13)


def test_lindblad_trace_is_exactly_preserved():
    m = ModelSpec(DOUBLE_WELL, hbar=0.5, D=1e-2)
    g = SpatialGrid(-2.0, 8.0, 128, hbar=0.5)
    rho = DensityState.from_pure(coherent_state(g, 3.4, 0.0, sigma_x=0.25))
    out = evolve_lindblad(rho, m, 1e-3, 300)
    assert out.trace() == pytest.approx(1.0, abs=1e-12)
    out.validate()


def test_single_lindblad_step_equals_evolve():
    m = harmonic_model(hbar=0.5, D=1e-3)
    g = SpatialGrid(-8.0, 8.0, 64, hbar=0.5)
    rho = DensityState.from_pure(coherent_state(g, 1.0, 0.0))
    a = lindblad_step(rho.copy(), m, 1e-3)
    b = evolve_lindblad(rho.copy(), m, 1e-3, 1)
    np.testing.assert_allclose(a.rho, b.rho, atol=1e-15)


def test_sse_ensemble_converges_to_master_equation():
    hb, k, dt, steps, ntraj = 0.5, 1.0, 1e-3, 1000, 150
    g = SpatialGrid(-10.0, 10.0, 256, hbar=hb)
    m = ModelSpec(HARMONIC, hbar=hb, k=k)
    acc = np.zeros(g.n)
    for i in range(ntraj):
        stt = coherent_state(g, 1.5, 0.0)
        out = evolve_sse(stt, m, NoisePath.for_member(9, i, dt), dt, steps)
        acc += np.abs(out.psi) ** 2
    acc /= ntraj
    rho = DensityState.from_pure(coherent_state(g, 1.5, 0.0))
    out_rho = evolve_lindblad(rho, m, dt, steps)
    l1 = float(np.abs(acc - out_rho.rho.diagonal().real).sum() * g.dx)
    assert l1 < 0.12


# ---------------------------------------------------------------------------
# Wigner transform

def test_wigner_mass_and_gaussian_peak():
    hb = 0.25
    g = SpatialGrid(-6.0, 6.0, 256, hbar=hb)
    x0 = g.x[144]  # on a grid sample so the peak is sampled exactly
    rho = DensityState.from_pure(coherent_state(g, x0, 0.0))
    w = wigner_transform(rho)
    assert w.mass() == pytest.approx(1.0, abs=1e-6)
    ip = int(np.argmin(np.abs(w.grid.p)))
    assert w.values[144, ip] == pytest.approx(1 / (math.pi * hb), rel=1e-4)
    assert w.grid.dp == pytest.approx(math.pi * hb / (g.n * g.dx))


def test_wigner_x_marginal_equals_density_diagonal():
    g = SpatialGrid(-6.0, 6.0, 128, hbar=0.7)
    rho = DensityState.from_pure(random_state(g, 8))
    w = wigner_transform(rho)
    np.testing.assert_allclose(w.x_marginal(), rho.rho.diagonal().real,
                               atol=1e-8)
    assert w.p_marginal().sum() * w.grid.dp == pytest.approx(1.0, abs=1e-6)


def test_cat_state_fringes():
    hb, a = 0.25, 1.5
    g = SpatialGrid(-6.0, 6.0, 256, hbar=hb)
    psi = coherent_state(g, a, 0.0).psi + coherent_state(g, -a, 0.0).psi
    cat = SpatialState(g, psi).normalize()
    w = wigner_transform(DensityState.from_pure(cat))
    mid = w.values[int(np.argmin(np.abs(g.x))), :]
    # interference fringes at the midpoint oscillate in p at 2a/hbar
    assert mid.min() < -0.1 * mid.max()
    spec = np.abs(np.fft.rfft(mid - mid.mean()))
    kgrid = np.fft.rfftfreq(w.grid.n_p, d=w.grid.dp) * 2 * np.pi
    dk = kgrid[1] - kgrid[0]
    assert abs(kgrid[int(np.argmax(spec))] - 2 * a / hb) <= dk


def test_wigner_on_arbitrary_momenta_matches_natural_grid():
    g = SpatialGrid(-6.0, 6.0, 128, hbar=0.25)
    rho = DensityState.from_pure(coherent_state(g, 0.5, 0.3))
    w = wigner_transform(rho)
    direct = wigner_on_grid(rho, w.grid.p)
    np.testing.assert_allclose(direct, w.values, atol=1e-12)


def test_wigner_rejects_invalid_input():
    g = SpatialGrid(-6.0, 6.0, 64, hbar=0.25)
    rho = DensityState.from_pure(coherent_state(g, 0.0, 0.0))
    skew = rho.copy()
    skew.rho[3, 5] += 0.2
    with pytest.raises(ValueError, match="Hermitian"):
        wigner_transform(skew)
    g0 = SpatialGrid(-6.0, 6.0, 64, hbar=0.0)
    with pytest.raises(ValueError):
        wigner_transform(DensityState(g0, np.eye(64) / (12.0 / 64)))
