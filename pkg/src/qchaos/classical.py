"""Classical phase-space dynamics: Liouville, Fokker-Planck, the
Kushner-Stratonovich conditional density, Langevin trajectories, and a
Gaussian cumulant closure.

Field evolution uses Strang splitting with spectral shift operators on a
PhaseSpaceGrid: a half momentum kick, a full position shear, and a second
half kick per step, all exact exponential multipliers in the conjugate
Fourier variable.  Momentum diffusion D enters the kick stage as the exact
factor exp(-D kp^2 dt), so a Fokker-Planck step with D = 0 runs the very
same code path (and produces bit-identical output) as a Liouville step.
Continuous position measurement at strength k multiplies the density by
1 + sqrt(8k) (x - <x>) dW after each advection step (the normalized
Kushner-Stratonovich update for record increment dy = <x> dt + dW/sqrt(8k));
the increment is linear in dW, so the conditional ensemble mean reproduces
the unconditioned field exactly, step by step.

An optional momentum-kick variant evaluates the potential at shifted points
x +- hbar*kp/2 instead of linearizing, which turns the kick stage into the
exact open-system Wigner flow for polynomial potentials; with hbar -> 0 it
reduces smoothly to the classical kick and is used to check that limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import ClosureBreakdown, NegativeDensity, NonfiniteField
from .model import ModelSpec, PhaseSpaceField, PhaseSpaceGrid
from .noise import NoisePath
from .quantum import MeasurementRecord, MomentSet

__all__ = [
    "ClassicalField",
    "gaussian_field",
    "field_moments",
    "validate_field",
    "liouville_step",
    "fokker_planck_step",
    "kushner_step",
    "evolve_field",
    "langevin_step",
    "evolve_langevin",
    "langevin_ensemble",
    "ensemble_histogram",
    "CumulantState",
    "cumulant_step",
    "evolve_cumulant",
    "gaussian_poly_mean",
]

ClassicalField = PhaseSpaceField
CumulantState = MomentSet

NEGATIVITY_TOL = 1e-12
EVOLVE_NEGATIVITY_TOL = 1e-6
KUSHNER_NEGATIVITY_TOL = 1e-9
DEFAULT_CHECK_INTERVAL = 100
DEFAULT_VX_MAX = 1e2


# ---------------------------------------------------------------------------
# construction and diagnostics

def gaussian_field(grid: PhaseSpaceGrid, x0: float, p0: float,
                   vx: float, vp: float, cxp: float = 0.0,
                   t: float = 0.0) -> PhaseSpaceField:
    """Normalized bivariate Gaussian with the given means and covariance."""
    det = vx * vp - cxp ** 2
    if det <= 0 or vx <= 0 or vp <= 0:
        raise ValueError("covariance matrix must be positive definite")
    dxv = grid.x[:, None] - x0
    dpv = grid.p[None, :] - p0
    quad = (vp * dxv ** 2 - 2.0 * cxp * dxv * dpv + vx * dpv ** 2) / (2.0 * det)
    f = PhaseSpaceField(grid, np.exp(-quad), t)
    return f.normalize()


def field_moments(field: PhaseSpaceField) -> MomentSet:
    """Quadrature moments of a normalized phase-space density."""
    x = field.grid.x
    p = field.grid.p
    fx = field.x_marginal()
    fp = field.p_marginal()
    dx = field.grid.dx
    dp = field.grid.dp
    total = fx.sum() * dx
    xm = float((fx * x).sum() * dx / total)
    pm = float((fp * p).sum() * dp / total)
    vx = float((fx * (x - xm) ** 2).sum() * dx / total)
    vp = float((fp * (p - pm) ** 2).sum() * dp / total)
    xp = float((field.values * x[:, None] * p[None, :]).sum()
               * field.cell_area / total)
    return MomentSet(xm, pm, vx, vp, xp - xm * pm, field.t)


def validate_field(field: PhaseSpaceField, mass_tol: float = 1e-6,
                   neg_tol: float = NEGATIVITY_TOL) -> None:
    v = field.values
    if not np.all(np.isfinite(v)):
        raise NonfiniteField(f"field has non-finite values at t={field.t}")
    peak = float(np.max(np.abs(v)))
    if peak > 0 and float(np.min(v)) < -neg_tol * peak:
        raise NegativeDensity(
            f"field minimum {np.min(v):.3e} below -{neg_tol:g}*peak at t={field.t}")
    m = field.mass()
    if abs(m - 1.0) > mass_tol:
        raise NonfiniteField(f"field mass {m} drifted beyond {mass_tol} at t={field.t}")


# ---------------------------------------------------------------------------
# spectral advection tables

@lru_cache(maxsize=32)
def _advect_tables(grid: PhaseSpaceGrid, model: ModelSpec, dt: float,
                   quantum_kick: bool, spectral_filter: bool):
    kx = grid.kx
    kp = grid.kp
    x = grid.x
    p = grid.p
    shear = np.exp((-1j * dt / model.mass) * np.outer(kx, p))
    if quantum_kick:
        if model.hbar <= 0:
            raise ValueError("quantum kick variant requires hbar > 0")
        a = 0.5 * model.hbar * kp[None, :]
        v0 = model.potential.value(x[:, None] + a, 0.0) \
            - model.potential.value(x[:, None] - a, 0.0)
        if model.potential.drive_amp != 0.0:
            v0 = v0 - model.potential.drive_amp * model.hbar * kp[None, :]
        kick_exponent = (1j * dt / model.hbar) * v0
    else:
        dv1 = model.potential.dv(x, 0.0, 1)
        if model.potential.drive_amp != 0.0:
            dv1 = dv1 - model.potential.drive_amp
        kick_exponent = 1j * dt * np.outer(dv1, kp)
    if model.D > 0:
        kick_exponent = kick_exponent - model.D * dt * kp[None, :] ** 2
    kick_half = np.exp(0.5 * kick_exponent)
    kick_full = kick_half * kick_half
    if spectral_filter:
        # exponential filter of order 16 on the highest modes of both axes;
        # damps sub-grid filaments in long chaotic runs
        fx = np.exp(-36.0 * np.abs(kx / np.max(np.abs(kx))) ** 16)
        fp = np.exp(-36.0 * np.abs(kp / np.max(np.abs(kp))) ** 16)
        shear = shear * fx[:, None]
        kick_full = kick_full * fp[None, :]
    return shear, kick_half, kick_full


def _drive_kick(kp: np.ndarray, coeff: float) -> np.ndarray:
    """Spatially uniform drive force is a pure momentum shift."""
    return np.exp((1j * coeff) * kp)


# ---------------------------------------------------------------------------
# field evolution

def evolve_field(field: PhaseSpaceField, model: ModelSpec,
                 dt: float, n_steps: int,
                 noise: NoisePath | None = None,
                 record: MeasurementRecord | None = None,
                 quantum_kick: bool = False,
                 spectral_filter: bool = False,
                 neg_tol: float | None = None,
                 check_interval: int = DEFAULT_CHECK_INTERVAL) -> PhaseSpaceField:
    """Advance a phase-space density n_steps of size dt.

    Without noise this integrates the Fokker-Planck flow for the model's D
    (Liouville when D = 0).  With a NoisePath and model.k > 0 it integrates
    the Kushner-Stratonovich conditional density, appending record
    increments to ``record`` when given.  Interior steps fuse adjacent half
    kicks; the measurement multiplier depends only on x, so it commutes with
    the kick stage and is applied in the (x, kp) representation, where the
    x-marginal is the kp = 0 row.

    ``neg_tol`` bounds how negative the field may ring relative to its peak
    before the run aborts.  Resolved short runs stay orders of magnitude
    below the 1e-6 default; long chaotic runs cascade filaments below the
    grid scale and need a looser bound plus ``spectral_filter=True``.
    """
    if n_steps <= 0:
        return field
    measured = model.k > 0 and noise is not None
    if model.k > 0 and noise is None and record is not None:
        raise ValueError("recording a measured run requires a NoisePath")
    if neg_tol is None:
        neg_tol = EVOLVE_NEGATIVITY_TOL
    if measured and abs(noise.dt - dt) > 1e-15 * max(dt, noise.dt):
        raise ValueError("NoisePath dt does not match step dt")
    grid = field.grid
    shear, kick_half, kick_full = _advect_tables(
        grid, model, dt, quantum_kick, spectral_filter)
    kp = grid.kp
    x = grid.x
    dx = grid.dx
    sqrt8k = math.sqrt(8.0 * model.k) if measured else 0.0
    amp = model.potential.drive_amp
    omega = model.potential.drive_omega
    t = field.t

    # merged Strang chain: half kick, then [shear, kick] per step with the
    # trailing kick fused across step boundaries; kick factors are all 1 at
    # kp = 0, so the x-marginal stays readable from that row throughout
    def cosw(tm: float) -> float:
        return math.cos(omega * tm)

    g = sfft.fft(field.values.astype(complex), axis=1)
    g *= kick_half
    if amp != 0.0:
        g *= _drive_kick(kp, 0.5 * dt * amp * cosw(t + 0.5 * dt))[None, :]
    for step in range(n_steps):
        g = sfft.ifft(g, axis=1)
        g = sfft.fft(g, axis=0)
        g *= shear
        g = sfft.ifft(g, axis=0)
        g = sfft.fft(g, axis=1)
        last = step == n_steps - 1
        g *= kick_half if last else kick_full
        if amp != 0.0:
            c = cosw(t + 0.5 * dt)
            if not last:
                c = 0.5 * (c + cosw(t + 1.5 * dt))
                g *= _drive_kick(kp, dt * amp * c)[None, :]
            else:
                g *= _drive_kick(kp, 0.5 * dt * amp * c)[None, :]
        t += dt
        if measured:
            marginal = g[:, 0].real * dx  # kp = 0 row is the x-marginal
            mass = marginal.sum()
            x_mean = float((marginal * x).sum() / mass)
            dw = noise.next_dw()
            mult = 1.0 + sqrt8k * (x - x_mean) * dw
            if mult.min() < 0.0:
                # a sign-flipping reweight where the field has support means
                # dt is too large for this k; marginal ringing scales with
                # the advection tolerance, so cells below that envelope do
                # not count as support
                pop_tol = max(KUSHNER_NEGATIVITY_TOL, 0.02 * neg_tol)
                bad = (mult < 0.0) & (marginal > pop_tol * marginal.max())
                if bad.any():
                    raise NegativeDensity(
                        f"measurement reweight factor {mult.min():.3e} < 0 on "
                        f"populated cells at t={t}; reduce dt or k")
            g *= mult[:, None]
            if record is not None:
                record.append(x_mean * dt + dw / sqrt8k)
        if check_interval > 0 and (step + 1) % check_interval == 0 and not last:
            vals = sfft.ifft(g, axis=1).real
            _check_field(vals, t, neg_tol, quantum_kick)
    vals = sfft.ifft(g, axis=1).real
    out = PhaseSpaceField(grid, vals, t)
    _check_field(vals, t, neg_tol, quantum_kick)
    if measured:
        out.normalize()
    return out


def _check_field(vals: np.ndarray, t: float, neg_tol: float,
                 allow_negative: bool = False) -> None:
    if not np.all(np.isfinite(vals)):
        raise NonfiniteField(f"field has non-finite values at t={t}")
    if allow_negative:
        # Wigner evolution: negative regions are physical, not a defect
        return
    peak = float(np.max(np.abs(vals)))
    if peak > 0 and float(np.min(vals)) < -neg_tol * peak:
        raise NegativeDensity(
            f"field minimum {np.min(vals):.3e} below -{neg_tol:g}*peak at t={t}")


def liouville_step(field: PhaseSpaceField, model: ModelSpec,
                   dt: float) -> PhaseSpaceField:
    """One deterministic step of the Hamiltonian flow (D forced to zero)."""
    m = model if model.D == 0 else model.with_(D=0.0)
    return evolve_field(field, m.with_(k=0.0) if m.k else m, dt, 1,
                        check_interval=1)


def fokker_planck_step(field: PhaseSpaceField, model: ModelSpec,
                       dt: float) -> PhaseSpaceField:
    """One deterministic step including momentum diffusion D."""
    m = model.with_(k=0.0) if model.k else model
    return evolve_field(field, m, dt, 1, check_interval=1)


def kushner_step(field: PhaseSpaceField, model: ModelSpec, noise: NoisePath,
                 dt: float, spectral_filter: bool = False,
                 neg_tol: float | None = None) -> tuple[PhaseSpaceField, float]:
    """One conditional-density step; returns (new field, record increment).

    With k = 0 this reduces exactly to fokker_planck_step (no noise drawn).
    ``spectral_filter`` and ``neg_tol`` are forwarded to the advection stage;
    chaotic flows need them for the same reason evolve_field does.  A
    sign-flipping reweight on populated cells aborts regardless, since that
    always means dt is too large for the given k.
    """
    if model.k == 0:
        return fokker_planck_step(field, model, dt), 0.0
    rec = MeasurementRecord(dt)
    out = evolve_field(field, model, dt, 1, noise=noise, record=rec,
                       spectral_filter=spectral_filter, neg_tol=neg_tol,
                       check_interval=1)
    return out, rec.samples[0]


# ---------------------------------------------------------------------------
# Langevin trajectories

def langevin_step(z: tuple[float, float], model: ModelSpec, noise: NoisePath | None,
                  dt: float, t: float) -> tuple[float, float]:
    """One Heun (deterministic part) + Euler-Maruyama (noise) step of
    dx = p/m dt, dp = F(x,t) dt + sqrt(2D) dW."""
    x, p = z
    pot = model.potential
    m = model.mass
    ax0 = p / m
    ap0 = pot.force(x, t)
    x1 = x + ax0 * dt
    p1 = p + ap0 * dt
    ax1 = p1 / m
    ap1 = pot.force(x1, t + dt)
    xn = x + 0.5 * dt * (ax0 + ax1)
    pn = p + 0.5 * dt * (ap0 + ap1)
    if model.D > 0:
        if noise is None:
            raise ValueError("D > 0 requires a NoisePath")
        pn += math.sqrt(2.0 * model.D) * noise.next_dw()
    return xn, pn


def evolve_langevin(z: tuple[float, float], model: ModelSpec,
                    noise: NoisePath | None, dt: float, n_steps: int,
                    t0: float = 0.0) -> tuple[float, float]:
    x, p = z
    t = t0
    for _ in range(n_steps):
        x, p = langevin_step((x, p), model, noise, dt, t)
        t += dt
    return x, p


def langevin_ensemble(z0: np.ndarray, model: ModelSpec, noise: NoisePath,
                      dt: float, n_steps: int, t0: float = 0.0) -> np.ndarray:
    """Vectorized walker ensemble; z0 has shape (n, 2).  Each step draws n
    increments from the single NoisePath, so results are reproducible."""
    z = np.array(z0, dtype=float)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ValueError("z0 must have shape (n, 2)")
    x = z[:, 0].copy()
    p = z[:, 1].copy()
    m = model.mass
    pot = model.potential
    amp = math.sqrt(2.0 * model.D) if model.D > 0 else 0.0
    t = t0
    for _ in range(n_steps):
        ax0 = p / m
        ap0 = pot.force(x, t)
        x1 = x + ax0 * dt
        p1 = p + ap0 * dt
        xn = x + 0.5 * dt * (ax0 + p1 / m)
        pn = p + 0.5 * dt * (ap0 + pot.force(x1, t + dt))
        if amp > 0:
            pn += amp * noise.draw(x.size)
        x, p = xn, pn
        t += dt
    return np.stack([x, p], axis=1)


def ensemble_histogram(z: np.ndarray, grid: PhaseSpaceGrid) -> PhaseSpaceField:
    """Normalized cell-count density of walkers on the grid."""
    x_edges = np.concatenate([grid.x - grid.dx / 2, [grid.x[-1] + grid.dx / 2]])
    p_edges = np.concatenate([grid.p - grid.dp / 2, [grid.p[-1] + grid.dp / 2]])
    h, _, _ = np.histogram2d(z[:, 0], z[:, 1], bins=(x_edges, p_edges))
    field = PhaseSpaceField(grid, h, 0.0)
    return field.normalize()


# ---------------------------------------------------------------------------
# Gaussian cumulant closure

def gaussian_poly_mean(coeffs: np.ndarray, mean: float, var: float) -> float:
    """E[sum_j c_j x^j] for x ~ N(mean, var), via the Gaussian moment
    recursion M_j = mean*M_{j-1} + (j-1)*var*M_{j-2}."""
    coeffs = np.asarray(coeffs, dtype=float)
    m_prev, m_cur = 1.0, mean
    total = coeffs[0] if coeffs.size > 0 else 0.0
    if coeffs.size > 1:
        total += coeffs[1] * mean
    for j in range(2, coeffs.size):
        m_next = mean * m_cur + (j - 1) * var * m_prev
        m_prev, m_cur = m_cur, m_next
        total += coeffs[j] * m_cur
    return float(total)


def _closure_force(model: ModelSpec, mean: float, var: float,
                   t: float) -> tuple[float, float]:
    """(E[F], E[F']) under the Gaussian closure at time t."""
    pot = model.potential
    f_coeffs = -pot._dcoeffs[1]
    df_coeffs = -pot._dcoeffs[2]
    ef = gaussian_poly_mean(f_coeffs, mean, var)
    edf = gaussian_poly_mean(df_coeffs, mean, var)
    if pot.drive_amp != 0.0:
        ef -= pot.drive_amp * math.cos(pot.drive_omega * t)
    return ef, edf


def cumulant_step(c: CumulantState, model: ModelSpec, noise: NoisePath | None,
                  dt: float, k: float | None = None,
                  quantum_backaction: bool = False,
                  vx_max: float = DEFAULT_VX_MAX) -> CumulantState:
    """One step of the five-moment Gaussian closure under continuous
    position measurement at strength k (defaulting to model.k):

        dx  = p/m dt            + sqrt(8k) Vx  dW
        dp  = E[F] dt           + sqrt(8k) Cxp dW
        dVx = (2 Cxp/m - 8k Vx^2) dt
        dCxp= (Vp/m + E[F'] Vx - 8k Vx Cxp) dt
        dVp = (2 E[F'] Cxp + 2 D_eff - 8k Cxp^2) dt

    with D_eff = D + hbar^2 k when quantum_backaction is set, else D.  The
    deterministic part mirrors the split-step structure of the wavefunction
    integrator (exact half drifts, closure kick at mid-step), so for linear
    forces the two agree to the stochastic-increment order when driven by
    the same NoisePath.
    """
    if k is None:
        k = model.k
    if k > 0 and noise is None:
        raise ValueError("measured closure requires a NoisePath")
    m = model.mass
    x, p, vx, vp, cxp, t = c.x, c.p, c.Vx, c.Vp, c.Cxp, c.t
    half = 0.5 * dt

    # exact free half drift
    x += p / m * half
    vx += 2.0 * cxp / m * half + vp * (half / m) ** 2
    cxp += vp / m * half

    # closure kick at mid-step time
    t_mid = t + half
    ef, edf = _closure_force(model, x, vx, t_mid)
    p += ef * dt
    vp += 2.0 * edf * cxp * dt + edf ** 2 * vx * dt ** 2
    cxp += edf * vx * dt

    d_eff = model.D + (model.hbar ** 2 * k if quantum_backaction else 0.0)
    vp += 2.0 * d_eff * dt
    if k > 0:
        # exact Gaussian conditioning for one measurement increment (the
        # finite-dt form whose dt->0 limit is the Ito update above); using
        # it keeps same-noise agreement with the wavefunction integrator at
        # the splitting order instead of the Euler-Maruyama order
        dw = noise.next_dw()
        s8k = math.sqrt(8.0 * k)
        denom = 1.0 + 8.0 * k * vx * dt
        x += s8k * vx / denom * dw
        p += s8k * cxp / denom * dw
        vp -= 8.0 * k * cxp ** 2 * dt / denom
        cxp /= denom
        vx /= denom

    # exact free half drift
    x += p / m * half
    vx += 2.0 * cxp / m * half + vp * (half / m) ** 2
    cxp += vp / m * half

    out = CumulantState(x, p, vx, vp, cxp, t + dt)
    if not all(map(math.isfinite, (x, p, vx, vp, cxp))):
        raise ClosureBreakdown(f"non-finite cumulants at t={out.t}")
    det = vx * vp - cxp ** 2
    # degenerate (point-limit) covariances are valid; only genuine loss of
    # positive semidefiniteness beyond roundoff is a breakdown
    if vx < 0 or vp < 0 or det < -1e-12 * (vx * vp + cxp * cxp + 1e-300):
        raise ClosureBreakdown(f"covariance lost positivity at t={out.t}")
    if vx > vx_max:
        raise ClosureBreakdown(
            f"position variance {vx:.3e} exceeds {vx_max:g} at t={out.t}; "
            "the Gaussian closure no longer tracks a localized state")
    return out


def evolve_cumulant(c: CumulantState, model: ModelSpec, noise: NoisePath | None,
                    dt: float, n_steps: int, quantum_backaction: bool = False,
                    vx_max: float = DEFAULT_VX_MAX) -> CumulantState:
    for _ in range(n_steps):
        c = cumulant_step(c, model, noise, dt,
                          quantum_backaction=quantum_backaction,
                          vx_max=vx_max)
    return c
