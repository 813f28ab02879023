"""Lyapunov exponents of measurement-conditioned and deterministic dynamics.

The central estimator evolves a fiducial trajectory and a perturbed copy
under the SAME noise realization (cloned counter-based paths deliver
identical dW sequences), measures the separation of their centroids in the
(<x>, <p>) plane every renormalization interval tau_r, accumulates log
stretch factors, and rescales the pair back to the reference offset
delta0.  With renormalization off, the raw separation is tracked instead;
for regular isolated dynamics the running exponent then decays like 1/t.

Two rescaling variants are provided, because for non-point trajectories
(wavefunctions, Gaussian closures) the pair's internal shapes also drift
apart: "displace_perturbed" moves the perturbed member's centroid onto the
reference offset and keeps its shape; "clone_fiducial" replaces it with a
displaced copy of the fiducial.  Agreement between the two is a
consistency check, not an assumption.

A tangent-space integrator for the deterministic classical flow (RK4 on
the trajectory and its linearization) serves as the reference for the
fixed-noise estimator in the noise-free limit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .classical import CumulantState, evolve_cumulant, evolve_langevin
from .errors import StretchOverflow
from .model import ModelSpec, SpatialGrid, force_and_derivatives
from .noise import NoisePath
from .quantum import MomentSet, SpatialState, evolve_sse, moments

__all__ = [
    "DivergenceRun",
    "LyapunovEstimate",
    "perturb_initial",
    "divergence_run",
    "lyapunov_fixed_noise",
    "classical_tangent_oracle",
    "loglog_slope",
]

STRETCH_WARN_LOG = 3.0
STRETCH_ABORT_LOG = 6.0
RENORM_MODES = ("displace_perturbed", "clone_fiducial")


# ---------------------------------------------------------------------------
# results

@dataclass
class DivergenceRun:
    """Separation history of one fiducial/perturbed pair.

    times[j] are the checkpoint times (multiples of tau_r past the start),
    separations[j] the centroid distance just before rescaling, and
    lambda_series[j] the running exponent: accumulated log stretch divided
    by elapsed time (with renormalization), or log(sep/delta0)/t (without).
    """

    kind: str
    delta0: float
    tau_r: float
    renormalized: bool
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    separations: np.ndarray = field(default_factory=lambda: np.empty(0))
    lambda_series: np.ndarray = field(default_factory=lambda: np.empty(0))
    # |<x>_pert - <x>_fid| alone, kept for plotting; the exponent uses the
    # plane distance, which has no crossings through zero
    x_separations: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def lambda_final(self) -> float:
        return float(self.lambda_series[-1])

    def lambda_tail(self, burn_fraction: float = 0.1) -> float:
        """Mean growth rate after discarding the leading transient."""
        t = self.times
        if not self.renormalized:
            return self.lambda_final
        logs = np.concatenate([[0.0], self.lambda_series * t])
        j0 = int(burn_fraction * (t.size))
        return float((logs[-1] - logs[j0]) / (t[-1] - (t[j0 - 1] if j0 else 0.0)))


@dataclass
class LyapunovEstimate:
    """Ensemble summary: mean exponent, spread, and per-member runs."""

    lambda_: float
    std: float
    members: list[float]
    runs: list[DivergenceRun]
    config: dict

    def __post_init__(self) -> None:
        self.members = [float(v) for v in self.members]


# ---------------------------------------------------------------------------
# displacement

def _displace_state(state: SpatialState, dx: float, dp: float) -> SpatialState:
    """Shift <x> by dx (spectral translation) and <p> by dp (plane-wave
    boost); exact for band-limited states away from the grid edge."""
    grid = state.grid
    psi = state.psi
    if dx != 0.0:
        psi = sfft.ifft(sfft.fft(psi) * np.exp(-1j * grid.k * dx))
    if dp != 0.0:
        psi = psi * np.exp(1j * dp * grid.x / grid.hbar)
    return SpatialState(grid, psi, state.t)


def perturb_initial(obj, dx: float = 0.0, dp: float = 0.0):
    """Return a copy displaced by (dx, dp) in centroid coordinates.
    Accepts a wavefunction, a cumulant state, or an (x, p) pair."""
    if isinstance(obj, SpatialState):
        return _displace_state(obj, dx, dp)
    if isinstance(obj, MomentSet):
        return CumulantState(obj.x + dx, obj.p + dp, obj.Vx, obj.Vp,
                             obj.Cxp, obj.t)
    x, p = obj
    return (x + dx, p + dp)


# ---------------------------------------------------------------------------
# trajectory pairs under shared noise

class _Pair:
    def advance(self, n_steps: int) -> None:
        raise NotImplementedError

    def centroids(self) -> tuple[float, float, float, float]:
        raise NotImplementedError

    def rescale(self, mode: str, offset: tuple[float, float]) -> None:
        raise NotImplementedError


class _QuantumPair(_Pair):
    def __init__(self, state: SpatialState, model: ModelSpec,
                 noise: NoisePath | None, dt: float,
                 offset: tuple[float, float]):
        self.model = model
        self.dt = dt
        self.f = state.copy()
        self.p = _displace_state(state, *offset)
        self.nf = noise
        self.np_ = noise.clone() if noise is not None else None

    def advance(self, n_steps: int) -> None:
        self.f = evolve_sse(self.f, self.model, self.nf, self.dt, n_steps)
        self.p = evolve_sse(self.p, self.model, self.np_, self.dt, n_steps)

    def centroids(self):
        mf = moments(self.f)
        mp = moments(self.p)
        return mf.x, mf.p, mp.x, mp.p

    def rescale(self, mode, offset):
        xf, pf, xp, pp = self.centroids()
        if mode == "clone_fiducial":
            self.p = _displace_state(self.f, *offset)
        else:
            self.p = _displace_state(self.p, xf + offset[0] - xp,
                                     pf + offset[1] - pp)


class _CumulantPair(_Pair):
    def __init__(self, c: CumulantState, model: ModelSpec,
                 noise: NoisePath | None, dt: float,
                 offset: tuple[float, float], quantum_backaction: bool):
        self.model = model
        self.dt = dt
        self.qba = quantum_backaction
        self.f = CumulantState(c.x, c.p, c.Vx, c.Vp, c.Cxp, c.t)
        self.p = perturb_initial(self.f, *offset)
        self.nf = noise
        self.np_ = noise.clone() if noise is not None else None

    def advance(self, n_steps):
        self.f = evolve_cumulant(self.f, self.model, self.nf, self.dt,
                                 n_steps, self.qba)
        self.p = evolve_cumulant(self.p, self.model, self.np_, self.dt,
                                 n_steps, self.qba)

    def centroids(self):
        return self.f.x, self.f.p, self.p.x, self.p.p

    def rescale(self, mode, offset):
        f = self.f
        if mode == "clone_fiducial":
            self.p = perturb_initial(f, *offset)
        else:
            q = self.p
            self.p = CumulantState(f.x + offset[0], f.p + offset[1],
                                   q.Vx, q.Vp, q.Cxp, q.t)


class _LangevinPair(_Pair):
    def __init__(self, z: tuple[float, float], model: ModelSpec,
                 noise: NoisePath | None, dt: float,
                 offset: tuple[float, float]):
        self.model = model
        self.dt = dt
        self.t = 0.0
        self.f = (float(z[0]), float(z[1]))
        self.p = (self.f[0] + offset[0], self.f[1] + offset[1])
        self.nf = noise
        self.np_ = noise.clone() if noise is not None else None

    def advance(self, n_steps):
        self.f = evolve_langevin(self.f, self.model, self.nf, self.dt,
                                 n_steps, self.t)
        self.p = evolve_langevin(self.p, self.model, self.np_, self.dt,
                                 n_steps, self.t)
        self.t += n_steps * self.dt

    def centroids(self):
        return self.f[0], self.f[1], self.p[0], self.p[1]

    def rescale(self, mode, offset):
        self.p = (self.f[0] + offset[0], self.f[1] + offset[1])


def _make_pair(kind: str, init, model: ModelSpec, noise: NoisePath | None,
               dt: float, offset: tuple[float, float],
               quantum_backaction: bool) -> _Pair:
    if kind == "sse":
        return _QuantumPair(init, model, noise, dt, offset)
    if kind == "cumulant":
        return _CumulantPair(init, model, noise, dt, offset, quantum_backaction)
    if kind == "langevin":
        return _LangevinPair(init, model, noise, dt, offset)
    raise ValueError(f"unknown trajectory kind {kind!r}")


def _default_delta0(kind: str, init) -> float:
    if kind == "sse":
        g: SpatialGrid = init.grid
        return 1e-6 * (g.x_max - g.x_min)
    if kind == "cumulant":
        return 1e-6 * max(1.0, abs(init.x), abs(init.p))
    return 1e-6 * max(1.0, abs(init[0]), abs(init[1]))


# ---------------------------------------------------------------------------
# estimators

def divergence_run(kind: str, init, model: ModelSpec, dt: float,
                   n_periods: float, tau_r_periods: float = 1.0,
                   delta0: float | None = None,
                   noise: NoisePath | None = None,
                   renorm_mode: str = "displace_perturbed",
                   renormalize: bool = True,
                   direction: tuple[float, float] = (1.0, 0.0),
                   quantum_backaction: bool = False) -> DivergenceRun:
    """Track one pair for n_periods drive periods, checkpointing every
    tau_r_periods.  ``kind`` selects the dynamics: "sse" (wavefunction),
    "cumulant" (Gaussian closure), or "langevin" (point trajectory)."""
    if renorm_mode not in RENORM_MODES:
        raise ValueError(f"renorm_mode must be one of {RENORM_MODES}")
    if model.k > 0 and noise is None:
        raise ValueError("measured dynamics requires a NoisePath")
    period = model.drive_period
    tau_r = tau_r_periods * period
    steps_per_renorm = round(tau_r / dt)
    if steps_per_renorm < 1 or abs(steps_per_renorm * dt - tau_r) > 1e-8 * tau_r:
        raise ValueError("tau_r must be a positive integer multiple of dt")
    n_checkpoints = round(n_periods / tau_r_periods)
    if n_checkpoints < 1 or abs(n_checkpoints * tau_r_periods - n_periods) > 1e-8 * n_periods:
        raise ValueError("n_periods must be an integer multiple of tau_r_periods")
    if delta0 is None:
        delta0 = _default_delta0(kind, init)
    if delta0 <= 0:
        raise ValueError("delta0 must be positive")
    dnorm = math.hypot(*direction)
    if dnorm == 0:
        raise ValueError("perturbation direction must be nonzero")
    offset0 = (delta0 * direction[0] / dnorm, delta0 * direction[1] / dnorm)

    pair = _make_pair(kind, init, model, noise, dt, offset0, quantum_backaction)
    times = np.empty(n_checkpoints)
    seps = np.empty(n_checkpoints)
    xseps = np.empty(n_checkpoints)
    series = np.empty(n_checkpoints)
    log_sum = 0.0
    warned = False
    for j in range(n_checkpoints):
        pair.advance(steps_per_renorm)
        xf, pf, xp, pp = pair.centroids()
        sep = math.hypot(xp - xf, pp - pf)
        if not math.isfinite(sep) or sep == 0.0:
            raise StretchOverflow(
                f"pair separation degenerate ({sep}) at checkpoint {j}")
        t_j = (j + 1) * tau_r
        times[j] = t_j
        seps[j] = sep
        xseps[j] = abs(xp - xf)
        log_stretch = math.log(sep / delta0)
        if renormalize:
            if log_stretch > STRETCH_ABORT_LOG:
                raise StretchOverflow(
                    f"stretch e^{log_stretch:.1f} in one interval at t={t_j}; "
                    "shorten tau_r")
            if log_stretch > STRETCH_WARN_LOG and not warned:
                warnings.warn(
                    f"per-interval stretch e^{log_stretch:.1f} exceeds e^3; "
                    "consider shortening tau_r", RuntimeWarning, stacklevel=2)
                warned = True
            log_sum += log_stretch
            series[j] = log_sum / t_j
            u = ((xp - xf) / sep, (pp - pf) / sep)
            pair.rescale(renorm_mode, (delta0 * u[0], delta0 * u[1]))
        else:
            series[j] = log_stretch / t_j
    return DivergenceRun(kind=kind, delta0=delta0, tau_r=tau_r,
                         renormalized=renormalize, times=times,
                         separations=seps, lambda_series=series,
                         x_separations=xseps)


def lyapunov_fixed_noise(kind: str, init, model: ModelSpec, dt: float,
                         n_periods: float, tau_r_periods: float = 1.0,
                         delta0: float | None = None,
                         ensemble: int = 1, base_seed: int = 0,
                         renorm_mode: str = "displace_perturbed",
                         renormalize: bool = True,
                         direction: tuple[float, float] = (1.0, 0.0),
                         quantum_backaction: bool = False,
                         burn_fraction: float = 0.1) -> LyapunovEstimate:
    """Ensemble fixed-noise exponent: one divergence_run per member, each
    with an independent noise stream; the quoted lambda is the ensemble
    mean of the post-transient growth rates and std their sample spread."""
    runs = []
    members = []
    for i in range(ensemble):
        noise = None
        if model.k > 0:
            noise = NoisePath.for_member(base_seed, i, dt)
        run = divergence_run(kind, init, model, dt, n_periods,
                             tau_r_periods=tau_r_periods, delta0=delta0,
                             noise=noise, renorm_mode=renorm_mode,
                             renormalize=renormalize, direction=direction,
                             quantum_backaction=quantum_backaction)
        runs.append(run)
        members.append(run.lambda_tail(burn_fraction))
    arr = np.asarray(members)
    std = float(arr.std(ddof=1)) if ensemble > 1 else 0.0
    config = {
        "kind": kind, "dt": dt, "n_periods": n_periods,
        "tau_r_periods": tau_r_periods, "delta0": runs[0].delta0,
        "ensemble": ensemble, "base_seed": base_seed,
        "renorm_mode": renorm_mode, "renormalize": renormalize,
        "direction": list(direction),
        "quantum_backaction": quantum_backaction,
        "burn_fraction": burn_fraction,
    }
    return LyapunovEstimate(float(arr.mean()), std, members, runs, config)


def classical_tangent_oracle(model: ModelSpec, z0: tuple[float, float],
                             dt: float, n_periods: float,
                             renorm_periods: float = 1.0,
                             burn_fraction: float = 0.1) -> LyapunovEstimate:
    """Largest exponent of the deterministic flow from RK4 on the
    trajectory and its tangent vector, renormalized each interval."""
    period = model.drive_period
    # checkpoints need no period alignment here, so a non-commensurate dt
    # is accepted and the interval rounded to whole steps
    steps = max(1, round(renorm_periods * period / dt))
    tau_r = steps * dt
    n_checkpoints = round(n_periods / renorm_periods)
    pot = model.potential
    m = model.mass

    def rhs(y, t):
        x, p, u, w = y
        f, df, _ = force_and_derivatives(pot, x, t)
        return np.array([p / m, f, w / m, df * u])

    y = np.array([z0[0], z0[1], 1.0, 0.0])
    t = 0.0
    times = np.empty(n_checkpoints)
    seps = np.empty(n_checkpoints)
    series = np.empty(n_checkpoints)
    log_sum = 0.0
    for j in range(n_checkpoints):
        for _ in range(steps):
            k1 = rhs(y, t)
            k2 = rhs(y + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = rhs(y + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = rhs(y + dt * k3, t + dt)
            y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
        r = math.hypot(y[2], y[3])
        log_sum += math.log(r)
        y[2] /= r
        y[3] /= r
        times[j] = t
        seps[j] = r
        series[j] = log_sum / t
    run = DivergenceRun(kind="tangent", delta0=1.0, tau_r=tau_r,
                        renormalized=True, times=times, separations=seps,
                        lambda_series=series)
    lam = run.lambda_tail(burn_fraction)
    config = {"kind": "tangent", "dt": dt, "n_periods": n_periods,
              "renorm_periods": renorm_periods, "z0": list(z0),
              "burn_fraction": burn_fraction}
    return LyapunovEstimate(lam, 0.0, [lam], [run], config)


def loglog_slope(times: np.ndarray, values: np.ndarray, t_min: float,
                 t_max: float, envelope_bins: int = 0) -> float:
    """Least-squares slope of log(values) against log(times) on a window;
    with envelope_bins > 0, fit the per-bin maxima instead (robust against
    oscillatory decay)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (times >= t_min) & (times <= t_max) & (values > 0)
    lt = np.log(times[sel])
    lv = np.log(values[sel])
    if envelope_bins > 0:
        edges = np.linspace(lt.min(), lt.max() * (1 + 1e-12), envelope_bins + 1)
        idx = np.clip(np.digitize(lt, edges) - 1, 0, envelope_bins - 1)
        bt, bv = [], []
        for b in range(envelope_bins):
            mask = idx == b
            if mask.any():
                jmax = np.argmax(lv[mask])
                bt.append(lt[mask][jmax])
                bv.append(lv[mask][jmax])
        lt = np.asarray(bt)
        lv = np.asarray(bv)
    if lt.size < 2:
        raise ValueError("not enough points in the fit window")
    return float(np.polyfit(lt, lv, 1)[0])
