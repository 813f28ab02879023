"""The runnable experiments behind the CLI subcommands.

Each runner takes an ExperimentConfig, writes its artifacts into the output
directory, and returns the summary dictionary it wrote.  Independent
realizations fan out over a process pool when workers > 1; a single
collector writes files in realization order, so output bytes do not depend
on scheduling.  Every artifact embeds the resolved config and version.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from ._version import __version__
from .classical import CumulantState, evolve_field, field_moments, gaussian_field
from .config import ExperimentConfig, config_from_dicts
from .errors import ConfigError, SimulationError
from .lyapunov import classical_tangent_oracle, divergence_run, loglog_slope
from .model import PhaseSpaceField, PhaseSpaceGrid, SpatialGrid
from .noise import NoisePath, dump_increments
from .output import (NdjsonWriter, write_field, write_json, write_plot_script,
                     write_strobe_csv)
from .qct import (chaotic_extent, check_weak_qct, compute_t_star,
                  orbit_action, strong_qct_report, QctReport)
from .quantum import (DensityState, MeasurementRecord, coherent_state,
                      evolve_lindblad, evolve_sse, moments, wigner_on_grid)

__all__ = [
    "StroboscopicMap",
    "run_strong_qct",
    "run_weak_qct",
    "run_lyapunov_sweep",
    "run_strobe_map",
    "run_isolated_decay",
    "RUNNERS",
]


# ---------------------------------------------------------------------------
# shared plumbing

def _out_dir(config: ExperimentConfig) -> str:
    out = config.out_dir or f"{config.experiment}-out"
    os.makedirs(out, exist_ok=True)
    return out


def _initial_state(config: ExperimentConfig):
    width = config.initial["width"]
    return coherent_state(config.grid, config.initial["x0"],
                          config.initial["p0"], width)


def _initial_field(config: ExperimentConfig) -> PhaseSpaceField:
    width = config.initial["width"]
    if width is None:
        raise ConfigError("[initial] width is required when hbar = 0")
    vx = width ** 2
    hbar = config.model.hbar
    vp = (hbar / (2.0 * width)) ** 2 if hbar > 0 else vx
    return gaussian_field(config.phase, config.initial["x0"],
                          config.initial["p0"], vx, vp)


def _total_steps(config: ExperimentConfig) -> int:
    spp = config.steps_per_period
    steps = round(config.numerics["t_total_periods"] * spp)
    if steps < 1:
        raise ConfigError("[numerics] t_total_periods too small for one step")
    return steps


def _run_pool(fn, payloads: list, workers: int) -> list:
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


def _rebuild(resolved: dict) -> ExperimentConfig:
    sections = {k: v for k, v in resolved.items() if k != "experiment"}
    return config_from_dicts(resolved["experiment"], sections,
                             out_dir=sections.get("output", {}).get("dir"))


# ---------------------------------------------------------------------------
# strong transition: one conditioned wavepacket, localization report

def _strong_member(payload: tuple) -> dict:
    resolved, member, dump_noise = payload
    config = _rebuild(resolved)
    model = config.model
    dt = config.dt
    stride = max(1, config.numerics["record_stride"])
    steps = _total_steps(config)
    noise = NoisePath.for_member(config.numerics["base_seed"], member, dt,
                                 record=dump_noise)
    state = _initial_state(config)
    rec = MeasurementRecord(dt)
    rows = []
    vx_peak = 0.0
    done = 0
    n_rec = 0
    while done < steps:
        chunk = min(stride, steps - done)
        state = evolve_sse(state, model, noise, dt, chunk, record=rec,
                           check_interval=config.numerics["check_interval"])
        done += chunk
        mom = moments(state)
        vx_peak = max(vx_peak, mom.Vx)
        row = {"i": member, "t": mom.t, "x": mom.x, "p": mom.p,
               "Vx": mom.Vx, "Vp": mom.Vp, "Cxp": mom.Cxp}
        new = rec.samples[n_rec:]
        if new:
            # dy is the record increment of the step landing on this row;
            # ybar averages the record over the stride window
            row["dy"] = float(new[-1])
            row["ybar"] = float(np.mean(new)) / dt
            n_rec = len(rec.samples)
        rows.append(row)
    out = {"member": member, "rows": rows, "vx_peak": vx_peak,
           "final": rows[-1]}
    if dump_noise:
        out["noise"] = list(noise.consumed)
    return out


def run_strong_qct(config: ExperimentConfig, dump_noise: bool = False) -> dict:
    if config.model.k <= 0 or config.model.hbar <= 0:
        raise ConfigError("strong-qct requires k > 0 and hbar > 0")
    out = _out_dir(config)
    opts = config.options
    payloads = [(config.resolved, i, dump_noise)
                for i in range(config.numerics["ensemble_n"])]
    results = _run_pool(_strong_member, payloads,
                        config.numerics["workers"])
    results.sort(key=lambda r: r["member"])
    for res in results:
        m = res["member"]
        with NdjsonWriter(os.path.join(out, f"trajectory-{m:04d}.ndjson"),
                          config.resolved, __version__,
                          experiment=config.experiment) as w:
            for row in res["rows"]:
                w.write(row)
        if dump_noise:
            with open(os.path.join(out, f"noise-{m:04d}.ndjson"), "w") as fh:
                path = NoisePath.for_member(config.numerics["base_seed"], m,
                                            config.dt, record=True)
                path.consumed = res["noise"]
                dump_increments(path, fh)

    x0 = config.initial["x0"]
    eval_x = opts["eval_x"] if opts["eval_x"] is not None else x0
    action_s = opts["action_s"]
    if action_s is None:
        big_s = orbit_action(config.model, (x0, config.initial["p0"]),
                             config.dt)
        action_s = big_s / config.model.hbar
    report = strong_qct_report(
        config.model, (eval_x, config.initial["p0"], opts["eval_t"]),
        action_s, opts["window_dt"], opts["window_dx"],
        threshold_much=opts["threshold_much"],
        threshold_record=opts["threshold_record"])
    with open(os.path.join(out, "qct-report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")

    vx_peaks = [r["vx_peak"] for r in results]
    summary = {
        "experiment": config.experiment,
        "members": len(results),
        "max_sqrt_vx": [math.sqrt(v) for v in vx_peaks],
        "vx_sqrt_max_bound": opts["vx_sqrt_max"],
        "final_moments": [r["final"] for r in results],
        "qct_all_satisfied": report.all_satisfied,
        "action_s": action_s,
    }
    write_json(os.path.join(out, "summary.json"), summary,
               config.resolved, __version__)
    write_plot_script(out)
    worst = max(vx_peaks)
    if math.sqrt(worst) > opts["vx_sqrt_max"]:
        raise SimulationError(
            f"conditioned position spread sqrt(Vx)={math.sqrt(worst):.3e} "
            f"exceeded the configured bound {opts['vx_sqrt_max']:g}")
    return summary


# ---------------------------------------------------------------------------
# weak transition: open quantum vs classical diffusion, t_star verdicts

def _weak_member(payload: tuple) -> dict:
    resolved, d_value = payload
    config = _rebuild(resolved)
    model = config.model.with_(k=0.0, D=d_value)
    dt = config.dt
    steps = _total_steps(config)
    check = config.numerics["check_interval"]
    rho = DensityState.from_pure(_initial_state(config))
    rho = evolve_lindblad(rho, model, dt, steps, check_interval=check)
    f_cl = _initial_field(config)
    f_cl = evolve_field(f_cl, model, dt, steps,
                        spectral_filter=config.options["spectral_filter"],
                        neg_tol=config.options["neg_tol"],
                        check_interval=check)
    phase = config.phase
    wig = wigner_on_grid(rho, phase.p)
    f_w = PhaseSpaceField(phase, wig, rho.t)
    cell = phase.dx * phase.dp
    l1_full = float(np.abs(f_w.values - f_cl.values).sum() * cell)
    j0 = int(np.argmin(np.abs(phase.p)))
    slice_w = f_w.values[:, j0]
    slice_cl = f_cl.values[:, j0]
    l1_slice = float(np.abs(slice_w - slice_cl).sum() * phase.dx)
    return {
        "D": d_value,
        "l1_full": l1_full,
        "l1_slice": l1_slice,
        "p_slice": float(phase.p[j0]),
        "negativity": float(np.min(f_w.values) / np.max(f_w.values)),
        "wigner": f_w.values,
        "classical": f_cl.values,
        "slice_w": slice_w,
        "slice_cl": slice_cl,
        "t": rho.t,
    }


def run_weak_qct(config: ExperimentConfig, dump_noise: bool = False) -> dict:
    if config.model.hbar <= 0:
        raise ConfigError("weak-qct requires hbar > 0")
    out = _out_dir(config)
    opts = config.options
    d_values = [float(d) for d in opts["d_values"]]
    if not d_values:
        raise ConfigError("[weak_qct] d_values must be nonempty")
    payloads = [(config.resolved, d) for d in d_values]
    results = _run_pool(_weak_member, payloads, config.numerics["workers"])
    results.sort(key=lambda r: r["D"])

    phase = config.phase
    with NdjsonWriter(os.path.join(out, "slices.ndjson"), config.resolved,
                      __version__, experiment=config.experiment) as w:
        for res in results:
            for i, x in enumerate(phase.x):
                w.write({"D": res["D"], "x": float(x),
                         "f_wigner": float(res["slice_w"][i]),
                         "f_classical": float(res["slice_cl"][i])})
    for j, res in enumerate(results):
        t = res["t"]
        write_field(out, f"quantum-d{j}",
                    PhaseSpaceField(phase, res["wigner"], t),
                    config.resolved, __version__, D=res["D"])
        write_field(out, f"classical-d{j}",
                    PhaseSpaceField(phase, res["classical"], t),
                    config.resolved, __version__, D=res["D"])

    base = config.model.with_(k=0.0, D=0.0)
    z0 = (opts["tangent_x0"], opts["tangent_p0"])
    oracle = classical_tangent_oracle(base, z0, config.dt,
                                      opts["tangent_periods"])
    lam = oracle.lambda_
    xmax, pmax = chaotic_extent(base, z0, config.dt, opts["extent_periods"])
    area = 4.0 * xmax * pmax
    m0 = field_moments(_initial_field(config))
    u0 = math.sqrt(2.0 * math.pi * math.sqrt(m0.Vx * m0.Vp))

    entries = []
    t_stars = []
    for res in results:
        ts = compute_t_star(lam, res["D"], config.model.mass, area, u0)
        t_stars.append(ts.to_dict())
        entry = check_weak_qct(res["D"], ts.t_star, lam, config.model.mass,
                               config.model.hbar)
        entry.extra["D"] = res["D"]
        entries.append(entry)
    report = QctReport(entries, point=None, averaged=True,
                       config={"lambda_bar": lam, "A": area, "u0": u0,
                               "A_note": "bounding box 2*max|x| * 2*max|p| "
                                         "of a chaotic trajectory",
                               "u0_note": "sqrt(2*pi*sqrt(Vx*Vp)) of the "
                                          "initial state"})
    with open(os.path.join(out, "qct-report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")

    l1s = [r["l1_slice"] for r in results]
    summary = {
        "experiment": config.experiment,
        "d_values": [r["D"] for r in results],
        "l1_slice": l1s,
        "l1_full": [r["l1_full"] for r in results],
        "negativity": [r["negativity"] for r in results],
        "l1_slice_strictly_decreasing":
            all(a > b for a, b in zip(l1s, l1s[1:])),
        "lambda_bar": lam,
        "A": area, "u0": u0,
        "t_star": t_stars,
        "verdicts": [e.extra["verdict"] for e in entries],
        "margins": [e.margin for e in entries],
    }
    write_json(os.path.join(out, "summary.json"), summary,
               config.resolved, __version__)
    write_plot_script(out)
    return summary


# ---------------------------------------------------------------------------
# lyapunov sweep

def _sweep_member(payload: tuple) -> dict:
    resolved, k_value, member = payload
    config = _rebuild(resolved)
    opts = config.options
    model = config.model.with_(k=k_value)
    kind = opts["kind"]
    if kind == "sse":
        init = _initial_state(config)
    elif kind == "cumulant":
        # moments straight from the config; a phase-space grid cannot hold
        # a width of sqrt(hbar/2) in the near-classical regime
        width = config.initial["width"]
        if width is None or width <= 0:
            raise ConfigError("[initial] width must be positive for the "
                              "cumulant kind")
        hbar = config.model.hbar
        vp = (hbar / (2.0 * width)) ** 2 if hbar > 0 else width ** 2
        init = CumulantState(config.initial["x0"], config.initial["p0"],
                             width ** 2, vp, 0.0, 0.0)
    elif kind == "langevin":
        init = (config.initial["x0"], config.initial["p0"])
    else:
        raise ConfigError(f"[lyapunov_sweep] unknown kind {kind!r}")
    noise = None
    if model.k > 0:
        noise = NoisePath.for_member(config.numerics["base_seed"], member,
                                     config.dt)
    run = divergence_run(
        kind, init, model, config.dt,
        config.numerics["t_total_periods"],
        tau_r_periods=config.numerics["tau_r_periods"],
        delta0=config.numerics["delta0"], noise=noise,
        renorm_mode=opts["renorm_mode"], renormalize=opts["renormalize"],
        quantum_backaction=opts["quantum_backaction"])
    return {
        "k": k_value, "member": member,
        "lambda": run.lambda_tail(opts["burn_fraction"]),
        "lambda_final": run.lambda_final,
        "times": run.times.tolist(),
        "lambda_series": run.lambda_series.tolist(),
        "separations": run.separations.tolist(),
        "x_separations": run.x_separations.tolist(),
    }


def run_lyapunov_sweep(config: ExperimentConfig,
                       dump_noise: bool = False) -> dict:
    out = _out_dir(config)
    opts = config.options
    k_values = [float(k) for k in opts["k_values"]]
    ensemble = config.numerics["ensemble_n"]
    payloads = [(config.resolved, k, m)
                for k in k_values for m in range(ensemble)]
    results = _run_pool(_sweep_member, payloads, config.numerics["workers"])
    results.sort(key=lambda r: (r["k"], r["member"]))

    curve = []
    for ki, k in enumerate(k_values):
        members = [r for r in results if r["k"] == k]
        for r in members:
            name = f"trajectory-k{ki:02d}-m{r['member']:02d}.ndjson"
            with NdjsonWriter(os.path.join(out, name), config.resolved,
                              __version__, experiment=config.experiment,
                              k=k, member=r["member"]) as w:
                for t, lam, sep, dxs in zip(r["times"], r["lambda_series"],
                                            r["separations"],
                                            r["x_separations"]):
                    w.write({"t": t, "lambda_s": lam,
                             "realization": r["member"],
                             "sep": sep, "x_sep": dxs})
        lams = np.array([r["lambda"] for r in members])
        curve.append({
            "k": k,
            "hbar": config.model.hbar,
            "lambda_mean": float(lams.mean()),
            "lambda_std": float(lams.std(ddof=1)) if lams.size > 1 else 0.0,
            "n": int(lams.size),
            "T_total": config.numerics["t_total_periods"],
            "members": lams.tolist(),
        })
    summary = {
        "experiment": config.experiment,
        "kind": opts["kind"],
        "curve": curve,
        "nondecreasing_within_std":
            all(b["lambda_mean"] >= a["lambda_mean"]
                - (a["lambda_std"] + b["lambda_std"])
                for a, b in zip(curve, curve[1:])),
    }
    write_json(os.path.join(out, "summary.json"), summary,
               config.resolved, __version__)
    write_plot_script(out)
    return summary


# ---------------------------------------------------------------------------
# stroboscopic map

@dataclass
class StroboscopicMap:
    """Centroid samples at exact integer drive periods (the integrator's
    step count per period is integral by construction, so no interpolation
    is involved), with the density contour levels used for presentation."""

    points: np.ndarray
    period_index: np.ndarray
    member: np.ndarray
    contour_levels: tuple = (0.05, 0.15, 0.25, 0.35, 0.45, 0.55)

    def rms_radius(self) -> float:
        c = self.points.mean(axis=0)
        return float(np.sqrt(((self.points - c) ** 2).sum(axis=1).mean()))


def _strobe_member(payload: tuple) -> dict:
    resolved, member = payload
    config = _rebuild(resolved)
    model = config.model
    dt = config.dt
    spp = config.steps_per_period
    n_periods = round(config.numerics["t_total_periods"])
    skip = config.options["skip_periods"]
    noise = None
    if model.k > 0:
        noise = NoisePath.for_member(config.numerics["base_seed"], member, dt)
    state = _initial_state(config)
    pts = []
    for j in range(n_periods):
        state = evolve_sse(state, model, noise, dt, spp,
                           check_interval=config.numerics["check_interval"])
        if j >= skip:
            mom = moments(state)
            pts.append((j, mom.x, mom.p))
    return {"member": member, "points": pts}


def run_strobe_map(config: ExperimentConfig, dump_noise: bool = False) -> dict:
    if config.model.hbar <= 0:
        raise ConfigError("strobe-map drives the wavefunction integrator; "
                          "hbar must be positive")
    out = _out_dir(config)
    opts = config.options
    payloads = [(config.resolved, m)
                for m in range(config.numerics["ensemble_n"])]
    results = _run_pool(_strobe_member, payloads, config.numerics["workers"])
    results.sort(key=lambda r: r["member"])
    rows = []
    member_ids = []
    for res in results:
        for j, x, p in res["points"]:
            rows.append((j, x, p))
            member_ids.append(res["member"])
    points = np.array([(x, p) for _, x, p in rows])
    smap = StroboscopicMap(points=points,
                           period_index=np.array([j for j, _, _ in rows]),
                           member=np.array(member_ids),
                           contour_levels=tuple(opts["contour_levels"]))
    write_strobe_csv(os.path.join(out, "strobe.csv"), points,
                     smap.period_index, smap.member)

    # kernel density on a power-of-two grid covering the cloud
    ng = opts["density_grid_n"]
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    pad = 0.05 * (hi - lo + 1e-12)
    lo -= pad
    hi += pad
    kde = gaussian_kde(points.T, bw_method=opts["kde_bandwidth"])
    sg = SpatialGrid(float(lo[0]), float(hi[0]), ng, hbar=config.model.hbar)
    pg = PhaseSpaceGrid(sg, float(lo[1]), float(hi[1]), ng)
    xx, pp = np.meshgrid(pg.x, pg.p, indexing="ij")
    dens = kde(np.vstack([xx.ravel(), pp.ravel()])).reshape(ng, ng)
    write_field(out, "strobe-density", PhaseSpaceField(pg, dens, 0.0),
                config.resolved, __version__,
                contour_levels=list(smap.contour_levels),
                kde_bandwidth=float(kde.factor))

    summary = {
        "experiment": config.experiment,
        "n_points": int(points.shape[0]),
        "rms_radius": smap.rms_radius(),
        "centroid": points.mean(axis=0).tolist(),
        "contour_levels": list(smap.contour_levels),
        "kde_bandwidth_factor": float(kde.factor),
        "density_max": float(dens.max()),
    }
    write_json(os.path.join(out, "summary.json"), summary,
               config.resolved, __version__)
    write_plot_script(out)
    return summary


# ---------------------------------------------------------------------------
# isolated decay

def run_isolated_decay(config: ExperimentConfig,
                       dump_noise: bool = False) -> dict:
    if config.model.k != 0:
        raise ConfigError("isolated-decay requires k = 0")
    out = _out_dir(config)
    opts = config.options
    run = divergence_run(
        "sse", _initial_state(config), config.model, config.dt,
        config.numerics["t_total_periods"],
        tau_r_periods=config.numerics["tau_r_periods"],
        delta0=config.numerics["delta0"], renormalize=False)
    with NdjsonWriter(os.path.join(out, "trajectory-decay.ndjson"),
                      config.resolved, __version__,
                      experiment=config.experiment) as w:
        for t, lam, sep, dxs in zip(run.times, run.lambda_series,
                                    run.separations, run.x_separations):
            w.write({"t": float(t), "lambda_s": float(lam),
                     "realization": 0, "sep": float(sep),
                     "x_sep": float(dxs)})
    period = config.model.drive_period
    slope = loglog_slope(run.times, np.abs(run.lambda_series),
                         opts["fit_t_min_periods"] * period,
                         opts["fit_t_max_periods"] * period,
                         envelope_bins=opts["envelope_bins"])
    ok = opts["slope_min"] <= slope <= opts["slope_max"]
    summary = {
        "experiment": config.experiment,
        "slope": slope,
        "slope_window": [opts["slope_min"], opts["slope_max"]],
        "slope_ok": ok,
        "delta0": run.delta0,
    }
    write_json(os.path.join(out, "summary.json"), summary,
               config.resolved, __version__)
    write_plot_script(out)
    if not ok:
        raise SimulationError(
            f"finite-time exponent decay slope {slope:.3f} outside "
            f"[{opts['slope_min']}, {opts['slope_max']}]")
    return summary


RUNNERS = {
    "strong-qct": run_strong_qct,
    "weak-qct": run_weak_qct,
    "lyapunov-sweep": run_lyapunov_sweep,
    "strobe-map": run_strobe_map,
    "isolated-decay": run_isolated_decay,
}
