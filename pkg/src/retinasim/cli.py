"""Command line front-end: ``retinasim <subcommand> --config <path> [--seed N] [--out DIR] [--strict]``.

Each subcommand writes CSV/binary artifacts plus ``summary.json`` (results
of internal consistency checks) and ``provenance.json`` into the output
directory. Exit codes: 0 success, 2 validation, 3 numerical accuracy,
4 model-regime violation, 5 I/O.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import io as rio
from .config import ExperimentConfig, load_config, provenance
from .core import assemble_transport, fixed_point
from .dynamics import (
    IntegratorConfig,
    generate_lnp_spikes,
    integrate_piecewise,
    integrate_sde,
    reconstruct_exit_states,
)
from .errors import AccuracyError, RetinaSimError, ValidationError
from .gif import (
    PairProduct,
    SpikeIndicator,
    delta_average,
    estimate_response_kernel,
    relative_prediction_error,
    ring_moving_bar,
    simulate_gif,
    spontaneous_run,
    white_noise_probe,
)
from .spectral import (
    eigendecompose,
    impulse_response,
    network_forcing,
    resonance_scan,
    rg_receptive_field,
)
from .statistics import WhiteNoiseCorrelation, empirical_spike_statistics


class Run:
    """Collects artifacts and checks of one subcommand."""

    def __init__(self, cfg: ExperimentConfig, seed: int, out: Path):
        self.cfg = cfg
        self.seed = seed
        self.out = out
        self.results: dict = {}
        self.checks: list = []
        self.artifacts: list = []

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def check(self, name: str, value: float, tolerance: float, *, upper: bool = True):
        passed = bool(value <= tolerance) if upper else bool(value >= tolerance)
        self.checks.append({"name": name, "value": float(value), "tolerance": float(tolerance), "passed": passed})

    def require_network(self):
        if self.cfg.network is None:
            raise ValidationError("this subcommand needs a 'network' section")
        return self.cfg.network

    def require_gif(self):
        if self.cfg.gif is None:
            raise ValidationError("this subcommand needs a 'gif' section")
        return self.cfg.gif


def _times(horizon: float, dt: float) -> np.ndarray:
    return np.arange(int(round(horizon / dt)) + 1) * dt


def _integrator(cfg: ExperimentConfig) -> IntegratorConfig:
    i = cfg.values["integrator"]
    return IntegratorConfig(dt=i["dt_ms"], eps_event=i["eps_event"], max_iter=i["max_iter"])


def _forcing(run: Run, times):
    cfg = run.cfg
    if cfg.stimulus is None:
        return None
    return network_forcing(cfg.network, cfg.stimulus, cfg.kernels, cfg.b_centers_mm, times, check_refinement=False)


# -- subcommands ------------------------------------------------------------


def cmd_spectrum(run: Run):
    net = run.require_network()
    op = assemble_transport(net, net.rest_label())
    sd = eigendecompose(op)
    rest = fixed_point(op)
    order = np.lexsort((sd.eigenvalues.imag, sd.eigenvalues.real))
    lam = sd.eigenvalues[order]
    rio.write_table_csv(run.path("eigenvalues.csv"), ["index", "real", "imag"],
                        [np.arange(len(lam)), lam.real, lam.imag])
    rio.write_matrix_csv(run.path("transport_operator.csv"), op.matrix)
    rio.write_table_csv(run.path("rest_state.csv"), ["cell", "value"], [np.arange(len(rest.state)), rest.state])
    run.results.update(stable=sd.stable, condition=sd.condition, rest_in_domain=rest.in_domain,
                       max_real_part=float(lam.real.max()))
    run.check("eigen_residual", sd.residual, 1e-8)


def cmd_rf(run: Run):
    net = run.require_network()
    cfg = run.cfg
    a = cfg.analysis["rf"]
    cell = cfg.analysis_cell()
    times = _times(a["horizon_ms"], a["dt_ms"])
    rf = rg_receptive_field(net, cell, cfg.kernels, cfg.b_centers_mm, times)
    rio.write_table_csv(run.path("rf_temporal.csv"), ["time_ms"] + [f"b{g}" for g in range(net.n_b)],
                        [times] + [rf.temporal[:, g] for g in range(net.n_b)])
    half, step = a["grid_half_width_mm"], a["grid_step_mm"]
    cx, cy = cfg.b_centers_mm.mean(axis=0)
    xs = cx + np.arange(-half, half + 0.5 * step, step)
    ys = cy + np.arange(-half, half + 0.5 * step, step)
    k = rf.sample(xs, ys)
    T, Y, X = np.meshgrid(times, ys, xs, indexing="ij")
    rio.write_table_csv(run.path("rf_spacetime.csv"), ["x_mm", "y_mm", "time_ms", "value"],
                        [X.ravel(), Y.ravel(), T.ravel(), k.ravel()])
    weight = np.abs(rf.coefficients).sum(axis=1)
    rio.write_table_csv(run.path("rf_modes.csv"), ["mode", "real", "imag", "weight"],
                        [np.arange(len(rf.modes)), rf.modes.real, rf.modes.imag, weight])
    run.results.update(cell=cell, grid_step_mm=step, time_step_ms=a["dt_ms"])
    run.check("imag_residue", rf.imag_residue, 1e-10)
    if a["cross_check"]:
        if cfg.stimulus is None:
            raise ValidationError("analysis.rf.cross_check needs a stimulus")
        predicted = rf.predict_response(cfg.stimulus)
        rest = fixed_point(assemble_transport(net, net.rest_label())).state
        traj = integrate_piecewise(net, rest, _forcing(run, times), times[-1], _integrator(cfg))
        simulated = np.interp(times, traj.times, traj.states[:, cell]) - rest[cell]
        err = float(np.linalg.norm(predicted - simulated) / max(np.linalg.norm(simulated), 1e-300))
        rio.write_table_csv(run.path("rf_cross_check.csv"), ["time_ms", "predicted", "simulated"],
                            [times, predicted, simulated])
        run.results["domains_visited"] = len(traj.visits)
        run.check("convolution_vs_simulation_rel_l2", err, a["tolerance"])


def cmd_impulse(run: Run):
    net = run.require_network()
    a = run.cfg.analysis["impulse"]
    cell = run.cfg.analysis_cell()
    ir = impulse_response(net, cell, run.cfg.kernels, run.cfg.b_centers_mm, amplitude=a["amplitude"],
                          duration_ms=a["duration_ms"], horizon_ms=a["horizon_ms"], dt=a["dt_ms"])
    rio.write_table_csv(run.path("impulse.csv"), ["time_ms", "response"], [ir.times, ir.response])
    run.results.update(cell=cell, peak=float(np.abs(ir.response).max()))


def cmd_resonance(run: Run):
    net = run.require_network()
    a = run.cfg.analysis["resonance"]
    cell = run.cfg.analysis_cell()
    freqs = np.linspace(a["f_min_hz"], a["f_max_hz"], a["n_freqs"])
    scan = resonance_scan(net, cell, freqs, a["probe_amplitude_mv"])
    rio.write_table_csv(run.path("resonance.csv"), ["frequency_hz", "amplitude"], [scan.frequencies_hz, scan.amplitude])
    run.results.update(cell=cell, peaks_hz=scan.peaks_hz.tolist(),
                       mode_frequencies_hz=scan.mode_frequencies_hz.tolist())


def cmd_simulate(run: Run):
    net = run.require_network()
    cfg = run.cfg
    integ = cfg.values["integrator"]
    times = _times(integ["horizon_ms"], integ["dt_ms"])
    rest = fixed_point(assemble_transport(net, net.rest_label())).state
    traj = integrate_piecewise(net, rest, _forcing(run, times), integ["horizon_ms"], _integrator(cfg))
    rec = _times(integ["horizon_ms"], integ["record_dt_ms"])
    states = np.stack([np.interp(rec, traj.times, traj.states[:, c]) for c in range(traj.states.shape[1])], axis=1)
    rio.write_trajectory_csv(run.path("trajectory.csv"), rec, states)
    rio.write_trajectory_binary(run.path("trajectory.bin"), traj.times, traj.states)
    v = traj.visits
    rio.write_table_csv(run.path("domains.csv"), ["visit", "t_entry_ms", "t_exit_ms", "label"],
                        [np.arange(len(v)), [x.t_entry for x in v], [x.t_exit for x in v],
                         np.array([x.label.packed for x in v], dtype=np.int64)])
    exits = np.array([x.exit_state for x in v])
    recon = float(np.abs(reconstruct_exit_states(traj) - exits).max()) if v else 0.0
    run.results.update(visits=len(v), final_state=traj.final_state.tolist())
    run.check("recurrence_reconstruction", recon, 1e-8)


def cmd_sde(run: Run):
    net = run.require_network()
    a = run.cfg.analysis["sde"]
    rest = fixed_point(assemble_transport(net, net.rest_label())).state
    times = _times(a["horizon_ms"], a["dt_ms"])
    res = integrate_sde(net, rest, _forcing(run, times), a["horizon_ms"], dt=a["dt_ms"], sigma=a["sigma"],
                        n_trials=a["trials"], seed=run.seed, record_every=a["record_dt_ms"])
    mean = res.states.mean(axis=0)
    var = res.states.var(axis=0, ddof=1) if a["trials"] > 1 else np.zeros_like(mean)
    n = mean.shape[1]
    rio.write_table_csv(run.path("sde_moments.csv"), ["time_ms"] + [f"mean_{c}" for c in range(n)] + [f"var_{c}" for c in range(n)],
                        [res.times] + [mean[:, c] for c in range(n)] + [var[:, c] for c in range(n)])
    rio.write_trajectory_binary(run.path("sde_trial0.bin"), res.times, res.states[0])
    run.results.update(trials=a["trials"], samples=len(res.times))


def cmd_correlations(run: Run):
    net = run.require_network()
    a = run.cfg.analysis["correlations"]
    op = assemble_transport(net, net.rest_label())
    noisy = np.zeros(net.state_dim, bool)
    noisy[: net.n_b] = True  # same noise entry point as the sde subcommand
    corr = WhiteNoiseCorrelation(eigendecompose(op), a["sigma"], noisy)
    lags = np.atleast_1d(np.asarray(a["lags_ms"], float))
    for i, lag in enumerate(lags):
        rio.write_matrix_csv(run.path(f"covariance_lag{i}.csv"), corr(0.0, float(lag)))
    rio.write_table_csv(run.path("lags.csv"), ["index", "lag_ms"], [np.arange(len(lags)), lags])
    c0 = corr(0.0, 0.0)
    run.check("covariance_symmetry", float(np.abs(c0 - c0.T).max()), 1e-10)
    run.check("min_variance", float(np.diag(c0).min()), 0.0, upper=False)


def cmd_spike_stats(run: Run):
    net = run.require_network()
    cfg = run.cfg
    a, s = cfg.analysis["sde"], cfg.analysis["spikes"]
    if net.n_g == 0:
        raise ValidationError("spike-stats needs at least one G cell")
    ratio = a["record_dt_ms"] / s["bin_ms"]
    if round(ratio) < 1 or not math.isclose(ratio, round(ratio)):
        raise ValidationError("analysis.spikes.bin_ms must equal or evenly divide analysis.sde.record_dt_ms")
    rest = fixed_point(assemble_transport(net, net.rest_label())).state
    times = _times(a["horizon_ms"], a["dt_ms"])
    res = integrate_sde(net, rest, _forcing(run, times), a["horizon_ms"], dt=a["dt_ms"], sigma=a["sigma"],
                        n_trials=s["trials"], seed=run.seed, record_every=a["record_dt_ms"])
    v_g = res.states[:, :-1, net.slice_g]
    p = net.params
    raster = generate_lnp_spikes(v_g, p.theta_g_mv, p.sigma_g_mv, s["bin_ms"], a["record_dt_ms"], seed=run.seed)
    stats = empirical_spike_statistics(raster, s["max_lag_bins"])
    rio.write_raster(run.path("raster.txt"), raster)
    rows = [("rate", -1, i, -1, stats.rates[i], stats.rates_se[i]) for i in range(raster.n_neurons)]
    for li, lag in enumerate(stats.lags):
        for i in range(raster.n_neurons):
            for j in range(raster.n_neurons):
                rows.append(("covariance", int(lag), i, j, stats.covariance[li, i, j], stats.covariance_se[li, i, j]))
    text = "estimator,lag_bins,neuron_i,neuron_j,value,se\n" + "".join(
        f"{r[0]},{r[1]},{r[2]},{r[3]},{rio.FLOAT_FMT % r[4]},{rio.FLOAT_FMT % r[5]}\n" for r in rows)
    rio.atomic_write(run.path("spike_stats.csv"), text)
    run.results.update(trials=stats.n_trials, mean_rate=float(stats.rates.mean()))


def _gif_stimulus(g: dict, net, n_bins: int):
    st = g["stimulus"]
    if st["kind"] == "none":
        return None
    if st["kind"] == "moving_bar":
        return ring_moving_bar(net.n, n_bins, st["amplitude"], speed=st["speed"], width=st["width"],
                               start=st["start"], onset_bin=st["onset_bin"])
    if st["kind"] == "white_noise":
        return white_noise_probe(n_bins, net.n, st["amplitude"], st["seed"])
    raise ValidationError(f"gif.stimulus.kind: unknown kind {st['kind']!r}")


def cmd_gif_sim(run: Run):
    net = run.require_gif()
    g = run.cfg.values["gif"]
    stim = _gif_stimulus(g, net, g["bins"])
    res = simulate_gif(net, stim, g["bins"], g["trials"], run.seed, burn_in_bins=g["burn_in_bins"])
    rio.write_raster(run.path("raster.txt"), res.raster)
    rates = res.raster.spikes.mean(axis=(0, 2))
    rio.write_table_csv(run.path("rates.csv"), ["neuron", "spikes_per_bin"], [np.arange(net.n), rates])
    run.results.update(memory_depth=net.memory_depth, bin_ms=net.bin_ms, mean_rate=float(rates.mean()))


def cmd_linear_response(run: Run):
    net = run.require_gif()
    lr = run.cfg.values["linear_response"]
    g = run.cfg.values["gif"]
    seed = run.seed
    spont = spontaneous_run(net, lr["spontaneous_bins"], seed, n_trials=lr["spontaneous_trials"], first_trial=10**6)
    obs = SpikeIndicator(lr["neuron"])
    probe = white_noise_probe(lr["probe_bins"], net.n, lr["probe_amplitude"], seed)
    stim_run = simulate_gif(net, probe, lr["probe_bins"], lr["trials"], seed, burn_in_bins=g["burn_in_bins"])
    da = delta_average(obs, stim_run.raster, spont.raster)
    est = estimate_response_kernel(da.delta_mu, probe, lr["n_lags"], ridge=lr.get("ridge"), se=da.se)
    lags = np.repeat(est.lags, net.n)
    chans = np.tile(np.arange(net.n), len(est.lags))
    rio.write_table_csv(run.path("kernel.csv"), ["lag_bins", "channel", "value", "se"],
                        [lags, chans, est.kernel.ravel(), est.kernel_se.ravel()])
    st = g["stimulus"]
    bar = ring_moving_bar(net.n, lr["holdout_bins"], lr["probe_amplitude"], speed=st["speed"], width=st["width"],
                          start=st["start"], onset_bin=st["onset_bin"])
    held = simulate_gif(net, bar, lr["holdout_bins"], lr["trials"], seed + 1, burn_in_bins=g["burn_in_bins"])
    dh = delta_average(obs, held.raster, spont.raster)
    pred = est.predict(bar)
    rio.write_table_csv(run.path("holdout.csv"), ["bin", "observed", "se", "predicted"],
                        [np.arange(len(pred)), dh.delta_mu, dh.se, pred])
    j = (lr["neuron"] + 1) % net.n
    pair = PairProduct(lr["neuron"], j, 1, float(spont.raster.spikes[:, lr["neuron"]].mean()),
                       float(spont.raster.spikes[:, j].mean()))
    dp = delta_average(pair, held.raster, spont.raster)
    rio.write_table_csv(run.path("pair_delta.csv"), ["bin", "delta_mu", "se"], [np.arange(len(dp.delta_mu)), dp.delta_mu, dp.se])
    run.results.update(ridge=est.ridge, fit_residual=est.residual, gram_condition=est.condition,
                       holdout_relative_error=relative_prediction_error(est, bar, dh.delta_mu))


COMMANDS: dict[str, Callable[[Run], None]] = {
    "spectrum": cmd_spectrum,
    "rf": cmd_rf,
    "impulse": cmd_impulse,
    "resonance": cmd_resonance,
    "simulate": cmd_simulate,
    "sde": cmd_sde,
    "correlations": cmd_correlations,
    "spike-stats": cmd_spike_stats,
    "gif-sim": cmd_gif_sim,
    "linear-response": cmd_linear_response,
}


def run(subcommand: str, cfg: ExperimentConfig, *, seed: Optional[int] = None, out: Optional[Path] = None) -> dict:
    """Execute ``subcommand`` and write its artifacts; returns the summary."""
    seed = cfg.seed if seed is None else seed
    out = Path(out if out is not None else cfg.values["output_dir"])
    r = Run(cfg, seed, out)
    COMMANDS[subcommand](r)
    summary = {
        "subcommand": subcommand,
        "results": r.results,
        "checks": r.checks,
        "all_checks_passed": all(c["passed"] for c in r.checks),
        "artifacts": sorted(r.artifacts),
    }
    rio.write_json(out / "provenance.json", provenance(cfg, subcommand, seed))
    rio.write_json(out / "summary.json", summary)
    if cfg.strict and not summary["all_checks_passed"]:
        failed = [c["name"] for c in r.checks if not c["passed"]]
        raise AccuracyError(f"consistency checks failed: {', '.join(failed)}")
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retinasim", description="Retina network simulations and analyses.")
    p.add_argument("subcommand", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="YAML configuration file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--strict", action="store_true", help="reject unknown keys and fail on any failed check")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, strict=True if args.strict else None)
        summary = run(args.subcommand, cfg, seed=args.seed, out=args.out)
    except ValidationError as exc:
        print(f"retinasim {args.subcommand}: invalid configuration", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return exc.exit_code
    except RetinaSimError as exc:
        print(f"retinasim {args.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    status = "all checks passed" if summary["all_checks_passed"] else "some checks failed"
    print(f"retinasim {args.subcommand}: {status}; outputs in {args.out or cfg.values['output_dir']}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
