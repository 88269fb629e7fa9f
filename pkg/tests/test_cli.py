import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml
from scipy.linalg import solve_continuous_lyapunov

from retinasim import io as rio
from retinasim.cli import COMMANDS, main
from retinasim.config import load_config, parse_config
from retinasim.core import assemble_transport
from retinasim.errors import ResolutionError, ValidationError

PAIR = {
    "network": {
        "cells": {"n_b": 1, "n_a": 1, "n_g": 0},
        "connectivity": {"a_to_b": {"kind": "matrix", "values": [[-1.0]]},
                         "b_to_a": {"kind": "matrix", "values": [[1.0]]}},
        "parameters": {"tau_b_ms": 1.0, "tau_a_ms": 1.0, "tau_g_ms": 1.0},
    }
}

LINEAR = {
    "seed": 3,
    "network": {
        "cells": {"n_b": 2, "n_a": 1, "n_g": 1},
        "b_centers_mm": [[0.0, 0.0], [0.06, 0.0]],
        "connectivity": {
            "a_to_b": {"kind": "matrix", "values": [[-0.08], [-0.06]]},
            "b_to_a": {"kind": "matrix", "values": [[0.05, 0.04]]},
            "b_to_g": {"kind": "matrix", "values": [[0.5, 0.5]]},
            "a_to_g": {"kind": "matrix", "values": [[-0.4]]},
        },
        "parameters": {"tau_b_ms": [8.0, 10.0], "tau_a_ms": 12.0, "tau_g_ms": 15.0,
                       "theta_b_mv": -3.0, "theta_a_mv": -3.0, "sigma_g_mv": 0.5},
    },
    "bipolar_kernel": {"surround_amplitude": 0.3, "amplitude_2": 0.5},
    "stimulus": {"kind": "moving_bar", "amplitude": 0.3, "width_mm": 0.08, "speed_mm_per_ms": 0.004,
                 "start_mm": -0.3, "profile": "gaussian", "t_on_ms": 0.0},
    "integrator": {"dt_ms": 0.2, "horizon_ms": 150.0},
    "analysis": {
        "rf": {"horizon_ms": 150.0, "dt_ms": 0.2, "cross_check": True, "grid_half_width_mm": 0.1,
               "grid_step_mm": 0.05},
        "impulse": {"amplitude": 0.05, "duration_ms": 2.0, "horizon_ms": 60.0},
        "resonance": {"n_freqs": 50},
        "sde": {"dt_ms": 0.05, "sigma": 0.05, "trials": 20, "horizon_ms": 40.0, "record_dt_ms": 1.0},
        "correlations": {"sigma": 0.05, "lags_ms": [0.0, 5.0]},
        "spikes": {"bin_ms": 0.5, "trials": 10, "max_lag_bins": 3},
    },
}

RING = {
    "seed": 5,
    "gif": {
        "ring": {"n": 10, "g_exc": 0.006, "g_inh": 0.02, "e_exc": 4.0, "e_inh": -2.0},
        "bins": 300, "trials": 20,
        "stimulus": {"kind": "moving_bar", "amplitude": 0.15, "speed": 0.02, "width": 0.7},
    },
    "linear_response": {"probe_bins": 1500, "trials": 60, "n_lags": 10, "spontaneous_bins": 3000,
                        "spontaneous_trials": 20, "holdout_bins": 600},
}


def write_config(tmp_path: Path, doc: dict, name: str = "cfg.yaml") -> Path:
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def run_cli(sub: str, cfg: Path, out: Path, *extra) -> int:
    return main([sub, "--config", str(cfg), "--out", str(out), *extra])


def snapshot(directory: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


# -- configuration ----------------------------------------------------------


def test_minimal_config_loads_and_fills_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path, PAIR))
    assert cfg.network.n == 2
    assert cfg.values["integrator"]["dt_ms"] == 0.1
    assert cfg.values["network"]["parameters"]["theta_b_mv"] == 0.0
    assert cfg.warnings == []


def test_defaults_are_echoed_into_provenance(tmp_path):
    assert run_cli("spectrum", write_config(tmp_path, PAIR), tmp_path / "out") == 0
    prov = json.loads((tmp_path / "out" / "provenance.json").read_text())
    assert prov["resolved_config"]["integrator"]["eps_event"] == 1e-9
    assert prov["seed"] == 0 and len(prov["config_sha256"]) == 64
    assert {"retinasim", "numpy", "scipy"} <= set(prov["versions"])


def test_positive_inhibitory_entry_names_row_and_column(tmp_path):
    doc = yaml.safe_load(yaml.safe_dump(LINEAR))
    doc["network"]["connectivity"]["a_to_b"]["values"] = [[-0.08], [0.06]]
    with pytest.raises(ValidationError, match=r"a_to_b: entry \(row 2, col 1\)"):
        load_config(write_config(tmp_path, doc))


def test_all_problems_are_reported_together():
    doc = {"network": {"cells": {"n_b": 1, "n_a": 1, "n_g": 0}, "parameters": {"tau_b_ms": "fast"}},
           "integrator": {"dt_ms": "small"}}
    with pytest.raises(ValidationError) as info:
        parse_config(doc)
    text = " ".join(info.value.problems)
    assert "tau_b_ms" in text and "tau_a_ms: required" in text and "integrator.dt_ms" in text


def test_unknown_keys_warn_leniently_and_fail_strictly(tmp_path):
    doc = {**PAIR, "integrator": {"dt_ms": 0.1, "tolerance_mv": 1.0}}
    cfg = load_config(write_config(tmp_path, doc))
    assert cfg.warnings == ["integrator.tolerance_mv: unknown key ignored"]
    with pytest.raises(ValidationError, match="integrator.tolerance_mv: unknown key"):
        load_config(write_config(tmp_path, doc), strict=True)


def test_dangling_stimulus_file_is_a_resolution_error(tmp_path):
    doc = {**PAIR, "stimulus": {"kind": "frames", "path": "movie.bin"}}
    with pytest.raises(ResolutionError, match="movie.bin"):
        load_config(write_config(tmp_path, doc))


def test_stimulus_file_resolves_relative_to_the_config(tmp_path):
    rio.write_frames(tmp_path / "movie.bin", np.zeros((2, 3, 3)), 0.1, 10.0)
    doc = {**PAIR, "stimulus": {"kind": "frames", "path": "movie.bin"}}
    cfg = load_config(write_config(tmp_path, doc))
    assert cfg.stimulus.evaluate(0.05, 0.05, 5.0) == 0.0


def test_connectivity_from_matrix_file(tmp_path):
    rio.write_matrix_csv(tmp_path / "wab.csv", [[-1.0]])
    doc = yaml.safe_load(yaml.safe_dump(PAIR))
    doc["network"]["connectivity"]["a_to_b"] = {"path": "wab.csv"}
    cfg = load_config(write_config(tmp_path, doc))
    assert cfg.network.weights.a_to_b[0, 0] == -1.0


def test_rest_state_outside_its_domain_is_a_validation_error(tmp_path):
    doc = yaml.safe_load(yaml.safe_dump(PAIR))
    doc["network"]["parameters"]["theta_b_mv"] = 1.0
    with pytest.raises(ValidationError, match="rest"):
        load_config(write_config(tmp_path, doc))


def test_gif_tables_are_loaded(tmp_path):
    rio.write_table_csv(tmp_path / "n.csv", rio.NEURON_COLUMNS, [[1.0, 1.0], [0.1, 0.1], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    rio.write_table_csv(tmp_path / "s.csv", rio.SYNAPSE_COLUMNS, [np.array([1]), np.array([0]), [0.01], [3.0], [10.0]])
    cfg = load_config(write_config(tmp_path, {"gif": {"tables": {"neurons": "n.csv", "synapses": "s.csv"}}}))
    assert cfg.gif.weights[1, 0] == pytest.approx(0.03)


# -- subcommands ------------------------------------------------------------


def test_spectrum_of_the_two_cell_example(tmp_path):
    assert run_cli("spectrum", write_config(tmp_path, PAIR), tmp_path / "out") == 0
    ev = rio.read_table_csv(tmp_path / "out" / "eigenvalues.csv")
    np.testing.assert_allclose(ev["real"], [-1.0, -1.0], atol=1e-14)
    np.testing.assert_allclose(ev["imag"], [-1.0, 1.0], atol=1e-14)


def test_rf_cross_check_is_reported(tmp_path):
    assert run_cli("rf", write_config(tmp_path, LINEAR), tmp_path / "out") == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    check = {c["name"]: c for c in summary["checks"]}["convolution_vs_simulation_rel_l2"]
    assert check["tolerance"] == 1e-3 and check["passed"] and check["value"] < 1e-3
    table = rio.read_table_csv(tmp_path / "out" / "rf_cross_check.csv")
    assert set(table) == {"time_ms", "predicted", "simulated"}


def test_correlations_describe_the_sde_noise_model(tmp_path):
    cfg = write_config(tmp_path, LINEAR)
    assert run_cli("correlations", cfg, tmp_path / "out") == 0
    net = load_config(cfg).network
    L = np.array([[-1 / 8, 0, -0.08, 0], [0, -1 / 10, -0.06, 0], [0.05, 0.04, -1 / 12, 0], [0.5, 0.5, -0.4, -1 / 15]])
    np.testing.assert_allclose(assemble_transport(net, net.rest_label()).matrix, L, atol=1e-15)
    Q = np.diag([1.0, 1.0, 0.0, 0.0])  # the sde subcommand drives only the B cells
    expected = solve_continuous_lyapunov(L, -0.05 ** 2 * Q)
    np.testing.assert_allclose(rio.read_matrix_csv(tmp_path / "out" / "covariance_lag0.csv"), expected,
                               rtol=1e-9, atol=1e-15)


@pytest.mark.parametrize("sub", sorted(set(COMMANDS) - {"gif-sim", "linear-response"}))
def test_retina_subcommands_are_byte_identical_on_rerun(tmp_path, sub):
    cfg = write_config(tmp_path, LINEAR)
    assert run_cli(sub, cfg, tmp_path / "a") == 0
    assert run_cli(sub, cfg, tmp_path / "b") == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b and "summary.json" in a and len(a) >= 3


@pytest.mark.parametrize("sub", ["gif-sim", "linear-response"])
def test_gif_subcommands_are_byte_identical_on_rerun(tmp_path, sub):
    cfg = write_config(tmp_path, RING)
    assert run_cli(sub, cfg, tmp_path / "a") == 0
    assert run_cli(sub, cfg, tmp_path / "b") == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_seed_flag_changes_stochastic_outputs(tmp_path):
    cfg = write_config(tmp_path, RING)
    assert run_cli("gif-sim", cfg, tmp_path / "a") == 0
    assert run_cli("gif-sim", cfg, tmp_path / "b", "--seed", "6") == 0
    assert (tmp_path / "a" / "raster.txt").read_bytes() != (tmp_path / "b" / "raster.txt").read_bytes()
    assert json.loads((tmp_path / "b" / "provenance.json").read_text())["seed"] == 6


def test_inputs_are_not_modified(tmp_path):
    cfg = write_config(tmp_path, LINEAR)
    before = cfg.read_bytes()
    run_cli("simulate", cfg, tmp_path / "out")
    assert cfg.read_bytes() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["cfg.yaml", "out"]


# -- exit codes -------------------------------------------------------------


def test_validation_failure_exits_2(tmp_path, capsys):
    doc = yaml.safe_load(yaml.safe_dump(PAIR))
    doc["network"]["connectivity"]["b_to_a"]["values"] = [[-1.0]]
    assert run_cli("spectrum", write_config(tmp_path, doc), tmp_path / "out") == 2
    assert "b_to_a" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_failed_check_in_strict_mode_exits_3(tmp_path, capsys):
    doc = yaml.safe_load(yaml.safe_dump(LINEAR))
    doc["analysis"]["rf"]["tolerance"] = 1e-12
    cfg = write_config(tmp_path, doc)
    assert run_cli("rf", cfg, tmp_path / "lenient") == 0
    assert run_cli("rf", cfg, tmp_path / "strict", "--strict") == 3
    assert "convolution_vs_simulation_rel_l2" in capsys.readouterr().err


def test_linearity_violation_exits_4(tmp_path, capsys):
    doc = yaml.safe_load(yaml.safe_dump(LINEAR))
    doc["analysis"]["impulse"]["amplitude"] = 1.0
    doc["bipolar_kernel"]["gain_mv"] = 200.0
    assert run_cli("impulse", write_config(tmp_path, doc), tmp_path / "out") == 4
    assert "LinearityViolation" in capsys.readouterr().err


def test_spike_bin_must_subdivide_the_record_step(tmp_path, capsys):
    doc = yaml.safe_load(yaml.safe_dump(LINEAR))
    doc["analysis"]["spikes"]["bin_ms"] = 2.0
    assert run_cli("spike-stats", write_config(tmp_path, doc), tmp_path / "out") == 2
    assert "evenly divide" in capsys.readouterr().err


def test_unreadable_config_exits_5(tmp_path):
    assert run_cli("spectrum", tmp_path / "missing.yaml", tmp_path / "out") == 5


def test_unwritable_output_exits_5(tmp_path):
    (tmp_path / "blocker").write_text("")
    assert run_cli("spectrum", write_config(tmp_path, PAIR), tmp_path / "blocker" / "out") == 5


def test_installed_entry_point_runs(tmp_path):
    cfg = write_config(tmp_path, PAIR)
    proc = subprocess.run([sys.executable, "-m", "retinasim.cli", "spectrum", "--config", str(cfg),
                           "--out", str(tmp_path / "out")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "all checks passed" in proc.stdout
