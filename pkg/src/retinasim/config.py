"""Experiment configuration files.

Configurations are YAML documents. Every unit-carrying key spells out its
unit (``tau_b_ms``, ``width_mm``, ``frequency_hz``). Loading validates the
whole document and reports every problem at once. In strict mode unknown
keys are errors; otherwise they are collected as warnings.

A minimal document::

    network:
      cells: {n_b: 1, n_a: 1, n_g: 0}
      connectivity:
        a_to_b: {kind: matrix, values: [[-1.0]]}
        b_to_a: {kind: matrix, values: [[1.0]]}
      parameters: {tau_b_ms: 1.0, tau_a_ms: 1.0, tau_g_ms: 1.0}
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import io as rio
from .core import (
    CellParameters,
    ConnectivityWeights,
    GainControl,
    RetinaNetwork,
    build_connectivity,
    build_layout,
    gap_blocks_from_conductance,
)
from .errors import (
    ConfigurationError,
    FileFormatError,
    RegimeError,
    ResolutionError,
    SpectralError,
    ValidationError,
)
from .gif import GifNetwork, ring_network
from .stimulus import (
    BiphasicTemporalKernel,
    BipolarKernel,
    Chirp,
    DoGKernel,
    FrameSequence,
    FullFieldFlash,
    FullFieldSinusoid,
    MovingBar,
    WhiteNoiseField,
)

REQUIRED = object()
OPTIONAL = object()  # key may be absent; no default is filled in


class Section(dict):
    """Schema of a mapping. ``optional`` sections may be left out entirely."""

    def __init__(self, fields: dict, optional: bool = False, open_keys: bool = False):
        super().__init__(fields)
        self.optional = optional
        self.open_keys = open_keys


def _f(default=REQUIRED, kind="float"):
    return (kind, default)


BLOCK_KEYS = {"kind", "weight", "radius_mm", "cutoff", "values", "path", "jitter",
              "conductance", "capacitance_b", "capacitance_a"}

SCHEMA = Section({
    "seed": _f(0, "int"),
    "output_dir": _f("out", "str"),
    "strict": _f(False, "bool"),
    "network": Section({
        "cells": Section({"n_b": _f(kind="int"), "n_a": _f(kind="int"), "n_g": _f(kind="int")}, optional=True),
        "layout": Section({
            "edge_length_mm": _f(),
            "spacing_b_mm": _f(OPTIONAL), "spacing_a_mm": _f(OPTIONAL), "spacing_g_mm": _f(OPTIONAL),
        }, optional=True),
        "b_centers_mm": _f(OPTIONAL, "matrix"),
        "connectivity": _f({}, "blocks"),
        "connectivity_seed": _f(0, "int"),
        "parameters": Section({
            "tau_b_ms": _f(kind="floats"), "tau_a_ms": _f(kind="floats"), "tau_g_ms": _f(kind="floats"),
            "theta_b_mv": _f(0.0), "theta_a_mv": _f(0.0), "theta_g_mv": _f(0.0),
            "sigma_g_mv": _f(1.0), "sigma_s": _f(0.0),
        }),
        "gain_control": Section({"tau_a_ms": _f(), "h_b": _f(), "theta_a": _f(2.0 / 3.0)}, optional=True),
    }, optional=True),
    "bipolar_kernel": Section({
        "center_amplitude": _f(1.0), "center_sigma_mm": _f(0.05),
        "surround_amplitude": _f(0.0), "surround_sigma_mm": _f(0.15),
        "amplitude_1": _f(1.0), "tau_1_ms": _f(5.0), "amplitude_2": _f(0.0), "tau_2_ms": _f(15.0),
        "order": _f(3, "int"), "gain_mv": _f(1.0),
    }),
    "stimulus": Section({"kind": _f("none", "str")}, open_keys=True),
    "integrator": Section({
        "dt_ms": _f(0.1), "eps_event": _f(1e-9), "max_iter": _f(100, "int"),
        "horizon_ms": _f(200.0), "record_dt_ms": _f(1.0),
    }),
    "analysis": Section({
        "cell": _f(OPTIONAL, "int"),
        "rf": Section({"horizon_ms": _f(100.0), "dt_ms": _f(0.5), "grid_half_width_mm": _f(0.3),
                       "grid_step_mm": _f(0.02), "cross_check": _f(False, "bool"), "tolerance": _f(1e-3)}),
        "impulse": Section({"amplitude": _f(0.05), "duration_ms": _f(1.0), "horizon_ms": _f(100.0),
                            "dt_ms": _f(0.1)}),
        "resonance": Section({"f_min_hz": _f(1.0), "f_max_hz": _f(100.0), "n_freqs": _f(200, "int"),
                              "probe_amplitude_mv": _f(0.05)}),
        "sde": Section({"dt_ms": _f(0.01), "sigma": _f(0.1), "trials": _f(100, "int"),
                        "horizon_ms": _f(100.0), "record_dt_ms": _f(1.0)}),
        "correlations": Section({"sigma": _f(0.1), "lags_ms": _f([0.0], "floats")}),
        "spikes": Section({"bin_ms": _f(1.0), "trials": _f(50, "int"), "max_lag_bins": _f(5, "int")}),
    }),
    "gif": Section({
        "ring": Section({"n": _f(kind="int"), "g_exc": _f(), "g_inh": _f(), "e_exc": _f(), "e_inh": _f()},
                        optional=True),
        "tables": Section({"neurons": _f(kind="path"), "synapses": _f(kind="path")}, optional=True),
        "capacitance": _f(1.0), "g_leak": _f(0.1), "e_leak": _f(0.0), "threshold": _f(1.0),
        "reset": _f(0.0), "tau_syn_ms": _f(10.0), "degree": _f(0, "int"), "sigma_b": _f(0.35),
        "bin_ms": _f(1.0), "eps_mem": _f(1e-6),
        "bins": _f(2000, "int"), "trials": _f(50, "int"), "burn_in_bins": _f(100, "int"),
        "stimulus": Section({"kind": _f("none", "str"), "amplitude": _f(0.1), "speed": _f(0.01),
                             "width": _f(0.5), "start": _f(0.0), "onset_bin": _f(0, "int"),
                             "seed": _f(0, "int")}),
    }, optional=True),
    "linear_response": Section({
        "neuron": _f(0, "int"), "probe_amplitude": _f(0.1), "probe_bins": _f(10000, "int"),
        "trials": _f(400, "int"), "n_lags": _f(25, "int"), "ridge": _f(OPTIONAL),
        "spontaneous_bins": _f(4000, "int"), "spontaneous_trials": _f(50, "int"),
        "holdout_bins": _f(4000, "int"),
    }),
})

STIMULUS_KEYS = {
    "none": set(),
    "flash": {"amplitude", "t_on_ms", "t_off_ms"},
    "sinusoid": {"amplitude", "frequency_hz", "t_on_ms"},
    "chirp": {"amplitude", "f0_hz", "f1_hz", "t_on_ms", "duration_ms"},
    "moving_bar": {"amplitude", "width_mm", "speed_mm_per_ms", "start_mm", "direction_deg", "profile", "t_on_ms"},
    "frames": {"path", "t_on_ms"},
    "white_noise": {"sigma", "pixel_mm", "frame_ms", "width_mm", "height_mm", "t_on_ms", "t_off_ms"},
}


def _coerce(kind: str, value, where: str, problems: list):
    try:
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind in ("str", "path"):
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "floats":
            arr = np.asarray(value, float)
            if arr.ndim > 1:
                raise TypeError
            return arr.tolist() if arr.ndim else float(arr)
        if kind == "matrix":
            arr = np.asarray(value, float)
            if arr.ndim != 2:
                raise TypeError
            return arr.tolist()
        if kind == "blocks":
            if not isinstance(value, dict):
                raise TypeError
            return copy.deepcopy(value)
    except (TypeError, ValueError):
        problems.append(f"{where}: expected {kind}, got {value!r}")
        return None
    raise AssertionError(kind)


def _walk(schema: Section, data, where: str, problems: list, unknown: list) -> dict:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{where or 'document'}: expected a mapping")
        return {}
    out = {}
    for key in data:
        if key not in schema and not schema.open_keys:
            unknown.append(f"{where}.{key}".lstrip("."))
    for key, spec in schema.items():
        path = f"{where}.{key}".lstrip(".")
        if isinstance(spec, Section):
            if key not in data and spec.optional:
                out[key] = None
            else:
                out[key] = _walk(spec, data.get(key), path, problems, unknown)
            continue
        kind, default = spec
        if key in data and data[key] is not None:
            out[key] = _coerce(kind, data[key], path, problems)
        elif default is REQUIRED:
            problems.append(f"{path}: required")
        elif default is not OPTIONAL:
            out[key] = copy.deepcopy(default)
    if schema.open_keys:
        for key in data:
            if key not in schema:
                out[key] = copy.deepcopy(data[key])
    return out


@dataclass
class ExperimentConfig:
    """Validated configuration with every object it describes already built."""

    values: dict
    source: Optional[Path]
    config_hash: str
    network: Optional[RetinaNetwork] = None
    b_centers_mm: Optional[np.ndarray] = None
    kernels: list = field(default_factory=list)
    stimulus: Any = None
    gif: Optional[GifNetwork] = None
    warnings: list = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def strict(self) -> bool:
        return self.values["strict"]

    @property
    def analysis(self) -> dict:
        return self.values["analysis"]

    def analysis_cell(self) -> int:
        """State index analysed by default: the first G cell, else the last voltage."""
        cell = self.values["analysis"].get("cell")
        if cell is not None:
            return cell
        net = self.network
        return net.n_b + net.n_a if net.n_g else net.n - 1


def _resolve(base: Path, rel: str, where: str, missing: list) -> Optional[Path]:
    p = Path(rel)
    p = p if p.is_absolute() else base / p
    if not p.is_file():
        missing.append(f"{where}: file {rel!r} not found")
        return None
    return p


def _build_network(cfg: dict, base: Path, problems: list, missing: list):
    n_before = (len(problems), len(missing))
    layout = None
    if cfg["layout"] is not None:
        lay = cfg["layout"]
        try:
            layout = build_layout(lay["edge_length_mm"], {
                "B": lay.get("spacing_b_mm"), "A": lay.get("spacing_a_mm"), "G": lay.get("spacing_g_mm")})
        except ConfigurationError as exc:
            problems.append(f"network.layout: {exc}")
            return None, None
        n_b, n_a, n_g = layout.n_b, layout.n_a, layout.n_g
    elif cfg["cells"] is not None:
        n_b, n_a, n_g = (cfg["cells"][k] for k in ("n_b", "n_a", "n_g"))
        if None in (n_b, n_a, n_g) or min(n_b, n_a, n_g) < 0:
            problems.append("network.cells: counts must be non-negative integers")
            return None, None
    else:
        problems.append("network: either 'cells' or 'layout' is required")
        return None, None

    blocks = cfg["connectivity"] or {}
    profile = {}
    for name, spec in blocks.items():
        where = f"network.connectivity.{name}"
        if not isinstance(spec, dict):
            problems.append(f"{where}: expected a mapping")
            continue
        extra = set(spec) - BLOCK_KEYS
        if extra:
            problems.append(f"{where}: unknown key(s) {sorted(extra)}")
        spec = dict(spec)
        if "path" in spec:
            p = _resolve(base, spec.pop("path"), where, missing)
            if p is None:
                continue
            try:
                spec["values"] = rio.read_matrix_csv(p)
            except FileFormatError as exc:
                problems.append(f"{where}: {exc}")
                continue
            spec.setdefault("kind", "matrix")
        profile[name] = spec
    if (len(problems), len(missing)) != n_before:
        return None, None
    try:
        if layout is not None:
            weights = build_connectivity(layout, profile, seed=cfg["connectivity_seed"])
        else:
            kw = {}
            for name, spec in profile.items():
                kind = spec.get("kind", "matrix")
                if name == "gap":
                    g = np.asarray(spec["values"], float)
                    kw["gap_a_to_b"], kw["gap_b_to_a"] = gap_blocks_from_conductance(
                        g, spec.get("capacitance_b", 1.0), spec.get("capacitance_a", 1.0))
                elif kind == "matrix":
                    kw[name] = spec["values"]
                elif kind != "none":
                    raise ConfigurationError(
                        f"network.connectivity.{name}: kind {kind!r} needs a 'layout' section")
            weights = ConnectivityWeights.from_blocks(n_b, n_a, n_g, **kw)
        par = cfg["parameters"]
        gain = None
        if cfg["gain_control"] is not None:
            gc = cfg["gain_control"]
            gain = GainControl(gc["tau_a_ms"], gc["h_b"], gc["theta_a"])
        params = CellParameters(gain=gain, **par)
        net = RetinaNetwork(weights, params, layout)
        net.check_rest_state()
    except ValidationError as exc:
        problems += [f"network: {p}" for p in exc.problems]
        return None, None
    except (ConfigurationError, RegimeError, SpectralError, ValueError, KeyError) as exc:
        problems.append(f"network: {exc}")
        return None, None

    if cfg.get("b_centers_mm") is not None:
        centers = np.asarray(cfg["b_centers_mm"], float)
        if centers.shape != (n_b, 2):
            problems.append(f"network.b_centers_mm: expected {n_b} (x, y) pairs")
    elif layout is not None:
        centers = layout.positions("B")
    else:
        centers = np.zeros((n_b, 2))
    return net, centers


def _build_stimulus(cfg: dict, base: Path, seed: int, problems: list, missing: list):
    kind = cfg.get("kind", "none")
    if kind not in STIMULUS_KEYS:
        problems.append(f"stimulus.kind: unknown kind {kind!r}")
        return None
    extra = set(cfg) - STIMULUS_KEYS[kind] - {"kind"}
    if extra:
        problems.append(f"stimulus: unknown key(s) {sorted(extra)} for kind {kind!r}")
        return None
    args = {k: v for k, v in cfg.items() if k != "kind"}
    try:
        if kind == "none":
            return None
        if kind == "flash":
            return FullFieldFlash(**args)
        if kind == "sinusoid":
            return FullFieldSinusoid(**args)
        if kind == "chirp":
            return Chirp(**args)
        if kind == "moving_bar":
            return MovingBar(**args)
        if kind == "frames":
            p = _resolve(base, args.get("path", ""), "stimulus.path", missing)
            if p is None:
                return None
            frames, pitch, period = rio.read_frames(p)
            return FrameSequence(frames, pitch, period, args.get("t_on_ms", 0.0))
        if kind == "white_noise":
            return WhiteNoiseField(seed=seed, **args)
    except FileFormatError as exc:
        problems.append(f"stimulus: {exc}")
    except (ConfigurationError, TypeError) as exc:
        problems.append(f"stimulus: {exc}")
    return None


def _build_gif(cfg: dict, base: Path, problems: list, missing: list):
    common = {k: cfg[k] for k in ("degree", "sigma_b", "bin_ms", "eps_mem")}
    neuron = {k: cfg[k] for k in ("capacitance", "g_leak", "e_leak", "threshold", "reset")}
    try:
        if cfg["tables"] is not None:
            t = cfg["tables"]
            pn = _resolve(base, t["neurons"], "gif.tables.neurons", missing)
            ps = _resolve(base, t["synapses"], "gif.tables.synapses", missing)
            if pn is None or ps is None:
                return None
            tables = rio.read_gif_tables(pn, ps)
            n = len(tables["capacitance"])
            return GifNetwork.build(n, **tables, **common)
        if cfg["ring"] is not None:
            return ring_network(tau_syn_ms=cfg["tau_syn_ms"], **cfg["ring"], **neuron, **common)
        problems.append("gif: either 'ring' or 'tables' is required")
    except (ConfigurationError, FileFormatError) as exc:
        problems.append(f"gif: {exc}")
    return None


def parse_config(data: dict, *, source: Optional[Path] = None, raw: bytes = b"",
                 strict: Optional[bool] = None) -> ExperimentConfig:
    """Validate a parsed document and build its objects.

    Raises :class:`ResolutionError` when referenced files are missing and
    :class:`ValidationError` listing every other problem.
    """
    problems: list = []
    unknown: list = []
    values = _walk(SCHEMA, data, "", problems, unknown)
    if strict is not None:
        values["strict"] = strict
    if problems:  # type errors leave holes that the builders below cannot work around
        raise ValidationError(problems + [f"{u}: unknown key" for u in unknown if values.get("strict")])
    if unknown and values.get("strict"):
        problems += [f"{u}: unknown key" for u in unknown]
    warnings = [f"{u}: unknown key ignored" for u in unknown] if not values.get("strict") else []
    base = source.parent if source is not None else Path.cwd()
    missing: list = []
    cfg = ExperimentConfig(values, source, hashlib.sha256(raw).hexdigest(), warnings=warnings)

    if values["network"] is not None:
        cfg.network, cfg.b_centers_mm = _build_network(values["network"], base, problems, missing)
    try:
        k = values["bipolar_kernel"]
        spatial = DoGKernel(k["center_amplitude"], k["center_sigma_mm"], k["surround_amplitude"], k["surround_sigma_mm"])
        temporal = BiphasicTemporalKernel(k["amplitude_1"], k["tau_1_ms"], k["amplitude_2"], k["tau_2_ms"], k["order"])
        if cfg.network is not None:
            cfg.kernels = [BipolarKernel(spatial, temporal, k["gain_mv"])] * cfg.network.n_b
    except ConfigurationError as exc:
        problems.append(f"bipolar_kernel: {exc}")
    cfg.stimulus = _build_stimulus(values["stimulus"], base, values["seed"], problems, missing)
    if values["gif"] is not None:
        cfg.gif = _build_gif(values["gif"], base, problems, missing)
    integ = values["integrator"]
    if not (integ["dt_ms"] > 0 and integ["horizon_ms"] > 0 and integ["eps_event"] > 0):
        problems.append("integrator: dt_ms, horizon_ms and eps_event must be positive")
    if values["network"] is not None and cfg.network is not None:
        cell = values["analysis"].get("cell")
        if cell is not None and not 0 <= cell < cfg.network.state_dim:
            problems.append(f"analysis.cell: {cell} outside 0..{cfg.network.state_dim - 1}")
    if missing:
        raise ResolutionError(missing + problems)
    if problems:
        raise ValidationError(problems)
    return cfg


def load_config(path, *, strict: Optional[bool] = None) -> ExperimentConfig:
    """Read and validate a YAML configuration file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read configuration ({exc})") from exc
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: not valid YAML ({exc})") from exc
    return parse_config(data or {}, source=path.resolve(), raw=raw, strict=strict)


def provenance(cfg: ExperimentConfig, subcommand: str, seed: int) -> dict:
    """Record sufficient to reproduce a run: config hash and filled-in values, seed, versions."""
    import scipy

    from . import __version__

    return {
        "subcommand": subcommand,
        "config_sha256": cfg.config_hash,
        "config_path": str(cfg.source) if cfg.source else None,
        "seed": seed,
        "resolved_config": _jsonable(cfg.values),
        "versions": {"retinasim": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "warnings": cfg.warnings,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj
