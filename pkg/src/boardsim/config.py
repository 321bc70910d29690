"""Experiment config files: JSON with sections ``boards``, ``channels``,
``pulses``, ``sweeps``, ``acquire`` and ``qpu``.

Times are nanoseconds, frequencies hertz, biases volts; sweep units follow
the swept parameter (ns for start_time/duration).  ``channels`` is either
the literal string ``"default10q"`` (the stock two-board, ten-qubit map)
or an explicit mapping.  Validation errors carry JSON paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import jsonschema

from . import qpu as qpu_mod
from .experiment import (Acquisition, BoardMap, ChannelBinding, Experiment,
                         Pulse, SweepSpec, default_board_map, ns)

_CHANNEL_SCHEMA = {
    "type": "object",
    "required": ["board", "kind", "gen"],
    "properties": {
        "board": {"type": "string"},
        "kind": {"enum": ["drive", "flux", "readout"]},
        "gen": {"type": "integer", "minimum": 0},
        "tile": {"type": "integer", "minimum": 0},
        "feedline": {"type": "integer", "minimum": 0},
        "slot": {"type": "integer", "minimum": 0},
        "qubit": {"type": "integer", "minimum": 0},
        "dc_channel": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

_PULSE_SCHEMA = {
    "type": "object",
    "required": ["channel", "kind", "duration_ns"],
    "properties": {
        "channel": {"type": "string"},
        "kind": {"enum": ["drive", "flux", "readout"]},
        "shape": {"enum": ["square", "gaussian"]},
        "start_ns": {"type": "number", "minimum": 0},
        "duration_ns": {"type": "number", "minimum": 0},
        "freq_hz": {"type": "number", "minimum": 0},
        "amp": {"type": "number", "minimum": 0, "maximum": 1},
        "phase_rad": {"type": "number"},
        "sigma_ns": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

_ACQUIRE_SCHEMA = {
    "type": "object",
    "required": ["channel", "window_ns", "probe_hz"],
    "properties": {
        "channel": {"type": "string"},
        "start_ns": {"type": "number", "minimum": 0},
        "window_ns": {"type": "number", "exclusiveMinimum": 0},
        "probe_hz": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

_SWEEP_SCHEMA = {
    "type": "object",
    "required": ["parameter", "start", "stop", "step"],
    "properties": {
        "parameter": {"enum": ["frequency", "amplitude", "phase",
                               "start_time", "duration", "dc_bias"]},
        "channel": {"type": "string"},
        "start": {"type": "number"},
        "stop": {"type": "number"},
        "step": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["boards", "channels", "pulses", "sweeps", "acquire", "qpu"],
    "properties": {
        "boards": {"type": "array", "items": {"type": "string"},
                   "minItems": 1},
        "channels": {"oneOf": [{"const": "default10q"},
                               {"type": "object",
                                "additionalProperties": _CHANNEL_SCHEMA}]},
        "pulses": {"type": "array", "items": _PULSE_SCHEMA},
        "acquire": {"type": "array", "items": _ACQUIRE_SCHEMA},
        "sweeps": {"type": "array", "items": _SWEEP_SCHEMA, "maxItems": 2},
        "nshots": {"type": "integer", "minimum": 1},
        "sync_policy": {"enum": ["PerShot", "Once"]},
        "relax_us": {"type": "number", "minimum": 0},
        "averaged": {"type": "boolean"},
        "dc_bias": {"type": "object",
                    "additionalProperties": {"type": "number"}},
        "rf_fullscale_v": {"type": "number", "exclusiveMinimum": 0},
        "physics": {
            "type": "object",
            "required": ["mode"],
            "properties": {
                "mode": {"enum": ["spectroscopy", "chevron"]},
                "pair": {"type": "array", "items": {"type": "integer"},
                         "minItems": 2, "maxItems": 2},
                "flux_channel": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "qpu": {
            "type": "object",
            "properties": {
                "file": {"type": "string"},
                "seed": {"type": "integer"},
                "noise_sigma": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Schema or semantic problem in a config file, with JSON paths."""


@dataclass
class RunSpec:
    experiment: Experiment
    bmap: BoardMap
    qpu: qpu_mod.QpuParams
    seed: int


def validate_config(raw: dict):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        listing = "; ".join(f"{e.json_path}: {e.message}" for e in errors)
        raise ConfigError(f"config does not match schema: {listing}")


def _sweep_scale(parameter: str) -> float:
    # start_time/duration are authored in ns but carried in fs
    return 1e6 if parameter in ("start_time", "duration") else 1.0


def parse_config(raw: dict, base_dir=None) -> RunSpec:
    validate_config(raw)
    if raw["channels"] == "default10q":
        bmap = default_board_map(tuple(raw["boards"]))
    else:
        channels = {
            name: ChannelBinding(
                board=c["board"], kind=c["kind"], gen_id=c["gen"],
                tile=c.get("tile", 0), feedline=c.get("feedline"),
                slot=c.get("slot"), qubit=c.get("qubit"),
                dc_channel=c.get("dc_channel"))
            for name, c in raw["channels"].items()}
        bmap = BoardMap(list(raw["boards"]), channels)

    pulses = [Pulse(channel=p["channel"], kind=p["kind"],
                    shape=p.get("shape", "square"),
                    start_fs=ns(p.get("start_ns", 0.0)),
                    duration_fs=ns(p["duration_ns"]),
                    freq_hz=p.get("freq_hz", 0.0), amp=p.get("amp", 1.0),
                    phase_rad=p.get("phase_rad", 0.0),
                    sigma_fs=ns(p["sigma_ns"]) if "sigma_ns" in p else None)
              for p in raw["pulses"]]
    acqs = [Acquisition(channel=a["channel"],
                        start_fs=ns(a.get("start_ns", 0.0)),
                        window_fs=ns(a["window_ns"]),
                        probe_hz=a["probe_hz"])
            for a in raw["acquire"]]
    sweeps = []
    for s in raw["sweeps"]:
        scale = _sweep_scale(s["parameter"])
        sweeps.append(SweepSpec(parameter=s["parameter"],
                                channel=s.get("channel", "*"),
                                start=s["start"] * scale,
                                stop=s["stop"] * scale,
                                step=s["step"] * scale))

    physics = raw.get("physics", {"mode": "spectroscopy"})
    exp = Experiment(
        pulses=pulses, acquisitions=acqs, sweeps=sweeps,
        nshots=raw.get("nshots", 1),
        sync_policy=raw.get("sync_policy", "PerShot"),
        relax_fs=round(raw.get("relax_us", 100.0) * 1e9),
        dc_bias_v=dict(raw.get("dc_bias", {})),
        rf_fullscale_v=raw.get("rf_fullscale_v", 1.0),
        physics_mode=physics["mode"],
        chevron_pair=tuple(physics["pair"]) if "pair" in physics else None,
        chevron_flux_channel=physics.get("flux_channel"),
        averaged=raw.get("averaged", False))

    q = raw.get("qpu", {})
    if "file" in q:
        path = q["file"]
        if base_dir is not None:
            from pathlib import Path
            path = Path(base_dir) / path
        with open(path) as fp:
            qpu = qpu_mod.load_qpu(fp)
    else:
        qpu = qpu_mod.default_qpu(q.get("seed", 2023))
    if "noise_sigma" in q:
        qpu.noise_sigma = q["noise_sigma"]
    return RunSpec(exp, bmap, qpu, raw.get("seed", 1234))


def load_config(path) -> RunSpec:
    from pathlib import Path
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    try:
        return parse_config(raw, base_dir=p.parent)
    except ConfigError:
        raise
    except (ValueError, OSError) as e:
        raise ConfigError(f"{path}: {e}") from e
