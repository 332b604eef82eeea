"""Run configuration: one YAML file with a section per subcommand.

Every key has a typed default. Values from the file override the defaults,
and command-line flags override the file. Validation errors carry the line
and column of the offending entry.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from typing import Any, Callable

import yaml


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a sign or dot (1e6)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``file:line:col`` when known."""


@dataclass(frozen=True)
class Field:
    kind: str
    default: Any
    check: Callable[[Any], str | None] | None = None


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _unit(v):
    return None if 0 <= v <= 1 else "must lie in [0, 1]"


def _one_of(*opts):
    def check(v):
        return None if v in opts else f"must be one of {', '.join(map(str, opts))}"

    return check


def _non_empty(v):
    return None if len(v) > 0 else "must not be empty"


def _min(n):
    def check(v):
        return None if v >= n else f"must be at least {n}"

    return check


POLARIZATION_PRESETS = {
    "sigma-": [1.0, 0.0, 0.0],
    "pi": [0.0, 1.0, 0.0],
    "sigma+": [0.0, 0.0, 1.0],
    "mixed": [1.0 / math.sqrt(3.0)] * 3,
}

TRAP = {
    "depth_hz": Field("float", 3.6e6, _positive),
    "temperature": Field("float", 5e-6, _positive),
    "wavelength": Field("float", 532e-9, _positive),
    "spacing": Field("float", 2.8e-6, _positive),
}

SCHEMA: dict[str, dict[str, Field]] = {
    "run": {
        "seed": Field("int", 0, _non_negative),
        "threads": Field("int", 1, _positive),
    },
    "trap": TRAP,
    "pic_sweep": {
        "polarization": Field("polarization", "mixed"),
        "magnetic_field_gauss": Field("float", 0.0),
        "tensor_light_shift_hz": Field("float", 1.0e6),
        "saturation": Field("grid", {"start": 10.0, "stop": 200.0, "num": 20}, _non_empty),
        "delta_over_ftrap": Field("grid", {"start": 0.5, "stop": 3.0, "num": 20}, _non_empty),
        "n_theta": Field("int", 64, _min(2)),
        "n_phi": Field("int", 32, _min(1)),
        "tol": Field("float", 1e-4, _positive),
        "channel_rule": Field("str", "asymptotic", _one_of("asymptotic", "local")),
        "profile_thetas_deg": Field("grid", {"start": 0.0, "stop": 180.0, "num": 37}),
        "profile_saturation": Field("float", 100.0, _non_negative),
        "profile_delta_over_ftrap": Field("float", 1.5, _positive),
    },
    "loading": {
        "mean_initial_occupancy": Field("float", 3.52196, _non_negative),
        "pair_event_rate": Field("float", 11.9524, _non_negative),
        "enhancement_duration": Field("float", 0.5, _non_negative),
        "red_pa_prob": Field("float", 0.0885890, _unit),
        "detuning_energy_over_trap": Field("float", 1.5, _non_negative),
        "single_atom_loss_rate": Field("float", 0.0, _non_negative),
        "trials": Field("int", 100000, _min(100)),
        "initial_distribution": Field("str", "truncated", _one_of("truncated", "poisson")),
        "max_initial": Field("int", 3, _min(1)),
        "pic": Field("float", 0.5179, _unit),
        "pic_map": Field("optional_str", None),
        "array_sizes": Field("ints", [16, 144, 1024, 2939], _non_empty),
        "mot_rows": Field("int", 49, _positive),
        "mot_cols": Field("int", 61, _positive),
        "mot_radius_sites": Field("float", 40.0, _positive),
        "rotation_radius_sites": Field("float", 30.0, _non_negative),
    },
    "holo": {
        "rows": Field("int", 10, _positive),
        "cols": Field("int", 10, _positive),
        "spacing_px": Field("int", 10, _positive),
        "resolution": Field("ints", [512, 512]),
        "max_iter": Field("int", 100, _positive),
        "u_goal": Field("float", 0.98, _unit),
        "waist_fraction": Field("float", 0.45, _positive),
        "soft_constraint": Field("bool", True),
    },
    "imaging": {
        "rows": Field("int", 10, _positive),
        "cols": Field("int", 10, _positive),
        "spacing_px": Field("float", 12.0, _positive),
        "origin_px": Field("floats", [26.0, 26.0]),
        "frame_shape": Field("ints", [160, 160]),
        "psf_sigma": Field("float", 1.6, _positive),
        "photons_per_atom": Field("float", 400.0, _positive),
        "offset": Field("float", 100.0, _non_negative),
        "read_noise": Field("float", 4.0, _non_negative),
        "blobs": Field("blobs", [[50.0, 110.0, 60.0, 0.2], [110.0, 40.0, 60.0, 0.14]]),
        "background_scale": Field("float", 1.0, _non_negative),
        "fill_fraction": Field("float", 0.6, _unit),
        "loss_per_image": Field("float", 0.009, _unit),
        "calibration_frames": Field("int", 50, _positive),
        "triples": Field("int", 40, _positive),
        "sigma_sharp": Field("float", 2.4, _positive),
        "sigma_wide1": Field("float", 16.8, _positive),
        "sigma_wide2": Field("float", 91.9, _positive),
        "lifetime_s": Field("float", 35.1, _positive),
        "lifetime_sites": Field("int", 2939, _positive),
        "lifetime_times_s": Field("grid", {"start": 0.0, "stop": 60.0, "num": 31}),
        "frames_dir": Field("optional_str", None),
    },
    "gate": {
        "rabi_hz": Field("float", 15e6, _positive),
        "lifetime_s": Field("optional_float", 40e-6),
        "blockade_hz": Field("optional_float", None),
        "n_segments": Field("int", 64, _min(8)),
        "restarts": Field("int", 20, _positive),
        "max_iters": Field("int", 1000, _positive),
    },
}

SUBCOMMAND_SECTIONS = {
    "pic-sweep": ("run", "trap", "pic_sweep"),
    "load-sim": ("run", "trap", "loading"),
    "holo": ("run", "holo"),
    "img-sim": ("run", "imaging"),
    "img-analyze": ("run", "imaging"),
    "gate-opt": ("run", "gate"),
}


def _where(source, mark) -> str:
    if mark is None:
        return f"{source}: "
    return f"{source}:{mark.line + 1}:{mark.column + 1}: "


def _marks(node, path=(), out=None):
    """Map key paths to the start mark of their value node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = v.start_mark
            out[("__key__",) + path + (key,)] = k.start_mark
            _marks(v, path + (key,), out)
    return out


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _convert(kind: str, value):
    """Coerce a raw YAML value; returns (value, error message or None)."""
    if kind == "float":
        return (float(value), None) if _is_number(value) else (None, "expected a number")
    if kind == "optional_float":
        if value is None:
            return None, None
        return (float(value), None) if _is_number(value) else (None, "expected a number or null")
    if kind == "int":
        if isinstance(value, int) and not isinstance(value, bool):
            return value, None
        if isinstance(value, float) and value.is_integer():
            return int(value), None
        return None, "expected an integer"
    if kind == "str":
        return (value, None) if isinstance(value, str) else (None, "expected a string")
    if kind == "optional_str":
        return (value, None) if value is None or isinstance(value, str) else (None, "expected a string or null")
    if kind == "bool":
        return (value, None) if isinstance(value, bool) else (None, "expected true or false")
    if kind in ("floats", "ints"):
        if not isinstance(value, list):
            return None, "expected a list"
        sub = "float" if kind == "floats" else "int"
        out = []
        for item in value:
            v, err = _convert(sub, item)
            if err:
                return None, f"list entries: {err}"
            out.append(v)
        return out, None
    if kind == "grid":
        if isinstance(value, dict):
            if set(value) != {"start", "stop", "num"}:
                return None, "grid mapping needs exactly start, stop, num"
            start, e1 = _convert("float", value["start"])
            stop, e2 = _convert("float", value["stop"])
            num, e3 = _convert("int", value["num"])
            if e1 or e2 or e3:
                return None, e1 or e2 or e3
            if num < 0:
                return None, "num must be non-negative"
            if num == 1:
                return [start], None
            return [start + (stop - start) * i / (num - 1) for i in range(num)], None
        return _convert("floats", value)
    if kind == "polarization":
        if isinstance(value, str):
            if value not in POLARIZATION_PRESETS:
                return None, f"unknown polarization preset (use one of {', '.join(POLARIZATION_PRESETS)})"
            value = POLARIZATION_PRESETS[value]
        if not isinstance(value, list) or len(value) != 3:
            return None, "expected a preset name or three amplitudes"
        out = []
        for item in value:
            if _is_number(item):
                out.append([float(item), 0.0])
            elif isinstance(item, list) and len(item) == 2 and all(_is_number(x) for x in item):
                out.append([float(item[0]), float(item[1])])
            else:
                return None, "amplitudes must be numbers or [re, im] pairs"
        norm = math.sqrt(sum(a * a + b * b for a, b in out))
        if abs(norm - 1.0) > 1e-9:
            return None, f"polarization must have unit norm (got {norm:.6g})"
        return [[a / norm, b / norm] for a, b in out], None
    if kind == "blobs":
        if not isinstance(value, list):
            return None, "expected a list of [row, col, sigma, amplitude]"
        out = []
        for item in value:
            v, err = _convert("floats", item)
            if err or len(v) != 4:
                return None, "each blob is [row, col, sigma, amplitude]"
            if v[2] <= 0 or v[3] < 0:
                return None, "blob sigma must be positive and amplitude non-negative"
            out.append(v)
        return out, None
    raise AssertionError(kind)


def defaults() -> dict:
    cfg = {}
    for sec, fields in SCHEMA.items():
        cfg[sec] = {}
        for key, f in fields.items():
            v, err = _convert(f.kind, copy.deepcopy(f.default))
            assert err is None, (sec, key, err)
            cfg[sec][key] = v
    return cfg


def parse_config(text: str, source: str = "<config>") -> dict:
    """Validate YAML text against the schema and merge it over the defaults."""
    try:
        node = yaml.compose(text, Loader=_Loader)
        raw = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        raise ConfigError(f"{_where(source, exc.problem_mark)}{exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = defaults()
    if raw is None:
        return cfg
    marks = _marks(node)
    if not isinstance(raw, dict):
        raise ConfigError(f"{_where(source, node.start_mark)}top level must be a mapping of sections")
    for sec, body in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"{_where(source, marks.get(('__key__', sec)))}unknown section '{sec}'")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{_where(source, marks.get((sec,)))}section '{sec}' must be a mapping")
        for key, value in body.items():
            field_ = SCHEMA[sec].get(key)
            if field_ is None:
                raise ConfigError(f"{_where(source, marks.get(('__key__', sec, key)))}unknown key '{sec}.{key}'")
            conv, err = _convert(field_.kind, value)
            if err is None and field_.check is not None and conv is not None:
                err = field_.check(conv)
            if err:
                raise ConfigError(f"{_where(source, marks.get((sec, key)))}{sec}.{key}: {err}")
            cfg[sec][key] = conv
    _cross_checks(cfg, source, marks)
    return cfg


def _cross_checks(cfg, source, marks):
    im = cfg["imaging"]
    if not im["sigma_sharp"] < im["sigma_wide1"] < im["sigma_wide2"]:
        raise ConfigError(f"{_where(source, marks.get(('imaging', 'sigma_sharp')))}imaging: need sigma_sharp < sigma_wide1 < sigma_wide2")
    for sec, key, n in (("holo", "resolution", 2), ("imaging", "frame_shape", 2), ("imaging", "origin_px", 2)):
        if len(cfg[sec][key]) != n or (key != "origin_px" and min(cfg[sec][key]) < 1):
            raise ConfigError(f"{_where(source, marks.get((sec, key)))}{sec}.{key}: expected {n} positive entries")


def load_config(path: str | None) -> dict:
    if path is None:
        return defaults()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, path)


def apply_overrides(cfg: dict, seed: int | None = None, threads: int | None = None) -> dict:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg["run"]["seed"] = seed
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be positive")
        cfg["run"]["threads"] = threads
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


def config_hash(cfg: dict, sections=None) -> str:
    """SHA-256 over the canonical JSON of the chosen sections.

    The thread count does not change any result and is left out.
    """
    sub = {k: cfg[k] for k in (sections or cfg)}
    if "run" in sub:
        sub["run"] = {k: v for k, v in sub["run"].items() if k != "threads"}
    blob = json.dumps(sub, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
