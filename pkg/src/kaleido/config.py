"""Run configuration: defaults, file and flag layering, run directories, manifests.

A run config is a two-level mapping ``section -> field -> value`` plus a few
top-level keys. Resolution order, lowest to highest precedence::

    DEFAULTS  <  preset  <  --config file  <  command-line flags

The fully resolved mapping is written into every run's ``manifest.json``,
and a manifest can be passed back as ``--config`` to replay the run.
"""

import copy
import datetime as _dt
import hashlib
import json
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "out": "runs",
    "model": {
        "hidden_width": 5,
        "hidden_layers": 2,
        "output_activation": "sigmoid",
        "init_scheme": "glorot",
        "init_seed": None,  # None: use the master seed
    },
    "train": {
        "learning_rate": 1e-3,
        "max_epochs": 50_000,
        "target_loss": 1e-8,
        "log_every": 100,
        "attempts": 1,
    },
    "sampler": {
        "init": "uniform",
        "init_a": 0.0,
        "init_b": 1.0,
        "iterations": 50,
        "noise_scale": 0.0,
        "noise_dist": "normal",
        "burn_in_tol": 1e-3,
        "burn_in_patience": 3,
        "n_chains": 10,
        "seed": None,  # None: use the master seed
        "write_pgm": True,
    },
    "profiler": {
        "lo": None,  # None: the output activation's range
        "hi": None,
        "n": 1001,
        "n_per_axis": 101,
        "eta": 0.05,
        "max_corner_dim": 24,
        "flatness_dims": [1, 2, 4, 8],
        "flatness_points": [1, 2, 4, 8, 16, 32, 64],
    },
    "baseline": {
        "steps": 200,
        "lr": 0.1,
        "n_chains": 10,
        "init": "uniform",
        "init_a": 0.0,
        "init_b": 1.0,
    },
    "data": {
        "source": None,  # "points" | "csv" | "idx"
        "points": None,
        "path": None,
        "count_limit": None,
        "normalize": False,
        "margin": 0.05,
        "image_height": None,
        "image_width": None,
    },
}

# Types for fields whose default is None or a list.
FIELD_TYPES = {
    ("model", "init_seed"): int,
    ("sampler", "seed"): int,
    ("profiler", "lo"): float,
    ("profiler", "hi"): float,
    ("profiler", "flatness_dims"): list,
    ("profiler", "flatness_points"): list,
    ("data", "source"): str,
    ("data", "points"): list,
    ("data", "path"): str,
    ("data", "count_limit"): int,
    ("data", "image_height"): int,
    ("data", "image_width"): int,
}

DATA_SOURCES = ("points", "csv", "idx")


def field_type(section, key):
    if (section, key) in FIELD_TYPES:
        return FIELD_TYPES[(section, key)]
    default = DEFAULTS[section][key] if section else DEFAULTS[key]
    return type(default)


def parse_value(section, key, text):
    """Convert a command-line string to the field's type."""
    kind = field_type(section, key)
    try:
        if kind is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is list:
            value = json.loads(text)
            if not isinstance(value, list):
                raise ValueError(text)
            return value
        if text.strip().lower() in ("none", "null") and (section, key) in FIELD_TYPES:
            return None
        return kind(text)
    except ValueError:
        name = f"{section}.{key}" if section else key
        raise ConfigError(f"invalid value for {name}: {text!r} (expected {kind.__name__})") from None


def merge(base, layer, origin="config"):
    """Overlay ``layer`` onto a copy of ``base``, rejecting unknown fields."""
    out = copy.deepcopy(base)
    for key, value in layer.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown {origin} field {key!r}")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{origin} field {key!r} must be a mapping")
            for sub, v in value.items():
                if sub not in DEFAULTS[key]:
                    raise ConfigError(f"unknown {origin} field {key}.{sub}")
                out[key][sub] = v
        else:
            out[key] = value
    return out


def load_config_file(path):
    """Read a JSON config file; a run manifest's ``config`` entry is accepted too."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and "manifest_version" in doc:
        doc = doc["config"]
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    doc = {k: v for k, v in doc.items() if k != "preset"}
    return doc


def resolve(preset_layer=None, file_layer=None, flag_layer=None):
    cfg = copy.deepcopy(DEFAULTS)
    for layer, origin in ((preset_layer, "preset"), (file_layer, "config"), (flag_layer, "flag")):
        if layer:
            cfg = merge(cfg, layer, origin)
    validate(cfg)
    return cfg


def validate(cfg):
    """Check cross-field constraints, naming the offending field."""

    def need(cond, field, msg):
        if not cond:
            raise ConfigError(f"{field}: {msg}")

    m, t, s, p, b, d = (cfg[k] for k in ("model", "train", "sampler", "profiler", "baseline", "data"))
    need(m["hidden_width"] >= 1, "model.hidden_width", "must be >= 1")
    need(m["hidden_layers"] >= 1, "model.hidden_layers", "must be >= 1")
    need(m["output_activation"] in ("sigmoid", "tanh"), "model.output_activation", "must be sigmoid or tanh")
    need(m["init_scheme"] in ("glorot", "fan_in"), "model.init_scheme", "must be glorot or fan_in")
    need(t["learning_rate"] > 0, "train.learning_rate", "must be > 0")
    need(t["max_epochs"] >= 1, "train.max_epochs", "must be >= 1")
    need(t["target_loss"] > 0, "train.target_loss", "must be > 0")
    need(t["log_every"] >= 1, "train.log_every", "must be >= 1")
    need(t["attempts"] >= 1, "train.attempts", "must be >= 1")
    need(s["iterations"] >= 1, "sampler.iterations", "K must be >= 1")
    need(s["noise_scale"] >= 0, "sampler.noise_scale", "must be >= 0")
    need(s["noise_dist"] in ("normal", "uniform"), "sampler.noise_dist", "must be normal or uniform")
    need(s["init"] in ("normal", "uniform"), "sampler.init", "must be normal or uniform")
    need(s["burn_in_tol"] > 0, "sampler.burn_in_tol", "must be > 0")
    need(s["burn_in_patience"] >= 1, "sampler.burn_in_patience", "must be >= 1")
    need(s["n_chains"] >= 1, "sampler.n_chains", "must be >= 1")
    need(p["n"] >= 2, "profiler.n", "must be >= 2")
    need(p["n_per_axis"] >= 2, "profiler.n_per_axis", "must be >= 2")
    need(p["eta"] > 0, "profiler.eta", "must be > 0")
    need(b["steps"] >= 1, "baseline.steps", "must be >= 1")
    need(b["n_chains"] >= 1, "baseline.n_chains", "must be >= 1")
    need(d["source"] in (None,) + DATA_SOURCES, "data.source", f"must be one of {DATA_SOURCES}")
    need(0 <= d["margin"] < 0.5, "data.margin", "must lie in [0, 0.5)")


def new_run_dir(out, label):
    """Create ``out/<timestamp>-<label>``, adding a suffix if it already exists."""
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{stamp}-{label}"
    path = base
    n = 1
    while path.exists():
        path = Path(f"{base}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir, command, cfg, started, datasets=None, extra=None):
    """Write ``manifest.json`` listing the resolved config and every output file."""
    run_dir = Path(run_dir)
    files = []
    for root, _, names in os.walk(run_dir):
        for name in sorted(names):
            fp = Path(root) / name
            if fp.name == "manifest.json":
                continue
            rel = fp.relative_to(run_dir).as_posix()
            files.append({"path": rel, "bytes": fp.stat().st_size, "sha256": sha256_file(fp)})
    files.sort(key=lambda f: f["path"])
    doc = {
        "manifest_version": 1,
        "tool": "kaleido",
        "tool_version": __version__,
        "command": command,
        "config": cfg,
        "datasets": datasets or {},
        "started": started,
        "finished": _dt.datetime.now().isoformat(timespec="seconds"),
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
        "outputs": files,
    }
    if extra:
        doc.update(extra)
    path = run_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def now():
    return _dt.datetime.now().isoformat(timespec="seconds")
