"""Subcommand implementations. Each takes a resolved config and writes a run directory."""

import json
import logging
from pathlib import Path

import numpy as np

from .config import new_run_dir, now, write_manifest
from .data import load_csv, load_idx, normalize_for, synth_points, tile_images, write_pgm
from .errors import ConfigError, ShapeError
from .mlp import MlpSpec, load_model, save_model
from .profiler import (
    corner_scan,
    flatness_curve,
    step_metric,
    sweep_1d,
    sweep_2d,
    write_corner_csv,
    write_flatness_csv,
    write_step_csv,
    write_sweep_csv,
)
from .sampler import (
    InitDistribution,
    SamplerConfig,
    gradient_input_sampler,
    kaleidoscopic_sample,
    write_trajectories_csv,
)
from .tensor import ActivationKind
from .trainer import TrainConfig, check_data_range, train_with_restarts, write_loss_trace

log = logging.getLogger(__name__)


def load_dataset(cfg):
    """Build the dataset described by ``cfg["data"]``, or ``None`` if no source is set."""
    d = cfg["data"]
    source = d["source"]
    if source is None:
        return None
    if source == "points":
        if not d["points"]:
            raise ConfigError("data.points: required when data.source is 'points'")
        ds = synth_points(d["points"], source="points")
    else:
        if not d["path"]:
            raise ConfigError(f"data.path: required when data.source is {source!r}")
        if source == "csv":
            ds = load_csv(d["path"])
            if d["count_limit"] is not None:
                ds = type(ds)(ds.values[: d["count_limit"]], source=ds.source)
            if d["image_height"] and d["image_width"]:
                ds = type(ds)(ds.values, source=ds.source, image_shape=(d["image_height"], d["image_width"]))
        else:
            ds = load_idx(d["path"], d["count_limit"])
    if d["normalize"]:
        ds, _ = normalize_for(ds, cfg["model"]["output_activation"], d["margin"])
    return ds


def dataset_record(ds):
    if ds is None:
        return {}
    rec = {
        "source": ds.source,
        "shape": list(ds.values.shape),
        "fingerprint_sha256": ds.fingerprint(),
        "normalized_for": ds.normalized_for.value if ds.normalized_for else None,
        "transform": ds.transform.to_dict() if ds.transform else None,
    }
    if ds.image_shape:
        rec["image_shape"] = list(ds.image_shape)
    return rec


def model_spec(cfg, dim):
    m = cfg["model"]
    seed = cfg["seed"] if m["init_seed"] is None else m["init_seed"]
    return MlpSpec(
        input_dim=dim,
        hidden_width=m["hidden_width"],
        hidden_layers=m["hidden_layers"],
        output_activation=m["output_activation"],
        init_seed=seed,
        init_scheme=m["init_scheme"],
    )


def train_config(cfg):
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"],
        max_epochs=t["max_epochs"],
        target_loss=t["target_loss"],
        log_every=t["log_every"],
    )


def _init_dist(kind, a, b):
    return InitDistribution(kind, float(a), float(b))


def sampler_config(cfg):
    s = cfg["sampler"]
    return SamplerConfig(
        init=_init_dist(s["init"], s["init_a"], s["init_b"]),
        iterations=s["iterations"],
        noise_scale=s["noise_scale"],
        noise_dist=s["noise_dist"],
        burn_in_tol=s["burn_in_tol"],
        burn_in_patience=s["burn_in_patience"],
        seed=cfg["seed"] if s["seed"] is None else s["seed"],
    )


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=lambda o: o.item() if hasattr(o, "item") else str(o))
        fh.write("\n")


def _inherit_data(cfg, model_path):
    """Reuse the training run's data section when none was configured."""
    if cfg["data"]["source"] is not None:
        return cfg
    manifest = Path(model_path).parent / "manifest.json"
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            doc = json.load(fh)
        data = doc.get("config", {}).get("data")
        if data and data.get("source"):
            cfg = dict(cfg, data=dict(data))
    return cfg


def _load_model(model_path):
    if model_path is None:
        raise ConfigError("--model: a trained model document is required")
    return load_model(model_path)


def _require_dataset(cfg):
    ds = load_dataset(cfg)
    if ds is None:
        raise ConfigError("data.source: train needs a dataset (e.g. --data.source points --data.points '[[0.5]]')")
    return ds


def run_train(cfg, run_dir, ds=None):
    """Train on the configured dataset; returns ``(spec, params, report, dataset)``."""
    ds = _require_dataset(cfg) if ds is None else ds
    spec = model_spec(cfg, ds.dim)
    spec, params, report = train_with_restarts(spec, ds, train_config(cfg), cfg["train"]["attempts"])
    save_model(run_dir / "model.json", spec, params)
    write_loss_trace(report, run_dir / "loss_trace.csv")
    summary = {
        "final_loss": report.final_loss,
        "converged": report.converged,
        "epochs_run": report.epochs_run,
        "target_loss": report.target_loss,
        "init_seed": spec.init_seed,
        "attempts": report.attempts,
        "dead_layer": report.dead_layer,
    }
    _write_json(run_dir / "train_summary.json", summary)
    return spec, params, report, ds


def cmd_train(cfg):
    started = now()
    ds = _require_dataset(cfg)
    check_data_range(ds.values, model_spec(cfg, ds.dim).output_activation)
    run_dir = new_run_dir(cfg["out"], "train")
    _, _, report, ds = run_train(cfg, run_dir, ds)
    write_manifest(run_dir, "train", cfg, started, {"train": dataset_record(ds)})
    return run_dir, report


def _frames(trajectories, ds, run_dir, name="frames"):
    """One PGM grid per iteration, all chains tiled, de-normalised to [0, 1]."""
    h, w = ds.image_shape
    out = run_dir / name
    out.mkdir(exist_ok=True)
    k = trajectories[0].n_iterations
    for t in range(k + 1):
        rows = np.vstack([tr.iterates[t] for tr in trajectories])
        if ds.transform is not None:
            rows = ds.transform.invert(rows)
        grid = tile_images(rows, h, w)
        write_pgm(grid.ravel(), grid.shape[0], grid.shape[1], out / f"iter_{t:04d}.pgm")
    return k + 1


def _check_dims(spec, ds):
    if ds is not None and ds.dim != spec.input_dim:
        raise ShapeError(f"model has D={spec.input_dim} but dataset has D={ds.dim}")


def run_sample(cfg, spec, params, ds, run_dir, prefix="", trajectories=True):
    _check_dims(spec, ds)
    scfg = sampler_config(cfg)
    trajs = kaleidoscopic_sample(params, scfg, cfg["sampler"]["n_chains"], data=ds)
    if trajectories:
        write_trajectories_csv(trajs, run_dir / f"{prefix}trajectories.csv")
    with open(run_dir / f"{prefix}summary.csv", "w", encoding="utf-8") as fh:
        fh.write("chain,burn_in,final_self_loss,final_nearest_index,final_nearest_distance,"
                 "pre_noise_final_nearest_distance\n")
        for tr in trajs:
            if ds is not None:
                pre = float(np.sqrt(np.min(np.sum((ds.values - tr.final_pre_noise) ** 2, axis=1))))
                near = f"{int(tr.nearest_index[-1])},{tr.nearest_distance[-1]:.17g},{pre:.17g}"
            else:
                near = ",,"
            b = "" if tr.burn_in is None else str(tr.burn_in)
            fh.write(f"{tr.chain},{b},{tr.self_loss[-1]:.17g},{near}\n")
    n_frames = 0
    if ds is not None and ds.image_shape and cfg["sampler"]["write_pgm"]:
        n_frames = _frames(trajs, ds, run_dir, f"{prefix}frames")
    return trajs, n_frames


def cmd_sample(cfg, model_path):
    started = now()
    spec, params = _load_model(model_path)
    cfg = _inherit_data(cfg, model_path)
    ds = load_dataset(cfg)
    _check_dims(spec, ds)
    run_dir = new_run_dir(cfg["out"], "sample")
    trajs, n_frames = run_sample(cfg, spec, params, ds, run_dir)
    write_manifest(run_dir, "sample", cfg, started, {"sample": dataset_record(ds)},
                   {"model": str(model_path)})
    return run_dir, trajs


def _range(cfg, spec):
    lo, hi = ActivationKind(spec.output_activation).bounds
    p = cfg["profiler"]
    return (lo if p["lo"] is None else p["lo"]), (hi if p["hi"] is None else p["hi"])


def run_profile(cfg, spec, params, run_dir, label=""):
    """Sweeps (D = 1 or 2), step metric (D = 1) and corner scan; returns a summary dict."""
    p = cfg["profiler"]
    lo, hi = _range(cfg, spec)
    out = {"range": [lo, hi]}
    tag = f"_{label}" if label else ""
    if spec.input_dim == 1:
        prof = sweep_1d(params, lo, hi, p["n"])
        write_sweep_csv(prof, run_dir / f"sweep{tag}.csv")
        step = step_metric(prof, p["eta"])
        write_step_csv({label or "model": step}, run_dir / f"step{tag}.csv")
        i = int(np.argmin(prof.losses))
        out.update(
            sweep_argmin=float(prof.grids[0][i]),
            output_min=float(prof.outputs.min()),
            output_max=float(prof.outputs.max()),
            flat_fraction=step.flat_fraction,
            steepness=step.steepness,
            n_segments=len(step.segments),
        )
        out["_profile"] = prof
        out["_step"] = step
    elif spec.input_dim == 2:
        prof = sweep_2d(params, lo, hi, p["n_per_axis"])
        write_sweep_csv(prof, run_dir / f"sweep{tag}.csv")
        g = prof.loss_grid()
        i, j = np.unravel_index(int(np.argmin(g)), g.shape)
        out.update(sweep_argmin=[float(prof.grids[0][i]), float(prof.grids[1][j])])
        out["_profile"] = prof
    scan = corner_scan(params, lo, hi, p["max_corner_dim"])
    if scan.losses is not None:
        write_corner_csv(scan, run_dir / f"corners{tag}.csv")
    out.update(corner_count=scan.corner_count, max_corner_loss=scan.max_loss, min_corner_loss=scan.min_loss)
    return out


def run_flatness(cfg, run_dir):
    p = cfg["profiler"]
    template = model_spec(cfg, 1)
    rows = flatness_curve(
        p["flatness_dims"], p["flatness_points"], template, train_config(cfg), seed=cfg["seed"],
        lo=0.0 if p["lo"] is None else p["lo"], hi=1.0 if p["hi"] is None else p["hi"],
    )
    write_flatness_csv(rows, run_dir / "flatness.csv")
    return rows


def _public(summary):
    return {k: v for k, v in summary.items() if not k.startswith("_")}


def cmd_profile(cfg, model_path=None, flatness=False):
    started = now()
    if flatness:
        run_dir = new_run_dir(cfg["out"], "profile")
        rows = run_flatness(cfg, run_dir)
        write_manifest(run_dir, "profile", cfg, started, extra={"flatness_rows": len(rows)})
        return run_dir, rows
    spec, params = _load_model(model_path)
    # fail before creating the run directory
    if spec.input_dim > cfg["profiler"]["max_corner_dim"]:
        corner_scan(params, 0.0, 1.0, cfg["profiler"]["max_corner_dim"])
    run_dir = new_run_dir(cfg["out"], "profile")
    summary = run_profile(cfg, spec, params, run_dir)
    _write_json(run_dir / "profile_summary.json", _public(summary))
    write_manifest(run_dir, "profile", cfg, started, extra={"model": str(model_path)})
    return run_dir, summary


def run_baseline(cfg, spec, params, ds, run_dir):
    b = cfg["baseline"]
    init = _init_dist(b["init"], b["init_a"], b["init_b"])
    seed = cfg["seed"] if cfg["sampler"]["seed"] is None else cfg["sampler"]["seed"]
    trajs = [
        gradient_input_sampler(params, init, b["steps"], b["lr"], seed, data=ds, chain=c)
        for c in range(b["n_chains"])
    ]
    write_trajectories_csv(trajs, run_dir / "baseline.csv", objective=True)
    return trajs


def cmd_baseline(cfg, model_path):
    started = now()
    spec, params = _load_model(model_path)
    cfg = _inherit_data(cfg, model_path)
    ds = load_dataset(cfg)
    _check_dims(spec, ds)
    run_dir = new_run_dir(cfg["out"], "baseline")
    trajs = run_baseline(cfg, spec, params, ds, run_dir)
    write_manifest(run_dir, "baseline", cfg, started, {"baseline": dataset_record(ds)},
                   {"model": str(model_path)})
    return run_dir, trajs
