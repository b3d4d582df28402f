"""Named experiment presets and their end-to-end repro runners.

A preset is a config layer (applied between the defaults and any config
file) plus a runner that trains, profiles and samples, then scores the run
against fixed thresholds. Every runner returns a list of :class:`Check`
rows, written to ``checks.csv`` in the run directory.
"""

import copy
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import commands as C
from .config import new_run_dir, now, write_manifest
from .errors import ConfigError
from .sampler import burn_in_index

BUNDLED_MNIST = "mnist-256-images-idx3-ubyte"


def bundled_mnist_path():
    """Path of the 256-image MNIST subset shipped with the package."""
    return str(resources.files("kaleido") / "resources" / BUNDLED_MNIST)


@dataclass
class Check:
    name: str
    value: object
    threshold: str = ""  # empty: informational row, not scored
    passed: bool = None

    @property
    def scored(self):
        return self.passed is not None


def _check(name, value, threshold, passed):
    return Check(name, value, threshold, bool(passed))


def _info(name, value):
    return Check(name, value)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".6g")
    if isinstance(v, (list, tuple)):
        return "[" + " ".join(_fmt(x) for x in v) + "]"
    return str(v)


def write_checks_csv(checks, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("check,value,threshold,passed\n")
        for c in checks:
            status = "" if c.passed is None else str(c.passed).lower()
            fh.write(f"{c.name},{_fmt(c.value)},{c.threshold},{status}\n")


def _variant(cfg, **sections):
    """Copy of ``cfg`` with ``section={field: value}`` overrides applied."""
    out = copy.deepcopy(cfg)
    for section, fields in sections.items():
        out[section].update(fields)
    return out


def _final_distances(trajs, values):
    """Distance from each chain's final state to its nearest training row."""
    return np.array([np.sqrt(np.min(np.sum((values - t.final) ** 2, axis=1))) for t in trajs])


def _median_burn_in(trajs, k):
    # chains that never settle count as K + 1
    return float(np.median([k + 1 if t.burn_in is None else t.burn_in for t in trajs]))


# Presets


def run_fig2(cfg, run_dir):
    """Single training point at 0.5, small sigmoid network."""
    spec, params, report, ds = C.run_train(cfg, run_dir)
    prof = C.run_profile(cfg, spec, params, run_dir)
    trajs, _ = C.run_sample(cfg, spec, params, ds, run_dir)
    target = cfg["train"]["target_loss"]
    dist = np.array([[abs(t.iterates[s, 0] - 0.5) for s in range(t.iterates.shape[0])] for t in trajs])
    monotone = all(d[1] >= d[2] >= d[3] for d in dist)
    base = C.run_baseline(cfg, spec, params, ds, run_dir)
    descended = sum(t.objective[-1] < 0.1 * t.objective[0] for t in base)
    return [
        _check("final_loss", report.final_loss, f"<= {target:g}", report.final_loss <= target),
        _info("epochs_run", report.epochs_run),
        _check("sweep_argmin_offset", abs(prof["sweep_argmin"] - 0.5), "<= 0.01",
               abs(prof["sweep_argmin"] - 0.5) <= 0.01),
        _check("sweep_output_min", prof["output_min"], ">= 0.3", prof["output_min"] >= 0.3),
        _check("sweep_output_max", prof["output_max"], "<= 0.7", prof["output_max"] <= 0.7),
        _check("chains_within_0.01_at_iter_10", int((dist[:, 10] <= 0.01).sum()),
               f"== {len(trajs)}", bool(np.all(dist[:, 10] <= 0.01))),
        _check("distance_nonincreasing_iter_1_to_3", monotone, "== True", monotone),
        _info("flat_fraction", prof["flat_fraction"]),
        _check("baseline_runs_objective_below_10pct", descended, f">= {int(np.ceil(0.8 * len(base)))}",
               descended >= 0.8 * len(base)),
    ]


FIG3_SEEDS = 3
FIG3_DEPTHS = (2, 7)


def run_fig3(cfg, run_dir):
    """Two points, shallow vs deep: does depth speed up burn-in and widen flat steps?"""
    k = cfg["sampler"]["iterations"]
    burn = {d: [] for d in FIG3_DEPTHS}
    flat = {d: [] for d in FIG3_DEPTHS}
    checks = []
    for i in range(FIG3_SEEDS):
        seed = cfg["seed"] + i
        for depth in FIG3_DEPTHS:
            sub = run_dir / f"seed{seed}-L{depth}"
            sub.mkdir()
            v = _variant(cfg, model={"hidden_layers": depth, "init_seed": seed}, sampler={"seed": seed})
            spec, params, report, ds = C.run_train(v, sub)
            prof = C.run_profile(v, spec, params, sub)
            trajs, _ = C.run_sample(v, spec, params, ds, sub)
            frac = float(np.mean(_final_distances(trajs, ds.values) <= 0.05))
            burn[depth].extend(k + 1 if t.burn_in is None else t.burn_in for t in trajs)
            flat[depth].append(prof["flat_fraction"])
            tag = f"seed{seed}_L{depth}"
            checks += [
                _info(f"{tag}_final_loss", report.final_loss),
                _check(f"{tag}_chains_within_0.05", frac, ">= 0.9", frac >= 0.9),
                _info(f"{tag}_median_burn_in", _median_burn_in(trajs, k)),
                _info(f"{tag}_flat_fraction", prof["flat_fraction"]),
            ]
    m2, m7 = float(np.median(burn[2])), float(np.median(burn[7]))
    wins = sum(f7 >= f2 for f2, f7 in zip(flat[2], flat[7]))
    checks += [
        _check("median_burn_in_L7", m7, "<= 15", m7 <= 15),
        _check("median_burn_in_L7_minus_L2", m7 - m2, "<= 0", m7 <= m2),
        _check("seeds_flat_fraction_L7_ge_L2", wins, ">= 2", wins >= 2),
    ]
    return checks


def run_fig4(cfg, run_dir):
    """Four points in (-1, 1) with a tanh head."""
    spec, params, report, ds = C.run_train(cfg, run_dir)
    prof = C.run_profile(cfg, spec, params, run_dir)
    trajs, _ = C.run_sample(cfg, spec, params, ds, run_dir)
    frac = float(np.mean(_final_distances(trajs, ds.values) <= 0.05))
    inside = all(np.all(np.abs(t.iterates) < 1.0) for t in trajs)
    return [
        _check("final_loss", report.final_loss, "< 1e-06", report.final_loss < 1e-6),
        _info("epochs_run", report.epochs_run),
        _check("chains_within_0.05", frac, ">= 0.9", frac >= 0.9),
        _check("iterates_inside_open_range", inside, "== True", inside),
        _info("flat_fraction", prof["flat_fraction"]),
    ]


def _argmin_cells_near_data(prof, values):
    """Largest grid-cell offset between any minimum-loss cell and its nearest training point."""
    g = prof.loss_grid()
    grid = prof.grids[0]
    step = grid[1] - grid[0]
    worst = 0
    for i, j in zip(*np.nonzero(g == g.min())):
        cell = np.array([grid[i], grid[j]])
        off = np.min(np.max(np.abs(values - cell), axis=1)) / step
        worst = max(worst, int(np.ceil(off - 1e-9)))
    return worst


def run_fig5(cfg, run_dir):
    """2-D: (a) L=2 on the single point (0.5, 0.5); (b) the configured model on four corners."""
    checks = []
    variants = (
        ("a", _variant(cfg, model={"hidden_layers": 2}, data={"points": [[0.5, 0.5]]})),
        ("b", cfg),
    )
    for tag, v in variants:
        sub = run_dir / tag
        sub.mkdir()
        spec, params, report, ds = C.run_train(v, sub)
        prof = C.run_profile(v, spec, params, sub)
        trajs, _ = C.run_sample(v, spec, params, ds, sub)
        frac = float(np.mean(_final_distances(trajs, ds.values) <= 0.1))
        cells = _argmin_cells_near_data(prof["_profile"], ds.values)
        checks += [
            _info(f"{tag}_L{spec.hidden_layers}_final_loss", report.final_loss),
            _check(f"{tag}_argmin_cell_offset", cells, "<= 1", cells <= 1),
            _check(f"{tag}_chains_within_0.1", frac, ">= 0.8", frac >= 0.8) if tag == "b"
            else _info(f"{tag}_chains_within_0.1", frac),
        ]
    return checks


def run_fig6(cfg, run_dir):
    """Max corner loss against training-set size for several dimensions."""
    rows = C.run_flatness(cfg, run_dir)
    checks = []
    for d in sorted({r.dim for r in rows}):
        seq = [r for r in rows if r.dim == d]
        seq.sort(key=lambda r: r.n_points)
        losses = np.array([r.max_corner_loss for r in seq])
        first, last = losses[0], losses[-1]
        ratio = last / first if first > 0 else np.inf
        smooth = np.minimum.accumulate(losses)
        trend = bool(np.all(np.isfinite(losses)) and np.all(np.diff(smooth) <= 0))
        checks += [
            _check(f"D{d}_corner_loss_ratio_M{seq[-1].n_points}_vs_M{seq[0].n_points}", ratio, "<= 0.5",
                   ratio <= 0.5),
            _check(f"D{d}_running_min_nonincreasing", trend, "== True", trend),
            _info(f"D{d}_flagged_runs", sum(r.flagged for r in seq)),
        ]
    return checks


def _image_run(cfg, run_dir, loss_threshold):
    """Train on images, then sample with and without noise (noisy run writes PGM frames)."""
    if not C.load_dataset(cfg).image_shape:
        raise ConfigError("data.image_height: image presets need an image shape (or an IDX file)")
    spec, params, report, ds = C.run_train(cfg, run_dir)
    quiet = _variant(cfg, sampler={"noise_scale": 0.0, "write_pgm": False})
    # the noise-free run only needs its summary; full image trajectories are large
    clean, _ = C.run_sample(quiet, spec, params, ds, run_dir, prefix="eps0_", trajectories=False)
    noisy, n_frames = C.run_sample(cfg, spec, params, ds, run_dir, prefix="noisy_")
    k = cfg["sampler"]["iterations"]
    settled = sum(burn_in_index(t.step_sizes(), 1e-3, 1) is not None for t in clean)
    finite = all(np.all(np.isfinite(t.iterates)) for t in noisy)
    inside = all(np.all(np.abs(t.mapped) < 1.0) for t in noisy)
    lo = ">= 0.8"
    checks = [
        _check("final_loss", report.final_loss, f"< {loss_threshold:g}", report.final_loss < loss_threshold)
        if loss_threshold else _info("final_loss", report.final_loss),
        _info("epochs_run", report.epochs_run),
        _check("eps0_chains_step_below_1e-3", settled / len(clean), lo, settled >= 0.8 * len(clean)),
        _check("noisy_iterates_finite", finite, "== True", finite),
        _check("noisy_mapped_inside_open_range", inside, "== True", inside),
        _check("pgm_frames", n_frames, f"== {k + 1}", n_frames == k + 1),
        _info("noisy_final_nearest_distance_median",
              float(np.median([t.nearest_distance[-1] for t in noisy]))),
    ]
    return checks


def run_fig7_desk(cfg, run_dir):
    return _image_run(cfg, run_dir, 0.05)


def run_image_extended(cfg, run_dir):
    return _image_run(cfg, run_dir, None)


def _points(*values):
    return [list(v) if isinstance(v, tuple) else [v] for v in values]


PRESETS = {
    "fig2": {
        "help": "one point at 0.5; H=5, L=2, sigmoid",
        "runner": run_fig2,
        "layer": {
            "model": {"hidden_width": 5, "hidden_layers": 2, "output_activation": "sigmoid"},
            "train": {"max_epochs": 50_000, "target_loss": 1e-8, "attempts": 5},
            "sampler": {"init": "uniform", "init_a": 0.0, "init_b": 1.0, "iterations": 50, "n_chains": 10},
            "baseline": {"init": "uniform", "init_a": 0.0, "init_b": 1.0, "n_chains": 10},
            "profiler": {"lo": 0.0, "hi": 1.0, "n": 1001, "eta": 0.05},
            "data": {"source": "points", "points": _points(0.5)},
        },
    },
    "fig3": {
        "help": "points {0.2, 0.8}; H=5, L in {2, 7}, three seeds",
        "runner": run_fig3,
        "layer": {
            "model": {"hidden_width": 5, "hidden_layers": 7, "output_activation": "sigmoid",
                      "init_scheme": "fan_in"},
            "train": {"max_epochs": 20_000, "target_loss": 1e-8, "attempts": 5},
            "sampler": {"init": "uniform", "init_a": 0.0, "init_b": 1.0, "iterations": 50, "n_chains": 20,
                        "burn_in_tol": 1e-3, "burn_in_patience": 3},
            "profiler": {"lo": 0.0, "hi": 1.0, "n": 1001, "eta": 0.05},
            "data": {"source": "points", "points": _points(0.2, 0.8)},
        },
    },
    "fig4": {
        "help": "points {-0.8, -0.2, 0.2, 0.8}; H=10, L=10, tanh",
        "runner": run_fig4,
        "layer": {
            "model": {"hidden_width": 10, "hidden_layers": 10, "output_activation": "tanh"},
            "train": {"max_epochs": 50_000, "target_loss": 1e-8, "attempts": 5},
            "sampler": {"init": "uniform", "init_a": -1.0, "init_b": 1.0, "iterations": 100, "n_chains": 20},
            "profiler": {"lo": -1.0, "hi": 1.0, "n": 1001, "eta": 0.05},
            "data": {"source": "points", "points": _points(-0.8, -0.2, 0.2, 0.8)},
        },
    },
    "fig5": {
        "help": "2-D: H=50 L=2 on (0.5, 0.5), then L=7 on the corners of {0.2, 0.8}^2",
        "runner": run_fig5,
        "layer": {
            "model": {"hidden_width": 50, "hidden_layers": 7, "output_activation": "sigmoid"},
            "train": {"max_epochs": 20_000, "target_loss": 1e-8, "attempts": 5},
            "sampler": {"init": "normal", "init_a": 0.5, "init_b": 0.5, "iterations": 100, "n_chains": 50},
            "profiler": {"lo": 0.0, "hi": 1.0, "n_per_axis": 101},
            "data": {"source": "points", "points": _points((0.2, 0.2), (0.2, 0.8), (0.8, 0.2), (0.8, 0.8))},
        },
    },
    "fig6": {
        "help": "max corner loss vs M = 1..64 for D in {1, 2, 4, 8}; H=50, L=2",
        "runner": run_fig6,
        "layer": {
            "model": {"hidden_width": 50, "hidden_layers": 2, "output_activation": "sigmoid"},
            "train": {"max_epochs": 20_000, "target_loss": 1e-8},
            "profiler": {"lo": 0.0, "hi": 1.0, "flatness_dims": [1, 2, 4, 8],
                         "flatness_points": [1, 2, 4, 8, 16, 32, 64]},
        },
    },
    "fig7-desk": {
        "help": "256 bundled MNIST digits; H=256, L=6, tanh, eps=0.01, 300 iterations",
        "runner": run_fig7_desk,
        "layer": {
            "model": {"hidden_width": 256, "hidden_layers": 6, "output_activation": "tanh"},
            "train": {"max_epochs": 3000, "target_loss": 0.01, "log_every": 10},
            "sampler": {"init": "uniform", "init_a": -1.0, "init_b": 1.0, "iterations": 300, "n_chains": 16,
                        "noise_scale": 0.01},
            "data": {"source": "idx", "path": None, "normalize": True, "margin": 0.05},
        },
    },
    "fig8-desk": {
        "help": "small pre-flattened image CSV (set data.path, data.image_height/width); H=2000, L=10, tanh",
        "runner": run_image_extended,
        "layer": {
            "model": {"hidden_width": 2000, "hidden_layers": 10, "output_activation": "tanh"},
            "train": {"max_epochs": 1000, "target_loss": 0.01, "log_every": 10},
            "sampler": {"init": "uniform", "init_a": -1.0, "init_b": 1.0, "iterations": 300, "n_chains": 8,
                        "noise_scale": 0.01},
            "data": {"source": "csv", "count_limit": 64, "normalize": True, "margin": 0.05},
        },
    },
    "fig7": {
        "help": "extended: full MNIST IDX file (set data.path); H=500, L=10, tanh, eps=0.01",
        "extended": True,
        "runner": run_image_extended,
        "layer": {
            "model": {"hidden_width": 500, "hidden_layers": 10, "output_activation": "tanh"},
            "train": {"max_epochs": 20_000, "target_loss": 1e-3, "log_every": 10},
            "sampler": {"init": "uniform", "init_a": -1.0, "init_b": 1.0, "iterations": 300, "n_chains": 16,
                        "noise_scale": 0.01},
            "data": {"source": "idx", "normalize": True, "margin": 0.05},
        },
    },
    "fig8": {
        "help": "extended: 1000-image CSV export (set data.path, data.image_height/width); H=2000, L=10, tanh",
        "extended": True,
        "runner": run_image_extended,
        "layer": {
            "model": {"hidden_width": 2000, "hidden_layers": 10, "output_activation": "tanh"},
            "train": {"max_epochs": 20_000, "target_loss": 1e-3, "log_every": 10},
            "sampler": {"init": "uniform", "init_a": -1.0, "init_b": 1.0, "iterations": 300, "n_chains": 16,
                        "noise_scale": 0.01},
            "data": {"source": "csv", "count_limit": 1000, "normalize": True, "margin": 0.05},
        },
    },
}


def get_preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return PRESETS[name]


def preset_layer(name):
    """Config layer of a preset, with the bundled MNIST path filled in where needed."""
    layer = copy.deepcopy(get_preset(name)["layer"])
    if name == "fig7-desk":
        layer["data"]["path"] = bundled_mnist_path()
    return layer


def repro(name, cfg):
    """Run preset ``name`` with resolved config ``cfg``.

    Returns:
        ``(run_dir, checks)``; the run passes when every scored check passes.
    """
    preset = get_preset(name)
    started = now()
    ds = C.load_dataset(cfg)  # fail on bad data before creating the run directory
    run_dir = new_run_dir(cfg["out"], name)
    checks = preset["runner"](cfg, run_dir)
    write_checks_csv(checks, run_dir / "checks.csv")
    write_manifest(
        run_dir, "repro", cfg, started, {"train": C.dataset_record(ds)},
        {"preset": name, "passed": all(c.passed for c in checks if c.scored)},
    )
    return run_dir, checks


def format_checks(checks):
    lines = []
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "info" if c.passed is None else ("PASS" if c.passed else "FAIL")
        lines.append(f"{status:4}  {c.name:<{width}}  {_fmt(c.value)}  {c.threshold}".rstrip())
    return "\n".join(lines)
