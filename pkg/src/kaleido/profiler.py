"""Measurements of how flat (many-to-one) a trained model's map is.

Covers dense 1-D/2-D sweeps of output and loss, loss at the ``2^D`` corners
of the input cube, the max-corner-loss vs training-set-size curve, and
flat-segment statistics of 1-D output profiles.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, EnumerationLimitError, ShapeError
from .mlp import forward, per_point_loss
from .trainer import TrainConfig, train_manifold

MAX_CORNER_DIM = 24
KEEP_CORNERS_DIM = 16
CORNER_CHUNK = 1 << 16


@dataclass
class SweepProfile:
    """Model evaluated on an evenly spaced grid.

    ``points`` has one row per grid point. For 2-D sweeps point ``i*n + j``
    is ``(grid[i], grid[j])``, so ``losses.reshape(n, n)[i, j]`` is the loss
    at ``x = grid[i], y = grid[j]``.
    """

    grids: list
    points: np.ndarray
    outputs: np.ndarray
    losses: np.ndarray

    @property
    def dim(self):
        return len(self.grids)

    def loss_grid(self):
        return self.losses.reshape([len(g) for g in self.grids])


@dataclass
class CornerScanReport:
    dim: int
    corner_count: int
    max_loss: float
    min_loss: float
    argmax: int
    lo: float
    hi: float
    losses: np.ndarray = None  # per-corner, kept when 2^D <= 2^16


@dataclass
class StepReport:
    segments: list  # (start, end, mean output)
    steepness: float
    flat_fraction: float
    eta: float


@dataclass
class FlatnessRow:
    dim: int
    n_points: int
    max_corner_loss: float
    final_train_loss: float
    converged: bool
    flagged: bool
    note: str = ""


def _check_dim(params, d, what):
    if params.input_dim != d:
        raise ShapeError(f"{what} needs a model with D={d}, got D={params.input_dim}")


def sweep_1d(params, lo, hi, n):
    """Evaluate a 1-D model at ``n`` evenly spaced points of ``[lo, hi]`` (inclusive)."""
    _check_dim(params, 1, "sweep_1d")
    if not lo < hi or n < 2:
        raise ValueError("sweep_1d needs lo < hi and n >= 2")
    grid = np.linspace(lo, hi, n)
    pts = grid[:, None]
    out = forward(params, pts)[0]
    return SweepProfile([grid], pts, out, per_point_loss(pts, out))


def sweep_2d(params, lo, hi, n_per_axis):
    """Evaluate a 2-D model on an ``n x n`` grid over ``[lo, hi]^2``."""
    _check_dim(params, 2, "sweep_2d")
    if not lo < hi or n_per_axis < 2:
        raise ValueError("sweep_2d needs lo < hi and n_per_axis >= 2")
    grid = np.linspace(lo, hi, n_per_axis)
    gx, gy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    out = forward(params, pts)[0]
    return SweepProfile([grid, grid.copy()], pts, out, per_point_loss(pts, out))


def corner_bits(index, dim):
    """Binary string of corner ``index``; character ``i`` selects coordinate ``i``."""
    return format(index, f"0{dim}b")


def corners(dim, lo, hi, start=0, stop=None):
    """Corners ``start .. stop-1`` of ``[lo, hi]^dim``.

    Corner ``k`` takes ``hi`` in coordinate ``i`` when binary digit ``i`` of
    ``k`` (most significant first) is 1, so for ``dim=2`` the order is
    ``(lo,lo), (lo,hi), (hi,lo), (hi,hi)``.
    """
    stop = (1 << dim) if stop is None else stop
    k = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(dim - 1, -1, -1, dtype=np.int64)
    bits = (k[:, None] >> shifts) & 1
    return np.where(bits == 1, float(hi), float(lo))


def corner_scan(params, lo=0.0, hi=1.0, max_dim=MAX_CORNER_DIM):
    """Reconstruction loss at every corner of ``[lo, hi]^D``.

    Raises:
        EnumerationLimitError: ``D > max_dim``.
    """
    d = params.input_dim
    if d > max_dim:
        raise EnumerationLimitError(
            f"corner scan in D={d} needs 2^{d} = {1 << d:,} model evaluations; "
            f"refusing above D={max_dim} (2^{max_dim} = {1 << max_dim:,})"
        )
    count = 1 << d
    keep = d <= KEEP_CORNERS_DIM
    kept = []
    best_max, best_min, argmax = -np.inf, np.inf, 0
    for start in range(0, count, CORNER_CHUNK):
        pts = corners(d, lo, hi, start, min(count, start + CORNER_CHUNK))
        losses = per_point_loss(pts, forward(params, pts)[0])
        j = int(np.argmax(losses))
        if losses[j] > best_max:
            best_max, argmax = float(losses[j]), start + j
        best_min = min(best_min, float(losses.min()))
        if keep:
            kept.append(losses)
    return CornerScanReport(
        dim=d,
        corner_count=count,
        max_loss=best_max,
        min_loss=best_min,
        argmax=argmax,
        lo=lo,
        hi=hi,
        losses=np.concatenate(kept) if keep else None,
    )


def flatness_curve(dims, point_counts, template, train_cfg=None, seed=0, lo=0.0, hi=1.0):
    """Max corner loss as a function of training-set size, per dimension.

    For each ``(D, M)`` draws ``M`` points uniformly from ``[lo, hi]^D``,
    trains ``template`` (with ``input_dim`` replaced by ``D``) on them and
    scans the corners. Data and initialisation are seeded from
    ``(seed, D, M)``. Runs that miss the target loss or diverge are flagged
    rather than aborting the curve.

    Args:
        template: An :class:`MlpSpec` supplying width, depth and activations.

    Returns:
        List of :class:`FlatnessRow` in ``(D, M)`` order.
    """
    train_cfg = train_cfg or TrainConfig()
    rows = []
    for d in dims:
        for m in point_counts:
            rng = np.random.default_rng([int(seed), int(d), int(m)])
            data = rng.uniform(lo, hi, size=(m, d))
            spec = replace(template, input_dim=int(d), init_seed=int(rng.integers(2**63)))
            try:
                params, report = train_manifold(spec, data, replace(train_cfg, seed=None))
            except DivergenceError as exc:
                rows.append(FlatnessRow(d, m, np.nan, np.nan, False, True, str(exc)))
                continue
            scan = corner_scan(params, lo, hi)
            rows.append(
                FlatnessRow(
                    d, m, scan.max_loss, report.final_loss, report.converged,
                    flagged=not report.converged,
                    note="" if report.converged else "did not reach target loss",
                )
            )
    return rows


def step_metric(profile, eta=0.05):
    """Find flat stretches of a 1-D output profile.

    An interval between neighbouring grid points is flat when
    ``|d output / d input| < eta``; segments are maximal runs of flat
    intervals. ``flat_fraction`` is the share of grid intervals that are flat,
    which on an evenly spaced grid equals the flat length over the range.
    """
    if profile.dim != 1:
        raise ShapeError("step_metric needs a 1-D sweep profile")
    if not eta > 0:
        raise ValueError("eta must be > 0")
    x = profile.grids[0]
    y = profile.outputs[:, 0]
    slopes = np.abs(np.diff(y) / np.diff(x))
    flat = slopes < eta
    segments = []
    i = 0
    n = len(flat)
    while i < n:
        if not flat[i]:
            i += 1
            continue
        j = i
        while j < n and flat[j]:
            j += 1
        segments.append((float(x[i]), float(x[j]), float(np.mean(y[i:j + 1]))))
        i = j
    frac = int(flat.sum()) / len(flat)
    return StepReport(segments, float(slopes.max()), frac, eta)


def write_sweep_csv(profile, path):
    d = profile.points.shape[1]
    coord = ["x"] if d == 1 else ["x", "y"]
    outs = ["output"] if d == 1 else [f"output_{i}" for i in range(d)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(coord + outs + ["loss"]) + "\n")
        for p, o, l in zip(profile.points, profile.outputs, profile.losses):
            fh.write(",".join(format(float(v), ".17g") for v in (*p, *o, l)) + "\n")


def write_corner_csv(report, path):
    if report.losses is None:
        raise ValueError(f"per-corner losses are not retained for D={report.dim}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("corner_bits,loss\n")
        for k, loss in enumerate(report.losses):
            fh.write(f"{corner_bits(k, report.dim)},{float(loss):.17g}\n")


def write_step_csv(reports, path):
    """``reports`` maps a label to a :class:`StepReport`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label,eta,flat_fraction,steepness,n_segments\n")
        for label, r in reports.items():
            fh.write(f"{label},{r.eta:.17g},{r.flat_fraction:.17g},{r.steepness:.17g},{len(r.segments)}\n")


def write_flatness_csv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("D,M,max_corner_loss,final_train_loss,converged\n")
        for r in rows:
            fh.write(
                f"{r.dim},{r.n_points},{r.max_corner_loss:.17g},{r.final_train_loss:.17g},"
                f"{str(r.converged).lower()}\n"
            )
