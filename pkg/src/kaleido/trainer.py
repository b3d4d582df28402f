"""Full-batch minimisation of the reconstruction loss."""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import DataRangeError, DivergenceError, EmptyDatasetError, ShapeError
from .mlp import AdamState, adam_step, backward, forward, init_params, reconstruction_loss
from .tensor import as_matrix

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100
# Epochs a hidden layer must stay fully inactive before training gives up;
# long enough for Adam's momentum to have decayed to nothing.
DEAD_PATIENCE = 200


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 50_000
    target_loss: float = 1e-8
    log_every: int = 100
    seed: int = None  # overrides spec.init_seed when set

    def __post_init__(self):
        if not self.target_loss > 0:
            raise ValueError("target_loss must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class TrainReport:
    loss_trace: list = field(default_factory=list)  # (epoch, loss)
    final_loss: float = math.nan
    converged: bool = False
    epochs_run: int = 0
    target_loss: float = 1e-8
    dead_layer: int = None  # hidden layer that went fully inactive, if any
    init_seed: int = None
    attempts: int = 1


def check_data_range(values, activation):
    """Raise DataRangeError unless ``values`` fit the closed range of ``activation``."""
    lo, hi = activation.bounds
    vmin, vmax = float(values.min()), float(values.max())
    if vmin < lo or vmax > hi:
        raise DataRangeError(
            f"data spans [{vmin:g}, {vmax:g}] but the {activation.value} head covers "
            f"[{lo:g}, {hi:g}]; normalise the dataset first"
        )


def train_manifold(spec, data, cfg=None, init=None):
    """Fit ``spec`` to reproduce ``data`` with full-batch Adam.

    Training stops as soon as the loss reaches ``cfg.target_loss`` or after
    ``cfg.max_epochs`` loss evaluations. Each epoch evaluates the loss of the
    current parameters and only then updates them, so the returned
    parameters reproduce ``report.final_loss`` exactly.

    Args:
        spec: Network architecture.
        data: A :class:`Dataset` or an ``(M, D)`` array.
        cfg: Training settings; defaults to :class:`TrainConfig()`.
        init: Optional starting parameters (copied, not modified).

    Returns:
        ``(params, report)``.

    Raises:
        DataRangeError: data outside the output activation's closed range.
        DivergenceError: non-finite loss, or the loss stays above ten times
            its initial value for 100 consecutive epochs.

    If some hidden layer outputs zero for every training row for
    ``DEAD_PATIENCE`` consecutive epochs, the network is constant and can no
    longer fit two distinct rows; training then stops early with
    ``report.dead_layer`` set and ``converged`` false.
    """
    cfg = cfg or TrainConfig()
    x = data.values if isinstance(data, Dataset) else as_matrix(data)
    if x.shape[0] < 1:
        raise EmptyDatasetError("cannot train on an empty dataset")
    check_data_range(x, spec.output_activation)
    seed_spec = spec if cfg.seed is None else replace(spec, init_seed=cfg.seed)
    params = init.copy() if init is not None else init_params(seed_spec)
    sizes = spec.layer_sizes
    if [w.shape for w in params.weights] != list(zip(sizes[:-1], sizes[1:])):
        raise ShapeError(f"initial params do not match layer sizes {sizes}")
    state = AdamState.for_params(params, lr=cfg.learning_rate)
    report = TrainReport(target_loss=cfg.target_loss, init_seed=None if init else seed_spec.init_seed)
    distinct = np.unique(x, axis=0).shape[0] > 1
    initial = None
    above = 0
    dead_for = 0
    loss = math.nan
    for epoch in range(1, cfg.max_epochs + 1):
        out, cache = forward(params, x)
        loss = reconstruction_loss(x, out)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at epoch {epoch}", last_good_epoch=epoch - 1)
        if initial is None:
            initial = loss
        above = above + 1 if loss > DIVERGENCE_FACTOR * initial else 0
        if above >= DIVERGENCE_PATIENCE:
            raise DivergenceError(
                f"loss above {DIVERGENCE_FACTOR:g}x its initial value for "
                f"{DIVERGENCE_PATIENCE} epochs (epoch {epoch}, loss {loss:.3e})",
                last_good_epoch=epoch - DIVERGENCE_PATIENCE,
            )
        report.epochs_run = epoch
        dead = _dead_layer(cache) if distinct else None
        dead_for = dead_for + 1 if dead is not None else 0
        if dead_for >= DEAD_PATIENCE:
            report.dead_layer = dead
        done = loss <= cfg.target_loss or epoch == cfg.max_epochs or report.dead_layer is not None
        if done or epoch == 1 or epoch % cfg.log_every == 0:
            report.loss_trace.append((epoch, loss))
        if done:
            break
        if epoch % (cfg.log_every * 100) == 0:
            log.debug("epoch %d loss %.3e", epoch, loss)
        adam_step(params, backward(params, cache, x, out), state)
    report.final_loss = loss
    report.converged = loss <= cfg.target_loss
    return params, report


def _dead_layer(cache):
    for i, z in enumerate(cache.preacts[:-1]):
        if not np.any(z > 0.0):
            return i
    return None


def derived_seed(seed, attempt):
    """Init seed for restart ``attempt``; attempt 0 keeps ``seed``."""
    if attempt == 0:
        return int(seed)
    return int(np.random.SeedSequence([int(seed), int(attempt)]).generate_state(1, np.uint64)[0] >> 1)


def train_with_restarts(spec, data, cfg=None, attempts=5):
    """Call :func:`train_manifold` with fresh init seeds until one converges.

    Attempt ``k`` initialises from ``derived_seed(spec.init_seed, k)``. The
    first converged run is returned; if none converges, the run with the
    lowest final loss is returned.

    Returns:
        ``(spec_used, params, report)``; ``report.attempts`` counts the runs.
    """
    cfg = cfg or TrainConfig()
    base = spec.init_seed if cfg.seed is None else cfg.seed
    best = None
    for k in range(attempts):
        trial = replace(spec, init_seed=derived_seed(base, k))
        params, report = train_manifold(trial, data, replace(cfg, seed=None))
        report.attempts = k + 1
        if best is None or report.final_loss < best[2].final_loss:
            best = (trial, params, report)
        if report.converged:
            return trial, params, report
        log.info("attempt %d (seed %d) did not converge: loss %.3e", k, trial.init_seed, report.final_loss)
    best[2].attempts = attempts
    return best


def density_score(params, x):
    """Unnormalised density ``exp(-||x - f(x)||^2)`` of one point (or each row)."""
    xm = as_matrix(x)
    y = forward(params, xm)[0]
    r = xm - y
    scores = np.exp(-np.sum(r * r, axis=1))
    return float(scores[0]) if np.ndim(x) == 1 else scores


def write_loss_trace(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in report.loss_trace:
            fh.write(f"{epoch},{loss:.17g}\n")
