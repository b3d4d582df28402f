import math

import numpy as np
import pytest

from kaleido.data import synth_points
from kaleido.errors import DataRangeError, DivergenceError, EmptyDatasetError, ShapeError
from kaleido.mlp import MlpParams, MlpSpec, forward, init_params, per_point_loss, reconstruction_loss
from kaleido.trainer import (
    TrainConfig,
    density_score,
    derived_seed,
    train_manifold,
    train_with_restarts,
    write_loss_trace,
)


def test_fig2_point_converges(fig2_model):
    _, params, report, data = fig2_model
    assert report.converged and report.final_loss <= 1e-8
    assert report.epochs_run <= 50_000
    # returned params reproduce the reported loss exactly
    assert reconstruction_loss(data.values, forward(params, data.values)[0]) == report.final_loss


def test_two_points_deep_model_converges():
    data = synth_points([0.2, 0.8])
    _, params, report = train_with_restarts(MlpSpec(1, 5, 7), data, TrainConfig(max_epochs=20_000))
    assert report.converged and report.final_loss <= 1e-8


def test_already_perfect_model_stops_at_epoch_one():
    spec = MlpSpec(1, 2, 1)
    zero = init_params(spec)
    zero = MlpParams([np.zeros_like(w) for w in zero.weights], [np.zeros_like(b) for b in zero.biases])
    _, report = train_manifold(spec, synth_points([0.5, 0.5]), init=zero)
    assert report.epochs_run == 1 and report.converged and report.final_loss == 0.0


def test_report_invariants():
    cfg = TrainConfig(max_epochs=250, log_every=100, target_loss=1e-30)
    _, report = train_manifold(MlpSpec(1, 4, 2), synth_points([0.3, 0.6]), cfg)
    epochs = [e for e, _ in report.loss_trace]
    assert epochs == [1, 100, 200, 250]
    assert report.loss_trace[-1][1] == report.final_loss
    assert report.converged == (report.final_loss <= cfg.target_loss)
    best = np.minimum.accumulate([loss for _, loss in report.loss_trace])
    assert np.all(np.diff(best) <= 0)


def test_training_is_deterministic():
    data = synth_points([0.1, 0.7, 0.4])
    cfg = TrainConfig(max_epochs=300, log_every=7)
    p1, r1 = train_manifold(MlpSpec(1, 6, 3, init_seed=9), data, cfg)
    p2, r2 = train_manifold(MlpSpec(1, 6, 3, init_seed=9), data, cfg)
    assert r1.loss_trace == r2.loss_trace
    for a, b in zip(p1.arrays(), p2.arrays()):
        np.testing.assert_array_equal(a, b)


def test_config_seed_overrides_spec_seed():
    data = synth_points([0.4])
    cfg = TrainConfig(max_epochs=5, seed=3)
    _, r1 = train_manifold(MlpSpec(1, 3, 1, init_seed=0), data, cfg)
    _, r2 = train_manifold(MlpSpec(1, 3, 1, init_seed=3), data, TrainConfig(max_epochs=5))
    assert r1.loss_trace == r2.loss_trace and r1.init_seed == 3


def test_data_outside_range_is_rejected():
    with pytest.raises(DataRangeError, match="normalise"):
        train_manifold(MlpSpec(1, 3, 1), synth_points([1.5]))
    with pytest.raises(DataRangeError):
        train_manifold(MlpSpec(1, 3, 1, "tanh"), synth_points([-1.2]))
    train_manifold(MlpSpec(1, 3, 1, "tanh"), synth_points([-0.5]), TrainConfig(max_epochs=2))


def test_empty_data_is_rejected():
    with pytest.raises(EmptyDatasetError):
        train_manifold(MlpSpec(1, 3, 1), np.zeros((0, 1)))


def test_mismatched_init_is_rejected():
    with pytest.raises(ShapeError):
        train_manifold(MlpSpec(1, 3, 2), synth_points([0.5]), init=init_params(MlpSpec(1, 3, 1)))


def test_non_finite_loss_raises_divergence():
    spec = MlpSpec(1, 1, 1)
    p = init_params(spec)
    p.weights[0][0, 0] = np.nan
    with pytest.raises(DivergenceError) as info:
        train_manifold(spec, synth_points([0.5]), init=p)
    assert info.value.last_good_epoch == 0


def test_runaway_loss_raises_divergence():
    spec = MlpSpec(1, 1, 1)
    p = init_params(spec)
    p = MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros(1), np.array([0.2])])
    with pytest.raises(DivergenceError, match="10x"):
        train_manifold(spec, synth_points([0.5]), TrainConfig(learning_rate=5.0, max_epochs=2000), init=p)


def test_derived_seed():
    assert derived_seed(17, 0) == 17
    seeds = {derived_seed(17, k) for k in range(1, 6)}
    assert len(seeds) == 5 and all(0 <= s < 2**63 for s in seeds)


def test_restarts_report_attempt_count():
    data = synth_points([0.5])
    spec, _, report = train_with_restarts(MlpSpec(1, 3, 1, init_seed=2), data, TrainConfig(max_epochs=3), 3)
    assert report.attempts == 3 and not report.converged


# density


def test_density_of_perfect_point_is_one():
    p = MlpParams([np.zeros((1, 1))], [np.zeros(1)])
    assert density_score(p, np.array([0.5])) == 1.0


def test_density_at_training_point(fig2_model):
    _, params, report, _ = fig2_model
    assert density_score(params, np.array([0.5])) >= math.exp(-1e-8 * 1)


def test_density_grid_peaks_at_training_point(fig2_model):
    _, params, _, _ = fig2_model
    grid = np.linspace(0, 1, 10_000)[:, None]
    scores = density_score(params, grid)
    assert abs(grid[np.argmax(scores), 0] - 0.5) <= 0.05


def test_density_matches_per_point_loss():
    rng = np.random.default_rng(0)
    spec = MlpSpec(3, 4, 2, init_seed=1)
    p = init_params(spec)
    x = rng.uniform(0, 1, size=(20, 3))
    y = forward(p, x)[0]
    np.testing.assert_allclose(density_score(p, x), np.exp(-3 * per_point_loss(x, y)), rtol=1e-14)


def test_write_loss_trace(tmp_path, fig2_model):
    _, _, report, _ = fig2_model
    path = tmp_path / "trace.csv"
    write_loss_trace(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss"
    assert float(lines[-1].split(",")[1]) == report.final_loss
