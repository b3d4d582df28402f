import numpy as np
import pytest

from kaleido.data import synth_points
from kaleido.errors import ConfigError, DivergenceError, EmptyDatasetError
from kaleido.mlp import MlpParams, MlpSpec, forward, init_params, reconstruction_loss
from kaleido.sampler import (
    InitDistribution,
    SampleTrajectory,
    SamplerConfig,
    burn_in_index,
    compose_apply,
    detect_burn_in,
    gradient_input_sampler,
    kaleidoscopic_sample,
    nearest_training_point,
    run_chain,
    trajectory_header,
    write_trajectories_csv,
)
from kaleido.trainer import TrainConfig, train_with_restarts


@pytest.fixture(scope="module")
def two_point_model():
    data = synth_points([0.2, 0.8])
    spec, params, report = train_with_restarts(MlpSpec(1, 5, 2, init_seed=0), data, TrainConfig(max_epochs=20_000))
    assert report.converged
    return params, data


def test_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(iterations=0)
    with pytest.raises(ConfigError):
        SamplerConfig(noise_scale=-0.1)
    with pytest.raises(ConfigError):
        SamplerConfig(noise_dist="cauchy")
    with pytest.raises(ConfigError):
        InitDistribution.uniform(1.0, 0.0)
    with pytest.raises(ConfigError):
        InitDistribution.normal(0.0, 0.0)


def test_fig2_chains_collapse_onto_training_point(fig2_model):
    _, params, _, data = fig2_model
    trajs = kaleidoscopic_sample(params, SamplerConfig(iterations=10), 10, data)
    for t in trajs:
        d = np.abs(t.iterates[:, 0] - 0.5)
        assert d[1] >= d[2] >= d[3]
        assert d[10] < 0.01
        assert t.nearest_distance[-1] < 0.05


@pytest.mark.parametrize("which", ["one", "two"])
def test_chains_end_near_training_points(which, fig2_model, two_point_model):
    params, data = (fig2_model[1], fig2_model[3]) if which == "one" else two_point_model
    trajs = kaleidoscopic_sample(params, SamplerConfig(iterations=50), 50, data)
    near = [t.nearest_distance[-1] <= 0.05 for t in trajs]
    assert np.mean(near) >= 0.9


def test_fixed_point_gives_constant_trajectory():
    params = MlpParams([np.zeros((1, 1))], [np.zeros(1)])  # f(x) = 0.5 everywhere
    traj = run_chain(params, SamplerConfig(iterations=5), 0, x0=[0.5])
    assert np.all(traj.iterates == 0.5)
    assert traj.burn_in == 0


def test_trajectory_shapes_and_self_loss():
    params = init_params(MlpSpec(3, 4, 2, init_seed=1))
    cfg = SamplerConfig(iterations=7, noise_scale=0.01)
    traj = kaleidoscopic_sample(params, cfg, 1)[0]
    assert traj.iterates.shape == (8, 3) and traj.mapped.shape == (8, 3)
    for t in range(8):
        row = traj.iterates[t][None, :]
        assert traj.self_loss[t] == reconstruction_loss(row, forward(params, row)[0])
    np.testing.assert_array_equal(traj.final_pre_noise, traj.mapped[-2])


def test_noise_is_added_after_mapping():
    params = init_params(MlpSpec(2, 3, 1, init_seed=2))
    for dist in ("normal", "uniform"):
        traj = run_chain(params, SamplerConfig(iterations=20, noise_scale=0.1, noise_dist=dist), 0)
        noise = (traj.iterates[1:] - traj.mapped[:-1]) / 0.1
        assert np.any(noise != 0)
        if dist == "uniform":
            assert np.all(np.abs(noise) <= 1.0 + 1e-12)


def test_chains_are_independent_of_chain_count():
    params = init_params(MlpSpec(2, 3, 2, init_seed=3))
    cfg = SamplerConfig(iterations=5, noise_scale=0.05, seed=42)
    few = kaleidoscopic_sample(params, cfg, 2)
    many = kaleidoscopic_sample(params, cfg, 5)
    for a, b in zip(few, many):
        np.testing.assert_array_equal(a.iterates, b.iterates)
    assert not np.array_equal(many[0].iterates, many[1].iterates)


def test_compose_apply_basics():
    params = init_params(MlpSpec(2, 3, 2, init_seed=4))
    x = np.array([0.3, 0.9])
    np.testing.assert_array_equal(compose_apply(params, x, 0), x)
    np.testing.assert_array_equal(compose_apply(params, x, 1), forward(params, x[None, :])[0][0])
    with pytest.raises(ValueError):
        compose_apply(params, x, -1)


# burn-in


def test_burn_in_cases():
    assert burn_in_index([0.0, 0.0, 0.0], 1e-3, 3) == 0
    assert burn_in_index([1.0, 0.5, 1e-4, 1e-4, 1e-4], 1e-3, 3) == 2
    assert burn_in_index([1e-4, 1.0, 1e-4, 1e-4], 1e-3, 3) is None
    assert burn_in_index([1.0, 2.0, 4.0, 8.0], 1e-3, 1) is None


def test_detect_burn_in_on_trajectories():
    const = SampleTrajectory(iterates=np.zeros((6, 2)))
    assert detect_burn_in(const, 1e-3, 3) == 0
    osc = SampleTrajectory(iterates=np.array([[(-1.0) ** t * (1 + 0.1 * t)] for t in range(10)]))
    assert detect_burn_in(osc, 1e-3, 2) is None
    with pytest.raises(ValueError):
        detect_burn_in(SampleTrajectory(iterates=np.zeros((2, 1))), 1e-3, 3)


def test_burn_in_uses_pre_noise_steps():
    it = np.array([[0.0], [0.5], [0.6], [0.4]])
    mapped = np.array([[0.0], [0.5], [0.6], [0.4]])  # x is a fixed point before noise each step
    traj = SampleTrajectory(iterates=it, mapped=mapped)
    assert detect_burn_in(traj, 1e-3, 3) == 0


# nearest point


def test_nearest_exact_and_ties():
    data = synth_points([[0.0], [1.0], [5.0], [2.0], [3.0]])
    assert nearest_training_point([2.0], data) == (3, 0.0)
    assert nearest_training_point([4.0], data)[0] == 2  # rows 2 and 4 are equidistant
    assert nearest_training_point([0.5], data)[0] == 0


def test_nearest_matches_scan_oracle():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(100, 4))
    for _ in range(20):
        x = rng.normal(size=4)
        best, best_d = None, np.inf
        for i, r in enumerate(rows):
            d = np.sqrt(sum((a - b) ** 2 for a, b in zip(x, r)))
            if d < best_d:
                best, best_d = i, d
        i, d = nearest_training_point(x, rows)
        assert i == best and d == pytest.approx(best_d, rel=1e-14)


def test_nearest_empty():
    with pytest.raises(EmptyDatasetError):
        nearest_training_point([0.0], np.zeros((0, 1)))


# gradient baseline


def test_gradient_sampler_at_training_point_is_stationary():
    params = MlpParams([np.zeros((1, 1))], [np.zeros(1)])  # f(x) = 0.5
    traj = gradient_input_sampler(params, InitDistribution(), 10, 0.1, 0, x0=[0.5])
    assert np.all(traj.objective == 0) and np.all(traj.iterates == 0.5)


def test_gradient_sampler_descends_on_fig2_model(fig2_model):
    _, params, _, data = fig2_model
    traj = gradient_input_sampler(params, InitDistribution(), 200, 0.1, 0, data=data, x0=[0.9])
    assert traj.objective[-1] < traj.objective[0]
    assert traj.iterates.shape == (201, 1) and traj.nearest_index is not None


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradient_sampler_divergence():
    params = init_params(MlpSpec(1, 3, 1, init_seed=0))
    with pytest.raises(DivergenceError):
        gradient_input_sampler(params, InitDistribution(), 5, np.inf, 0, x0=[0.3])
    with pytest.raises(ConfigError):
        gradient_input_sampler(params, InitDistribution(), 0, 0.1, 0)


# CSV export


def test_trajectory_csv_schema(tmp_path, fig2_model):
    _, params, _, data = fig2_model
    trajs = kaleidoscopic_sample(params, SamplerConfig(iterations=3), 2, data)
    p = tmp_path / "t.csv"
    write_trajectories_csv(trajs, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "chain,iteration,self_loss,nearest_index,nearest_distance,x_0"
    assert len(lines) == 1 + 2 * 4
    cells = lines[-1].split(",")
    assert cells[:2] == ["1", "3"] and float(cells[-1]) == trajs[1].final[0]
    assert trajectory_header(2, objective=True)[-3:] == ["objective", "x_0", "x_1"]


def test_trajectory_csv_without_dataset(tmp_path):
    params = init_params(MlpSpec(2, 2, 1, init_seed=0))
    p = tmp_path / "t.csv"
    write_trajectories_csv(kaleidoscopic_sample(params, SamplerConfig(iterations=1), 1), p)
    assert p.read_text().splitlines()[1].split(",")[3:5] == ["", ""]
