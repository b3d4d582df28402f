"""Property tests for the invariants every component promises."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kaleido.data import Dataset, load_csv, load_idx, normalize_for, quantize, write_csv, write_idx, write_pgm
from kaleido.mlp import MlpSpec, forward, init_params, reconstruction_loss
from kaleido.profiler import corners, step_metric, sweep_1d
from kaleido.sampler import SamplerConfig, compose_apply, kaleidoscopic_sample, nearest_training_point

from oracles import read_pgm

SETTINGS = settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])

heads = st.sampled_from(["sigmoid", "tanh"])
specs = st.builds(
    MlpSpec,
    input_dim=st.integers(1, 6),
    hidden_width=st.integers(1, 8),
    hidden_layers=st.integers(1, 4),
    output_activation=heads,
    init_seed=st.integers(0, 2**32 - 1),
    init_scheme=st.sampled_from(["glorot", "fan_in"]),
)
finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@SETTINGS
@given(specs, st.integers(0, 2**32 - 1))
def test_outputs_stay_inside_the_head_range(spec, seed):
    params = init_params(spec)
    x = np.random.default_rng(seed).normal(0.0, 100.0, size=(64, spec.input_dim))
    y = forward(params, x)[0]
    lo, hi = spec.output_activation.bounds
    assert np.all(np.isfinite(y)) and np.all((y > lo) & (y < hi))


@SETTINGS
@given(specs, st.integers(0, 8), st.integers(0, 8), st.integers(0, 2**32 - 1))
def test_composition_adds_exponents(spec, a, b, seed):
    params = init_params(spec)
    x = np.random.default_rng(seed).uniform(-1, 1, spec.input_dim)
    np.testing.assert_array_equal(
        compose_apply(params, compose_apply(params, x, a), b), compose_apply(params, x, a + b)
    )


@SETTINGS
@given(specs)
def test_init_is_deterministic_in_seed(spec):
    for a, b in zip(init_params(spec).arrays(), init_params(spec).arrays()):
        np.testing.assert_array_equal(a, b)


@SETTINGS
@given(st.integers(1, 3), st.integers(0, 2**32 - 1), st.sampled_from(["normal", "uniform"]))
def test_sampling_is_deterministic_in_seed(d, seed, dist):
    params = init_params(MlpSpec(d, 4, 2, init_seed=1))
    cfg = SamplerConfig(iterations=6, noise_scale=0.05, noise_dist=dist, seed=seed)
    first = kaleidoscopic_sample(params, cfg, 3)
    second = kaleidoscopic_sample(params, cfg, 3)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.iterates, b.iterates)


@SETTINGS
@given(specs, st.integers(0, 2**32 - 1))
def test_loss_is_bounded_by_the_head_range(spec, seed):
    lo, hi = spec.output_activation.bounds
    x = np.random.default_rng(seed).uniform(lo, hi, size=(16, spec.input_dim))
    assert 0.0 <= reconstruction_loss(x, forward(init_params(spec), x)[0]) <= (hi - lo) ** 2


@SETTINGS
@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 5)), elements=finite),
    heads,
    st.one_of(st.just(0.0), st.floats(1e-3, 0.45)),
)
def test_normalisation_round_trip(values, head, margin):
    ds, tf = normalize_for(Dataset(values), head, margin)
    lo, hi = ds.normalized_for.bounds
    assert np.all(ds.values >= lo + margin) and np.all(ds.values <= hi - margin)
    if margin > 0:
        assert np.all((ds.values > lo) & (ds.values < hi))
    span = max(float(np.ptp(values)), 1.0)
    np.testing.assert_allclose(tf.invert(ds.values), values, rtol=0, atol=1e-12 * span + 1e-12 * np.abs(values).max())


@SETTINGS
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 6)), elements=finite))
def test_csv_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "v.csv"
    write_csv(values, path)
    np.testing.assert_array_equal(load_csv(path).values, values)


@SETTINGS
@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6))))
def test_idx_round_trip(tmp_path_factory, images):
    path = tmp_path_factory.mktemp("idx") / "i.idx"
    write_idx(images, path)
    ds = load_idx(path)
    assert ds.image_shape == images.shape[1:]
    np.testing.assert_array_equal(ds.values, images.reshape(len(images), -1) / 255.0)


@SETTINGS
@given(arrays(np.uint8, st.tuples(st.integers(1, 7), st.integers(1, 7))))
def test_pgm_round_trip(tmp_path_factory, image):
    path = tmp_path_factory.mktemp("pgm") / "i.pgm"
    write_pgm(image.ravel() / 255.0, *image.shape, path)
    w, h, maxval, raster = read_pgm(path)
    assert (w, h, maxval) == (image.shape[1], image.shape[0], 255)
    assert raster == image.tobytes()
    np.testing.assert_array_equal(quantize(image / 255.0), image)


@pytest.mark.parametrize("d", range(1, 11))
def test_corner_count(d):
    pts = corners(d, 0.0, 1.0)
    assert len(pts) == 2**d and len(np.unique(pts, axis=0)) == 2**d


@SETTINGS
@given(
    arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 3)), elements=st.integers(-3, 3).map(float)),
    st.integers(0, 2**32 - 1),
)
def test_nearest_point_prefers_lowest_index(rows, seed):
    x = rows[np.random.default_rng(seed).integers(len(rows))] + 0.5
    i, d = nearest_training_point(x, rows)
    dists = np.sqrt(((rows - x) ** 2).sum(axis=1))
    assert d == pytest.approx(dists.min(), rel=1e-15)
    assert i == int(np.flatnonzero(dists == dists.min())[0])


@SETTINGS
@given(st.integers(0, 2**32 - 1), st.lists(st.floats(0.01, 10.0), min_size=2, max_size=6))
def test_flat_fraction_is_monotone_in_eta(seed, etas):
    params = init_params(MlpSpec(1, 6, 3, init_seed=seed, init_scheme="fan_in"))
    prof = sweep_1d(params, 0.0, 1.0, 201)
    etas = sorted(etas)
    fracs = [step_metric(prof, eta).flat_fraction for eta in etas]
    assert fracs == sorted(fracs)
