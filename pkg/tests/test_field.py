import numpy as np
import pytest

from admmsampling.field import (GroundTruthField, InsufficientDataError, generate_ground_truth,
                                measure)
from admmsampling.experiment import ExperimentConfig
from admmsampling.geometry import Rectangle
from admmsampling.gp import Dataset, Hyperparams


@pytest.fixture
def domain():
    return Rectangle.from_size(20., 20.)


@pytest.fixture
def field(domain):
    return GroundTruthField.sample(domain, Hyperparams(20., 1., 5., 1e-2), seed=3)


def test_same_seed_same_field(domain, field):
    again = GroundTruthField.sample(domain, Hyperparams(20., 1., 5., 1e-2), seed=3)
    assert np.array_equal(field.values, again.values)
    other = GroundTruthField.sample(domain, Hyperparams(20., 1., 5., 1e-2), seed=4)
    assert not np.array_equal(field.values, other.values)


def test_tiny_variance_is_constant(domain):
    flat = GroundTruthField.sample(domain, Hyperparams(7., 1e-20, 5., 1e-2), seed=0)
    assert np.allclose(flat.values, 7., atol=1e-6)


def test_values_at_nodes(field):
    assert np.allclose(field(field.nodes), field.values.ravel())


def test_bilinear_between_nodes(field):
    q = np.array([field.xs[3] + 0.5 * (field.xs[4] - field.xs[3]), field.ys[7]])
    assert field(q) == pytest.approx(0.5 * (field.values[3, 7] + field.values[4, 7]))


def test_outside_domain(field):
    with pytest.raises(ValueError):
        field([20.5, 3.])
    assert np.isfinite(field([20. + 1e-9, 3.]))


def test_grid_too_coarse(domain):
    with pytest.raises(ValueError):
        GroundTruthField.sample(domain, Hyperparams(), seed=0, resolution=5.)


def test_noiseless_measurement(field):
    rng = np.random.default_rng(0)
    assert measure(field, [4.3, 7.1], 0., rng) == field([4.3, 7.1])


def test_measurement_noise_statistics(field):
    rng = np.random.default_rng(1)
    q = [4.3, 7.1]
    readings = np.array([measure(field, q, 0.1, rng) for _ in range(10000)])
    assert np.mean(readings) == pytest.approx(field(q), abs=0.005)
    assert np.std(readings) == pytest.approx(0.1, abs=0.005)


def test_from_csv_needs_three_readings(tmpdir, domain):
    filename = str(tmpdir.join('two.csv'))
    Dataset([[1., 1.], [5., 5.]], [20., 21.]).write_csv(filename)
    with pytest.raises(InsufficientDataError):
        GroundTruthField.from_csv(filename, domain)


def test_from_csv_fit(tmpdir):
    domain = Rectangle.from_size(40., 30.)
    rng = np.random.RandomState(0)
    X = np.column_stack([rng.uniform(0., 40., 54), rng.uniform(0., 30., 54)])

    def truth(p):
        return 20. + np.sin(p[:, 0] / 6.) + np.cos(p[:, 1] / 5.)

    filename = str(tmpdir.join('readings.csv'))
    Dataset(X, truth(X) + 0.1 * rng.normal(size=54)).write_csv(filename)
    field = GroundTruthField.from_csv(filename, domain)
    assert field.seed is None
    rmse = np.sqrt(np.mean((field(X) - truth(X))**2))
    assert rmse < 0.1


def test_generate_ground_truth_from_config():
    cfg = ExperimentConfig(domain=[20., 20.], field_length_scale=5.)
    a = generate_ground_truth(2, cfg)
    b = generate_ground_truth(2, cfg)
    assert np.array_equal(a.values, b.values)
    assert a.hyperparams.length_scale == 5.
