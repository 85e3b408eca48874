import csv
import json
import os

import numpy as np
import pytest

from admmsampling.experiment import (ExperimentConfig, MetricsRecord, metrics, initial_poses,
                                     run_episode, run_batch, summarize, compare)
from admmsampling.field import generate_ground_truth
from admmsampling.gp import PosteriorStats


@pytest.fixture
def small_cfg():
    return ExperimentConfig(domain=[20., 20.], num_robots=2, horizon=3, measurement_steps=2,
                            field_length_scale=5., admm={'k_max': 5})


def test_defaults():
    cfg = ExperimentConfig()
    assert list(cfg.domain) == [40., 30.]
    assert (cfg.num_robots, cfg.horizon, cfg.dt, cfg.measurement_steps) == (5, 10, 0.2, 15)
    assert (cfg.admm.rho, cfg.admm.lipschitz, cfg.admm.eps_res, cfg.admm.k_max) == \
        (0.1, 0.01, 1e-3, 100)
    assert cfg.control_bounds.v_max == 2.
    assert np.allclose(cfg.cost_weights.Q, np.diag([0.01, 0.01]))


def test_unknown_switch():
    with pytest.raises(ValueError):
        ExperimentConfig(robots=3)


def test_invalid_values():
    with pytest.raises(ValueError):
        ExperimentConfig(method='newton')
    with pytest.raises(ValueError):
        ExperimentConfig(domain=[1., 2., 3.])
    with pytest.raises(ValueError):
        ExperimentConfig(dt=0.)


def test_mode_alias():
    assert ExperimentConfig(mode='central').mode == 'centralized'


def test_explicit_convex_forwarded():
    cfg = ExperimentConfig(explicit_convex=False, admm={'rho': 0.2})
    assert cfg.admm.explicit_convex is False
    assert cfg.admm.rho == 0.2


def test_json(tmpdir, small_cfg):
    filename = str(tmpdir.join('config.json'))
    small_cfg.to_json(filename)
    back = ExperimentConfig.from_json(filename)
    assert back.to_dict() == small_cfg.to_dict()
    assert back.admm.k_max == 5


def test_replace(small_cfg):
    other = small_cfg.replace(seed=9)
    assert other.seed == 9
    assert small_cfg.seed == 0
    assert other.admm.k_max == 5


def test_metrics_examples():
    truth = np.array([1., 2., 3.])
    alpv, rmse, mae = metrics(PosteriorStats(truth.copy(), np.full(3, 0.5)), truth)
    assert (rmse, mae) == (0., 0.)
    assert alpv == pytest.approx(np.log(0.5))
    pred = PosteriorStats(np.array([1., 2., 5.]), np.array([1., np.e, np.e**2]))
    alpv, rmse, mae = metrics(pred, truth)
    assert alpv == pytest.approx(1.)
    assert rmse == pytest.approx(np.sqrt(4. / 3.))
    assert mae == pytest.approx(2.)


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        metrics(PosteriorStats(np.zeros(2), np.ones(2)), np.zeros(3))


def test_initial_poses(small_cfg):
    poses = initial_poses(small_cfg.replace(num_robots=6), np.random.default_rng(0))
    positions = np.array([s.position for s in poses])
    assert len(poses) == 6
    assert np.all(positions >= 0.5) and np.all(positions <= 19.5)
    d = np.linalg.norm(positions[:, None] - positions[None], axis=2) + 1e3 * np.eye(6)
    assert d.min() >= 2.
    again = initial_poses(small_cfg.replace(num_robots=6), np.random.default_rng(0))
    assert [s.heading for s in poses] == [s.heading for s in again]


def test_initial_poses_impossible():
    cfg = ExperimentConfig(domain=[20., 20.], num_robots=3, min_separation=50.)
    with pytest.raises(ValueError):
        initial_poses(cfg, np.random.default_rng(0))


def test_zero_steps(small_cfg):
    record = run_episode(small_cfg.replace(measurement_steps=0))
    assert len(record.rows) == 1
    assert record.rows[0]['step'] == 0
    assert len(record.data) == 2
    assert record.traces == []


def test_episode(small_cfg):
    record = run_episode(small_cfg)
    assert record.failure is None
    assert [r['step'] for r in record.rows] == [0, 1, 2]
    assert len(record.data) == 2 * 3
    assert len(record.traces) == 2
    assert record.region_violation <= 1e-6
    assert record.planned_region_violation <= 1e-6
    assert record.dynamics_residual < 1e-3
    assert record.control_violation == 0.
    assert record.held_steps == 0
    bounds = small_cfg.control_bounds
    for controls in record.controls:
        assert bounds.contains(controls)
    assert np.all(np.isfinite(record.column('alpv')))


def test_episode_is_deterministic(small_cfg):
    a = run_episode(small_cfg)
    b = run_episode(small_cfg)
    for key in ['alpv', 'rmse', 'mae']:
        assert np.array_equal(a.column(key), b.column(key))
    assert np.array_equal(a.data.measurements, b.data.measurements)


def test_seed_fixes_field_and_poses(small_cfg):
    ladmm = run_episode(small_cfg.replace(method='ladmm', measurement_steps=1))
    scadmm = run_episode(small_cfg.replace(method='scadmm', measurement_steps=1))
    assert np.array_equal(ladmm.positions[0], scadmm.positions[0])
    assert ladmm.rows[0]['rmse'] == scadmm.rows[0]['rmse']


def test_training_episode(small_cfg):
    record = run_episode(small_cfg.replace(train_gp=True, retrain_every=1, measurement_steps=1))
    assert record.failure is None
    assert record.hyperparams != small_cfg.field_hyperparams()


def test_batch_artifacts(tmpdir, small_cfg):
    out = str(tmpdir.join('out'))
    records, summary = run_batch(small_cfg.replace(measurement_steps=1), n_runs=2, out=out)
    assert [r.seed for r in records] == [0, 1]
    with open(os.path.join(out, 'metrics.csv')) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['run', 'step', 'alpv', 'rmse', 'mae', 'wall_ms']
    assert len(rows) == 1 + 2 * 2
    with open(os.path.join(out, 'trace_1.json')) as f:
        trace = json.load(f)
    assert trace['seed'] == 1
    assert len(trace['steps']) == 1
    with open(os.path.join(out, 'field_0_1.csv')) as f:
        assert f.readline().strip() == 'x,y,pred_mean,pred_var'
    assert summary['runs'] == 2
    assert summary['failures'] == 0
    assert set(summary['steps']) == {0, 1}


def test_batch_needs_a_run(small_cfg):
    with pytest.raises(ValueError):
        run_batch(small_cfg, n_runs=0)


def test_summarize_quartiles():
    records = []
    for run, value in enumerate([1., 2., 3., 4., 5.]):
        record = MetricsRecord(run, run, 'scadmm', 'centralized')
        record.add_row(0, value, value, value, 0.)
        record.add_row(1, value, value, value, 10. * value)
        records.append(record)
    summary = summarize(records)
    assert summary['steps'][0]['rmse']['median'] == 3.
    assert summary['steps'][1]['alpv']['q1'] == 2.
    assert summary['wall_ms']['scadmm/centralized']['max'] == 50.


def test_compare(small_cfg):
    results, summary = compare(small_cfg.replace(measurement_steps=1), n_runs=1,
                               modes=['centralized'])
    assert set(results) == {('scadmm', 'centralized'), ('ladmm', 'centralized')}
    assert summary['runs'] == 2
    assert set(summary['wall_ms']) == {'scadmm/centralized', 'ladmm/centralized'}


def _travelled(record):
    """distance covered by each robot over the episode"""
    steps = np.diff(np.array(record.positions), axis=0)
    return np.sum(np.linalg.norm(steps, axis=2), axis=0)


@pytest.mark.slow
def test_scadmm_converges_on_default_instance():
    first, solves, converged = 0, 0, 0
    for seed in range(20):
        record = run_episode(ExperimentConfig(seed=seed))
        assert record.failure is None
        done = [t['iterations'] <= 100 and t['residuals'][-1] < 1e-3 for t in record.traces]
        assert len(done) == 15
        first += done[0]
        solves += len(done)
        converged += sum(done)
        # the team actually moves between measurements
        assert np.mean(_travelled(record)) >= 3.
    assert first >= 18
    assert converged >= 0.9 * solves


@pytest.mark.slow
@pytest.mark.parametrize('method, dynamics_tol', [('scadmm', 1e-3), ('ladmm', 1e-6)])
def test_variance_decreases(method, dynamics_tol):
    cfg = ExperimentConfig(method=method)
    good = 0
    for seed in range(10):
        record = run_episode(cfg.replace(seed=seed))
        assert record.failure is None
        alpv = record.column('alpv')
        good += alpv[0] - alpv[-1] >= 4. and np.sum(np.diff(alpv) < 0) >= 12
        assert record.planned_region_violation <= 1e-6
        assert record.dynamics_residual < dynamics_tol
        assert record.held_steps == 0
        assert record.region_violation <= 1e-6
        assert record.control_violation == 0.
        assert record.min_separation() >= 2. * cfg.epsilon - 1e-6
        for controls in record.controls:
            assert cfg.control_bounds.contains(controls)
    assert good >= 8


@pytest.mark.slow
def test_methods_comparable():
    cfg = ExperimentConfig()
    results, _ = compare(cfg, n_runs=10, modes=['centralized'])
    final = dict((method, np.median([r.rows[-1]['rmse'] for r in records]))
                 for (method, _), records in results.items())
    assert final['scadmm'] <= 1.5 * final['ladmm']


@pytest.mark.slow
def test_ground_truth_reproducible():
    cfg = ExperimentConfig()
    assert np.array_equal(generate_ground_truth(7, cfg).values,
                          generate_ground_truth(7, cfg).values)


@pytest.mark.slow
@pytest.mark.parametrize('mode', ['centralized', 'distributed'])
def test_scadmm_solves_faster(mode):
    results, summary = compare(ExperimentConfig(measurement_steps=3), n_runs=10, modes=[mode])
    assert all(r.failure is None for records in results.values() for r in records)
    assert summary['wall_ms']['scadmm/%s' % mode]['median'] < \
        summary['wall_ms']['ladmm/%s' % mode]['median']


@pytest.mark.slow
@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs 4 hardware threads")
def test_distributed_scadmm_faster_than_centralized():
    results, summary = compare(ExperimentConfig(measurement_steps=3), n_runs=10,
                               methods=['scadmm'])
    assert all(r.failure is None for records in results.values() for r in records)
    assert summary['wall_ms']['scadmm/distributed']['median'] < \
        summary['wall_ms']['scadmm/centralized']['median']
