import csv
import json
import logging
import os
from time import perf_counter

import numpy as np

from admmsampling.admm import AdmmConfig, SubproblemFailure, make_solver
from admmsampling.field import generate_ground_truth, measure
from admmsampling.geometry import (Rectangle, DegenerateConfigurationError,
                                   movement_region, pairwise_min_distance)
from admmsampling.gp import Dataset, GaussianProcess, Hyperparams, IllConditionedError, train
from admmsampling.problem import AgentProblem, build_agent_constraints
from admmsampling.vehicle import RobotState, ControlInput, ControlBounds, CostWeights

__all__ = ['ExperimentConfig', 'MetricsRecord', 'metrics', 'initial_poses',
           'run_episode', 'run_batch', 'summarize', 'compare', 'write_metrics_csv']

log = logging.getLogger(__name__)

METHODS = ['scadmm', 'ladmm']
MODES = ['centralized', 'distributed']
METRICS_HEADER = ['run', 'step', 'alpv', 'rmse', 'mae', 'wall_ms']


class ExperimentConfig(object):
    """
    Parameters of an adaptive sampling episode, set as keyword switches.

    Supported switches are:
    * domain: [width, height] or [xmin, xmax, ymin, ymax] in meters, default [40, 30]
    * num_robots: number of robots M, default 5
    * horizon: control horizon H, default 10
    * dt: sampling time, default 0.2 s
    * measurement_steps: number of measurement steps, default 15
    * bounds: {'v': [min, max], 'omega': [min, max]}, default [-2, 2] and [-pi, pi]
    * weights: {'Q': 2x2, 'R': 2x2}, default diag(0.01, 0.01) and diag(1, 1)
    * admm: AdmmConfig or a dict of its switches
    * seed: base seed, default 0
    * method: 'scadmm' or 'ladmm'
    * mode: 'centralized' (alias 'central') or 'distributed'
    * eval_grid: evaluation grid resolution, default 1 m
    * epsilon: safety margin of the movement regions, default 0.5 m
    * noise_sd: measurement noise standard deviation, default 0.1
    * train_gp: train the controller hyperparameters instead of using the
      generator's, default False
    * retrain_every: retrain every K measurement steps when training, 0 trains
      once at step 0
    * field_csv: sensor CSV to fit the ground truth to instead of sampling it
    * field_mean, field_variance, field_length_scale: ground truth GP
    * grid_resolution: ground truth node spacing, default 1 m
    * min_separation: initial pairwise separation, default 2 m
    * explicit_convex: forwarded to the admm switches
    * threads: worker processes in distributed mode, default one per robot
    * snapshots: write field_<run>_<step>.csv files with the outputs
    """

    domain = (40., 30.)
    num_robots = 5
    horizon = 10
    dt = 0.2
    measurement_steps = 15
    bounds = {'v': [-2., 2.], 'omega': [-np.pi, np.pi]}
    weights = {'Q': [[0.01, 0.], [0., 0.01]], 'R': [[1., 0.], [0., 1.]]}
    seed = 0
    method = 'scadmm'
    mode = 'centralized'
    eval_grid = 1.
    epsilon = 0.5
    noise_sd = 0.1
    train_gp = False
    retrain_every = 0
    field_csv = None
    field_mean = 20.
    field_variance = 1.
    field_length_scale = 8.
    grid_resolution = 1.
    min_separation = 2.
    threads = None
    snapshots = True

    _switches = ['domain', 'num_robots', 'horizon', 'dt', 'measurement_steps',
                 'bounds', 'weights', 'admm', 'seed', 'method', 'mode',
                 'eval_grid', 'epsilon', 'noise_sd', 'train_gp', 'retrain_every',
                 'field_csv', 'field_mean', 'field_variance', 'field_length_scale',
                 'grid_resolution', 'min_separation', 'explicit_convex', 'threads',
                 'snapshots']

    def __init__(self, **kwargs):
        self.admm = AdmmConfig()
        self.set_switches(**kwargs)

    def set_switches(self, **kwargs):
        # admm first so explicit_convex lands on the new AdmmConfig
        for switch in sorted(kwargs, key=lambda s: s != "admm"):
            value = kwargs[switch]
            if switch not in self._switches:
                raise ValueError("Unknown experiment switch: %s" % switch)
            if switch == 'admm':
                value = value if isinstance(value, AdmmConfig) else AdmmConfig.from_dict(value)
            elif switch == 'explicit_convex':
                self.admm.set_switches(explicit_convex=bool(value))
                continue
            elif switch == 'mode' and value == 'central':
                value = 'centralized'
            setattr(self, switch, value)
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ValueError("Unknown method: %s" % self.method)
        if self.mode not in MODES:
            raise ValueError("Unknown mode: %s" % self.mode)
        if int(self.num_robots) < 1 or int(self.horizon) < 1:
            raise ValueError("num_robots and horizon must be positive")
        if int(self.measurement_steps) < 0:
            raise ValueError("measurement_steps must be nonnegative")
        if not (self.dt > 0 and self.eval_grid > 0 and self.grid_resolution > 0):
            raise ValueError("dt and grid resolutions must be positive")
        if self.epsilon < 0 or self.noise_sd < 0:
            raise ValueError("epsilon and noise_sd must be nonnegative")
        self.domain_rect
        self.control_bounds
        self.cost_weights

    @property
    def domain_rect(self):
        d = [float(x) for x in self.domain]
        if len(d) == 2:
            return Rectangle.from_size(*d)
        if len(d) == 4:
            return Rectangle(*d)
        raise ValueError("domain needs 2 or 4 numbers, got %r" % (self.domain,))

    @property
    def control_bounds(self):
        return ControlBounds(self.bounds['v'][0], self.bounds['v'][1],
                             self.bounds['omega'][0], self.bounds['omega'][1])

    @property
    def cost_weights(self):
        return CostWeights(self.weights['Q'], self.weights['R'])

    def field_hyperparams(self):
        return Hyperparams(self.field_mean, self.field_variance, self.field_length_scale,
                           max(self.noise_sd**2, 1e-6))

    def replace(self, **kwargs):
        d = self.to_dict()
        d.update(kwargs)
        return ExperimentConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, filename):
        with open(filename) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        d = dict((s, getattr(self, s)) for s in self._switches if s != 'explicit_convex')
        d['domain'] = list(self.domain)
        d['admm'] = self.admm.to_dict()
        return d

    def to_json(self, filename):
        with open(filename, 'w') as f:
            json.dump(self.to_dict(), f, indent=1)


class MetricsRecord(object):
    """
    per measurement step metrics of one episode, with the trajectories,
    the measurement log and the solver traces
    """

    def __init__(self, run, seed, method, mode):
        self.run = run
        self.seed = seed
        self.method = method
        self.mode = mode
        self.rows = []
        self.positions = []
        self.controls = []
        self.traces = []
        self.epsilons = []
        self.region_violation = 0.
        self.planned_region_violation = 0.
        self.dynamics_residual = 0.
        self.control_violation = 0.
        self.held_steps = 0
        self.data = None
        self.hyperparams = None
        self.failure = None

    def add_row(self, step, alpv, rmse, mae, wall_ms):
        self.rows.append({'run': self.run, 'step': step, 'alpv': alpv, 'rmse': rmse,
                          'mae': mae, 'wall_ms': wall_ms})

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    @property
    def solve_times(self):
        """wall time of every solve, excluding the initial row"""
        return self.column('wall_ms')[1:]

    def min_separation(self):
        return min([pairwise_min_distance(p) for p in self.positions] or [np.inf])

    def write_csv(self, filename, header=True):
        mode = 'w' if header else 'a'
        with open(filename, mode, newline='') as f:
            writer = csv.writer(f)
            if header:
                writer.writerow(METRICS_HEADER)
            for r in self.rows:
                writer.writerow([r['run'], r['step'], repr(r['alpv']), repr(r['rmse']),
                                 repr(r['mae']), '%.3f' % r['wall_ms']])

    def trace_dict(self):
        return {'run': self.run, 'seed': self.seed, 'method': self.method,
                'mode': self.mode, 'failure': self.failure, 'steps': self.traces,
                'audit': {'region_violation': self.region_violation,
                          'planned_region_violation': self.planned_region_violation,
                          'dynamics_residual': self.dynamics_residual,
                          'control_violation': self.control_violation,
                          'held_steps': self.held_steps}}


def write_metrics_csv(records, filename):
    for k, record in enumerate(records):
        record.write_csv(filename, header=(k == 0))


def metrics(pred, truth):
    """
    :param pred: PosteriorStats on the evaluation grid
    :param truth: ground truth values on the same grid
    :returns: (alpv, rmse, mae)
    """
    truth = np.asarray(truth, dtype=float).ravel()
    mean = np.asarray(pred.mean, dtype=float).ravel()
    if mean.shape != truth.shape:
        raise ValueError("Prediction has %d points but truth %d" % (mean.size, truth.size))
    err = mean - truth
    alpv = float(np.mean(np.log(pred.variance)))
    return alpv, float(np.sqrt(np.mean(err**2))), float(np.max(np.abs(err)))


def initial_poses(cfg, rng):
    """
    uniform positions at least min_separation apart and epsilon away from
    the walls, uniform headings
    """
    domain = cfg.domain_rect
    lo = domain.lower + cfg.epsilon
    hi = domain.upper - cfg.epsilon
    positions = []
    attempts = 0
    while len(positions) < cfg.num_robots:
        attempts += 1
        if attempts > 10000 * cfg.num_robots:
            raise ValueError("Cannot place %d robots %.3g m apart" % (cfg.num_robots,
                                                                      cfg.min_separation))
        q = lo + rng.random(2) * (hi - lo)
        if all(np.linalg.norm(q - p) >= cfg.min_separation for p in positions):
            positions.append(q)
    headings = np.pi - rng.random(cfg.num_robots) * 2. * np.pi
    return [RobotState(p[0], p[1], th) for p, th in zip(positions, headings)]


def _write_snapshot(filename, points, pred):
    with open(filename, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['x', 'y', 'pred_mean', 'pred_var'])
        for (x, y), m, v in zip(points, pred.mean, pred.variance):
            writer.writerow([repr(x), repr(y), repr(m), repr(v)])


def _region_excess(region, positions):
    return float(max(0., np.max(positions.dot(region.A.T) - region.b))) if len(region.b) else 0.


def _bound_excess(bounds, controls):
    u = np.reshape(controls, (-1, 2))
    return float(max(0., np.max(bounds.lower - u), np.max(u - bounds.upper)))


def _audit_plan(record, p, w):
    """
    feasibility of a returned trajectory before it is applied
    """
    c = build_agent_constraints(p)
    record.planned_region_violation = max(record.planned_region_violation,
                                          _region_excess(p.region, w.positions))
    record.dynamics_residual = max(record.dynamics_residual, float(np.max(np.abs(c.g(w)))))
    excess = _bound_excess(p.bounds, w.controls)
    if excess > 0.:
        log.warning("Bounds: agent %d planned controls outside their bounds by %.3g", p.index, excess)


def run_episode(cfg, run=0, out=None):
    """
    measure, plan and move for cfg.measurement_steps steps
    row t of the record holds the metrics after the measurements of step t
    and the wall time of the solve that led there
    """
    seed = cfg.seed
    record = MetricsRecord(run, seed, cfg.method, cfg.mode)
    domain = cfg.domain_rect
    field = generate_ground_truth(seed, cfg)
    rng_noise = np.random.default_rng([seed, 2])
    states = initial_poses(cfg, np.random.default_rng([seed, 1]))
    u_prev = [ControlInput() for _ in states]
    if cfg.field_csv:
        h = field.hyperparams.replace(noise_variance=max(cfg.noise_sd**2, 1e-6))
    else:
        h = cfg.field_hyperparams()
    points = domain.cell_centers(cfg.eval_grid)
    truth = field(points)
    data = Dataset(domain=domain)
    solver = make_solver(cfg.method, cfg.admm, cfg.mode, cfg.threads)
    wall_ms = 0.

    try:
        for t in range(cfg.measurement_steps + 1):
            positions = np.array([s.position for s in states])
            record.positions.append(positions)
            readings = [measure(field, q, cfg.noise_sd, rng_noise) for q in positions]
            data = data.append(positions, readings)
            if cfg.train_gp and len(data) >= 2 and \
                    (t == 0 or (cfg.retrain_every > 0 and t % cfg.retrain_every == 0)):
                h = train(data, h, seed=seed)
            gp = GaussianProcess(data, h)
            pred = gp.predict(points, full_cov=False)
            alpv, rmse, mae = metrics(pred, truth)
            record.add_row(t, alpv, rmse, mae, wall_ms)
            log.info("Step: run %d t=%d alpv=%.3f rmse=%.3f mae=%.3f", run, t, alpv, rmse, mae)
            if out is not None and cfg.snapshots:
                _write_snapshot(os.path.join(out, 'field_%d_%d.csv' % (run, t)), points, pred)
            if t == cfg.measurement_steps:
                break

            problems = []
            eps_used = []
            for i, s in enumerate(states):
                region, eps = movement_region(i, positions, domain, cfg.epsilon)
                eps_used.append(eps)
                problems.append(AgentProblem(i, s, u_prev[i], region, cfg.control_bounds,
                                             cfg.cost_weights, cfg.horizon, cfg.dt))
            record.epsilons.append(eps_used)

            t0 = perf_counter()
            state, ws = solver.solve(problems, gp, domain)
            wall_ms = 1e3 * (perf_counter() - t0)
            record.traces.append(solver.trace(state).to_dict())

            applied = []
            new_states = []
            for p, w in zip(problems, ws):
                _audit_plan(record, p, w)
                path, controls, held = p.apply(w.controls)
                if held:
                    log.warning("Held: run %d agent %d %d of %d steps", run, p.index, held, p.horizon)
                record.held_steps += held
                record.region_violation = max(record.region_violation,
                                              _region_excess(p.region, path[:, :2]))
                record.control_violation = max(record.control_violation,
                                               _bound_excess(p.bounds, controls))
                applied.append(controls)
                new_states.append(RobotState.from_array(path[-1]))
            record.controls.append(np.array(applied))
            u_prev = [ControlInput.from_array(c[-1]) for c in applied]
            states = new_states
    except (SubproblemFailure, IllConditionedError, DegenerateConfigurationError) as e:
        record.failure = "%s: %s" % (type(e).__name__, e)
        log.error("Failed: run %d %s", run, record.failure)

    record.data = data
    record.hyperparams = h
    if out is not None:
        with open(os.path.join(out, 'trace_%d.json' % run), 'w') as f:
            json.dump(record.trace_dict(), f, indent=1)
    return record


def _quartiles(values):
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return None
    q = np.percentile(values, [0, 25, 50, 75, 100])
    return dict(zip(['min', 'q1', 'median', 'q3', 'max'], [float(x) for x in q]))


def summarize(records):
    """
    quartiles of the metrics per step over the records and of the solve
    wall times per method and mode
    """
    summary = {'runs': len(records), 'failures': sum(r.failure is not None for r in records),
               'steps': {}, 'wall_ms': {}}
    steps = sorted(set(row['step'] for r in records for row in r.rows))
    for step in steps:
        rows = [row for r in records for row in r.rows if row['step'] == step]
        summary['steps'][step] = dict((name, _quartiles([row[name] for row in rows]))
                                      for name in ['alpv', 'rmse', 'mae'])
    groups = sorted(set((r.method, r.mode) for r in records))
    for method, mode in groups:
        times = np.concatenate([r.solve_times for r in records
                                if r.method == method and r.mode == mode] or [np.zeros(0)])
        summary['wall_ms']['%s/%s' % (method, mode)] = _quartiles(times)
    return summary


def run_batch(cfg, n_runs=20, out=None):
    """
    independent episodes with seeds cfg.seed + r
    :returns: (records, summary)
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1, got %r" % n_runs)
    if out is not None and not os.path.isdir(out):
        os.makedirs(out)
    records = []
    for r in range(n_runs):
        record = run_episode(cfg.replace(seed=cfg.seed + r), run=r, out=out)
        records.append(record)
    if out is not None:
        write_metrics_csv(records, os.path.join(out, 'metrics.csv'))
    summary = summarize(records)
    log.info("Batch: %s/%s %d runs, %d failed", cfg.method, cfg.mode, n_runs, summary['failures'])
    return records, summary


def compare(cfg, n_runs=10, out=None, methods=None, modes=None):
    """
    both methods in both modes on the same seeds
    :returns: (dict (method, mode) -> records, summary over all records)
    """
    results = {}
    for method in methods or METHODS:
        for mode in modes or MODES:
            sub = None
            if out is not None:
                sub = os.path.join(out, '%s_%s' % (method, mode))
            results[(method, mode)], _ = run_batch(cfg.replace(method=method, mode=mode),
                                                   n_runs, sub)
    summary = summarize([r for records in results.values() for r in records])
    return results, summary
