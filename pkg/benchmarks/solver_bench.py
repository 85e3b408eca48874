import numpy as np
from pybench import Benchmark

from admmsampling import (AgentProblem, Dataset, ExperimentConfig, GaussianProcess,
                          generate_ground_truth, initial_poses, make_solver, measure,
                          movement_region)


def first_step(cfg):
    """ Problems and GP of the first measurement step of a seeded episode """
    domain = cfg.domain_rect
    field = generate_ground_truth(cfg.seed, cfg)
    states = initial_poses(cfg, np.random.default_rng([cfg.seed, 1]))
    positions = np.array([s.position for s in states])
    rng = np.random.default_rng([cfg.seed, 2])
    readings = [measure(field, q, cfg.noise_sd, rng) for q in positions]
    gp = GaussianProcess(Dataset(positions, readings, domain), cfg.field_hyperparams())
    problems = []
    for i, s in enumerate(states):
        region, _ = movement_region(i, positions, domain, cfg.epsilon)
        problems.append(AgentProblem(i, s, region=region, bounds=cfg.control_bounds,
                                     weights=cfg.cost_weights, horizon=cfg.horizon, dt=cfg.dt))
    return problems, gp, domain


class SolverBench(Benchmark):
    """
    Benchmarking tool for the consensus ADMM solvers

    Execute benchmark runs with:
    python solver_bench.py -b -s -l -- method=<method> mode=<mode> robots=<M> horizon=<H>
    """
    warmups = 1
    repeats = 3

    method = 'solver'
    benchmark = 'Solver'

    def solver(self, method='scadmm', mode='centralized', robots=5, horizon=10,
               workers=0, seed=0, k_max=100):
        self.series['method'] = method
        self.series['mode'] = mode
        self.series['robots'] = robots
        self.series['horizon'] = horizon
        self.series['workers'] = workers

        cfg = ExperimentConfig(num_robots=int(robots), horizon=int(horizon), seed=int(seed),
                               admm={'k_max': int(k_max)})
        problems, gp, domain = first_step(cfg)
        solver = make_solver(method, cfg.admm, mode, int(workers) or None)
        with self.timed_region("solve"):
            state, _ = solver.solve(problems, gp, domain)
        print("Solved: %s %s in %d iterations" % (method, mode, state.iterations))


if __name__ == '__main__':
    SolverBench().main()
