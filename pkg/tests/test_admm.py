import numpy as np
import pytest

from admmsampling.admm import (AdmmConfig, SubproblemFailure, ConsensusSolver, z_step,
                               dual_step, trust_update, scadmm_w_step, ladmm_w_step,
                               make_solver, run_ladmm, run_scadmm)
from admmsampling.geometry import Polytope, Rectangle
from admmsampling.gp import Dataset, GaussianProcess, Hyperparams
from admmsampling.problem import (TrajectoryVars, AgentProblem, build_agent_constraints,
                                  penalized_cost, predicted_cost)
from admmsampling.vehicle import RobotState, ControlInput, CostWeights


@pytest.fixture
def cfg():
    return AdmmConfig()


@pytest.fixture
def box_problem():
    domain = Rectangle.from_size(10., 10.)
    return AgentProblem(0, RobotState(5., 5., 0.), ControlInput(0.5, 0.3),
                        Polytope(domain.halfplanes()), horizon=1, dt=0.2)


def test_z_step_examples():
    assert np.allclose(z_step([1., 1.], [0., 0.], 0.1, 0.01, [0.11, 0.]), [0., 1.])
    assert np.allclose(z_step([1., 1.], [0.11, 0.], 0.1, 0.01, [0., 0.]), [0., 1.])


def test_z_step_clamped_to_domain():
    z = z_step([1., 1.], [0., 0.], 0.1, 0.01, [1., -1.], Rectangle.from_size(5., 5.))
    assert np.allclose(z, [0., 5.])


def test_dual_step():
    assert np.allclose(dual_step([0., 0.], [1., 1.], [1., 1.], 0.1), [0., 0.])
    assert np.allclose(dual_step([0., 0.], [1., 0.], [0., 0.], 0.1), [0.1, 0.])
    mu = dual_step(dual_step([0.2, -0.1], [1., 0.], [0., 0.], 0.1), [0., 2.], [1., 1.], 0.1)
    assert np.allclose(mu, [0.2, -0.1] + 0.1 * (np.array([1., 0.]) + np.array([-1., 1.])))


@pytest.mark.parametrize('delta, accepted, factor', [
    (2e3, False, 0.5), (500., True, 0.5), (50., True, 1.), (0.5, True, 2.), (-3., True, 2.)])
def test_trust_update(cfg, delta, accepted, factor):
    ok, r = trust_update(delta, 0.1, cfg)
    assert ok is accepted
    assert r == pytest.approx(0.1 * factor)


def test_trust_radius_clamped(cfg):
    assert trust_update(0., 1., cfg)[1] == 1.
    assert trust_update(1e4, 1e-6, cfg)[1] == 1e-6


def test_config_switches():
    cfg = AdmmConfig(rho=0.5, L=0.2)
    assert cfg.lipschitz == 0.2
    with pytest.raises(ValueError):
        AdmmConfig(gamma=1.)
    with pytest.raises(ValueError):
        AdmmConfig(eps1=1e4)
    with pytest.raises(ValueError):
        AdmmConfig(rho=0.)
    with pytest.raises(ValueError):
        AdmmConfig(inner_failure='ignore')
    with pytest.raises(ValueError):
        AdmmConfig(region_margin=-1.)


def test_config_dict():
    cfg = AdmmConfig.from_dict({'rho': 0.2, 'sc': {'lambda': 1e4, 'r_init': 0.2}})
    assert (cfg.rho, cfg.lam, cfg.r_init) == (0.2, 1e4, 0.2)
    d = cfg.to_dict()
    assert d['sc']['lambda'] == 1e4
    assert AdmmConfig.from_dict(d).to_dict() == d


def test_predicted_cost_matches_actual_at_zero(box_problem):
    w = TrajectoryVars.from_controls(box_problem.start_state, [[0.3, 0.2]], 0.2)
    c = build_agent_constraints(box_problem)
    assert predicted_cost(box_problem, w, np.zeros(5), constraints=c) == \
        pytest.approx(penalized_cost(box_problem, w, constraints=c))


def test_scadmm_step_respects_trust_rule(box_problem, cfg):
    w = box_problem.hold()
    r = cfg.r_init
    for _ in range(10):
        new, delta, accepted, r_new = scadmm_w_step(box_problem, w, [5.5, 5.], cfg.rho, r, cfg)
        assert cfg.r_min <= r_new <= cfg.r_max
        if accepted:
            assert box_problem.bounds.contains(new.controls)
        else:
            assert new is w
        w, r = new, r_new


def test_scadmm_rejected_step_keeps_iterate():
    cfg = AdmmConfig(eps0=1e-14, eps1=2e-14, eps2=3e-14)
    domain = Rectangle.from_size(10., 10.)
    p = AgentProblem(0, RobotState(5., 5., 0.7), region=Polytope(domain.halfplanes()),
                     horizon=3, dt=0.2)
    w = p.hold()
    for _ in range(5):
        new, delta, accepted, r = scadmm_w_step(p, w, [6., 3.], cfg.rho, 0.5, cfg)
        assert accepted == (delta <= cfg.eps2)
        if not accepted:
            assert new is w
        w = new


def test_ladmm_zero_cost_keeps_warm_start():
    domain = Rectangle.from_size(10., 10.)
    p = AgentProblem(0, RobotState(5., 5., 0.), region=Polytope(domain.halfplanes()),
                     weights=CostWeights(np.zeros((2, 2)), np.zeros((2, 2))),
                     horizon=2, dt=0.2)
    warm = p.hold()
    w = ladmm_w_step(p, warm.final_position, 0.1, warm)
    assert np.allclose(w.flatten(), warm.flatten(), atol=1e-8)


def test_ladmm_single_step_against_grid(box_problem):
    rho = 0.1
    target = np.array([5.5, 5.])
    w = ladmm_w_step(box_problem, target, rho, box_problem.hold())

    v, omega = np.meshgrid(np.arange(-2., 2. + 1e-9, 1e-3), np.arange(-np.pi, np.pi, 1e-2))
    x = 5. + 0.2 * v
    cost = 0.01 * (v**2 + omega**2) + (v - 0.5)**2 + (omega - 0.3)**2 + \
        0.5 * rho * ((x - target[0])**2 + (5. - target[1])**2)
    k = np.unravel_index(np.argmin(cost), cost.shape)
    assert w.controls[0, 0] == pytest.approx(v[k], abs=1e-2)
    assert w.controls[0, 1] == pytest.approx(omega[k], abs=1e-2)


def test_ladmm_result_is_dynamically_consistent(small_team):
    problems, _ = small_team
    rng = np.random.RandomState(0)
    for p in problems:
        c = build_agent_constraints(p)
        target = p.start_state.position + rng.normal(size=2)
        w = ladmm_w_step(p, target, 0.1, p.hold())
        dyn, ineq = c.violation(w)
        assert dyn < 1e-6
        assert ineq < 1e-6


def test_ladmm_infeasible_warm_start_raises(box_problem):
    bad = TrajectoryVars(np.full((1, 3), 50.), np.zeros((1, 2)))
    p = AgentProblem(0, RobotState(5., 5., 0.), region=Polytope([]), horizon=1)
    # no halfplanes: every position is inside
    assert ladmm_w_step(p, [5., 5.], 0.1, bad).horizon == 1
    with pytest.raises(SubproblemFailure):
        ladmm_w_step(box_problem, [50., 50.], 0.1, bad, AdmmConfig(inner_max_iter=1))


def test_ladmm_iteration_cap_is_reported():
    domain = Rectangle.from_size(10., 10.)
    p = AgentProblem(0, RobotState(5., 5., 0.7), region=Polytope(domain.halfplanes()),
                     horizon=4, dt=0.2)
    c = build_agent_constraints(p)
    cfg = AdmmConfig(inner_max_iter=1)
    counts = {}
    w = ladmm_w_step(p, [6., 3.], 0.1, p.hold(), cfg, c, counts)
    assert counts['inner_failures'] == 1
    dyn, ineq = c.violation(w)
    assert dyn < 1e-6 and ineq < 1e-6
    assert p.bounds.contains(w.controls)
    with pytest.raises(SubproblemFailure) as e:
        ladmm_w_step(p, [6., 3.], 0.1, p.hold(), AdmmConfig(inner_max_iter=1, inner_failure='raise'), c)
    assert e.value.agent == 0
    assert e.value.best is not None


def test_ladmm_agent_status_counts_iteration_caps(small_team):
    problems, gp = small_team
    state, _ = run_ladmm(problems, gp, AdmmConfig(k_max=2, inner_max_iter=1))
    for status in state.agent_status:
        assert 0 <= status['inner_failures'] <= state.iterations


def test_scadmm_steps_reach_the_local_minimiser():
    # heading along the target: the linearisation stays exact
    domain = Rectangle.from_size(20., 20.)
    p = AgentProblem(0, RobotState(10., 10., 0.), region=Polytope(domain.halfplanes()),
                     horizon=10, dt=0.2)
    cfg = AdmmConfig()
    c = build_agent_constraints(p)
    target = [12., 10.]
    w, r = p.hold(), cfg.r_init
    for _ in range(40):
        w, _, _, r = scadmm_w_step(p, w, target, cfg.rho, r, cfg, c)
    exact = ladmm_w_step(p, target, cfg.rho, p.hold(), cfg, c)
    assert w.final_position[0] > 10.5
    assert w.final_position == pytest.approx(exact.final_position, abs=0.05)
    assert np.max(np.abs(c.g(w))) < 1e-3
    assert p.bounds.contains(w.controls)


@pytest.mark.parametrize('method', ['scadmm', 'ladmm'])
def test_single_iteration_with_loose_tolerance(small_team, method):
    problems, gp = small_team
    state, ws = make_solver(method, AdmmConfig(eps_res=1e9)).solve(problems, gp)
    assert state.iterations == 1
    assert len(ws) == 2


@pytest.mark.parametrize('method', ['scadmm', 'ladmm'])
def test_histories(small_team, method):
    problems, gp = small_team
    state, ws = make_solver(method, AdmmConfig(k_max=6)).solve(problems, gp)
    assert state.iterations <= 6
    for z, v, res in zip(state.z_history, state.v_history, state.residual_history):
        assert res == pytest.approx(np.linalg.norm(z - v))
    assert np.all(state.messages_sent == state.iterations)
    assert np.all(state.messages_received == state.iterations)
    dynamics_tol = {'scadmm': 1e-3, 'ladmm': 1e-6}[method]
    for p, w in zip(problems, ws):
        assert p.bounds.contains(w.controls)
        for q in w.positions:
            assert p.region.contains(q, 1e-6)
        assert np.max(np.abs(build_agent_constraints(p).g(w))) < dynamics_tol


def test_trust_radii_in_range(small_team):
    problems, gp = small_team
    cfg = AdmmConfig(k_max=6)
    state, _ = run_scadmm(problems, gp, cfg)
    for status in state.agent_status:
        assert cfg.r_min <= status['radius'] <= cfg.r_max
        assert status['accepted'] + status['rejected'] == state.iterations


@pytest.mark.parametrize('method', ['scadmm', 'ladmm'])
def test_modes_agree(small_team, method):
    problems, gp = small_team
    cfg = AdmmConfig(k_max=5)
    central, ws_c = make_solver(method, cfg, 'centralized').solve(problems, gp)
    distributed, ws_d = make_solver(method, cfg, 'distributed').solve(problems, gp)
    assert central.iterations == distributed.iterations
    assert np.allclose(central.residual_history, distributed.residual_history, atol=1e-9)
    for a, b in zip(ws_c, ws_d):
        assert np.allclose(a.flatten(), b.flatten(), atol=1e-9)


def test_distributed_with_one_worker(small_team):
    problems, gp = small_team
    cfg = AdmmConfig(k_max=3)
    central, _ = run_ladmm(problems, gp, cfg)
    shared, _ = make_solver('ladmm', cfg, 'distributed', workers=1).solve(problems, gp)
    assert np.allclose(central.residual_history, shared.residual_history, atol=1e-9)


def test_mode_names():
    assert ConsensusSolver(mode='central').mode == 'centralized'
    with pytest.raises(ValueError):
        ConsensusSolver(mode='parallel')
    with pytest.raises(ValueError):
        make_solver('newton')


def test_trace_export(small_team, tmpdir):
    problems, gp = small_team
    solver = make_solver('scadmm', AdmmConfig(k_max=2))
    state, _ = solver.solve(problems, gp)
    trace = solver.trace(state)
    filename = str(tmpdir.join('trace.json'))
    trace.to_json(filename)
    d = trace.to_dict()
    assert d['iterations'] == state.iterations
    assert d['method'] == 'scadmm'
    assert len(d['residuals']) == len(d['objectives']) == state.iterations


def test_scadmm_moves_towards_information():
    domain = Rectangle.from_size(10., 10.)
    h = Hyperparams(0., 1., 1., 1e-2)
    gp = GaussianProcess(Dataset([[5.2, 5.]], [0.]), h)
    p = AgentProblem(0, RobotState(5., 5., 0.), region=Polytope(domain.halfplanes()),
                     horizon=1, dt=0.2)
    state, ws = run_scadmm([p], gp, AdmmConfig(k_max=30), domain=domain)
    start = gp.neg_log_det(p.start_state.position.reshape(1, 2))
    assert gp.neg_log_det(ws[0].final_position.reshape(1, 2)) < start
