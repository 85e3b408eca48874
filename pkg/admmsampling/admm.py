import json
import logging
import multiprocessing
from time import perf_counter

import numpy as np
from scipy.optimize import minimize

from admmsampling import qp
from admmsampling.problem import (TrajectoryVars, build_agent_constraints,
                                  penalized_cost, predicted_cost)

__all__ = ['AdmmConfig', 'ConsensusState', 'SolverTrace', 'SubproblemFailure',
           'AgentWorker', 'LadmmAgent', 'ScadmmAgent', 'ConsensusSolver',
           'LinearizedADMM', 'SuccessiveConvexADMM', 'z_step', 'dual_step',
           'trust_update', 'build_subproblem', 'scadmm_w_step', 'ladmm_w_step', 'run_ladmm',
           'run_scadmm', 'make_solver']

log = logging.getLogger(__name__)

CENTRALIZED = 'centralized'
DISTRIBUTED = 'distributed'
FEASIBILITY_TOL = 1e-6
# controls are planned this far inside their bounds
BOX_MARGIN = 1e-7


class SubproblemFailure(RuntimeError):
    """
    Raised when an agent's local problem has no usable solution
    :param agent: agent index
    :param iteration: ADMM iteration, None outside the consensus loop
    :param best: best iterate found, a TrajectoryVars or None
    """

    def __init__(self, message, agent=None, iteration=None, best=None):
        super(SubproblemFailure, self).__init__(message)
        self.agent = agent
        self.iteration = iteration
        self.best = best


class AdmmConfig(object):
    """
    Parameters of both consensus solvers, set as keyword switches.

    Supported switches are:
    * rho: augmented Lagrangian penalty, default 0.1
    * lipschitz: Lipschitz bound L of grad f_0 used by the z-step, default 0.01
    * eps_res: stopping tolerance on |z - v|, default 1e-3
    * k_max: iteration cap, default 100
    * lam, tau: L1 and hinge penalty weights, default 1e6
    * beta_fail, beta_succ: trust radius contraction and expansion, default 0.5 and 2
    * eps0, eps1, eps2: trust region thresholds on delta, default 1, 1e2, 1e3
    * r_init, r_min, r_max: trust radii, default 0.1, 1e-6, 1
    * explicit_convex: keep the box and region rows explicit in the
      convex subproblem instead of penalising them, default True
    * qp_tol, qp_max_iter: QP solver tolerance and iteration cap
    * inner_max_iter: iteration cap of the L-ADMM local NLP solver
    * inner_failure: 'warn' keeps the best iterate when the local NLP solver
      stops at its cap, 'raise' raises SubproblemFailure with it attached
    * region_margin: tightening of the region rows in the convex subproblem,
      room for the dynamics residual of SC-ADMM trajectories, default 1e-2 m
    """

    rho = 0.1
    lipschitz = 0.01
    eps_res = 1e-3
    k_max = 100
    lam = 1e6
    tau = 1e6
    beta_fail = 0.5
    beta_succ = 2.
    eps0 = 1.
    eps1 = 1e2
    eps2 = 1e3
    r_init = 0.1
    r_min = 1e-6
    r_max = 1.
    explicit_convex = True
    qp_tol = 1e-6
    qp_max_iter = 20000
    inner_max_iter = 200
    inner_failure = 'warn'
    region_margin = 1e-2

    _switches = ['rho', 'lipschitz', 'eps_res', 'k_max', 'lam', 'tau',
                 'beta_fail', 'beta_succ', 'eps0', 'eps1', 'eps2', 'r_init',
                 'r_min', 'r_max', 'explicit_convex', 'qp_tol', 'qp_max_iter',
                 'inner_max_iter', 'inner_failure', 'region_margin']
    _sc_switches = ['lam', 'tau', 'beta_fail', 'beta_succ', 'eps0', 'eps1',
                    'eps2', 'r_init', 'r_min', 'r_max']
    _aliases = {'lambda': 'lam', 'L': 'lipschitz'}

    def __init__(self, **kwargs):
        self.set_switches(**kwargs)

    def set_switches(self, **kwargs):
        for switch, value in kwargs.items():
            switch = self._aliases.get(switch, switch)
            if switch not in self._switches:
                raise ValueError("Unknown ADMM switch: %s" % switch)
            setattr(self, switch, value)
        self.validate()

    def validate(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive, got %r" % self.rho)
        if not self.lipschitz >= 0:
            raise ValueError("lipschitz must be nonnegative, got %r" % self.lipschitz)
        if not 0 < self.eps0 < self.eps1 < self.eps2:
            raise ValueError("Trust thresholds must satisfy 0 < eps0 < eps1 < eps2")
        if not 0 < self.beta_fail < 1 < self.beta_succ:
            raise ValueError("Trust factors must satisfy 0 < beta_fail < 1 < beta_succ")
        if not 0 < self.r_min <= self.r_init <= self.r_max:
            raise ValueError("Trust radii must satisfy 0 < r_min <= r_init <= r_max")
        if not (self.lam > 0 and self.tau > 0):
            raise ValueError("Penalty weights must be positive")
        if int(self.k_max) < 1:
            raise ValueError("k_max must be at least 1")
        if self.inner_failure not in ['warn', 'raise']:
            raise ValueError("Unknown inner_failure: %s" % self.inner_failure)
        if not self.region_margin >= 0:
            raise ValueError("region_margin must be nonnegative, got %r" % self.region_margin)

    @classmethod
    def from_dict(cls, d):
        """
        accepts flat switches and the nested 'sc' group of to_dict
        """
        d = dict(d)
        d.update(d.pop('sc', {}))
        return cls(**d)

    def to_dict(self):
        d = dict((s, getattr(self, s)) for s in self._switches if s not in self._sc_switches)
        sc = dict((s, getattr(self, s)) for s in self._sc_switches)
        sc['lambda'] = sc.pop('lam')
        d['sc'] = sc
        return d


def z_step(v, mu, rho, L, grad, domain=None):
    """
    linearised consensus update z = v - (grad + mu) / (rho + L)
    clamped to the domain rectangle when one is given
    """
    z = np.asarray(v, dtype=float) - (np.asarray(grad) + np.asarray(mu)) / (rho + L)
    if domain is not None:
        z = domain.clamp(z.reshape(-1, 2)).ravel()
    return z


def dual_step(mu, z, v, rho):
    return np.asarray(mu) + rho * (np.asarray(z) - np.asarray(v))


def trust_update(delta, r, cfg):
    """
    trust region rule on delta = J - J~
    :returns: (accepted, new radius clamped to [r_min, r_max])
    """
    if delta > cfg.eps2:
        accepted, r_new = False, r * cfg.beta_fail
    elif delta > cfg.eps1:
        accepted, r_new = True, r * cfg.beta_fail
    elif delta > cfg.eps0:
        accepted, r_new = True, r
    else:
        accepted, r_new = True, r * cfg.beta_succ
    return accepted, min(max(r_new, cfg.r_min), cfg.r_max)


def _consensus_terms(p, w, target, rho):
    """
    quadratic model in delta of f_i(w + delta) + rho/2 |F(w + delta) - target|^2
    """
    P, q, const = p.cost_quadratic()
    idx = p.final_index()
    P = P.copy()
    P[idx, idx] += rho
    wf = w.flatten()
    q_delta = P.dot(wf) + q
    q_delta[idx] -= rho * np.asarray(target)
    e = wf[idx] - target
    const_delta = p.control_cost(w) + 0.5 * rho * e.dot(e)
    return P, q_delta, const_delta


def _row_margins(p, c, cfg):
    """
    how far inside each row of G w <= d the convex subproblem plans: the
    box rows by BOX_MARGIN, the region rows by region_margin but never
    further than the start position already is
    """
    nb = c.box[1].size
    margin = np.zeros(c.d.size)
    margin[:nb] = BOX_MARGIN
    if c.region[1].size:
        slack = np.maximum(p.region.b - p.region.A.dot(p.start_state.position), 0.)
        margin[nb:] = np.tile(np.minimum(cfg.region_margin, slack), p.horizon)
    return margin


def build_subproblem(p, w, target, rho, r, cfg, constraints=None):
    """
    convex subproblem in delta at the expansion point w
    the dynamics enter as L1 penalties of their linearisation, the box and
    region rows stay explicit or become hinge penalties
    """
    c = constraints or build_agent_constraints(p)
    wf = w.flatten()
    P, q, const = _consensus_terms(p, w, target, rho)
    g = c.g(wf)
    Jg = c.g_jacobian(wf)
    l1 = qp.PenaltyTerms(np.full(g.size, cfg.lam), Jg, g)
    h = c.h(wf) + _row_margins(p, c, cfg)
    if cfg.explicit_convex:
        return qp.ConvexSubproblem(P, q, l1=l1, ineq=(c.G, -h), trust=r, const=const)
    hinge = qp.PenaltyTerms(np.full(h.size, cfg.tau), c.G, h)
    return qp.ConvexSubproblem(P, q, l1=l1, hinge=hinge, trust=r, const=const)


def scadmm_w_step(p, w_prev, target, rho, trust, cfg, constraints=None):
    """
    one successive convexification step of the local SC-ADMM update

    A candidate whose controls leave their bounds is rejected like an
    infeasible subproblem.

    :param w_prev: current TrajectoryVars, the expansion point
    :param target: query point z_i + mu_i / rho
    :param trust: current trust radius
    :returns: (w_new, delta, accepted, r_new)
    """
    c = constraints or build_agent_constraints(p)
    H = p.horizon
    sub = build_subproblem(p, w_prev, target, rho, trust, cfg, c)
    sol = qp.solve(sub, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
    r_fail = min(max(trust * cfg.beta_fail, cfg.r_min), cfg.r_max)
    if sol.status == qp.INFEASIBLE or \
            (sol.status == qp.MAX_ITER and sub.violation(sol.x) > FEASIBILITY_TOL):
        log.debug("Rejected: agent %d QP %s, r=%.3g", p.index, sol.status, r_fail)
        return w_prev, np.inf, False, r_fail

    wf = w_prev.flatten()
    cand = TrajectoryVars.unflatten(wf + sol.x, H)
    if not p.bounds.contains(cand.controls):
        log.warning("Rejected: agent %d controls outside their bounds by %.3g", p.index,
                    np.max(np.maximum(p.bounds.lower - cand.controls, cand.controls - p.bounds.upper)))
        return w_prev, np.inf, False, r_fail
    actual = penalized_cost(p, cand, cfg.lam, cfg.tau, c)
    predicted = predicted_cost(p, w_prev, sol.x, cfg.lam, cfg.tau, c)
    delta = actual - predicted
    accepted, r_new = trust_update(delta, trust, cfg)
    log.debug("Trust: agent %d delta=%.3g accepted=%s r=%.3g", p.index, delta, accepted, r_new)
    return (cand if accepted else w_prev), delta, accepted, r_new


def ladmm_w_step(p, target, rho, warm, cfg=None, constraints=None, status=None):
    """
    local L-ADMM update: minimise f_i(w) + rho/2 |F w - target|^2 over C_i

    Solved with SLSQP from the warm start. The states of the result are
    recomputed from its controls so the dynamics hold exactly; the result
    is kept only when it is feasible and improves on warm. When SLSQP
    stops at its iteration cap the better of the two is kept and the
    event counted in status['inner_failures'], or with
    cfg.inner_failure == 'raise' a SubproblemFailure carries it.

    :raises SubproblemFailure: neither the result nor warm is feasible
    """
    cfg = cfg or AdmmConfig()
    c = constraints or build_agent_constraints(p)
    H = p.horizon
    P, q, const = p.cost_quadratic()
    idx = p.final_index()
    target = np.asarray(target, dtype=float)
    reg_rows, reg_off = c.region
    b = p.bounds

    def fun(wf):
        e = wf[idx] - target
        return 0.5 * wf.dot(P).dot(wf) + q.dot(wf) + const + 0.5 * rho * e.dot(e)

    def jac(wf):
        grad = P.dot(wf) + q
        grad[idx] += rho * (wf[idx] - target)
        return grad

    constraints_list = [{'type': 'eq', 'fun': c.g, 'jac': c.g_jacobian}]
    if reg_off.size:
        constraints_list.append({'type': 'ineq',
                                 'fun': lambda wf: reg_off - reg_rows.dot(wf),
                                 'jac': lambda wf: -reg_rows})
    bounds = [(None, None)] * (3 * H) + \
        [(b.v_min + BOX_MARGIN, b.v_max - BOX_MARGIN),
         (b.omega_min + BOX_MARGIN, b.omega_max - BOX_MARGIN)] * H

    def feasible(w):
        dyn, ineq = c.violation(w)
        return dyn <= FEASIBILITY_TOL and ineq <= FEASIBILITY_TOL and b.contains(w.controls)

    res = minimize(fun, warm.flatten(), jac=jac, method='SLSQP', bounds=bounds,
                   constraints=constraints_list,
                   options={'maxiter': cfg.inner_max_iter, 'ftol': 1e-12})
    cand = TrajectoryVars.from_controls(p.start_state, res.x[3 * H:].reshape(H, 2), p.dt)
    improved = feasible(cand) and fun(cand.flatten()) < fun(warm.flatten())
    if not res.success:
        best = cand if improved or not feasible(warm) else warm
        if cfg.inner_failure == 'raise':
            raise SubproblemFailure("Agent %d: SLSQP stopped (%s)" % (p.index, res.message),
                                    agent=p.index, best=best)
        log.warning("SLSQP: agent %d stopped after %d iterations (%s), keeping the %s",
                    p.index, res.nit, res.message, 'result' if improved else 'warm start')
        if status is not None:
            status['inner_failures'] = status.get('inner_failures', 0) + 1
    if improved:
        return cand
    if feasible(warm):
        return warm
    raise SubproblemFailure("Agent %d: no feasible local solution (%s)" % (p.index, res.message),
                            agent=p.index, best=cand)


class AgentWorker(object):
    """
    local state of one agent: its problem, its current w and the
    update it runs on every query point
    """

    def __init__(self, problem, cfg):
        self.problem = problem
        self.cfg = cfg
        self.constraints = build_agent_constraints(problem)
        self.w = problem.hold()

    def update(self, target, rho):
        raise NotImplementedError

    def handle(self, target, rho):
        """
        answer a query point with (v_i, J_i)
        """
        self.update(target, rho)
        J = penalized_cost(self.problem, self.w, self.cfg.lam, self.cfg.tau, self.constraints)
        return self.w.final_position, J

    def status(self):
        return {}


class LadmmAgent(AgentWorker):

    def __init__(self, problem, cfg):
        super(LadmmAgent, self).__init__(problem, cfg)
        self.counts = {'inner_failures': 0}

    def update(self, target, rho):
        self.w = ladmm_w_step(self.problem, target, rho, self.w, self.cfg, self.constraints,
                              self.counts)

    def status(self):
        return dict(self.counts)


class ScadmmAgent(AgentWorker):

    def __init__(self, problem, cfg):
        super(ScadmmAgent, self).__init__(problem, cfg)
        self.radius = cfg.r_init
        self.accepted = 0
        self.rejected = 0

    def update(self, target, rho):
        self.w, _, accepted, self.radius = scadmm_w_step(
            self.problem, self.w, target, rho, self.radius, self.cfg, self.constraints)
        if accepted:
            self.accepted += 1
        else:
            self.rejected += 1

    def status(self):
        return {'radius': self.radius, 'accepted': self.accepted, 'rejected': self.rejected}


class ConsensusState(object):
    """
    iterates of the central station
    z_history[k], v_history[k] and mu_history[k] are the values after
    iteration k + 1, residual_history[k] = |z_history[k] - v_history[k]|
    """

    def __init__(self, z, mu):
        self.z = z
        self.mu = mu
        self.w = []
        self.residual_history = []
        self.objective_history = []
        self.z_history = []
        self.v_history = []
        self.mu_history = []
        self.messages_sent = None
        self.messages_received = None
        self.agent_status = []
        self.wall_ms = 0.

    @property
    def iterations(self):
        return len(self.residual_history)

    def record(self, z, v, mu, objective):
        self.z, self.mu = z, mu
        self.z_history.append(z.copy())
        self.v_history.append(v.copy())
        self.mu_history.append(mu.copy())
        self.residual_history.append(float(np.linalg.norm(z - v)))
        self.objective_history.append(objective)


class SolverTrace(object):
    """
    exported record of one consensus solve
    """

    def __init__(self, state, method, mode):
        self.iterations = state.iterations
        self.residuals = list(state.residual_history)
        self.objectives = list(state.objective_history)
        self.wall_ms = state.wall_ms
        self.mode = mode
        self.method = method

    def to_dict(self):
        return {'iterations': self.iterations, 'residuals': self.residuals,
                'objectives': self.objectives, 'wall_ms': self.wall_ms,
                'mode': self.mode, 'method': self.method}

    def to_json(self, filename):
        with open(filename, 'w') as f:
            json.dump(self.to_dict(), f, indent=1)


class _LocalStation(object):
    """runs the agents in the calling process, in index order"""

    def __init__(self, agents):
        self.agents = agents

    def query(self, targets, rho):
        return [agent.handle(t, rho) for agent, t in zip(self.agents, targets)]

    def finish(self):
        return [a.w for a in self.agents], [a.status() for a in self.agents]

    def close(self):
        pass


def _agent_process(pipe, agents):
    """
    worker loop hosting a group of agents
    messages in: ('query', {i: target}, rho) and ('finish',)
    """
    while True:
        try:
            msg = pipe.recv()
        except EOFError:
            break
        if msg[0] == 'query':
            _, targets, rho = msg
            replies = {}
            try:
                for i in sorted(targets):
                    replies[i] = agents[i].handle(targets[i], rho)
            except SubproblemFailure as e:
                pipe.send(('error', e.agent, str(e), e.best))
                continue
            pipe.send(('v', replies))
        elif msg[0] == 'finish':
            pipe.send(('w', dict((i, (a.w, a.status())) for i, a in agents.items())))
            break
    pipe.close()


class _DistributedStation(object):
    """
    runs the agents in worker processes connected by pipes
    agent i lives on worker i % workers; replies are reduced in index order
    """

    def __init__(self, agents, workers=None):
        M = len(agents)
        workers = min(workers or M, M)
        self.M = M
        self.groups = [dict((i, agents[i]) for i in range(k, M, workers)) for k in range(workers)]
        self.pipes = []
        self.procs = []
        for group in self.groups:
            local, remote = multiprocessing.Pipe()
            proc = multiprocessing.Process(target=_agent_process, args=(remote, group))
            proc.daemon = True
            proc.start()
            remote.close()
            self.pipes.append(local)
            self.procs.append(proc)

    def query(self, targets, rho):
        for group, pipe in zip(self.groups, self.pipes):
            pipe.send(('query', dict((i, targets[i]) for i in group), rho))
        replies = {}
        failure = None
        for pipe in self.pipes:
            msg = pipe.recv()
            if msg[0] == 'error':
                failure = failure or msg
            else:
                replies.update(msg[1])
        if failure is not None:
            _, agent, message, best = failure
            raise SubproblemFailure(message, agent=agent, best=best)
        return [replies[i] for i in range(self.M)]

    def finish(self):
        result = {}
        for pipe in self.pipes:
            pipe.send(('finish',))
        for pipe in self.pipes:
            result.update(pipe.recv()[1])
        return ([result[i][0] for i in range(self.M)],
                [result[i][1] for i in range(self.M)])

    def close(self):
        for pipe in self.pipes:
            pipe.close()
        for proc in self.procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()


class ConsensusSolver(object):
    """Base class of the consensus ADMM solvers that provides the
    central station loop and the centralized and distributed schedules

    :param cfg: AdmmConfig
    :param mode: 'centralized' (alias 'central') or 'distributed'
    :param workers: number of worker processes in distributed mode,
                    default one per agent
    """

    method = None
    agent_class = AgentWorker

    def __init__(self, cfg=None, mode=CENTRALIZED, workers=None):
        self.cfg = cfg or AdmmConfig()
        self.mode = mode
        self.workers = workers

    @property
    def mode(self):
        return self._mode

    @mode.setter
    def mode(self, mode):
        if mode in ['centralized', 'central']:
            self._mode = CENTRALIZED
        elif mode in ['distributed']:
            self._mode = DISTRIBUTED
        else:
            raise ValueError("Unknown mode: %s" % mode)

    def _station(self, agents):
        if self.mode == DISTRIBUTED:
            return _DistributedStation(agents, self.workers)
        return _LocalStation(agents)

    def solve(self, problems, gp, domain=None):
        """
        run the consensus iterations
        :param problems: list of AgentProblem in agent index order
        :param gp: GaussianProcess providing f_0 and its gradient
        :param domain: optional Rectangle the z-step is clamped to
        :returns: (ConsensusState, list of TrajectoryVars)
        """
        cfg = self.cfg
        M = len(problems)
        rho, L = cfg.rho, cfg.lipschitz
        z = np.concatenate([p.start_state.position for p in problems])
        mu = np.zeros(2 * M)
        state = ConsensusState(z, mu)
        state.messages_sent = np.zeros(M, dtype=int)
        state.messages_received = np.zeros(M, dtype=int)
        agents = [self.agent_class(p, cfg) for p in problems]

        t0 = perf_counter()
        station = self._station(agents)
        try:
            for k in range(1, int(cfg.k_max) + 1):
                targets = (z + mu / rho).reshape(M, 2)
                state.messages_sent += 1
                try:
                    replies = station.query(targets, rho)
                except SubproblemFailure as e:
                    e.iteration = k
                    raise
                state.messages_received += 1
                v = np.concatenate([r[0] for r in replies])
                grad = gp.grad_neg_log_det(v)
                z = z_step(v, mu, rho, L, grad, domain)
                mu = dual_step(mu, z, v, rho)
                J = gp.neg_log_det(z.reshape(M, 2)) + sum(r[1] for r in replies)
                state.record(z, v, mu, float(J))
                log.debug("Iteration: %s %d res=%.3e J=%.6g", self.method, k,
                          state.residual_history[-1], J)
                if state.residual_history[-1] < cfg.eps_res:
                    break
            state.w, state.agent_status = station.finish()
        finally:
            station.close()
        state.wall_ms = 1e3 * (perf_counter() - t0)
        log.info("Solved: %s %s k=%d res=%.2e %.1f ms", self.method, self.mode,
                 state.iterations, state.residual_history[-1], state.wall_ms)
        return state, state.w

    def trace(self, state):
        return SolverTrace(state, self.method, self.mode)


class LinearizedADMM(ConsensusSolver):
    """L-ADMM: exact local updates, linearised z-step"""
    method = 'ladmm'
    agent_class = LadmmAgent


class SuccessiveConvexADMM(ConsensusSolver):
    """SC-ADMM: one trust region convex subproblem per local update"""
    method = 'scadmm'
    agent_class = ScadmmAgent


def make_solver(method, cfg=None, mode=CENTRALIZED, workers=None):
    if method == 'ladmm':
        return LinearizedADMM(cfg, mode, workers)
    elif method == 'scadmm':
        return SuccessiveConvexADMM(cfg, mode, workers)
    raise ValueError("Unknown method: %s" % method)


def run_ladmm(problems, gp, cfg=None, mode=CENTRALIZED, domain=None):
    return LinearizedADMM(cfg, mode).solve(problems, gp, domain)


def run_scadmm(problems, gp, cfg=None, mode=CENTRALIZED, domain=None):
    return SuccessiveConvexADMM(cfg, mode).solve(problems, gp, domain)
