import numpy as np

from admmsampling.geometry import contains
from admmsampling.vehicle import (RobotState, ControlInput, ControlBounds, CostWeights,
                                  rollout_array, step_array, linearize_horizon,
                                  control_cost, control_cost_quadratic)

__all__ = ['TrajectoryVars', 'AgentProblem', 'AgentConstraints',
           'build_agent_constraints', 'penalized_cost', 'predicted_cost',
           'objective']


class TrajectoryVars(object):
    """
    horizon variables w_i of one agent
    :param states: H x 3 array of states at t+1..t+H
    :param controls: H x 2 array of controls at t..t+H-1
    """

    def __init__(self, states, controls):
        self.states = np.array(states, dtype=float).reshape(-1, 3)
        self.controls = np.array(controls, dtype=float).reshape(-1, 2)
        if self.states.shape[0] != self.controls.shape[0]:
            raise ValueError("TrajectoryVars has %d states but %d controls"
                             % (self.states.shape[0], self.controls.shape[0]))

    @property
    def horizon(self):
        return self.states.shape[0]

    @property
    def final_position(self):
        """F_i w_i, the position at t+H"""
        return self.states[-1, :2].copy()

    @property
    def positions(self):
        return self.states[:, :2]

    def flatten(self):
        """[states row-major, controls row-major]"""
        return np.concatenate([self.states.ravel(), self.controls.ravel()])

    @classmethod
    def unflatten(cls, w, H):
        w = np.asarray(w, dtype=float)
        return cls(w[:3 * H].reshape(H, 3), w[3 * H:].reshape(H, 2))

    @classmethod
    def hold(cls, start, H):
        """zero controls with every state equal to the start state"""
        x0 = start.to_array() if isinstance(start, RobotState) else np.asarray(start)
        return cls(np.tile(x0, (H, 1)), np.zeros((H, 2)))

    @classmethod
    def from_controls(cls, start, controls, dt):
        """dynamically consistent trajectory for the given controls"""
        x0 = start.to_array() if isinstance(start, RobotState) else np.asarray(start)
        return cls(rollout_array(x0, controls, dt), controls)

    def copy(self):
        return TrajectoryVars(self.states.copy(), self.controls.copy())


class AgentProblem(object):
    """
    data of the local problem of agent i at one measurement step
    :param index: agent index i
    :param start_state: RobotState x_{i,t}
    :param u_prev: ControlInput applied before t
    :param region: Polytope Omega_{i,t}
    :param bounds: ControlBounds
    :param weights: CostWeights
    :param horizon: H
    :param dt: sampling time
    """

    def __init__(self, index, start_state, u_prev=None, region=None, bounds=None,
                 weights=None, horizon=10, dt=0.2):
        if horizon < 1:
            raise ValueError("Horizon must be at least 1, got %r" % horizon)
        if not dt > 0:
            raise ValueError("dt must be positive, got %r" % dt)
        self.index = index
        self.start_state = start_state
        self.u_prev = u_prev if u_prev is not None else ControlInput()
        self.region = region
        self.bounds = bounds if bounds is not None else ControlBounds()
        self.weights = weights if weights is not None else CostWeights()
        self.horizon = horizon
        self.dt = dt
        if region is not None and not contains(region, start_state.position, 1e-6):
            raise ValueError("Agent %d starts outside its movement region" % index)

    @property
    def nvars(self):
        return 5 * self.horizon

    def final_index(self):
        """indices of s_{i,t+H} in the flattened w"""
        k = 3 * (self.horizon - 1)
        return np.array([k, k + 1])

    def hold(self):
        return TrajectoryVars.hold(self.start_state, self.horizon)

    def control_cost(self, w):
        return control_cost(w.controls, self.u_prev, self.weights)

    def apply(self, controls, tol=1e-6):
        """
        roll the controls out from the start state; from the first step whose
        position leaves the region the robot holds still instead
        :returns: (H x 3 states, H x 2 applied controls, number of held steps)
        """
        controls = np.array(controls, dtype=float).reshape(-1, 2)
        x0 = self.start_state.to_array()
        states = rollout_array(x0, controls, self.dt)
        if self.region is None:
            return states, controls, 0
        inside = [contains(self.region, s[:2], tol) for s in states]
        if all(inside) or not self.bounds.contains(np.zeros(2)):
            return states, controls, 0
        first = inside.index(False)
        controls[first:] = 0.
        return rollout_array(x0, controls, self.dt), controls, self.horizon - first

    def cost_quadratic(self):
        """
        f_i as 1/2 w^T P w + q^T w + const on the flattened w
        """
        H = self.horizon
        Pu, qu, const = control_cost_quadratic(H, self.u_prev, self.weights)
        P = np.zeros((5 * H, 5 * H))
        P[3 * H:, 3 * H:] = Pu
        q = np.zeros(5 * H)
        q[3 * H:] = qu
        return P, q, const


class AgentConstraints(object):
    """
    constraint set C_{i,t} of one agent
    g(w) = 0: 3H dynamics residuals x_{j+1} - f_d(x_j, u_j)
    h(w) = G w - d <= 0: per step the box rows
    [v - v_max, omega - omega_max, v_min - v, omega_min - omega]
    followed by the region rows of the positions at t+1..t+H
    """

    def __init__(self, problem):
        self.problem = problem
        H = problem.horizon
        self.x0 = np.array([problem.start_state.x, problem.start_state.y,
                            problem.start_state.heading])
        b = problem.bounds
        box_rows = np.zeros((4 * H, 5 * H))
        box_off = np.zeros(4 * H)
        for j in range(H):
            iv, iw = 3 * H + 2 * j, 3 * H + 2 * j + 1
            r = 4 * j
            box_rows[r, iv], box_off[r] = 1., b.v_max
            box_rows[r + 1, iw], box_off[r + 1] = 1., b.omega_max
            box_rows[r + 2, iv], box_off[r + 2] = -1., -b.v_min
            box_rows[r + 3, iw], box_off[r + 3] = -1., -b.omega_min
        self.box = (box_rows, box_off)
        if problem.region is not None:
            Ar, br = problem.region.A, problem.region.b
            nf = Ar.shape[0]
            reg_rows = np.zeros((nf * H, 5 * H))
            reg_off = np.zeros(nf * H)
            for j in range(H):
                reg_rows[nf * j:nf * (j + 1), 3 * j:3 * j + 2] = Ar
                reg_off[nf * j:nf * (j + 1)] = br
        else:
            reg_rows, reg_off = np.zeros((0, 5 * H)), np.zeros(0)
        self.region = (reg_rows, reg_off)
        self.G = np.vstack([box_rows, reg_rows])
        self.d = np.concatenate([box_off, reg_off])

    @property
    def num_equalities(self):
        return 3 * self.problem.horizon

    @property
    def num_inequalities(self):
        return self.G.shape[0]

    def _split(self, w):
        if isinstance(w, TrajectoryVars):
            return w.states, w.controls
        H = self.problem.horizon
        w = np.asarray(w, dtype=float)
        return w[:3 * H].reshape(H, 3), w[3 * H:].reshape(H, 2)

    def g(self, w):
        """dynamics residuals, length 3H"""
        states, controls = self._split(w)
        prev = np.vstack([self.x0, states[:-1]])
        f = step_array(prev, controls, self.problem.dt)
        return (states - f).ravel()

    def g_jacobian(self, w):
        """3H x 5H Jacobian of g"""
        states, controls = self._split(w)
        H = self.problem.horizon
        prev = np.vstack([self.x0, states[:-1]])
        A, B = linearize_horizon(prev, controls, self.problem.dt)
        J = np.zeros((3 * H, 5 * H))
        J[:, :3 * H] = np.eye(3 * H)
        for j in range(H):
            if j > 0:
                J[3 * j:3 * j + 3, 3 * (j - 1):3 * j] = -A[j]
            J[3 * j:3 * j + 3, 3 * H + 2 * j:3 * H + 2 * j + 2] = -B[j]
        return J

    def h(self, w):
        """inequality values, feasible where <= 0"""
        if isinstance(w, TrajectoryVars):
            w = w.flatten()
        return self.G.dot(w) - self.d

    def violation(self, w):
        """(max |g|, max positive part of h)"""
        h = self.h(w)
        return (float(np.max(np.abs(self.g(w)))),
                float(max(0., np.max(h))) if h.size else 0.)


def build_agent_constraints(p):
    return AgentConstraints(p)


def penalized_cost(p, w, lam=1e6, tau=1e6, constraints=None):
    """
    actual cost J_i: f_i plus the exact L1 and hinge penalties
    """
    c = constraints or build_agent_constraints(p)
    if not isinstance(w, TrajectoryVars):
        w = TrajectoryVars.unflatten(w, p.horizon)
    return (p.control_cost(w) + lam * np.sum(np.abs(c.g(w))) +
            tau * np.sum(np.maximum(0., c.h(w))))


def predicted_cost(p, w, delta, lam=1e6, tau=1e6, constraints=None):
    """
    predicted cost J~_i(delta): f_i at w + delta with the penalties of
    the constraints linearised at w
    """
    c = constraints or build_agent_constraints(p)
    wf = w.flatten() if isinstance(w, TrajectoryVars) else np.asarray(w, dtype=float)
    delta = np.asarray(delta, dtype=float)
    g_lin = c.g(wf) + c.g_jacobian(wf).dot(delta)
    h_lin = c.h(wf) + c.G.dot(delta)
    new = TrajectoryVars.unflatten(wf + delta, p.horizon)
    return (p.control_cost(new) + lam * np.sum(np.abs(g_lin)) +
            tau * np.sum(np.maximum(0., h_lin)))


def objective(gp, z, problems, ws, lam=1e6, tau=1e6):
    """
    penalised team objective f_0(z) + sum_i J_i(w_i)
    :param gp: GaussianProcess conditioned on the current data
    :param z: consensus vector of the next sampling positions
    """
    total = gp.neg_log_det(np.reshape(z, (-1, 2)))
    for p, w in zip(problems, ws):
        total += penalized_cost(p, w, lam, tau)
    return float(total)
