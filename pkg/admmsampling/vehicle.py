import numpy as np
from sympy import symbols, Matrix, cos, sin, lambdify

__all__ = ['RobotState', 'ControlInput', 'CostWeights', 'ControlBounds',
           'wrap_angle', 'step', 'step_array', 'rollout', 'rollout_array', 'linearize',
           'linearize_horizon', 'control_cost', 'control_cost_quadratic']

# Discrete unicycle model, the heading is updated after the position
_x, _y, _theta, _v, _omega, _dt = symbols('x y theta v omega dt')
_state = Matrix([_x, _y, _theta])
_control = Matrix([_v, _omega])
f_d = Matrix([_x + _dt * cos(_theta) * _v,
              _y + _dt * sin(_theta) * _v,
              _theta + _dt * _omega])


def _vectorize(expr):
    """
    lambdify every entry of a sympy matrix and broadcast the results
    so array arguments produce a (..., rows, cols) array
    """
    args = (_x, _y, _theta, _v, _omega, _dt)
    entries = [[lambdify(args, e, 'numpy') for e in row]
               for row in expr.tolist()]

    def evaluate(*values):
        shape = np.broadcast(*values).shape
        return np.stack([np.stack([np.broadcast_to(np.asarray(f(*values), dtype=float), shape)
                                   for f in row], axis=-1)
                         for row in entries], axis=-2)
    return evaluate


_f_num = _vectorize(f_d)
_A_num = _vectorize(f_d.jacobian(_state))
_B_num = _vectorize(f_d.jacobian(_control))


def wrap_angle(a):
    """normalise an angle to (-pi, pi]"""
    return np.pi - np.mod(np.pi - a, 2. * np.pi)


class RobotState(object):
    """
    planar pose of a unicycle robot
    :param x: position in meters
    :param y: position in meters
    :param heading: orientation in radians, stored in (-pi, pi]
    """

    def __init__(self, x, y, heading=0.):
        self.x = float(x)
        self.y = float(y)
        self.heading = float(wrap_angle(heading))

    @property
    def position(self):
        return np.array([self.x, self.y])

    def to_array(self):
        return np.array([self.x, self.y, self.heading])

    @classmethod
    def from_array(cls, a):
        return cls(a[0], a[1], a[2])

    def __repr__(self):
        return "RobotState(%.4f, %.4f, %.4f)" % (self.x, self.y, self.heading)


class ControlInput(object):
    """
    forward speed v (m/s) and turn rate omega (rad/s)
    """

    def __init__(self, v=0., omega=0.):
        self.v = float(v)
        self.omega = float(omega)

    def to_array(self):
        return np.array([self.v, self.omega])

    @classmethod
    def from_array(cls, a):
        return cls(a[0], a[1])

    def __repr__(self):
        return "ControlInput(%.4f, %.4f)" % (self.v, self.omega)


class ControlBounds(object):
    """
    box U_i on the control inputs
    """

    def __init__(self, v_min=-2., v_max=2., omega_min=-np.pi, omega_max=np.pi):
        if not (v_min <= v_max and omega_min <= omega_max):
            raise ValueError("Control bounds are empty: v in [%g, %g], omega in [%g, %g]"
                             % (v_min, v_max, omega_min, omega_max))
        self.v_min = float(v_min)
        self.v_max = float(v_max)
        self.omega_min = float(omega_min)
        self.omega_max = float(omega_max)

    @property
    def lower(self):
        return np.array([self.v_min, self.omega_min])

    @property
    def upper(self):
        return np.array([self.v_max, self.omega_max])

    def contains(self, controls, tol=0.):
        u = np.reshape(controls, (-1, 2))
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


class CostWeights(object):
    """
    :param Q: 2x2 PSD velocity weight
    :param R: 2x2 PSD acceleration weight
    """

    def __init__(self, Q=None, R=None):
        self.Q = np.diag([0.01, 0.01]) if Q is None else np.array(Q, dtype=float)
        self.R = np.eye(2) if R is None else np.array(R, dtype=float)
        for name, W in [('Q', self.Q), ('R', self.R)]:
            if W.shape != (2, 2):
                raise ValueError("Weight %s must be 2x2, got %s" % (name, W.shape))
            if not np.allclose(W, W.T, atol=1e-12):
                raise ValueError("Weight %s must be symmetric" % name)
            if np.min(np.linalg.eigvalsh(W)) < -1e-12:
                raise ValueError("Weight %s must be positive semidefinite" % name)


def step(s, u, dt):
    """
    advance a RobotState by one sampling period
    """
    if not dt > 0:
        raise ValueError("dt must be positive, got %r" % dt)
    x = _f_num(s.x, s.y, s.heading, u.v, u.omega, dt)[:, 0]
    return RobotState(x[0], x[1], x[2])


def step_array(states, controls, dt):
    """
    f_d applied row by row to N x 3 states and N x 2 controls
    """
    states = np.reshape(states, (-1, 3))
    controls = np.reshape(controls, (-1, 2))
    return _f_num(states[:, 0], states[:, 1], states[:, 2],
                  controls[:, 0], controls[:, 1], dt)[..., 0]


def rollout_array(x0, controls, dt):
    """
    states at t+1..t+H for an H x 2 control array, headings are not wrapped
    :param x0: length 3 start state array
    :returns: H x 3 array
    """
    controls = np.reshape(controls, (-1, 2))
    states = np.empty((controls.shape[0], 3))
    x = np.asarray(x0, dtype=float)
    for j, (v, omega) in enumerate(controls):
        x = _f_num(x[0], x[1], x[2], v, omega, dt)[:, 0]
        states[j] = x
    return states


def rollout(s0, controls, dt):
    """
    iterate step over a sequence of ControlInput
    """
    if len(controls) < 1:
        raise ValueError("rollout needs at least one control")
    states = []
    s = s0
    for u in controls:
        s = step(s, u, dt)
        states.append(s)
    return states


def linearize(s, u, dt):
    """
    Jacobians of the discrete model at (s, u)
    :returns: (A 3x3, B 3x2)
    """
    if not dt > 0:
        raise ValueError("dt must be positive, got %r" % dt)
    args = (s.x, s.y, s.heading, u.v, u.omega, dt)
    return _A_num(*args), _B_num(*args)


def linearize_horizon(states, controls, dt):
    """
    Jacobians along a trajectory, evaluated at the pairs (states[j], controls[j])
    :param states: H x 3 array of expansion states
    :param controls: H x 2 array
    :returns: (A H x 3 x 3, B H x 3 x 2)
    """
    states = np.reshape(states, (-1, 3))
    controls = np.reshape(controls, (-1, 2))
    args = (states[:, 0], states[:, 1], states[:, 2],
            controls[:, 0], controls[:, 1], dt)
    return _A_num(*args), _B_num(*args)


def _difference_operator(H):
    """matrix D with (D u)_j = u_j - u_{j-1}, u_{-1} excluded"""
    D = np.eye(2 * H)
    D[2:, :-2] -= np.eye(2 * H - 2)
    return D


def control_cost(controls, u_prev, w):
    """
    sum_j |u_j|_Q^2 + |u_j - u_{j-1}|_R^2 with u_{-1} = u_prev
    :param controls: sequence of ControlInput or H x 2 array
    """
    u = np.array([c.to_array() if isinstance(c, ControlInput) else c for c in controls],
                 dtype=float).reshape(-1, 2)
    if u.shape[0] < 1:
        raise ValueError("control_cost needs at least one control")
    prev = u_prev.to_array() if isinstance(u_prev, ControlInput) else np.asarray(u_prev)
    du = np.diff(np.vstack([prev, u]), axis=0)
    return float(np.einsum('ja,ab,jb->', u, w.Q, u) + np.einsum('ja,ab,jb->', du, w.R, du))


def control_cost_quadratic(H, u_prev, w):
    """
    control_cost as 1/2 u^T P u + q^T u + const over the flattened controls
    :returns: (P 2H x 2H, q 2H, const)
    """
    prev = u_prev.to_array() if isinstance(u_prev, ControlInput) else np.asarray(u_prev)
    D = _difference_operator(H)
    blkQ = np.kron(np.eye(H), w.Q)
    blkR = np.kron(np.eye(H), w.R)
    c = np.zeros(2 * H)
    c[:2] = prev
    P = 2. * (blkQ + D.T.dot(blkR).dot(D))
    q = -2. * D.T.dot(blkR).dot(c)
    const = c.dot(blkR).dot(c)
    return P, q, const
