import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

__all__ = ['PenaltyTerms', 'ConvexSubproblem', 'StandardQP', 'QpSolution',
           'reformulate', 'solve_qp', 'solve', 'OPTIMAL', 'MAX_ITER', 'INFEASIBLE']

log = logging.getLogger(__name__)

OPTIMAL = 'optimal'
MAX_ITER = 'max-iter'
INFEASIBLE = 'infeasible'

# Operator splitting settings
RHO = 1.0
RHO_EQ_SCALE = 1e3
RHO_MIN = 1e-6
SIGMA = 1e-6
ALPHA = 1.6
SCALING_ITER = 10
SCALING_MIN = 1e-4
SCALING_MAX = 1e4
POLISH_EVERY = 25
POLISH_DELTA = 1e-6
POLISH_REFINE = 3
EPS_INFEASIBLE = 1e-5
EXACT_TOL_SCALE = 1e-2
EXACT_MAX_ITER = 5000


class PenaltyTerms(object):
    """
    k weighted terms weight_j * phi(rows_j . x + offsets_j)
    :param weights: length k positive weights
    :param rows: k x n matrix
    :param offsets: length k vector
    """

    def __init__(self, weights, rows, offsets):
        self.weights = np.array(weights, dtype=float).ravel()
        self.offsets = np.array(offsets, dtype=float).ravel()
        k = self.weights.shape[0]
        self.rows = np.array(rows, dtype=float).reshape(k, -1) if k else np.zeros((0, 0))
        if self.offsets.shape[0] != k:
            raise ValueError("PenaltyTerms has %d weights but %d offsets" % (k, self.offsets.shape[0]))
        if np.any(self.weights <= 0):
            raise ValueError("Penalty weights must be positive")

    @classmethod
    def empty(cls):
        return cls([], [], [])

    @classmethod
    def from_list(cls, terms, n):
        """
        build from a list of (weight, row, offset) triples
        """
        if not terms:
            return cls([], np.zeros((0, n)), [])
        weights, rows, offsets = zip(*terms)
        return cls(weights, np.vstack(rows), offsets)

    def __len__(self):
        return self.weights.shape[0]

    def values(self, x):
        if len(self) == 0:
            return np.zeros(0)
        return self.rows.dot(x) + self.offsets

    def normalized(self):
        """
        rescale every row to unit norm, folding the norm into the weight
        zero rows become constants
        :returns: (PenaltyTerms, list of (weight, constant value) for zero rows)
        """
        keep, constants = [], []
        for w, a, b in zip(self.weights, self.rows, self.offsets):
            norm = np.linalg.norm(a)
            if norm == 0.:
                constants.append((w, b))
            else:
                keep.append((w * norm, a / norm, b / norm))
        n = self.rows.shape[1] if self.rows.ndim == 2 else 0
        return PenaltyTerms.from_list(keep, n), constants


class ConvexSubproblem(object):
    """
    min 1/2 x^T P x + q^T x + const + sum l1 |a x + b| + sum hinge max(0, a x + b)
    s.t. eq rows A x = b, ineq rows A x <= b and |x|_inf <= trust

    :param P: n x n PSD matrix
    :param q: length n vector
    :param l1: PenaltyTerms with absolute value penalties
    :param hinge: PenaltyTerms with hinge penalties
    :param eq: (A, b) equality rows or None
    :param ineq: (A, b) inequality rows or None
    :param trust: trust region radius, None for no bound
    """

    def __init__(self, P, q, l1=None, hinge=None, eq=None, ineq=None,
                 trust=None, const=0.):
        self.P = np.array(P, dtype=float)
        self.q = np.array(q, dtype=float).ravel()
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError("P has shape %s, expected %s" % (self.P.shape, (n, n)))
        if not np.allclose(self.P, self.P.T, atol=1e-8):
            raise ValueError("P must be symmetric")
        self.l1 = l1 if l1 is not None else PenaltyTerms.from_list([], n)
        self.hinge = hinge if hinge is not None else PenaltyTerms.from_list([], n)
        self.eq = self._rows(eq, n)
        self.ineq = self._rows(ineq, n)
        if trust is not None and not trust > 0:
            raise ValueError("Trust radius must be positive, got %r" % trust)
        self.trust = trust
        self.const = float(const)

    @staticmethod
    def _rows(rows, n):
        if rows is None:
            return np.zeros((0, n)), np.zeros(0)
        A, b = rows
        return np.array(A, dtype=float).reshape(-1, n), np.array(b, dtype=float).ravel()

    @property
    def n(self):
        return self.q.shape[0]

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        val = 0.5 * x.dot(self.P).dot(x) + self.q.dot(x) + self.const
        val += np.sum(self.l1.weights * np.abs(self.l1.values(x)))
        val += np.sum(self.hinge.weights * np.maximum(0., self.hinge.values(x)))
        return float(val)

    def violation(self, x):
        """largest violation of the explicit constraints at x"""
        x = np.asarray(x, dtype=float)
        viol = [0.]
        if self.eq[1].size:
            viol.append(np.max(np.abs(self.eq[0].dot(x) - self.eq[1])))
        if self.ineq[1].size:
            viol.append(np.max(self.ineq[0].dot(x) - self.ineq[1]))
        if self.trust is not None:
            viol.append(np.max(np.abs(x)) - self.trust)
        return float(max(viol))


class StandardQP(object):
    """
    min 1/2 x^T P x + q^T x + const  s.t. l <= A x <= u
    the first n_orig entries of x are the original variables
    """

    def __init__(self, P, q, A, l, u, n_orig=None, const=0.):
        self.P = P
        self.q = q
        self.A = A
        self.l = l
        self.u = u
        self.n_orig = q.shape[0] if n_orig is None else n_orig
        self.const = const

    def __iter__(self):
        return iter((self.P, self.q, self.A, self.l, self.u))


class QpSolution(object):

    def __init__(self, x, objective, status, iterations=0, y=None, polished=False):
        self.x = x
        self.objective = objective
        self.status = status
        self.iterations = iterations
        self.y = y
        self.polished = polished

    def __repr__(self):
        return "QpSolution(status=%s, objective=%.6g, iterations=%d)" % (
            self.status, self.objective, self.iterations)


def reformulate(p):
    """
    epigraph form of a ConvexSubproblem as a standard QP
    one slack t_j per L1 term (t_j >= +-(a x + b)) and per hinge term
    (t_j >= 0, t_j >= a x + b), the trust bound becomes box rows
    """
    n = p.n
    l1, const_l1 = p.l1.normalized()
    hinge, const_hinge = p.hinge.normalized()
    const = p.const
    const += sum(w * abs(b) for w, b in const_l1)
    const += sum(w * max(0., b) for w, b in const_hinge)
    k1, k2 = len(l1), len(hinge)
    N = n + k1 + k2

    P = np.zeros((N, N))
    P[:n, :n] = p.P
    q = np.concatenate([p.q, l1.weights, hinge.weights])

    rows, lower, upper = [], [], []

    def add(A, lo, hi):
        rows.append(A)
        lower.append(lo)
        upper.append(hi)

    if k1:
        S = np.zeros((k1, N))
        S[:, :n] = l1.rows
        S[:, n:n + k1] = -np.eye(k1)
        add(S, np.full(k1, -np.inf), -l1.offsets)
        S = np.zeros((k1, N))
        S[:, :n] = l1.rows
        S[:, n:n + k1] = np.eye(k1)
        add(S, -l1.offsets, np.full(k1, np.inf))
    if k2:
        S = np.zeros((k2, N))
        S[:, n + k1:] = np.eye(k2)
        add(S, np.zeros(k2), np.full(k2, np.inf))
        S = np.zeros((k2, N))
        S[:, :n] = hinge.rows
        S[:, n + k1:] = -np.eye(k2)
        add(S, np.full(k2, -np.inf), -hinge.offsets)
    Aeq, beq = p.eq
    if beq.size:
        S = np.zeros((beq.size, N))
        S[:, :n] = Aeq
        add(S, beq, beq)
    Ain, bin_ = p.ineq
    if bin_.size:
        S = np.zeros((bin_.size, N))
        S[:, :n] = Ain
        add(S, np.full(bin_.size, -np.inf), bin_)
    if p.trust is not None:
        S = np.zeros((n, N))
        S[:, :n] = np.eye(n)
        add(S, np.full(n, -p.trust), np.full(n, p.trust))

    if rows:
        A = np.vstack(rows)
        l = np.concatenate(lower)
        u = np.concatenate(upper)
    else:
        A, l, u = np.zeros((0, N)), np.zeros(0), np.zeros(0)
    return StandardQP(P, q, A, l, u, n_orig=n, const=const)


def _equilibrate(P, q, A):
    """
    Ruiz equilibration of the KKT matrix and cost scaling
    :returns: (D, E, c)
    """
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(SCALING_ITER):
        norm_x = np.abs(Ps).max(axis=0) if n else np.zeros(0)
        if m:
            norm_x = np.maximum(norm_x, np.abs(As).max(axis=0))
            norm_y = np.abs(As).max(axis=1)
        else:
            norm_y = np.zeros(0)
        dx = 1. / np.sqrt(np.clip(np.where(norm_x < SCALING_MIN, 1., norm_x), SCALING_MIN, SCALING_MAX))
        ey = 1. / np.sqrt(np.clip(np.where(norm_y < SCALING_MIN, 1., norm_y), SCALING_MIN, SCALING_MAX))
        Ps = dx[:, None] * Ps * dx[None, :]
        As = ey[:, None] * As * dx[None, :]
        D *= dx
        E *= ey
    cost = max(np.mean(np.abs(Ps).max(axis=0)) if n else 0., np.max(np.abs(D * q)) if n else 0.)
    c = 1. / np.clip(cost if cost >= SCALING_MIN else 1., SCALING_MIN, SCALING_MAX)
    return D, E, c


def _polish(P, q, A, l, u, x, z, y, eq):
    """
    solve the KKT system on the active set of an ADMM iterate
    all quantities are scaled
    :returns: (x, y, lower, upper) or None if the reduced system is singular
    """
    n = P.shape[0]
    lower = eq | (z - l < -y)
    upper = eq | (u - z < y)
    lower &= ~upper | eq
    active = np.flatnonzero(lower | upper)
    Ared = A[active]
    b = np.where(upper[active], u[active], l[active])
    k = active.size
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = Ared.T
    K[n:, :n] = Ared
    Kreg = K.copy()
    Kreg[:n, :n] += POLISH_DELTA * np.eye(n)
    Kreg[n:, n:] -= POLISH_DELTA * np.eye(k)
    rhs = np.concatenate([-q, b])
    try:
        factor = lu_factor(Kreg, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    sol = lu_solve(factor, rhs)
    for _ in range(POLISH_REFINE):
        sol += lu_solve(factor, rhs - K.dot(sol))
    if not np.all(np.isfinite(sol)):
        return None
    yp = np.zeros_like(y)
    yp[active] = sol[n:]
    return sol[:n], yp, lower, upper


def solve_qp(P, q, A, l, u, tol=1e-6, max_iter=20000, x0=None):
    """
    operator splitting QP solver for min 1/2 x^T P x + q^T x s.t. l <= A x <= u

    The problem is equilibrated, then iterated with a fixed step and
    over-relaxation; every POLISH_EVERY iterations the active set of the
    current iterate is solved exactly and accepted when its residuals
    meet tol. Primal infeasibility is detected from the dual iterate
    differences.

    :param tol: absolute tolerance on the residuals, with a relative part
                scaled by the data magnitude for unpolished iterates
    :param max_iter: iteration cap
    :param x0: optional initial point
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    n = q.shape[0]
    A = np.asarray(A, dtype=float).reshape(-1, n)
    l = np.asarray(l, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    m = A.shape[0]
    if np.any(l > u):
        raise ValueError("Lower bounds exceed upper bounds")

    D, E, c = _equilibrate(P, q, A)
    Ps = c * D[:, None] * P * D[None, :]
    qs = c * D * q
    As = E[:, None] * A * D[None, :]
    ls = E * l
    us = E * u

    eq = (u - l) < 1e-12
    free = np.isinf(l) & np.isinf(u)
    rho = np.where(eq, RHO_EQ_SCALE * RHO, np.where(free, RHO_MIN, RHO))
    K = Ps + SIGMA * np.eye(n) + As.T.dot(rho[:, None] * As)
    factor = cho_factor(K)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel() / D
    z = np.clip(As.dot(x), ls, us)
    y = np.zeros(m)

    def unscaled(xs, ys):
        return D * xs, E * ys / c

    def residuals(xs, zs, ys):
        xu, yu = unscaled(xs, ys)
        Ax = A.dot(xu)
        zu = zs / E if m else zs
        pri = np.max(np.abs(Ax - zu)) if m else 0.
        Px = P.dot(xu)
        Aty = A.T.dot(yu)
        dua = np.max(np.abs(Px + q + Aty)) if n else 0.
        pri_scale = max(np.max(np.abs(Ax)) if m else 0., np.max(np.abs(zu)) if m else 0.)
        dua_scale = max(np.max(np.abs(Px)), np.max(np.abs(Aty)) if m else 0., np.max(np.abs(q)))
        return pri, dua, pri_scale, dua_scale

    def finish(xs, ys, status, k, polished=False):
        xu, yu = unscaled(xs, ys)
        obj = 0.5 * xu.dot(P).dot(xu) + q.dot(xu)
        if status == INFEASIBLE:
            obj = np.inf
        return QpSolution(xu, obj, status, k, yu, polished)

    def polish(xs, zs, ys):
        result = _polish(Ps, qs, As, ls, us, xs, zs, ys, eq)
        if result is None:
            return None
        xp, yp, lower, upper = result
        xu, yu = unscaled(xp, yp)
        Ax = A.dot(xu)
        pri = np.max(np.maximum(l - Ax, 0.) + np.maximum(Ax - u, 0.)) if m else 0.
        dua = np.max(np.abs(P.dot(xu) + q + A.T.dot(yu))) if n else 0.
        # lower active rows carry y <= 0, upper active rows y >= 0
        sign = (np.all(yu[lower & ~eq] <= tol) and
                np.all(yu[upper & ~eq] >= -tol)) if m else True
        if pri <= tol and dua <= tol and sign:
            return xp, yp
        return None

    for k in range(1, max_iter + 1):
        rhs = SIGMA * x - qs + As.T.dot(rho * z - y)
        x_tilde = cho_solve(factor, rhs)
        z_tilde = As.dot(x_tilde)
        x = ALPHA * x_tilde + (1. - ALPHA) * x
        z_relaxed = ALPHA * z_tilde + (1. - ALPHA) * z
        z_new = np.clip(z_relaxed + y / rho, ls, us)
        y_new = y + rho * (z_relaxed - z_new)
        delta_y = y_new - y
        z, y = z_new, y_new

        pri, dua, pri_scale, dua_scale = residuals(x, z, y)
        converged = pri <= tol + tol * pri_scale and dua <= tol + tol * dua_scale
        if converged or k % POLISH_EVERY == 0:
            polished = polish(x, z, y)
            if polished is not None:
                log.debug("Polished: k=%d", k)
                return finish(polished[0], polished[1], OPTIMAL, k, True)
        if converged:
            return finish(x, y, OPTIMAL, k)

        if m and not converged:
            dy = E * delta_y / c
            norm = np.max(np.abs(dy))
            if norm > EPS_INFEASIBLE:
                dy /= norm
                if not (np.any(dy[np.isinf(u)] > EPS_INFEASIBLE) or
                        np.any(dy[np.isinf(l)] < -EPS_INFEASIBLE)):
                    fu = np.isfinite(u)
                    fl = np.isfinite(l)
                    support = (u[fu].dot(np.maximum(dy[fu], 0.)) +
                               l[fl].dot(np.minimum(dy[fl], 0.)))
                    if support < -EPS_INFEASIBLE and \
                            np.max(np.abs(A.T.dot(dy))) < EPS_INFEASIBLE:
                        log.debug("Infeasible: k=%d", k)
                        return finish(x, y, INFEASIBLE, k)

    log.debug("Max iterations: pri=%.2e dua=%.2e", pri, dua)
    return finish(x, y, MAX_ITER, max_iter)


def _exact_penalty_form(p):
    """
    the penalised rows of p as hard constraints: L1 rows a x + b = 0 join
    the equalities and hinge rows a x + b <= 0 the inequalities, zero
    rows are left out as they only add a constant
    :returns: (ConvexSubproblem, normalised L1 terms, normalised hinge terms)
    """
    n = p.n
    l1, _ = p.l1.normalized()
    hinge, _ = p.hinge.normalized()
    Aeq, beq = p.eq
    Ain, bin_ = p.ineq
    eq = (np.vstack([Aeq, l1.rows.reshape(-1, n)]), np.concatenate([beq, -l1.offsets]))
    ineq = (np.vstack([Ain, hinge.rows.reshape(-1, n)]), np.concatenate([bin_, -hinge.offsets]))
    hard = ConvexSubproblem(p.P, p.q, eq=eq, ineq=ineq, trust=p.trust, const=p.const)
    return hard, l1, hinge


def _solve_exact_penalty(p, tol, max_iter):
    """
    solve p with its penalties as hard rows and keep the answer only if
    every multiplier of a penalised row lies within the penalty weight;
    then the penalty is exact and the answer minimises p
    :returns: QpSolution or None
    """
    hard, l1, hinge = _exact_penalty_form(p)
    std = reformulate(hard)
    sol = solve_qp(std.P, std.q, std.A, std.l, std.u, tol=tol * EXACT_TOL_SCALE,
                   max_iter=min(max_iter, EXACT_MAX_ITER))
    if sol.status != OPTIMAL:
        return None
    x = sol.x[:p.n]
    Aeq, beq = hard.eq
    if not sol.polished and beq.size:
        x = x - np.linalg.lstsq(Aeq, Aeq.dot(x) - beq, rcond=None)[0]
    neq, nin = p.eq[1].size, p.ineq[1].size
    k1, k2 = len(l1), len(hinge)
    y_l1 = sol.y[neq:neq + k1]
    start = beq.size + nin
    y_hinge = sol.y[start:start + k2]
    if np.any(np.abs(y_l1) > l1.weights * (1. + tol) + tol) or \
            np.any(y_hinge > hinge.weights * (1. + tol) + tol) or \
            np.any(y_hinge < -tol):
        log.debug("Exact penalty: multipliers exceed the weights")
        return None
    if p.violation(x) > tol:
        return None
    return QpSolution(x, p.objective(x), OPTIMAL, sol.iterations, sol.y, sol.polished)


def solve(p, tol=1e-6, max_iter=20000, x0=None):
    """
    solve a ConvexSubproblem, the returned x is restricted to the
    original variables and the objective includes the penalties

    With large penalty weights a residual within tol on a penalised row
    still costs weight * tol, so the penalties are first tried as hard
    rows and the epigraph form is solved only when some multiplier is
    larger than its weight. The answer is never worse than x0 (zero when
    not given) whenever that point is feasible.
    """
    sol = None
    if len(p.l1) or len(p.hinge):
        sol = _solve_exact_penalty(p, tol, max_iter)
    if sol is None:
        std = reformulate(p)
        xs = None
        if x0 is not None:
            xs = np.asarray(x0, dtype=float).ravel()
            l1 = np.abs(p.l1.normalized()[0].values(xs)) if len(p.l1) else np.zeros(0)
            hinge = np.maximum(0., p.hinge.normalized()[0].values(xs)) if len(p.hinge) else np.zeros(0)
            xs = np.concatenate([xs, l1, hinge])
        res = solve_qp(std.P, std.q, std.A, std.l, std.u, tol=tol, max_iter=max_iter, x0=xs)
        x = res.x[:std.n_orig]
        obj = p.objective(x) if res.status != INFEASIBLE else np.inf
        sol = QpSolution(x, obj, res.status, res.iterations, res.y, res.polished)
    if sol.status == INFEASIBLE:
        return sol

    ref = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if p.violation(ref) <= tol:
        ref_obj = p.objective(ref)
        if ref_obj < sol.objective - tol * max(1., abs(ref_obj)):
            log.warning("QP: answer %.6g worse than the reference point %.6g, keeping the reference",
                        sol.objective, ref_obj)
            sol = QpSolution(ref, ref_obj, sol.status, sol.iterations, None, False)
    return sol
