"""
Self-contained oracle suites behind the gradcheck, gpcheck and qpcheck
commands. Each suite draws seeded random instances, compares the library
against an independent reference and returns a CheckReport.
"""
import itertools
import logging
from time import perf_counter

import numpy as np

from admmsampling import qp
from admmsampling.gp import JITTER_START, Dataset, Hyperparams, GaussianProcess, gram
from admmsampling.util import numerical_gradient, relative_error

__all__ = ['CheckReport', 'gradcheck', 'gpcheck', 'qpcheck', 'dense_posterior',
           'active_set_qp', 'soft_threshold']

log = logging.getLogger(__name__)


class CheckReport(object):

    def __init__(self, name, errors, tolerance, seconds=0.):
        self.name = name
        self.errors = list(errors)
        self.tolerance = tolerance
        self.seconds = seconds

    @property
    def worst(self):
        return max(self.errors) if self.errors else 0.

    @property
    def passed(self):
        return self.worst < self.tolerance

    def __str__(self):
        return "%s: %d cases, worst %.3e (tol %.0e) %s in %.2fs" % (
            self.name, len(self.errors), self.worst, self.tolerance,
            'PASS' if self.passed else 'FAIL', self.seconds)


def _random_instance(rng, M, N, size=10.):
    h = Hyperparams(rng.normal(), rng.uniform(0.5, 2.), rng.uniform(2., 6.),
                    rng.uniform(1e-2, 1e-1))
    X = rng.uniform(0., size, (N, 2))
    data = Dataset(X, rng.normal(size=N))
    s = rng.uniform(0., size, (M, 2))
    return data, h, s


def gradcheck(cases=20, seed=0, step=1e-5, tolerance=1e-5):
    """
    analytic gradient of neg_log_det against central differences
    on instances with M in {2, 5} and N in {5, 20}
    """
    rng = np.random.RandomState(seed)
    t0 = perf_counter()
    errors = []
    shapes = list(itertools.product([2, 5], [5, 20]))
    for k in range(cases):
        M, N = shapes[k % len(shapes)]
        data, h, s = _random_instance(rng, M, N)
        gp = GaussianProcess(data, h)
        analytic = gp.grad_neg_log_det(s)
        numeric = numerical_gradient(lambda x: gp.neg_log_det(x.reshape(M, 2)), s.ravel(), step)
        errors.append(relative_error(analytic, numeric))
    report = CheckReport('gradcheck', errors, tolerance, perf_counter() - t0)
    log.info(str(report))
    return report


def dense_posterior(X, y, S, h):
    """
    posterior mean and covariance by explicit inversion, with the same
    base jitter on the training diagonal as the Cholesky path
    """
    A = gram(X, X, h) + (h.noise_variance + JITTER_START * h.signal_variance) * np.eye(len(X))
    Ainv = np.linalg.inv(A)
    Ksx = gram(S, X, h)
    mean = h.constant_mean + Ksx.dot(Ainv).dot(y - h.constant_mean)
    cov = gram(S, S, h) - Ksx.dot(Ainv).dot(Ksx.T)
    return mean, cov


def gpcheck(cases=50, seed=0, tolerance=1e-10):
    """
    predict against the dense posterior formulas
    """
    rng = np.random.RandomState(seed)
    t0 = perf_counter()
    errors = []
    for _ in range(cases):
        N, M = rng.randint(1, 6), rng.randint(1, 4)
        data, h, s = _random_instance(rng, M, N)
        h = h.replace(noise_variance=rng.uniform(0.1, 1.))
        pred = GaussianProcess(data, h).predict(s)
        mean, cov = dense_posterior(data.locations, data.measurements, s, h)
        errors.append(max(np.max(np.abs(pred.mean - mean)), np.max(np.abs(pred.covariance - cov))))
    report = CheckReport('gpcheck', errors, tolerance, perf_counter() - t0)
    log.info(str(report))
    return report


def active_set_qp(P, q, lower, upper):
    """
    minimise 1/2 x^T P x + q^T x over a box by enumerating which
    variables sit on their lower bound, upper bound or are free
    """
    n = q.size
    best, best_obj = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        x = np.where(pattern == 1, lower, upper).astype(float)
        free = pattern == 0
        if free.any():
            rhs = -q[free] - P[np.ix_(free, ~free)].dot(x[~free])
            try:
                x[free] = np.linalg.solve(P[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(x < lower - 1e-12) or np.any(x > upper + 1e-12):
            continue
        obj = 0.5 * x.dot(P).dot(x) + q.dot(x)
        if obj < best_obj:
            best, best_obj = x, obj
    return best


def soft_threshold(v, kappa):
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.)


def qpcheck(cases=100, seed=0, tolerance=1e-5, prox_tolerance=1e-6):
    """
    solve_qp against active set enumeration on box constrained QPs and
    against the soft-threshold operator on L1 proximal problems
    :returns: (box report, prox report)
    """
    rng = np.random.RandomState(seed)
    t0 = perf_counter()
    errors = []
    for _ in range(cases):
        n = rng.randint(1, 7)
        G = rng.normal(size=(n, n))
        P = G.dot(G.T) + 0.1 * np.eye(n)
        q = 3. * rng.normal(size=n)
        lower = -rng.uniform(0.1, 2., n)
        upper = rng.uniform(0.1, 2., n)
        sol = qp.solve_qp(P, q, np.eye(n), lower, upper, tol=1e-9)
        errors.append(np.max(np.abs(sol.x - active_set_qp(P, q, lower, upper))))
    box = CheckReport('qpcheck box', errors, tolerance, perf_counter() - t0)
    log.info(str(box))

    t0 = perf_counter()
    errors = []
    for _ in range(cases):
        n = rng.randint(1, 7)
        rho = rng.uniform(0.1, 10.)
        lam = rng.uniform(0.01, 5.)
        v = 3. * rng.normal(size=n)
        sub = qp.ConvexSubproblem(rho * np.eye(n), -rho * v,
                                  l1=qp.PenaltyTerms(np.full(n, lam), np.eye(n), np.zeros(n)))
        sol = qp.solve(sub, tol=1e-9)
        errors.append(np.max(np.abs(sol.x - soft_threshold(v, lam / rho))))
    prox = CheckReport('qpcheck prox', errors, prox_tolerance, perf_counter() - t0)
    log.info(str(prox))
    return box, prox
