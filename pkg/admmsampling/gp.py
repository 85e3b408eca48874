import csv
import logging

import numpy as np
from scipy.linalg import cho_solve, solve_triangular, LinAlgError
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

__all__ = ['Hyperparams', 'Dataset', 'PosteriorStats', 'GaussianProcess',
           'IllConditionedError', 'kernel', 'gram', 'train', 'predict',
           'log_marginal_likelihood', 'neg_log_det', 'grad_neg_log_det']

log = logging.getLogger(__name__)

# Jitter ladder, in units of the signal variance
JITTER_START = 1e-8
JITTER_MAX = 1e-2

# Bounds on the log-parameters during training
LOG_BOUNDS = [(None, None), (-12., 12.), (-7., 7.), (-20., 5.)]


class IllConditionedError(RuntimeError):
    """Raised when a covariance matrix cannot be factorised even with
    the largest allowed jitter"""


class Hyperparams(object):
    """
    constant mean and squared exponential covariance hyperparameters
    :param constant_mean: prior mean of the field
    :param signal_variance: kernel amplitude sigma_f^2
    :param length_scale: isotropic length scale in meters
    :param noise_variance: measurement noise variance sigma_n^2
    """

    def __init__(self, constant_mean=0., signal_variance=1., length_scale=1.,
                 noise_variance=1e-2):
        for name, value in [('signal_variance', signal_variance),
                            ('length_scale', length_scale),
                            ('noise_variance', noise_variance)]:
            if not value > 0:
                raise ValueError("%s must be positive, got %r" % (name, value))
        self.constant_mean = float(constant_mean)
        self.signal_variance = float(signal_variance)
        self.length_scale = float(length_scale)
        self.noise_variance = float(noise_variance)

    def to_log(self):
        """
        parameter vector used by the optimiser: the mean is kept as is,
        the positive parameters are log transformed
        """
        return np.array([self.constant_mean, np.log(self.signal_variance),
                         np.log(self.length_scale), np.log(self.noise_variance)])

    @classmethod
    def from_log(cls, theta):
        return cls(theta[0], np.exp(theta[1]), np.exp(theta[2]), np.exp(theta[3]))

    def replace(self, **kwargs):
        values = self.to_dict()
        values.update(kwargs)
        return Hyperparams(**values)

    def to_dict(self):
        return {'constant_mean': self.constant_mean,
                'signal_variance': self.signal_variance,
                'length_scale': self.length_scale,
                'noise_variance': self.noise_variance}

    def __eq__(self, other):
        return isinstance(other, Hyperparams) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return ("Hyperparams(mean=%.4g, sf2=%.4g, ell=%.4g, sn2=%.4g)"
                % (self.constant_mean, self.signal_variance,
                   self.length_scale, self.noise_variance))


class Dataset(object):
    """
    measurement locations and values in acquisition order
    :param locations: N x 2 array of positions (meters)
    :param measurements: length N array of field values
    :param domain: optional Rectangle all locations must lie in
    """

    def __init__(self, locations=None, measurements=None, domain=None):
        if locations is None:
            locations = np.zeros((0, 2))
        if measurements is None:
            measurements = np.zeros(0)
        self.locations = np.array(locations, dtype=float).reshape(-1, 2)
        self.measurements = np.array(measurements, dtype=float).ravel()
        if self.locations.shape[0] != self.measurements.shape[0]:
            raise ValueError("Dataset has %d locations but %d measurements"
                             % (self.locations.shape[0], self.measurements.shape[0]))
        if domain is not None:
            for q in self.locations:
                if not domain.contains(q, 1e-9):
                    raise ValueError("Measurement location %s outside the domain" % q)
        self.domain = domain

    def __len__(self):
        return self.measurements.shape[0]

    def append(self, locations, measurements):
        """
        return a new Dataset with the given rows added at the end
        """
        return Dataset(np.vstack([self.locations, np.reshape(locations, (-1, 2))]),
                       np.concatenate([self.measurements, np.ravel(measurements)]),
                       domain=self.domain)

    @classmethod
    def read_csv(cls, filename, domain=None):
        """
        read a dataset from a CSV file with header x,y,value
        """
        rows = []
        with open(filename, newline='') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or \
                    [c.strip() for c in reader.fieldnames[:3]] != ['x', 'y', 'value']:
                raise ValueError("%s: expected header x,y,value" % filename)
            for row in reader:
                rows.append((float(row['x']), float(row['y']), float(row['value'])))
        data = np.array(rows, dtype=float).reshape(-1, 3)
        return cls(data[:, :2], data[:, 2], domain=domain)

    def write_csv(self, filename):
        with open(filename, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['x', 'y', 'value'])
            for (x, y), value in zip(self.locations, self.measurements):
                writer.writerow([repr(x), repr(y), repr(value)])


class PosteriorStats(object):
    """
    mean vector and covariance matrix of the GP posterior at query points
    """

    def __init__(self, mean, covariance):
        self.mean = mean
        self.covariance = covariance

    @property
    def variance(self):
        if self.covariance.ndim == 1:
            return self.covariance
        return np.diag(self.covariance).copy()


def kernel(a, b, h):
    """
    squared exponential covariance between two points,
    noise is not included
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return h.signal_variance * np.exp(-d.dot(d) / (2. * h.length_scale**2))


def gram(A, B, h):
    """
    kernel matrix between the rows of A and B
    """
    A = np.reshape(A, (-1, 2))
    B = np.reshape(B, (-1, 2))
    return h.signal_variance * np.exp(-cdist(A, B, 'sqeuclidean') / (2. * h.length_scale**2))


def _factor(K, scale):
    """
    Cholesky factorisation with an escalating diagonal jitter
    the first attempt adds JITTER_START * scale, growing by 10 up to
    JITTER_MAX * scale
    returns (lower Cholesky factor, jitter used)
    """
    jitter = JITTER_START * scale
    n = K.shape[0]
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except LinAlgError:
            jitter *= 10.
            if jitter > JITTER_MAX * scale * (1. + 1e-9):
                raise IllConditionedError("Covariance matrix of size %d is singular "
                                          "after jitter escalation" % n)
            log.debug("Jitter: %.1e", jitter)


class GaussianProcess(object):
    """
    GP model conditioned on a dataset, caching the training factorisation
    all prediction methods are pure, the instance is never mutated after
    the factorisation is built
    :param data: Dataset of measurements
    :param h: Hyperparams
    """

    def __init__(self, data, h):
        self.data = data
        self.h = h
        self._chol = None
        self._alpha = None

    @property
    def chol(self):
        """lower Cholesky factor of K + sigma_n^2 I"""
        if self._chol is None and len(self.data) > 0:
            X = self.data.locations
            K = gram(X, X, self.h) + self.h.noise_variance * np.eye(len(X))
            L, _ = _factor(K, self.h.signal_variance)
            r = self.data.measurements - self.h.constant_mean
            self._alpha = cho_solve((L, True), r)
            self._chol = L
        return self._chol

    def _project(self, S):
        """
        Ksx and V = L^-1 Kxs for the query rows S
        """
        X = self.data.locations
        Ksx = gram(S, X, self.h)
        V = solve_triangular(self.chol, Ksx.T, lower=True)
        return Ksx, V

    def predict(self, queries, full_cov=True):
        """
        posterior mean and covariance at the query rows
        :param queries: M x 2 array
        :param full_cov: if False only the variances are returned
        """
        S = np.reshape(np.asarray(queries, dtype=float), (-1, 2))
        if S.shape[0] == 0:
            raise ValueError("predict needs at least one query point")
        h = self.h
        if len(self.data) == 0:
            mean = np.full(S.shape[0], h.constant_mean)
            if full_cov:
                return PosteriorStats(mean, gram(S, S, h))
            return PosteriorStats(mean, np.full(S.shape[0], h.signal_variance))
        Ksx, V = self._project(S)
        mean = h.constant_mean + Ksx.dot(self._alpha)
        if not full_cov:
            var = h.signal_variance - np.sum(V * V, axis=0)
            return PosteriorStats(mean, var)
        cov = gram(S, S, h) - V.T.dot(V)
        cov = 0.5 * (cov + cov.T)
        return PosteriorStats(mean, cov)

    def _posterior_factor(self, S):
        cov = self.predict(S).covariance
        L, _ = _factor(cov, self.h.signal_variance)
        return cov, L

    def neg_log_det(self, s):
        """
        sampling metric f_0 = -log det Sigma(s)
        """
        _, L = self._posterior_factor(s)
        return -2. * np.sum(np.log(np.diag(L)))

    def grad_neg_log_det(self, s):
        """
        gradient of f_0 with respect to the flattened query coordinates
        ordering is agent-major [s1x, s1y, s2x, s2y, ...]
        d(-log det S) = -tr(S^-1 dS) with
        dS = dKss - dKsx A^-1 Kxs - Ksx A^-1 dKxs
        """
        S = np.reshape(np.asarray(s, dtype=float), (-1, 2))
        M = S.shape[0]
        h = self.h
        ell2 = h.length_scale**2
        _, L = self._posterior_factor(S)
        W = cho_solve((L, True), np.eye(M))
        W = 0.5 * (W + W.T)

        Kss = gram(S, S, h)
        Dss = S[:, None, :] - S[None, :, :]
        # sum_b W_pb dk(s_p, s_b)/ds_p
        prior = -np.einsum('pb,pb,pbd->pd', W, Kss, Dss) / ell2

        cross = np.zeros_like(S)
        if len(self.data) > 0:
            X = self.data.locations
            Ksx = gram(S, X, h)
            B = cho_solve((self.chol, True), Ksx.T)
            C = B.dot(W)
            Dsx = S[:, None, :] - X[None, :, :]
            # sum_n dk(s_p, x_n)/ds_p (A^-1 Kxs W)_np
            cross = -np.einsum('pn,pnd,np->pd', Ksx, Dsx, C) / ell2
        return (-2. * (prior - cross)).ravel()

    def log_marginal_likelihood(self, grad=False):
        return log_marginal_likelihood(self.data, self.h, grad=grad)


def predict(data, h, queries, full_cov=True):
    """
    GP posterior at the queries given the data
    an empty dataset returns the prior
    """
    return GaussianProcess(data, h).predict(queries, full_cov=full_cov)


def neg_log_det(data, h, s):
    """
    -log det of the posterior covariance at the rows of s
    """
    return GaussianProcess(data, h).neg_log_det(s)


def grad_neg_log_det(data, h, s):
    """
    analytic gradient of neg_log_det, flattened agent-major
    """
    return GaussianProcess(data, h).grad_neg_log_det(s)


def log_marginal_likelihood(data, h, grad=False):
    """
    log p(y | X, theta) and optionally its gradient with respect to
    [constant_mean, log sf2, log ell, log sn2]
    """
    X = data.locations
    y = data.measurements
    n = len(y)
    K = gram(X, X, h)
    A = K + h.noise_variance * np.eye(n)
    L, _ = _factor(A, h.signal_variance)
    r = y - h.constant_mean
    alpha = cho_solve((L, True), r)
    lml = -0.5 * r.dot(alpha) - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2. * np.pi)
    if not grad:
        return lml
    Ainv = cho_solve((L, True), np.eye(n))
    inner = np.outer(alpha, alpha) - Ainv
    sqdist = cdist(X, X, 'sqeuclidean')
    dK = [K, K * sqdist / h.length_scale**2, h.noise_variance * np.eye(n)]
    g = np.empty(4)
    g[0] = alpha.sum()
    for k, dA in enumerate(dK):
        g[k + 1] = 0.5 * np.sum(inner * dA)
    return lml, g


def _profile_mean(data, h):
    """
    closed-form maximiser of the likelihood over the constant mean
    """
    X = data.locations
    A = gram(X, X, h) + h.noise_variance * np.eye(len(X))
    L, _ = _factor(A, h.signal_variance)
    ones = np.ones(len(X))
    a = cho_solve((L, True), ones)
    return a.dot(data.measurements) / a.dot(ones)


def train(data, init, starts=4, max_iter=200, gtol=1e-6, seed=0):
    """
    maximise the log marginal likelihood over the hyperparameters
    multi-start L-BFGS with analytic gradients in log-parameter space,
    the first start is init, the others are seeded perturbations of it
    the returned hyperparameters never have lower likelihood than init
    :param data: Dataset with at least 2 points
    :param init: starting Hyperparams
    :param starts: number of starts
    """
    if len(data) < 2:
        raise ValueError("train needs at least 2 measurements, got %d" % len(data))
    best = init
    best_lml = log_marginal_likelihood(data, init)

    def objective(theta):
        try:
            lml, g = log_marginal_likelihood(data, Hyperparams.from_log(theta), grad=True)
        except IllConditionedError:
            return np.inf, np.zeros_like(theta)
        return -lml, -g

    rng = np.random.RandomState(seed)
    theta0 = init.to_log()
    for k in range(starts):
        start = theta0.copy()
        if k > 0:
            start[1:] += rng.normal(0., 1., size=3)
            start[0] = np.mean(data.measurements)
        start[1:] = np.clip(start[1:], [b[0] for b in LOG_BOUNDS[1:]],
                            [b[1] for b in LOG_BOUNDS[1:]])
        res = minimize(objective, start, jac=True, method='L-BFGS-B',
                       bounds=LOG_BOUNDS,
                       options={'maxiter': max_iter, 'gtol': gtol})
        if not np.all(np.isfinite(res.x)):
            continue
        candidate = Hyperparams.from_log(res.x)
        try:
            candidate = candidate.replace(constant_mean=_profile_mean(data, candidate))
            lml = log_marginal_likelihood(data, candidate)
        except IllConditionedError:
            log.warning("Training start %d ended ill-conditioned", k)
            continue
        log.debug("Start %d: lml=%.6g %s", k, lml, candidate)
        if lml > best_lml:
            best, best_lml = candidate, lml
    log.info("Trained: %s lml=%.4f", best, best_lml)
    return best
