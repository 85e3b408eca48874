import logging

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from admmsampling.gp import Dataset, Hyperparams, gram, predict, train

__all__ = ['GroundTruthField', 'InsufficientDataError', 'generate_ground_truth',
           'measure']

log = logging.getLogger(__name__)

MIN_NODES = 20
MIN_CSV_POINTS = 3


class InsufficientDataError(ValueError):
    """Raised when a sensor file has too few readings to fit a field"""


class GroundTruthField(object):
    """
    scalar field stored on the nodes of a regular grid over the domain,
    evaluated by bilinear interpolation
    :param domain: Rectangle
    :param xs: node x coordinates
    :param ys: node y coordinates
    :param values: len(xs) x len(ys) node values
    :param seed: generation seed, None for fitted fields
    :param hyperparams: Hyperparams the field was generated or fitted with
    """

    def __init__(self, domain, xs, ys, values, seed=None, hyperparams=None):
        if len(xs) < MIN_NODES or len(ys) < MIN_NODES:
            raise ValueError("Ground truth grid must be at least %dx%d, got %dx%d"
                             % (MIN_NODES, MIN_NODES, len(xs), len(ys)))
        self.domain = domain
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.values = np.asarray(values, dtype=float).reshape(len(xs), len(ys))
        self.seed = seed
        self.hyperparams = hyperparams
        self._interp = RegularGridInterpolator((self.xs, self.ys), self.values,
                                               method='linear')

    @property
    def nodes(self):
        X, Y = np.meshgrid(self.xs, self.ys, indexing='ij')
        return np.column_stack([X.ravel(), Y.ravel()])

    def __call__(self, q):
        """field values at points (... x 2)"""
        q = np.asarray(q, dtype=float)
        flat = q.reshape(-1, 2)
        for p in flat:
            if not self.domain.contains(p, 1e-6):
                raise ValueError("Point %s outside the field domain %s" % (p, self.domain))
        values = self._interp(self.domain.clamp(flat))
        return values.reshape(q.shape[:-1]) if q.ndim > 1 else float(values[0])

    @classmethod
    def sample(cls, domain, h, seed, resolution=1.):
        """
        draw a GP prior realisation with hyperparameters h on the grid nodes
        """
        xs, ys = domain.nodes(resolution)
        X, Y = np.meshgrid(xs, ys, indexing='ij')
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        K = gram(nodes, nodes, h)
        eigval, eigvec = np.linalg.eigh(K)
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal(nodes.shape[0])
        values = h.constant_mean + eigvec.dot(np.sqrt(np.clip(eigval, 0., None)) * xi)
        log.info("Field: seed=%s %dx%d nodes", seed, len(xs), len(ys))
        return cls(domain, xs, ys, values.reshape(len(xs), len(ys)), seed, h)

    @classmethod
    def from_csv(cls, filename, domain, init=None, resolution=1., fit=True):
        """
        fit a GP to scattered readings and store its posterior mean
        :param filename: CSV with header x,y,value
        :param init: initial Hyperparams for the fit
        """
        data = Dataset.read_csv(filename, domain=domain)
        if len(data) < MIN_CSV_POINTS:
            raise InsufficientDataError("%s has %d readings, at least %d are needed"
                                        % (filename, len(data), MIN_CSV_POINTS))
        if init is None:
            init = Hyperparams(np.mean(data.measurements), max(np.var(data.measurements), 1e-6),
                               0.1 * float(np.min(domain.size)), 1e-2)
        h = train(data, init) if fit else init
        xs, ys = domain.nodes(resolution)
        X, Y = np.meshgrid(xs, ys, indexing='ij')
        mean = predict(data, h, np.column_stack([X.ravel(), Y.ravel()]), full_cov=False).mean
        log.info("Field: fitted %s to %d readings", h, len(data))
        return cls(domain, xs, ys, mean.reshape(len(xs), len(ys)), None, h)


def generate_ground_truth(seed, cfg):
    """
    ground truth for an experiment: a seeded GP draw, or the GP fit of
    cfg.field_csv when it is set
    """
    if cfg.field_csv:
        return GroundTruthField.from_csv(cfg.field_csv, cfg.domain_rect,
                                         resolution=cfg.grid_resolution)
    return GroundTruthField.sample(cfg.domain_rect, cfg.field_hyperparams(), seed,
                                   cfg.grid_resolution)


def measure(field, s, noise_sd, rng):
    """
    noisy reading field(s) + N(0, noise_sd^2)
    """
    value = field(np.asarray(s, dtype=float))
    if noise_sd == 0:
        return value
    return value + noise_sd * rng.standard_normal()
