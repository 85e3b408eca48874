import logging

import numpy as np
from scipy.spatial.distance import pdist

__all__ = ['Rectangle', 'HalfPlane', 'Polytope', 'DegenerateConfigurationError',
           'voronoi_cell', 'shrink', 'contains', 'movement_region',
           'pairwise_min_distance']

log = logging.getLogger(__name__)

MIN_SEPARATION = 1e-9
MIN_EPSILON = 1e-3


class DegenerateConfigurationError(ValueError):
    """Raised when two Voronoi generators coincide"""


class Rectangle(object):
    """
    axis aligned domain [xmin, xmax] x [ymin, ymax] in meters
    """

    def __init__(self, xmin=0., xmax=40., ymin=0., ymax=30.):
        if not (xmin < xmax and ymin < ymax):
            raise ValueError("Empty rectangle [%g, %g] x [%g, %g]" % (xmin, xmax, ymin, ymax))
        self.xmin = float(xmin)
        self.xmax = float(xmax)
        self.ymin = float(ymin)
        self.ymax = float(ymax)

    @classmethod
    def from_size(cls, width, height):
        return cls(0., width, 0., height)

    @property
    def lower(self):
        return np.array([self.xmin, self.ymin])

    @property
    def upper(self):
        return np.array([self.xmax, self.ymax])

    @property
    def size(self):
        return self.upper - self.lower

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def contains(self, q, tol=0.):
        q = np.asarray(q)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clamp(self, q):
        """project points (... x 2) onto the rectangle"""
        return np.clip(q, self.lower, self.upper)

    def halfplanes(self):
        return [HalfPlane([1., 0.], self.xmax), HalfPlane([-1., 0.], -self.xmin),
                HalfPlane([0., 1.], self.ymax), HalfPlane([0., -1.], -self.ymin)]

    def nodes(self, resolution):
        """
        grid including the boundary, spacing at most resolution
        :returns: (xs, ys) node coordinates
        """
        nx = int(np.ceil(self.size[0] / resolution - 1e-9)) + 1
        ny = int(np.ceil(self.size[1] / resolution - 1e-9)) + 1
        return np.linspace(self.xmin, self.xmax, nx), np.linspace(self.ymin, self.ymax, ny)

    def cell_centers(self, resolution):
        """
        centers of the resolution sized cells covering the rectangle,
        row-major with x varying fastest
        :returns: K x 2 array
        """
        nx = int(round(self.size[0] / resolution))
        ny = int(round(self.size[1] / resolution))
        xs = self.xmin + (np.arange(nx) + 0.5) * self.size[0] / nx
        ys = self.ymin + (np.arange(ny) + 0.5) * self.size[1] / ny
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def to_list(self):
        return [self.xmin, self.xmax, self.ymin, self.ymax]

    def __repr__(self):
        return "Rectangle([%g, %g] x [%g, %g])" % tuple(self.to_list())


class HalfPlane(object):
    """
    {q : normal . q <= offset}, the normal is scaled to unit length
    """

    def __init__(self, normal, offset):
        normal = np.array(normal, dtype=float)
        norm = np.linalg.norm(normal)
        if norm == 0.:
            raise ValueError("HalfPlane normal must be nonzero")
        self.normal = normal / norm
        self.offset = float(offset) / norm

    def __repr__(self):
        return "HalfPlane(%s . q <= %.6g)" % (self.normal, self.offset)


class Polytope(object):
    """
    intersection of half-planes, the domain facets included
    """

    def __init__(self, halfplanes):
        self.halfplanes = list(halfplanes)

    @property
    def A(self):
        return np.array([hp.normal for hp in self.halfplanes]).reshape(-1, 2)

    @property
    def b(self):
        return np.array([hp.offset for hp in self.halfplanes])

    def __len__(self):
        return len(self.halfplanes)

    def contains(self, q, tol=0.):
        return contains(self, q, tol)


def voronoi_cell(i, positions, domain):
    """
    Voronoi cell of agent i clipped to the domain
    each bisector normal points from s_i to s_j through the midpoint
    """
    positions = np.reshape(np.asarray(positions, dtype=float), (-1, 2))
    si = positions[i]
    halfplanes = domain.halfplanes()
    for j, sj in enumerate(positions):
        if j == i:
            continue
        d = sj - si
        dist = np.linalg.norm(d)
        if dist <= MIN_SEPARATION:
            raise DegenerateConfigurationError("Agents %d and %d coincide at %s" % (i, j, si))
        normal = d / dist
        halfplanes.append(HalfPlane(normal, normal.dot(0.5 * (si + sj))))
    return Polytope(halfplanes)


def shrink(p, eps):
    """
    move every facet inward by eps
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative, got %r" % eps)
    return Polytope([HalfPlane(hp.normal, hp.offset - eps) for hp in p.halfplanes])


def contains(p, q, tol=0.):
    """
    membership test, boundary points are inside
    """
    return bool(np.all(p.A.dot(np.asarray(q, dtype=float)) <= p.b + tol))


def movement_region(i, positions, domain, eps):
    """
    shrunk Voronoi cell Omega_i of agent i
    eps is halved while the agent's own position lies outside the shrunk
    cell, down to MIN_EPSILON; past that the unshrunk cell is used
    :returns: (Polytope, eps used)
    """
    cell = voronoi_cell(i, positions, domain)
    si = np.reshape(positions, (-1, 2))[i]
    if eps == 0:
        return cell, 0.
    e = float(eps)
    while e >= MIN_EPSILON:
        region = shrink(cell, e)
        if contains(region, si, 1e-9):
            if e < eps:
                log.warning("Epsilon: agent %d uses %.4g instead of %.4g", i, e, eps)
            return region, e
        e *= 0.5
    log.warning("Epsilon: agent %d has no shrunk region, using its Voronoi cell", i)
    return cell, 0.


def pairwise_min_distance(positions):
    positions = np.reshape(positions, (-1, 2))
    if positions.shape[0] < 2:
        return np.inf
    return float(np.min(pdist(positions)))
