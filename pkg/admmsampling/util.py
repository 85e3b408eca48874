from functools import lru_cache

import numpy as np
from sympy import Rational, Matrix, factorial

__all__ = ['tc', 'taylor_matrix', 'fd_weights', 'numerical_gradient',
           'numerical_jacobian', 'relative_error']


def tc(dx, n):
    """
    return coefficient of power n term in Taylor series expansion
    :param n: power
    :param dx: distance from expansion reference
    """
    return (dx**n)/factorial(n)


def taylor_matrix(offsets):
    """
    create Matrix of Taylor Coefficients M, such that M * D = R
    where D is list of derivatives at x [f, f', f'' ..]
    R is list of values at the sample points [.. f(x-h), f(x), f(x+h) ..]
    :param offsets: sample offsets in units of the step h
    returns Matrix object M (unit step)
    """
    n = len(offsets)
    return Matrix([[tc(Rational(i), j) for j in range(n)] for i in offsets])


@lru_cache(maxsize=None)
def fd_weights(derivative=1, accuracy=2):
    """
    central finite difference stencil for the given derivative
    the stencil is obtained by inverting the Taylor matrix, D = M^-1 * R
    :param derivative: order of the derivative, e.g. 1 for gradients
    :param accuracy: even order of accuracy of the approximation
    returns tuple of (offset, weight) pairs with nonzero weight,
    the derivative is sum(weight * f(x + offset*h)) / h**derivative
    """
    if derivative < 1 or accuracy < 2 or accuracy % 2:
        raise ValueError("Unsupported stencil: derivative=%d accuracy=%d"
                         % (derivative, accuracy))
    half = (derivative + accuracy - 1) // 2
    offsets = list(range(-half, half + 1))
    inverse = taylor_matrix(offsets).inv()
    return tuple((i, float(inverse[derivative, k]))
                 for k, i in enumerate(offsets) if inverse[derivative, k] != 0)


def numerical_gradient(f, x, step=1e-5, accuracy=2):
    """
    central finite difference gradient of the scalar function f at x
    :param f: callable taking a flat array
    :param x: point of evaluation
    :param step: spacing h of the stencil
    """
    x = np.array(x, dtype=float).ravel()
    stencil = fd_weights(1, accuracy)
    grad = np.zeros_like(x)
    for k in range(x.size):
        for offset, weight in stencil:
            xk = x.copy()
            xk[k] += offset * step
            grad[k] += weight * f(xk)
    return grad / step


def numerical_jacobian(f, x, step=1e-6, accuracy=2):
    """
    central finite difference Jacobian of the vector function f at x
    returns array of shape (len(f(x)), len(x))
    """
    x = np.array(x, dtype=float).ravel()
    stencil = fd_weights(1, accuracy)
    columns = []
    for k in range(x.size):
        col = 0.
        for offset, weight in stencil:
            xk = x.copy()
            xk[k] += offset * step
            col = col + weight * np.asarray(f(xk), dtype=float).ravel()
        columns.append(col / step)
    return np.column_stack(columns)


def relative_error(a, b, floor=1e-12):
    """
    ||a - b|| / max(||b||, floor)
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), floor)
