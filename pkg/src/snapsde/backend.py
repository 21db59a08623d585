"""Selects the compiled kernel core, falling back to pure numpy.

Set ``SNAPSDE_PURE_PYTHON=1`` to force the numpy implementation (used by
the backend-equivalence tests and the benchmark).
"""

import os

import numpy as np

from . import _npkern

if os.environ.get("SNAPSDE_PURE_PYTHON") == "1":
    _impl = _npkern
    HAVE_COMPILED = False
else:
    try:
        from . import _ckern as _impl
        HAVE_COMPILED = True
    except ImportError:
        _impl = _npkern
        HAVE_COMPILED = False


def _c2d(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sq_dist_matrix(x, y):
    """Squared Euclidean distances between rows of x (n,d) and y (m,d)."""
    return _impl.sq_dist_matrix(_c2d(x), _c2d(y))


def rbf_gram(x, y, lengthscale):
    """RBF gram matrix exp(-|x_i - y_j|^2 / (2 ell^2)), shape (n, m)."""
    return _impl.rbf_gram(_c2d(x), _c2d(y), float(lengthscale))


def rbf_gram_grad_x(x, y, lengthscale, gram, weight):
    """d/dx of sum_ij weight_ij * rbf_gram(x, y)_ij, shape (n, d)."""
    return _impl.rbf_gram_grad_x(
        _c2d(x), _c2d(y), float(lengthscale), _c2d(gram), _c2d(weight)
    )


def condensed_dists(x):
    """Upper-triangle pairwise Euclidean distances of the rows of x."""
    return _impl.condensed_dists(_c2d(x))
