"""Pure-numpy implementations of the hot kernel routines.

Mirrors the signatures of the compiled module ``snapsde._ckern``; the
active implementation is chosen in :mod:`snapsde.backend`.
"""

import numpy as np


def sq_dist_matrix(x, y):
    """Squared Euclidean distances, shape (n, m)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_sq = np.sum(x * x, axis=1)[:, None]
    y_sq = np.sum(y * y, axis=1)[None, :]
    d2 = x_sq + y_sq - 2.0 * (x @ y.T)
    # The expansion can go slightly negative through cancellation.
    np.maximum(d2, 0.0, out=d2)
    return d2


def rbf_gram(x, y, lengthscale):
    """Gram matrix K_ij = exp(-|x_i - y_j|^2 / (2 ell^2)), shape (n, m)."""
    d2 = sq_dist_matrix(x, y)
    d2 *= -1.0 / (2.0 * lengthscale * lengthscale)
    return np.exp(d2, out=d2)


def rbf_gram_grad_x(x, y, lengthscale, gram, weight):
    """Gradient of sum_ij weight_ij * gram_ij with respect to x.

    Returns an (n, d) array; gram must be rbf_gram(x, y, lengthscale).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    wk = weight * gram
    row = np.sum(wk, axis=1)
    out = wk @ y - row[:, None] * x
    out /= lengthscale * lengthscale
    return out


def condensed_dists(x):
    """All n(n-1)/2 pairwise Euclidean distances of the rows of x."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return np.empty(0, dtype=np.float64)
    d2 = sq_dist_matrix(x, x)
    iu = np.triu_indices(n, k=1)
    return np.sqrt(d2[iu])
