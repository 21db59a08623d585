"""RBF state kernel, bandwidth selection, and squared-MMD estimators.

Two estimators are provided: the U-statistic ``mmd_u`` between samples
(unbiased, may be negative) and the exact squared MMD ``mmd_exact``
between fully known discrete measures (clamped at zero). The factored
joint state-time kernel K((y,t),(y',t')) = K_y(y,y') * 1{t==t'} lets the
joint squared MMD decompose into a weighted per-time sum, which
``mmd_joint_factored`` evaluates both ways and cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend


class DegenerateDataError(ValueError):
    """All points coincide; no bandwidth can be inferred."""


@dataclass(frozen=True)
class RbfKernel:
    """Gaussian kernel K(x, y) = exp(-|x - y|^2 / (2 ell^2))."""

    lengthscale: float

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

    def __call__(self, x, y) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if x.shape != y.shape:
            raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
        d2 = float(np.sum((x - y) ** 2))
        return float(np.exp(-d2 / (2.0 * self.lengthscale**2)))

    def gram(self, x, y) -> np.ndarray:
        """Kernel matrix between row sets x (n,d) and y (m,d)."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
        return backend.rbf_gram(x, y, self.lengthscale)


@dataclass(frozen=True)
class AtomicMeasure:
    """Discrete probability measure: atoms ``points`` with ``masses``."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.asarray(self.masses, dtype=np.float64).ravel()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", w)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and masses length mismatch")
        if np.any(w < 0):
            raise ValueError("masses must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {w.sum()!r}, expected 1")

    @staticmethod
    def uniform(points) -> "AtomicMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = pts.shape[0]
        return AtomicMeasure(pts, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def rbf_eval(kernel: RbfKernel, x, y) -> float:
    """Evaluate the kernel on a single pair of state vectors."""
    return kernel(x, y)


def median_heuristic(points) -> float:
    """Median of all pairwise Euclidean distances between the rows.

    The standard bandwidth heuristic; with an even number of pairs the mean
    of the two middle distances is used. Raises if every pairwise distance
    is zero (caller must then supply a lengthscale explicitly).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    dists = backend.condensed_dists(pts)
    med = float(np.median(dists))
    if med <= 0.0:
        raise DegenerateDataError("all points identical; median distance is 0")
    return med


def _offdiag_mean(gram: np.ndarray) -> float:
    n = gram.shape[0]
    return (gram.sum() - np.trace(gram)) / (n * (n - 1))


def mmd_u(kernel: RbfKernel, x, y) -> float:
    """Unbiased U-statistic estimate of the squared MMD between samples.

    Diagonal (self-pair) kernel terms are excluded, which makes the
    estimator unbiased at the cost of possible small negative values.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f"U-statistic needs >= 2 samples per side, got {n} and {m}")
    kxx = kernel.gram(x, x)
    np.fill_diagonal(kxx, 1.0)
    kyy = kernel.gram(y, y)
    np.fill_diagonal(kyy, 1.0)
    kxy = kernel.gram(x, y)
    return float(_offdiag_mean(kxx) - 2.0 * kxy.mean() + _offdiag_mean(kyy))


def mmd_exact(kernel: RbfKernel, p: AtomicMeasure, q: AtomicMeasure) -> float:
    """Exact squared MMD between two known discrete measures (>= 0)."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    wp, wq = p.masses, q.masses
    val = (
        wp @ kernel.gram(p.points, p.points) @ wp
        - 2.0 * (wp @ kernel.gram(p.points, q.points) @ wq)
        + wq @ kernel.gram(q.points, q.points) @ wq
    )
    return max(float(val), 0.0)


def mmd_joint_factored(kernel, f, g, time_masses):
    """Squared MMD between two state-time mixtures, computed two ways.

    ``f`` and ``g`` map each time point to an :class:`AtomicMeasure`;
    ``time_masses`` assigns each time its probability mass. Returns
    ``(joint, factored)`` where ``joint`` evaluates the squared MMD
    directly on the product sample space with the factored kernel
    K_y(y,y') * 1{t==t'}, and ``factored`` is the weighted per-time sum
    sum_t h(t)^2 * MMD^2(f_t, g_t). The two sides must agree to 1e-10.
    """
    times = list(f.keys())
    if set(times) != set(g.keys()) or set(times) != set(time_masses.keys()):
        raise ValueError("f, g, and time_masses must share one time set")

    def flatten(measures):
        pts, ts, ws = [], [], []
        for t in times:
            m = measures[t]
            pts.append(m.points)
            ts.append(np.full(m.points.shape[0], t, dtype=np.float64))
            ws.append(m.masses * time_masses[t])
        return np.concatenate(pts), np.concatenate(ts), np.concatenate(ws)

    def joint_gram(pa, ta, pb, tb):
        return kernel.gram(pa, pb) * (ta[:, None] == tb[None, :])

    fp, ft, fw = flatten(f)
    gp, gt, gw = flatten(g)
    joint = (
        fw @ joint_gram(fp, ft, fp, ft) @ fw
        - 2.0 * (fw @ joint_gram(fp, ft, gp, gt) @ gw)
        + gw @ joint_gram(gp, gt, gp, gt) @ gw
    )
    factored = sum(
        time_masses[t] ** 2 * mmd_exact(kernel, f[t], g[t]) for t in times
    )
    if abs(joint - factored) > 1e-10:
        raise AssertionError(
            f"joint/factored mismatch: {joint!r} vs {factored!r}"
        )
    return float(joint), float(factored)
