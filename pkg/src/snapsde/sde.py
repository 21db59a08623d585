"""SDE model families, parameter transforms, and the Euler-Maruyama simulator.

Families define time-homogeneous drift and diagonal diffusion over natural
(positivity-constrained) parameters. All family math is written with the
dispatching primitives from :mod:`snapsde.autodiff`, so the same code runs
on plain arrays (simulation, evaluation) and on the tape (training).

Fitted models carry a ``time_factor``: families express dynamics on their
own raw clock, while datasets are scaled to [0, 1]; simulating in scaled
time multiplies the drift by the factor and the diffusion by its square
root, leaving natural parameters in raw time units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import maximum, power, relu, sigmoid, stack_cols, take_col


class SimulationDiverged(RuntimeError):
    """A trajectory left the finite range; carries the first bad step."""


class DimensionError(ValueError):
    """State dimension does not match the family."""


# states this close to zero (or below) are floored inside Hill ratios
_HILL_FLOOR = 1e-8


@dataclass(frozen=True)
class ParamVector:
    """Unconstrained raw parameters plus per-entry positivity transforms."""

    names: tuple[str, ...]
    raw: np.ndarray
    transforms: tuple[str, ...]

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64).ravel()
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if not (len(self.names) == raw.size == len(self.transforms)):
            raise ValueError("names, raw, and transforms must have equal length")
        if any(t not in ("identity", "exp") for t in self.transforms):
            raise ValueError("transforms must be 'identity' or 'exp'")

    @staticmethod
    def from_natural(names, values, transforms) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64).ravel()
        raw = np.empty_like(values)
        for i, t in enumerate(transforms):
            if t == "exp":
                if values[i] <= 0:
                    raise ValueError(
                        f"parameter {names[i]!r} must be positive, got {values[i]}"
                    )
                raw[i] = math.log(values[i])
            else:
                raw[i] = values[i]
        return ParamVector(tuple(names), raw, tuple(transforms))

    def natural(self) -> np.ndarray:
        out = self.raw.copy()
        for i, t in enumerate(self.transforms):
            if t == "exp":
                out[i] = math.exp(out[i])
        return out

    def natural_dict(self) -> dict:
        return dict(zip(self.names, self.natural().tolist()))

    def replace_raw(self, raw) -> "ParamVector":
        return replace(self, raw=np.asarray(raw, dtype=np.float64))


def natural_from_raw(raw, transforms):
    """Apply the positivity transforms; works on arrays and tape Vars."""
    if all(t == "identity" for t in transforms):
        return raw
    if all(t == "exp" for t in transforms):
        return ad.exp(raw)
    exp_mask = np.array([1.0 if t == "exp" else 0.0 for t in transforms])
    id_mask = 1.0 - exp_mask
    # exp(raw * mask) is 1 on identity entries and masked away by the final factor
    return raw * id_mask + ad.exp(raw * exp_mask) * exp_mask


def _hill(u, n):
    """1 / (1 + u^n) with the base floored at a small positive value.

    Exploratory parameter values can push simulated states negative; the
    floor keeps the power's base in-domain without affecting evaluation at
    physical (positive) states.
    """
    return 1.0 / (1.0 + power(maximum(u, _HILL_FLOOR), n))


class LotkaVolterra:
    """Predator-prey dynamics with state-proportional volatility."""

    name = "lv"
    dim = 2
    param_names = ("alpha", "beta", "gamma", "delta", "sigma")
    transforms = ("exp",) * 5

    def unpack(self, p):
        return [p[i] for i in range(5)]

    def drift(self, up, x, t):
        alpha, beta, gamma, delta, _ = up
        prey = take_col(x, 0)
        pred = take_col(x, 1)
        cross = prey * pred
        return stack_cols([alpha * prey - beta * cross,
                           gamma * cross - delta * pred])

    def diffusion(self, up, x, t):
        return up[4] * x

    def default_raw(self, rng, data_hint=None):
        return rng.uniform(math.log(0.05), math.log(5.0), size=5)


class Repressilator3:
    """Three-gene cyclic-inhibition oscillator (mRNA concentrations only)."""

    name = "repr3"
    dim = 3
    param_names = ("beta", "n", "k", "gamma", "sigma")
    transforms = ("exp",) * 5

    def unpack(self, p):
        return [p[i] for i in range(5)]

    def drift(self, up, x, t):
        beta, n, k, gamma, _ = up
        x1, x2, x3 = (take_col(x, j) for j in range(3))
        return stack_cols([
            beta * _hill(x3 / k, n) - gamma * x1,
            beta * _hill(x1 / k, n) - gamma * x2,
            beta * _hill(x2 / k, n) - gamma * x3,
        ])

    def diffusion(self, up, x, t):
        return up[4] * x

    def default_raw(self, rng, data_hint=None):
        return rng.uniform(math.log(0.05), math.log(5.0), size=5)


class RepressilatorProtein:
    """Repressilator with explicit protein species mediating repression.

    State layout: (x1, x2, x3, y1, y2, y3) = mRNA then protein. Only the
    mRNA block is observed in the matching experiments.
    """

    name = "repr_protein"
    dim = 6
    param_names = ("alpha", "beta", "n", "k", "gamma", "beta_p", "gamma_p", "sigma")
    transforms = ("exp",) * 8

    def unpack(self, p):
        return [p[i] for i in range(8)]

    def drift(self, up, x, t):
        alpha, beta, n, k, gamma, beta_p, gamma_p, _ = up
        x1, x2, x3, y1, y2, y3 = (take_col(x, j) for j in range(6))
        return stack_cols([
            alpha + beta * _hill(y3 / k, n) - gamma * x1,
            alpha + beta * _hill(y1 / k, n) - gamma * x2,
            alpha + beta * _hill(y2 / k, n) - gamma * x3,
            beta_p * x1 - gamma_p * y1,
            beta_p * x2 - gamma_p * y2,
            beta_p * x3 - gamma_p * y3,
        ])

    def diffusion(self, up, x, t):
        return up[7] * x

    def default_raw(self, rng, data_hint=None):
        return rng.uniform(math.log(0.05), math.log(5.0), size=8)


class LambOseenVortex:
    """Planar vortex velocity profile plus a constant divergence field.

    The divergence length scale stretches only the x-component, matching
    the intended anisotropic correction of the source model.
    """

    name = "vortex"
    dim = 2
    param_names = (
        "circulation", "vortex_radius", "x0", "y0",
        "divergence", "div_radius", "x0_div", "y0_div", "sigma",
    )
    transforms = (
        "identity", "exp", "identity", "identity",
        "identity", "exp", "identity", "identity", "exp",
    )

    def unpack(self, p):
        return [p[i] for i in range(9)]

    def drift(self, up, x, t):
        circ, rv, x0, y0, dive, rd, x0d, y0d, _ = up
        dx = take_col(x, 0) - x0
        dy = take_col(x, 1) - y0
        r2 = maximum(dx * dx + dy * dy, 1e-12)
        swirl = circ * rv / r2 * (1.0 - ad.exp(-r2 / (rv * rv)))
        return stack_cols([
            -swirl * dy + dive * (take_col(x, 0) - x0d) / rd,
            swirl * dx + dive * (take_col(x, 1) - y0d),
        ])

    def diffusion(self, up, x, t):
        ones = np.ones((np.shape(ad.value_of(x))[0], 2))
        return up[8] * ones

    def default_raw(self, rng, data_hint=None):
        if data_hint is not None:
            center = data_hint.mean(axis=0)
            span = float(np.ptp(data_hint, axis=0).mean()) or 1.0
        else:
            center = np.zeros(2)
            span = 1.0
        return np.array([
            rng.normal(0.0, 0.5),
            math.log(0.5 * span),
            center[0] + rng.normal(0.0, 0.1 * span),
            center[1] + rng.normal(0.0, 0.1 * span),
            rng.normal(0.0, 0.05),
            0.0,
            center[0] + rng.normal(0.0, 0.1 * span),
            center[1] + rng.normal(0.0, 0.1 * span),
            math.log(0.1 * span),
        ])


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected net: rectifier hidden layers, sigmoid output in (0,1)^D."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int

    @property
    def layer_sizes(self):
        dims = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_sizes)

    def init_raw(self, rng):
        """Fan-in-scaled uniform weights and biases, flattened."""
        parts = []
        for fan_in, fan_out in self.layer_sizes:
            bound = 1.0 / math.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            parts.append(rng.uniform(-bound, bound, size=fan_out))
        return np.concatenate(parts)

    def forward(self, flat, x):
        """Apply the net; ``flat`` is the flattened weight vector (Var or array)."""
        h = x
        offset = 0
        layers = self.layer_sizes
        for li, (fan_in, fan_out) in enumerate(layers):
            w = ad.reshape(ad.take_slice(flat, offset, offset + fan_in * fan_out),
                           (fan_in, fan_out))
            offset += fan_in * fan_out
            b = ad.take_slice(flat, offset, offset + fan_out)
            offset += fan_out
            h = ad.matmul(h, w) + b
            h = sigmoid(h) if li == len(layers) - 1 else relu(h)
        return h


class GatedRegulatoryNetwork:
    """Semiparametric family: learned production gate, linear decay.

    Drift is f(x) * max_rate - x * decay where f is an MLP with outputs in
    (0, 1); diffusion is state-proportional with per-coordinate volatility.
    Rates are positivity-transformed; net weights are unconstrained.
    """

    name = "semiparam"

    def __init__(self, dim=3, hidden=(32, 64, 32)):
        self.dim = dim
        self.mlp = MlpSpec(dim, tuple(hidden), dim)
        rate_names = [f"{kind}_{j + 1}" for kind in ("max_rate", "decay", "vol")
                      for j in range(dim)]
        self.param_names = tuple(rate_names) + tuple(
            f"mlp_{i}" for i in range(self.mlp.n_params)
        )
        self.transforms = ("exp",) * (3 * dim) + ("identity",) * self.mlp.n_params

    def unpack(self, p):
        d = self.dim
        return {
            "max_rate": ad.take_slice(p, 0, d),
            "decay": ad.take_slice(p, d, 2 * d),
            "vol": ad.take_slice(p, 2 * d, 3 * d),
            "weights": ad.take_slice(p, 3 * d, 3 * d + self.mlp.n_params),
        }

    def drift(self, up, x, t):
        gate = self.mlp.forward(up["weights"], x)
        return gate * up["max_rate"] - x * up["decay"]

    def diffusion(self, up, x, t):
        return x * up["vol"]

    def default_raw(self, rng, data_hint=None):
        rates = rng.uniform(math.log(0.05), math.log(5.0), size=3 * self.dim)
        return np.concatenate([rates, self.mlp.init_raw(rng)])


class CustomFamily:
    """Family built from user callables; used for oracles and tests."""

    name = "custom"

    def __init__(self, dim, drift_fn, diffusion_fn, param_names=(), transforms=()):
        self.dim = dim
        self._drift = drift_fn
        self._diffusion = diffusion_fn
        self.param_names = tuple(param_names)
        self.transforms = tuple(transforms)

    def unpack(self, p):
        return p

    def drift(self, up, x, t):
        return self._drift(up, x, t)

    def diffusion(self, up, x, t):
        return self._diffusion(up, x, t)

    def default_raw(self, rng, data_hint=None):
        return rng.normal(0.0, 0.5, size=len(self.param_names))


_FAMILY_BUILDERS = {
    "lv": LotkaVolterra,
    "repr3": Repressilator3,
    "repr_protein": RepressilatorProtein,
    "vortex": LambOseenVortex,
    "semiparam": GatedRegulatoryNetwork,
}


def family_names():
    return sorted(_FAMILY_BUILDERS)


def make_family(name, **kwargs):
    try:
        builder = _FAMILY_BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown family {name!r}; available: {', '.join(family_names())}"
        ) from None
    return builder(**kwargs)


@dataclass(frozen=True)
class PointMass:
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).ravel())


@dataclass(frozen=True)
class UniformBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).ravel()
        hi = np.asarray(self.hi, dtype=np.float64).ravel()
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("UniformBox requires lo <= hi per coordinate")


@dataclass(frozen=True)
class EmpiricalResample:
    """Rows drawn with replacement from a snapshot; unobserved coordinates
    are appended from the fill vector."""

    states: np.ndarray
    fill: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if states.shape[0] < 1:
            raise ValueError("EmpiricalResample needs a nonempty snapshot")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "fill",
                           np.asarray(self.fill, dtype=np.float64).ravel())


def _init_dim(init) -> int:
    if isinstance(init, PointMass):
        return init.x.size
    if isinstance(init, UniformBox):
        return init.lo.size
    return init.states.shape[1] + init.fill.size


def _draw_initial_row(init, rng):
    if isinstance(init, PointMass):
        return init.x
    if isinstance(init, UniformBox):
        return rng.uniform(init.lo, init.hi)
    idx = int(rng.integers(init.states.shape[0]))
    return np.concatenate([init.states[idx], init.fill])


def sample_initial(init, m, rng) -> np.ndarray:
    """Draw M initial states (M, D); deterministic given the generator state."""
    if m < 1:
        raise ValueError("need at least one trajectory")
    return np.stack([_draw_initial_row(init, rng) for _ in range(m)])


@dataclass(frozen=True)
class SdeModel:
    """A model-family instance bound to parameters and an observation map."""

    family: object
    params: ParamVector
    observed_coords: tuple[int, ...] = ()
    time_factor: float = 1.0

    def __post_init__(self):
        if not self.observed_coords:
            object.__setattr__(
                self, "observed_coords", tuple(range(self.family.dim))
            )
        if self.time_factor <= 0:
            raise ValueError("time_factor must be positive")

    @property
    def dim(self) -> int:
        return self.family.dim

    def with_params(self, params: ParamVector) -> "SdeModel":
        return replace(self, params=params)

    def _eval(self, fn, x, t):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        if xb.shape[1] != self.dim:
            raise DimensionError(
                f"state dimension {xb.shape[1]} != family dimension {self.dim}"
            )
        up = self.family.unpack(self.params.natural())
        out = np.asarray(fn(up, xb, t), dtype=np.float64)
        out = np.broadcast_to(out, xb.shape)
        if not np.all(np.isfinite(out)):
            raise ArithmeticError(
                f"non-finite family output at x={x.tolist()}, "
                f"params={self.params.natural_dict()}"
            )
        return out[0] if single else out

    def drift(self, x, t=0.0) -> np.ndarray:
        """Drift on the family's own (raw-time) clock."""
        return self._eval(self.family.drift, x, t)

    def diffusion(self, x, t=0.0) -> np.ndarray:
        """Diagonal diffusion on the family's own clock."""
        return self._eval(self.family.diffusion, x, t)

    def to_json_dict(self) -> dict:
        out = {
            "family": self.family.name,
            "dim_state": self.dim,
            "observed_coords": list(self.observed_coords),
            "time_factor": self.time_factor,
            "params_natural": self.params.natural_dict(),
            "params_raw": self.params.raw.tolist(),
            "transforms": list(self.params.transforms),
            "param_names": list(self.params.names),
        }
        if isinstance(self.family, GatedRegulatoryNetwork):
            out["mlp"] = {"hidden": list(self.family.mlp.hidden)}
        return out

    @staticmethod
    def from_json_dict(obj: dict) -> "SdeModel":
        kwargs = {}
        if obj["family"] == "semiparam":
            kwargs["dim"] = obj["dim_state"]
            kwargs["hidden"] = tuple(obj.get("mlp", {}).get("hidden", (32, 64, 32)))
        fam = make_family(obj["family"], **kwargs)
        params = ParamVector(
            tuple(obj["param_names"]),
            np.array(obj["params_raw"], dtype=np.float64),
            tuple(obj["transforms"]),
        )
        return SdeModel(
            fam,
            params,
            observed_coords=tuple(obj["observed_coords"]),
            time_factor=obj.get("time_factor", 1.0),
        )

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    @staticmethod
    def load_json(path) -> "SdeModel":
        with open(path, encoding="utf-8") as fh:
            return SdeModel.from_json_dict(json.load(fh))


def drift(model: SdeModel, x, t=0.0) -> np.ndarray:
    return model.drift(x, t)


def diffusion(model: SdeModel, x, t=0.0) -> np.ndarray:
    return model.diffusion(x, t)


@dataclass(frozen=True)
class TrajectoryBatch:
    """M simulated trajectories recorded on a common output-time grid."""

    times: np.ndarray
    states: np.ndarray  # (M, len(times), D)
    seed: int
    stream: int = 0
    diverged: np.ndarray = None
    first_bad_step: np.ndarray = None

    def __post_init__(self):
        m = self.states.shape[0]
        if self.diverged is None:
            object.__setattr__(self, "diverged", np.zeros(m, dtype=bool))
        if self.first_bad_step is None:
            object.__setattr__(self, "first_bad_step", np.full(m, -1))

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    def states_at(self, time_index, coords=None) -> np.ndarray:
        s = self.states[:, time_index, :]
        return s if coords is None else s[:, list(coords)]


def time_grid(out_times, substep):
    """Internal integration grid covering [0, max(out_times)].

    Every consecutive gap is subdivided so internal steps never exceed
    ``substep`` and every output time lies on the grid exactly. Returns
    (grid, indices of each output time in the grid).
    """
    out_times = np.asarray(out_times, dtype=np.float64)
    if out_times.ndim != 1 or out_times.size == 0:
        raise ValueError("out_times must be a nonempty 1-D array")
    if np.any(np.diff(out_times) <= 0):
        raise ValueError("out_times must be strictly increasing")
    if out_times[0] < 0:
        raise ValueError("out_times must start at or after 0")
    if substep <= 0:
        raise ValueError("substep must be positive")
    knots = out_times if out_times[0] == 0.0 else np.concatenate([[0.0], out_times])
    grid = [0.0]
    for a, b in zip(knots[:-1], knots[1:]):
        nsub = max(1, int(math.ceil((b - a) / substep - 1e-12)))
        seg = np.linspace(a, b, nsub + 1)[1:]
        seg[-1] = b  # exact endpoint
        grid.extend(seg.tolist())
    grid = np.array(grid)
    out_index = np.flatnonzero(np.isin(grid, out_times))
    if out_index.size != out_times.size:
        raise AssertionError("output times missing from integration grid")
    return grid, out_index


def trajectory_rng(seed, stream, m) -> np.random.Generator:
    """Counter-based stream for trajectory m; disjoint across (stream, m)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(m)))
    return np.random.Generator(np.random.Philox(ss))


def draw_paths_noise(init, m, n_steps, dim, seed, stream=0):
    """Per-trajectory initial states and Gaussian increments.

    Each trajectory owns one counter-based stream (its initial draw comes
    first, then its path noise), so enlarging M leaves existing
    trajectories' randomness untouched.
    """
    x0 = np.empty((m, dim))
    noise = np.empty((m, n_steps, dim))
    for i in range(m):
        rng = trajectory_rng(seed, stream, i)
        x0[i] = _draw_initial_row(init, rng)
        noise[i] = rng.standard_normal((n_steps, dim))
    return x0, noise


def simulate(model: SdeModel, init, out_times, substep, m, seed, stream=0) -> TrajectoryBatch:
    """Euler-Maruyama simulation of M trajectories in scaled time.

    x_{k+1} = x_k + time_factor * b(x_k) * dt
                  + sqrt(time_factor) * s(x_k) * sqrt(dt) * xi_k.
    Trajectories that generate non-finite states are flagged (with the
    first bad step index) rather than raising.
    """
    if m < 1:
        raise ValueError("need at least one trajectory")
    dim = model.dim
    if _init_dim(init) != dim:
        raise DimensionError(
            f"initial distribution dimension {_init_dim(init)} != model {dim}"
        )
    grid, out_index = time_grid(out_times, substep)
    n_steps = grid.size - 1
    x, noise = draw_paths_noise(init, m, n_steps, dim, seed, stream)
    tf = model.time_factor
    sq_tf = math.sqrt(tf)
    up = model.family.unpack(model.params.natural())
    out_times = np.asarray(out_times, dtype=np.float64)
    states = np.empty((m, out_times.size, dim))
    first_bad = np.full(m, -1)
    record = {int(g): i for i, g in enumerate(out_index)}
    if 0 in record:
        states[:, record[0], :] = x
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(n_steps):
            dt = grid[k + 1] - grid[k]
            b = model.family.drift(up, x, grid[k])
            s = model.family.diffusion(up, x, grid[k])
            x = x + (tf * dt) * b + (sq_tf * math.sqrt(dt)) * (s * noise[:, k, :])
            newly_bad = (first_bad < 0) & ~np.all(np.isfinite(x), axis=1)
            first_bad[newly_bad] = k + 1
            idx = record.get(k + 1)
            if idx is not None:
                states[:, idx, :] = x
    return TrajectoryBatch(
        times=out_times,
        states=states,
        seed=int(seed),
        stream=int(stream),
        diverged=first_bad >= 0,
        first_bad_step=first_bad,
    )


def batch_to_dataset(batch: TrajectoryBatch, coords=None):
    """View a trajectory batch as a snapshot dataset on the observed coords."""
    from .dataset import Snapshot, SnapshotDataset

    coords = list(coords) if coords is not None else None
    snaps = tuple(
        Snapshot(float(t), batch.states_at(i, coords))
        for i, t in enumerate(batch.times)
    )
    return SnapshotDataset(snaps)
