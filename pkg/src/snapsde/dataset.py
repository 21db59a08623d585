"""Snapshot datasets: ingestion, validation, time scaling, splits, weights.

A dataset is an ordered collection of snapshots, each holding the states
observed at one time. Datasets are immutable after construction and safe
to share across workers. State dimensions that exist in the model but are
never measured are declared through ``dim_state``/``observed_coords``; the
dataset itself stores observed values only, never imputations.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np


class ParseError(ValueError):
    """A data file could not be parsed; carries the offending line number."""


class ValidationError(ValueError):
    """Parsed data violates a dataset invariant (e.g. non-finite values)."""


class InsufficientDataError(ValueError):
    """Fewer distinct time points than the operation requires."""


class DegenerateRangeError(ValueError):
    """All observation times are equal; no time scale can be defined."""


@dataclass(frozen=True)
class TimeScale:
    """Affine map from raw time to scaled time: scaled = (raw - offset) / factor."""

    offset: float
    factor: float

    def to_scaled(self, t):
        return (np.asarray(t, dtype=np.float64) - self.offset) / self.factor

    def to_raw(self, s):
        return np.asarray(s, dtype=np.float64) * self.factor + self.offset


@dataclass(frozen=True)
class Snapshot:
    """States observed at a single time: an (N_i, d) matrix."""

    time: float
    states: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "time", float(self.time))
        if states.shape[0] < 1:
            raise ValidationError(f"snapshot at t={self.time} has no rows")
        if not np.all(np.isfinite(states)):
            raise ValidationError(f"non-finite state value at t={self.time}")
        if not math.isfinite(self.time):
            raise ValidationError("non-finite snapshot time")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class SnapshotDataset:
    """Ordered snapshots with strictly increasing times.

    ``dim_state`` is the model state dimension D (>= observed dimension d);
    ``observed_coords`` maps each data column to a model coordinate.
    ``time_scale`` is set once the dataset's times have been scaled and maps
    the original raw times to the current (scaled) ones.
    """

    snapshots: tuple[Snapshot, ...]
    dim_state: int = 0  # 0 means "same as observed"
    observed_coords: tuple[int, ...] = ()
    time_scale: TimeScale | None = field(default=None, compare=False)

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        object.__setattr__(self, "snapshots", snaps)
        if not snaps:
            raise ValidationError("dataset has no snapshots")
        d = snaps[0].dim
        for s in snaps:
            if s.dim != d:
                raise ValidationError(
                    f"inconsistent state dimension: {s.dim} != {d} at t={s.time}"
                )
        times = [s.time for s in snaps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("snapshot times must be strictly increasing")
        if self.dim_state == 0:
            object.__setattr__(self, "dim_state", d)
        if not self.observed_coords:
            object.__setattr__(self, "observed_coords", tuple(range(d)))
        obs = tuple(int(c) for c in self.observed_coords)
        object.__setattr__(self, "observed_coords", obs)
        if len(obs) != d:
            raise ValidationError(
                f"observed_coords has {len(obs)} entries for {d} data columns"
            )
        if len(set(obs)) != len(obs):
            raise ValidationError("observed_coords contains duplicates")
        if any(c < 0 or c >= self.dim_state for c in obs):
            raise ValidationError("observed coordinate outside [0, dim_state)")
        if self.dim_state < d:
            raise ValidationError("dim_state smaller than observed dimension")

    @property
    def n_times(self) -> int:
        return len(self.snapshots)

    @property
    def dim_observed(self) -> int:
        return self.snapshots[0].dim

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.n for s in self.snapshots])

    def pooled_states(self) -> np.ndarray:
        """All observations stacked into one (sum N_i, d) matrix."""
        return np.concatenate([s.states for s in self.snapshots], axis=0)

    def with_dims(self, dim_state: int, observed_coords) -> "SnapshotDataset":
        """Declare a latent model dimension for this data (D > d)."""
        return replace(
            self, dim_state=dim_state, observed_coords=tuple(observed_coords)
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation split rule.

    mode 'alternating' trains on even positions (1st, 3rd, ... snapshot);
    'holdout_last_k' reserves the final k snapshots; 'index_list' is
    explicit. Index sets must be disjoint.
    """

    mode: str
    k: int = 1
    train_indices: tuple[int, ...] = ()
    val_indices: tuple[int, ...] = ()

    @staticmethod
    def alternating() -> "SplitSpec":
        return SplitSpec(mode="alternating")

    @staticmethod
    def holdout_last_k(k: int) -> "SplitSpec":
        return SplitSpec(mode="holdout_last_k", k=k)

    @staticmethod
    def index_list(train_indices, val_indices) -> "SplitSpec":
        return SplitSpec(
            mode="index_list",
            train_indices=tuple(train_indices),
            val_indices=tuple(val_indices),
        )


def load_csv(path) -> SnapshotDataset:
    """Read a ``time,y1,...,yd`` CSV into a dataset.

    Rows are grouped into snapshots by exact floating equality of the parsed
    time, so replicates must share identical recorded time strings. Rows may
    appear in any order.
    """
    groups: dict[float, list[list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0].strip() != "time":
            raise ParseError(f"{path}: line 1: header must start with 'time'")
        ncol = len(header)
        if ncol < 2:
            raise ParseError(f"{path}: line 1: no state columns")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncol:
                raise ParseError(
                    f"{path}: line {lineno}: expected {ncol} fields, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValidationError(f"{path}: line {lineno}: non-finite value")
            groups.setdefault(vals[0], []).append(vals[1:])
    if len(groups) < 2:
        raise InsufficientDataError(
            f"{path}: need at least 2 distinct times, found {len(groups)}"
        )
    snaps = [
        Snapshot(t, np.array(groups[t], dtype=np.float64)) for t in sorted(groups)
    ]
    return SnapshotDataset(tuple(snaps))


def save_csv(ds: SnapshotDataset, path) -> None:
    """Write a dataset as a ``time,y1,...,yd`` CSV (full float precision)."""
    d = ds.dim_observed
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"y{j + 1}" for j in range(d)])
        for snap in ds.snapshots:
            t = f"{snap.time:.17g}"
            for row in snap.states:
                writer.writerow([t] + [f"{v:.17g}" for v in row])


def to_json_dict(ds: SnapshotDataset) -> dict:
    out = {
        "snapshots": [
            {"time": s.time, "states": s.states.tolist()} for s in ds.snapshots
        ],
        "dim_state": ds.dim_state,
        "observed_coords": list(ds.observed_coords),
    }
    if ds.time_scale is not None:
        out["time_scale"] = {
            "offset": ds.time_scale.offset,
            "factor": ds.time_scale.factor,
        }
    return out


def from_json_dict(obj: dict) -> SnapshotDataset:
    snaps = tuple(
        Snapshot(s["time"], np.array(s["states"], dtype=np.float64))
        for s in obj["snapshots"]
    )
    scale = None
    if obj.get("time_scale") is not None:
        scale = TimeScale(obj["time_scale"]["offset"], obj["time_scale"]["factor"])
    return SnapshotDataset(
        snaps,
        dim_state=obj.get("dim_state", 0),
        observed_coords=tuple(obj.get("observed_coords", ())),
        time_scale=scale,
    )


def save_json(ds: SnapshotDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_json_dict(ds), fh)


def load_json(path) -> SnapshotDataset:
    with open(path, encoding="utf-8") as fh:
        return from_json_dict(json.load(fh))


def scale_times(ds: SnapshotDataset, scale: TimeScale | None = None) -> SnapshotDataset:
    """Map times onto [0, 1] (first -> 0, last -> 1), or apply a given scale.

    Passing the scale of a training set maps validation/forecast times into
    the same scaled clock; such times may land outside [0, 1]. The returned
    dataset's ``time_scale`` always maps the original raw times to the new
    ones, composing with any scaling already applied.
    """
    times = ds.times
    if scale is None:
        if ds.n_times < 2:
            raise InsufficientDataError("need at least 2 distinct times to scale")
        span = times[-1] - times[0]
        if span <= 0:
            raise DegenerateRangeError("all snapshot times equal")
        scale = TimeScale(offset=float(times[0]), factor=float(span))
    snaps = tuple(
        Snapshot(float(scale.to_scaled(s.time)), s.states) for s in ds.snapshots
    )
    if ds.time_scale is None:
        total = scale
    else:
        prior = ds.time_scale
        # raw -> prior -> scale, combined into one affine map from raw time
        total = TimeScale(
            offset=prior.offset + scale.offset * prior.factor,
            factor=prior.factor * scale.factor,
        )
    return replace(ds, snapshots=snaps, time_scale=total)


def split(ds: SnapshotDataset, spec: SplitSpec):
    """Partition the snapshots into (train, validation) datasets."""
    n = ds.n_times
    if spec.mode == "alternating":
        train_idx = list(range(0, n, 2))
        val_idx = list(range(1, n, 2))
    elif spec.mode == "holdout_last_k":
        if not 0 < spec.k < n:
            raise ValueError(f"holdout_last_k: k={spec.k} out of range for {n} snapshots")
        train_idx = list(range(n - spec.k))
        val_idx = list(range(n - spec.k, n))
    elif spec.mode == "index_list":
        train_idx = sorted(spec.train_indices)
        val_idx = sorted(spec.val_indices)
        both = set(train_idx) & set(val_idx)
        if both:
            raise ValueError(f"train/validation indices overlap: {sorted(both)}")
        if any(i < 0 or i >= n for i in train_idx + val_idx):
            raise ValueError("split index out of range")
    else:
        raise ValueError(f"unknown split mode {spec.mode!r}")
    if not train_idx:
        raise ValueError("split produced an empty training set")
    if not val_idx:
        raise ValueError("split produced an empty validation set")
    take = lambda idx: replace(ds, snapshots=tuple(ds.snapshots[i] for i in idx))
    return take(train_idx), take(val_idx)


def merge(a: SnapshotDataset, b: SnapshotDataset) -> SnapshotDataset:
    """Recombine two disjoint splits into one dataset ordered by time."""
    snaps = sorted(a.snapshots + b.snapshots, key=lambda s: s.time)
    return replace(a, snapshots=tuple(snaps))


def weights(ds: SnapshotDataset) -> np.ndarray:
    """Per-time weights w_i = (N_i / sum_j N_j)^2, in snapshot order."""
    counts = ds.counts.astype(np.float64)
    frac = counts / counts.sum()
    return frac * frac
