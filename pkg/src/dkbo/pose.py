"""Probe pose space: bounds, clamping, unit-cube normalization and LHS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FIELDS = ("x", "y", "fz", "roll", "pitch", "yaw")
FORCE_LIMIT = 20.0  # newtons; hard safety limit on the contact force


class PoseError(ValueError):
    """Raised for non-finite or out-of-bounds probe poses."""


@dataclass(frozen=True)
class ProbePose:
    """6D probe control vector. Units: m, m, N, rad, rad, rad."""

    x: float
    y: float
    fz: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in FIELDS:
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise PoseError(f"pose field {name!r} is not finite: {value}")
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.fz, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, values) -> "ProbePose":
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (6,):
            raise PoseError(f"expected 6 pose values, got {values.shape[0]}")
        return cls(*values.tolist())

    def replace(self, **changes) -> "ProbePose":
        data = {name: getattr(self, name) for name in FIELDS}
        data.update(changes)
        return ProbePose(**data)


@dataclass(frozen=True)
class Bounds:
    """Closed interval per pose dimension, in :data:`FIELDS` order."""

    lo: tuple = (-0.05, -0.02, 5.0, -0.2, -0.2, -0.5)
    hi: tuple = (0.05, 0.02, 20.0, 0.2, 0.2, 0.5)
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _hi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (6,) or hi.shape != (6,):
            raise ValueError("bounds need exactly 6 lower and 6 upper values")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        bad = np.flatnonzero(lo >= hi)
        if bad.size:
            raise ValueError(f"empty interval for dimension {FIELDS[bad[0]]!r}")
        if hi[2] > FORCE_LIMIT:
            raise ValueError(f"force upper bound {hi[2]} N exceeds the {FORCE_LIMIT} N limit")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    @property
    def lower(self) -> np.ndarray:
        return self._lo

    @property
    def upper(self) -> np.ndarray:
        return self._hi

    @property
    def width(self) -> np.ndarray:
        return self._hi - self._lo

    def contains(self, pose: ProbePose) -> bool:
        v = pose.as_array()
        return bool(np.all(v >= self._lo) and np.all(v <= self._hi))

    def to_dict(self) -> dict:
        return {name: [lo, hi] for name, lo, hi in zip(FIELDS, self.lo, self.hi)}

    @classmethod
    def from_dict(cls, data: dict) -> "Bounds":
        missing = [name for name in FIELDS if name not in data]
        if missing:
            raise ValueError(f"bounds missing dimensions: {missing}")
        return cls(lo=tuple(data[n][0] for n in FIELDS), hi=tuple(data[n][1] for n in FIELDS))


DEFAULT_BOUNDS = Bounds()


def clamp_pose(pose: ProbePose, bounds: Bounds = DEFAULT_BOUNDS) -> ProbePose:
    """Project every pose field into its interval."""
    v = pose.as_array()
    clipped = np.clip(v, bounds.lower, bounds.upper)
    if np.array_equal(clipped, v):
        return pose
    return ProbePose.from_array(clipped)


def _check_in_bounds(values: np.ndarray, bounds: Bounds) -> None:
    below = values < bounds.lower
    above = values > bounds.upper
    bad = below | above
    if np.any(bad):
        row, dim = np.argwhere(bad)[0] if values.ndim == 2 else (0, np.flatnonzero(bad)[0])
        value = values[row, dim] if values.ndim == 2 else values[dim]
        raise PoseError(
            f"{FIELDS[dim]}={value:g} outside [{bounds.lower[dim]:g}, {bounds.upper[dim]:g}]"
        )


def normalize(pose, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Map a pose (or an ``(n, 6)`` array of raw poses) onto the unit cube.

    Raises :class:`PoseError` naming the first offending dimension when any
    value lies outside `bounds`.
    """
    values = pose.as_array() if isinstance(pose, ProbePose) else np.asarray(pose, dtype=float)
    if not np.all(np.isfinite(values)):
        raise PoseError("pose contains non-finite values")
    _check_in_bounds(values, bounds)
    return (values - bounds.lower) / bounds.width


def denormalize(unit, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Inverse of :func:`normalize` on raw arrays."""
    unit = np.asarray(unit, dtype=float)
    return bounds.lower + unit * bounds.width


def to_poses(values) -> list[ProbePose]:
    return [ProbePose.from_array(row) for row in np.atleast_2d(values)]


def lhs_unit(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design on ``[0, 1)^dim``.

    Each column is an independent random permutation of the strata, with the
    sample drawn uniformly inside its stratum.
    """
    if n <= 0:
        return np.empty((0, dim))
    strata = np.column_stack([rng.permutation(n) for _ in range(dim)])
    return (strata + rng.random((n, dim))) / n


def latin_hypercube(n: int, bounds: Bounds = DEFAULT_BOUNDS, seed: int = 0) -> list[ProbePose]:
    return to_poses(latin_hypercube_array(n, bounds, seed)) if n > 0 else []


def latin_hypercube_array(n: int, bounds: Bounds = DEFAULT_BOUNDS, seed: int = 0) -> np.ndarray:
    """Raw ``(n, 6)`` pose array from a seeded Latin hypercube design."""
    rng = np.random.default_rng(seed)
    unit = lhs_unit(n, 6, rng)
    return np.clip(denormalize(unit, bounds), bounds.lower, bounds.upper)
