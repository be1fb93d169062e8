"""Synthetic ultrasound phantom.

A phantom maps a probe pose to a ground-truth image quality and renders a
segmentation-style mask whose filled area tracks that quality. Variants
P1 and P2 emulate thicker gel layers: the optimum is translated and the
minimum contact force rises with layer thickness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .pose import DEFAULT_BOUNDS, Bounds, ProbePose, normalize

VARIANTS = ("P0", "P1", "P2")

# Gel layer thickness in inches per variant; offsets scale linearly with it.
GEL_LAYER = {"P0": 0.0, "P1": 0.38, "P2": 0.63}

# P0 optimum and falloff widths on the unit cube (x, y, fz, roll, pitch, yaw).
# Widths were scaled so that ~9% of a 1200-point LHS design exceeds 0.8.
P0_OPTIMUM = (0.25, 0.55, 0.55, 0.5, 0.45, 0.55)
FALLOFF_WIDTHS = (0.25, 0.65, 0.52, 0.65, 0.65, 0.78)
# Unit-cube shift of the optimum per inch of gel.
OFFSET_PER_INCH = (0.16, -0.12, 0.20, 0.10, -0.10, 0.12)
P0_MIN_FORCE = 6.0  # N
MIN_FORCE_PER_INCH = 2.5  # N/inch
PEAK_GAIN = 1.25  # field saturates at 1 inside the optimum plateau


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomModel:
    variant: str
    optimum: ProbePose
    widths: tuple
    min_force: float
    grid: tuple = (64, 64)
    max_area: float = 0.35
    sigma_obs: float = 0.02
    seed: int = 0
    gain: float = PEAK_GAIN
    bounds: Bounds = field(default=DEFAULT_BOUNDS)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise PhantomError(f"unknown phantom variant {self.variant!r}")
        w = np.asarray(self.widths, dtype=float)
        if w.shape != (6,) or np.any(w <= 0):
            raise PhantomError("falloff widths must be 6 positive numbers")
        if not 0 < self.max_area <= 1:
            raise PhantomError("max_area must lie in (0, 1]")
        if self.sigma_obs < 0:
            raise PhantomError("sigma_obs must be non-negative")
        object.__setattr__(self, "widths", tuple(w.tolist()))

    @property
    def optimum_unit(self) -> np.ndarray:
        return normalize(self.optimum, self.bounds)

    def quality(self, poses) -> np.ndarray:
        """Vectorized ground-truth quality for an ``(n, 6)`` array of raw poses."""
        raw = np.atleast_2d(np.asarray(poses, dtype=float))
        unit = normalize(raw, self.bounds)
        z = (unit - self.optimum_unit) / np.asarray(self.widths)
        q = np.minimum(1.0, self.gain * np.exp(-0.5 * np.sum(z * z, axis=1)))
        q[raw[:, 2] < self.min_force] = 0.0
        return q

    def to_dict(self) -> dict:
        data = asdict(self)
        data["optimum"] = self.optimum.as_array().tolist()
        data["widths"] = list(self.widths)
        data["grid"] = list(self.grid)
        data["bounds"] = self.bounds.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PhantomModel":
        data = dict(data)
        data["optimum"] = ProbePose.from_array(data["optimum"])
        data["widths"] = tuple(data["widths"])
        data["grid"] = tuple(data.get("grid", (64, 64)))
        if "bounds" in data:
            data["bounds"] = Bounds.from_dict(data["bounds"])
        return cls(**data)


@dataclass(frozen=True)
class Observation:
    """One simulated scan.

    ``q_true`` is the noise-free ground truth; ``quality`` is the noisy value
    the mask was rendered from.
    """

    mask: np.ndarray
    contact: bool
    q_true: float
    quality: float


def make_phantom(variant: str = "P0", seed: int = 0, bounds: Bounds = DEFAULT_BOUNDS,
                 **overrides) -> PhantomModel:
    if variant not in VARIANTS:
        raise PhantomError(f"unknown phantom variant {variant!r}")
    layer = GEL_LAYER[variant]
    unit_opt = np.asarray(P0_OPTIMUM) + layer * np.asarray(OFFSET_PER_INCH)
    optimum = ProbePose.from_array(bounds.lower + unit_opt * bounds.width)
    params = dict(
        variant=variant,
        optimum=optimum,
        widths=FALLOFF_WIDTHS,
        min_force=P0_MIN_FORCE + MIN_FORCE_PER_INCH * layer,
        seed=seed,
        bounds=bounds,
    )
    params.update(overrides)
    return PhantomModel(**params)


def ground_truth_quality(phantom: PhantomModel, pose: ProbePose) -> float:
    return float(phantom.quality(pose.as_array())[0])


@lru_cache(maxsize=8)
def _pixel_order(height: int, width: int) -> np.ndarray:
    # Pixels ranked by elliptic radius around the grid centre (aspect 3:2),
    # so the first k pixels always form a filled ellipse of area k.
    rows, cols = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    r2 = ((rows - cy) / 2.0) ** 2 + ((cols - cx) / 3.0) ** 2
    order = np.argsort(r2.ravel(), kind="stable")
    order.setflags(write=False)
    return order


def mask_from_quality(quality: float, grid=(64, 64), max_area: float = 0.35) -> np.ndarray:
    height, width = grid
    n_pix = height * width
    # floor keeps the mean within [0, max_area]
    k = int(np.floor(float(np.clip(quality, 0.0, 1.0)) * max_area * n_pix + 1e-9))
    flat = np.zeros(n_pix)
    flat[_pixel_order(height, width)[:k]] = 1.0
    return flat.reshape(height, width)


def render_mask(phantom: PhantomModel, pose: ProbePose) -> np.ndarray:
    return mask_from_quality(ground_truth_quality(phantom, pose), phantom.grid, phantom.max_area)


def observe(phantom: PhantomModel, pose: ProbePose, noise_seed: int = 0) -> Observation:
    q_true = ground_truth_quality(phantom, pose)
    contact = pose.fz >= phantom.min_force
    if contact and phantom.sigma_obs > 0:
        rng = np.random.default_rng([phantom.seed, noise_seed])
        quality = float(np.clip(q_true + phantom.sigma_obs * rng.standard_normal(), 0.0, 1.0))
    else:
        quality = q_true
    mask = mask_from_quality(quality, phantom.grid, phantom.max_area) if contact else np.zeros(phantom.grid)
    return Observation(mask=mask, contact=bool(contact), q_true=q_true, quality=quality)
