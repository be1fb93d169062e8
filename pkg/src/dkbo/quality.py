"""Image-quality feedback scores plus the segmentation losses and
second-order pooling arithmetic used by the quality estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phantom import Observation

CLASS_CUTS = (0.2, 0.4, 0.6, 0.8)
CLASS_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
BCE_EPS = 1e-7
FEEDBACKS = ("q_c", "q_s")


@dataclass(frozen=True)
class QualityScore:
    value: float
    kind: str

    def __post_init__(self):
        if self.kind not in FEEDBACKS:
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"quality score {self.value} outside [0, 1]")
        if self.kind == "q_c" and self.value not in CLASS_LEVELS:
            raise ValueError(f"q_c score {self.value} is not a class level")


def seg_score(mask, max_area: float = 0.35) -> QualityScore:
    """Normalized mask mean: 1 when the filled area reaches `max_area`."""
    mask = np.asarray(mask, dtype=float)
    if mask.size == 0:
        raise ValueError("empty mask")
    return QualityScore(float(np.clip(mask.mean() / max_area, 0.0, 1.0)), "q_s")


def quantize(seg_value: float) -> float:
    """Five-level staircase: level L in 1..5 mapped to (L - 1) / 4."""
    level = 1 + int(np.searchsorted(CLASS_CUTS, seg_value, side="right"))
    return (level - 1) / 4.0


def class_score(obs: Observation, max_area: float = 0.35) -> QualityScore:
    if not obs.contact:
        return QualityScore(0.0, "q_c")
    return QualityScore(quantize(seg_score(obs.mask, max_area).value), "q_c")


def feedback_score(obs: Observation, kind: str, max_area: float = 0.35) -> QualityScore:
    if kind == "q_s":
        return seg_score(obs.mask, max_area)
    if kind == "q_c":
        return class_score(obs, max_area)
    raise ValueError(f"unknown feedback kind {kind!r}")


def _pair(y_t, y_p):
    y_t = np.asarray(y_t, dtype=float)
    y_p = np.asarray(y_p, dtype=float)
    if y_t.shape != y_p.shape:
        raise ValueError(f"mask shapes differ: {y_t.shape} vs {y_p.shape}")
    return y_t, y_p


def dice_loss(y_t, y_p, s: float = 1.0) -> float:
    y_t, y_p = _pair(y_t, y_p)
    inter = np.sum(y_t * y_p)
    return float(1.0 - (2.0 * inter + s) / (np.sum(y_t) + np.sum(y_p) + s))


def jaccard_loss(y_t, y_p, s: float = 1.0) -> float:
    y_t, y_p = _pair(y_t, y_p)
    inter = np.sum(y_t * y_p)
    return float(1.0 - (inter + s) / (np.sum(y_t) + np.sum(y_p) - inter + s))


def bce_loss(y_t, y_p, eps: float = BCE_EPS) -> float:
    """Pixel-mean binary cross-entropy with predictions clipped to [eps, 1 - eps]."""
    y_t, y_p = _pair(y_t, y_p)
    y_p = np.clip(y_p, eps, 1.0 - eps)
    return float(np.mean(-y_t * np.log(y_p) - (1.0 - y_t) * np.log1p(-y_p)))


def djb_loss(y_t, y_p, s: float = 1.0) -> float:
    return dice_loss(y_t, y_p, s) + jaccard_loss(y_t, y_p, s) + bce_loss(y_t, y_p)


def sop_covariance(X, projection) -> np.ndarray:
    """Covariance of channel-reduced features across spatial positions.

    Parameters
    ----------
    X : array, shape (H, W, N)
        Feature volume.
    projection : array, shape (N, M)
        Fixed channel-reduction weights (a 1x1 convolution without bias).

    Returns
    -------
    array, shape (M, M)
        Sum of centered outer products over the H*W positions.
    """
    X = np.asarray(X, dtype=float)
    projection = np.atleast_2d(np.asarray(projection, dtype=float))
    if X.ndim != 3:
        raise ValueError("feature volume must have shape (H, W, N)")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature volume has non-finite entries")
    if projection.shape[0] != X.shape[2]:
        raise ValueError("projection rows must equal the channel count")
    if projection.shape[1] == 0:
        raise ValueError("reduced channel count must be at least 1")
    if projection.shape[1] > X.shape[2]:
        raise ValueError("cannot reduce to more channels than the volume has")
    reduced = X.reshape(-1, X.shape[2]) @ projection
    centered = reduced - reduced.mean(axis=0)
    C = centered.T @ centered
    return 0.5 * (C + C.T)


def sop_reweight(X, w) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape[0] != X.shape[-1]:
        raise ValueError(f"weight length {w.shape[0]} != channel count {X.shape[-1]}")
    return X * w
