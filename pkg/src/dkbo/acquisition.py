"""Expected improvement and its bounded maximization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .pose import Bounds, ProbePose, denormalize, lhs_unit

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class AcqConfig:
    xi: float = 0.1
    n_restarts: int = 32
    max_iter: int = 40
    pool_size: int = 2048
    initial_step: float = 0.1
    min_step: float = 1e-4

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be non-negative")
        if min(self.n_restarts, self.max_iter, self.pool_size) < 1:
            raise ValueError("acquisition counts must be >= 1")


def expected_improvement(mean, variance, q_plus, xi=0.1):
    """EI = (mu - q+ - xi) Phi(Z) + sigma phi(Z) with Z = (mu - q+ - xi) / sigma.

    Zero wherever the variance is zero. Accepts scalars or arrays.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    imp = mean - q_plus - xi
    pos = sigma > 0
    z = np.where(pos, imp / np.where(pos, sigma, 1.0), 0.0)
    ei = imp * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(pos, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei


@dataclass(frozen=True)
class Proposal:
    pose: ProbePose
    unit: np.ndarray
    ei: float
    fallback: bool


_DIRECTIONS = np.vstack([np.eye(6), -np.eye(6)])


def propose(gp, bounds: Bounds, cfg: AcqConfig = AcqConfig(), seed: int = 0,
            q_plus: float | None = None) -> Proposal:
    """Maximize EI over `bounds`.

    An LHS candidate pool is scored, then the best `cfg.n_restarts`
    candidates are refined together by compass pattern search on the unit
    cube. When EI is zero everywhere, the pool point of largest posterior
    variance is returned with ``fallback=True``.
    """
    rng = np.random.default_rng(seed)
    if q_plus is None:
        q_plus = float(np.max(gp.y))

    def score(unit):
        mean, var = gp.predict(denormalize(unit, bounds))
        return expected_improvement(mean, var, q_plus, cfg.xi), var

    pool = lhs_unit(cfg.pool_size, 6, rng)
    ei_pool, var_pool = score(pool)
    if not np.any(ei_pool > 0):
        i = int(np.argmax(var_pool))
        return Proposal(_to_pose(pool[i], bounds), pool[i], 0.0, True)

    top = np.argsort(-ei_pool, kind="stable")[: cfg.n_restarts]
    x = pool[top].copy()
    f = ei_pool[top].copy()
    step = np.full(len(x), cfg.initial_step)
    for _ in range(cfg.max_iter):
        active = np.flatnonzero(step >= cfg.min_step)
        if active.size == 0:
            break
        polls = np.clip(x[active, None, :] + step[active, None, None] * _DIRECTIONS, 0.0, 1.0)
        vals, _ = score(polls.reshape(-1, 6))
        vals = vals.reshape(active.size, len(_DIRECTIONS))
        j = np.argmax(vals, axis=1)
        best = vals[np.arange(active.size), j]
        better = best > f[active]
        moved = active[better]
        x[moved] = polls[better, j[better]]
        f[moved] = best[better]
        step[active[~better]] *= 0.5

    i = int(np.argmax(f))
    return Proposal(_to_pose(x[i], bounds), x[i], float(f[i]), False)


def _to_pose(unit, bounds):
    raw = np.clip(denormalize(unit, bounds), bounds.lower, bounds.upper)
    return ProbePose.from_array(raw)


def maximize_acquisition(gp, bounds: Bounds, cfg: AcqConfig = AcqConfig(), seed: int = 0) -> ProbePose:
    return propose(gp, bounds, cfg, seed).pose
