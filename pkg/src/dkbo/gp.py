"""Gaussian-process regression over probe poses.

Two kernels share one squared-exponential form; they differ only in the
features the distance is taken on:

* ``rbf``  -- unit-cube normalized 6D poses
* ``deep`` -- the scalar output of a :class:`~dkbo.net.DeepKernelNet`

The white-noise variance enters the Gram diagonal only. Observations are
centered by their mean before solving, and the offset is added back to the
predictive mean.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .pose import DEFAULT_BOUNDS, Bounds, ProbePose, normalize

log = logging.getLogger(__name__)

KERNELS = ("rbf", "deep")
LOG_BOUNDS = (-6.0, 4.0)
JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class GPError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    """Signal variance, noise variance and length-scale."""

    sigma_r: float = 1.0
    sigma_w: float = 1e-2
    length: float = 0.5

    def __post_init__(self):
        vals = (self.sigma_r, self.sigma_w, self.length)
        if not all(np.isfinite(vals)):
            raise ValueError("hyperparameters must be finite")
        if self.sigma_r < 0 or self.sigma_w < 0 or self.length <= 0:
            raise ValueError("need sigma_r >= 0, sigma_w >= 0, length > 0")

    @property
    def log(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log([self.sigma_r, self.sigma_w, self.length])

    @classmethod
    def from_log(cls, log_theta) -> "Hyperparams":
        s_r, s_w, ell = np.exp(np.asarray(log_theta, dtype=float))
        return cls(float(s_r), float(s_w), float(ell))

    def as_dict(self) -> dict:
        return {"sigma_r": self.sigma_r, "sigma_w": self.sigma_w, "length": self.length}


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def _kernel_features(kind, poses, bounds, net):
    raw = np.atleast_2d(np.asarray(poses, dtype=float))
    if kind == "rbf":
        return normalize(raw, bounds)
    if kind == "deep":
        if net is None:
            raise GPError("deep kernel needs a trained network")
        return net.embed(raw)[:, None]
    raise GPError(f"unknown kernel {kind!r}")


def _se(sq, theta: Hyperparams):
    return theta.sigma_r * np.exp(-0.5 * sq / theta.length ** 2)


def _pair_value(fi, fj, theta, same):
    sq = float(np.sum((fi - fj) ** 2))
    return float(_se(sq, theta)) + (theta.sigma_w if same else 0.0)


def kernel_rbf(p_i: ProbePose, p_j: ProbePose, theta: Hyperparams,
               bounds: Bounds = DEFAULT_BOUNDS, same_index: bool | None = None) -> float:
    """Squared-exponential on normalized poses plus white noise.

    The noise term counts when `same_index` is true; by default that means
    the two poses are identical.
    """
    fi = normalize(p_i, bounds)
    fj = normalize(p_j, bounds)
    same = (p_i == p_j) if same_index is None else same_index
    return _pair_value(fi, fj, theta, same)


def kernel_deep(p_i: ProbePose, p_j: ProbePose, theta: Hyperparams, net,
                same_index: bool | None = None) -> float:
    fi = net.embed(p_i.as_array())
    fj = net.embed(p_j.as_array())
    same = (p_i == p_j) if same_index is None else same_index
    return _pair_value(fi, fj, theta, same)


def gram(poses, kind: str, theta: Hyperparams, net=None, bounds: Bounds = DEFAULT_BOUNDS,
         jitter: float = 1e-8) -> np.ndarray:
    if isinstance(poses, (list, tuple)) and poses and isinstance(poses[0], ProbePose):
        poses = np.array([p.as_array() for p in poses])
    feats = _kernel_features(kind, poses, bounds, net)
    return _gram_from_features(feats, theta, jitter)


def _gram_from_features(feats, theta, jitter):
    K = _se(_sqdist(feats, feats), theta)
    K[np.diag_indices_from(K)] = theta.sigma_r + theta.sigma_w + jitter
    return K


class GPModel:
    """GP surrogate with a cached Cholesky factorization.

    Single writer: :meth:`set_data` and :meth:`set_hyperparams` invalidate
    the cache; prediction only reads it.
    """

    def __init__(self, kind: str = "rbf", net=None, bounds: Bounds = DEFAULT_BOUNDS,
                 theta: Hyperparams | None = None):
        if kind not in KERNELS:
            raise GPError(f"unknown kernel {kind!r}")
        if kind == "deep" and net is None:
            raise GPError("deep kernel needs a trained network")
        self.kind = kind
        self.net = net
        self.bounds = bounds
        self.theta = theta or Hyperparams()
        self.X = np.empty((0, 6))
        self.y = np.empty(0)
        self._feats = np.empty((0, 6 if kind == "rbf" else 1))
        self._cache = None

    # -- data and parameters -------------------------------------------
    def features(self, poses) -> np.ndarray:
        return _kernel_features(self.kind, poses, self.bounds, self.net)

    def set_data(self, poses, qualities) -> None:
        X = np.atleast_2d(np.asarray(poses, dtype=float)).reshape(-1, 6)
        y = np.asarray(qualities, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise GPError("pose and quality counts differ")
        self.X, self.y = X, y
        self._feats = self.features(X) if len(X) else self._feats[:0]
        self._cache = None

    def add_data(self, poses, qualities) -> None:
        X = np.atleast_2d(np.asarray(poses, dtype=float)).reshape(-1, 6)
        self.set_data(np.vstack([self.X, X]), np.concatenate([self.y, np.ravel(qualities)]))

    def set_hyperparams(self, theta: Hyperparams) -> None:
        self.theta = theta
        self._cache = None

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def offset(self) -> float:
        return float(self.y.mean()) if self.n else 0.0

    # -- factorization --------------------------------------------------
    def _factor(self, theta: Hyperparams):
        K0 = _gram_from_features(self._feats, theta, 0.0)
        for jitter in JITTER_LADDER:
            K = K0 + jitter * np.eye(self.n)
            try:
                L = cholesky(K, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(L)):
                return L, jitter
        raise GPError("Gram matrix not positive definite even with maximum jitter")

    def _factorized(self):
        if self._cache is None:
            if self.n == 0:
                raise GPError("GP has no observations")
            L, jitter = self._factor(self.theta)
            alpha = cho_solve((L, True), self.y - self.offset, check_finite=False)
            self._cache = (L, alpha, jitter)
        return self._cache

    @property
    def jitter(self) -> float:
        return self._factorized()[2]

    # -- prediction -----------------------------------------------------
    def predict_features(self, feats):
        L, alpha, _ = self._factorized()
        k = _se(_sqdist(feats, self._feats), self.theta)
        mean = self.offset + k @ alpha
        v = solve_triangular(L, k.T, lower=True, check_finite=False)
        var = self.theta.sigma_r - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def predict(self, poses):
        """Posterior mean and variance arrays at raw poses of shape (m, 6)."""
        return self.predict_features(self.features(poses))

    # -- evidence -------------------------------------------------------
    def log_marginal_likelihood(self, log_theta=None, jitter: float | None = None,
                                with_grad: bool = False):
        """Log evidence of centered observations under the Gram matrix.

        Gradients are with respect to (log sigma_r, log sigma_w, log length).
        Returns ``-inf`` (and a zero gradient) when the Gram matrix cannot
        be factorized.
        """
        theta = self.theta if log_theta is None else Hyperparams.from_log(log_theta)
        if self.n == 0:
            raise GPError("GP has no observations")
        y = self.y - self.offset
        sq = _sqdist(self._feats, self._feats)
        E = np.exp(-0.5 * sq / theta.length ** 2)
        K0 = theta.sigma_r * E
        K0[np.diag_indices_from(K0)] = theta.sigma_r + theta.sigma_w
        ladder = JITTER_LADDER if jitter is None else (jitter,)
        L = None
        for jit in ladder:
            try:
                L = cholesky(K0 + jit * np.eye(self.n), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                continue
        if L is None:
            return (-np.inf, np.zeros(3)) if with_grad else -np.inf
        alpha = cho_solve((L, True), y, check_finite=False)
        lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * self.n * np.log(2 * np.pi)
        if not with_grad:
            return float(lml)
        Kinv = cho_solve((L, True), np.eye(self.n), check_finite=False)
        W = np.outer(alpha, alpha) - Kinv
        dK_r = theta.sigma_r * E
        dK_l = dK_r * sq / theta.length ** 2
        g = 0.5 * np.array([
            np.sum(W * dK_r),
            theta.sigma_w * np.trace(W),
            np.sum(W * dK_l),
        ])
        return float(lml), g

    def fit(self, n_restarts: int = 5, seed: int = 0, max_iter: int = 200):
        """Maximize the evidence over log-hyperparameters with L-BFGS-B.

        Starts from the current hyperparameters plus `n_restarts` log-uniform
        draws inside the bound box. Returns ``(theta, ok)``; when no start
        yields a finite evidence the previous hyperparameters are kept and
        ``ok`` is False.
        """
        if self.n < 2:
            raise GPError("need at least 2 observations to fit hyperparameters")
        lo, hi = LOG_BOUNDS
        rng = np.random.default_rng(seed)
        starts = [np.clip(self.theta.log, lo, hi)]
        starts.extend(rng.uniform(lo, hi, size=(n_restarts, 3)))

        def objective(z):
            val, g = self.log_marginal_likelihood(z, with_grad=True)
            if not np.isfinite(val):
                return 1e25, np.zeros(3)
            return -val, -g

        best_z, best_val = None, -np.inf
        for z0 in starts:
            val0 = self.log_marginal_likelihood(z0)
            if np.isfinite(val0) and val0 > best_val:
                best_z, best_val = np.asarray(z0, dtype=float), val0
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(objective, z0, jac=True, method="L-BFGS-B",
                               bounds=[LOG_BOUNDS] * 3,
                               options={"maxcor": 10, "maxiter": max_iter, "gtol": 1e-6})
            val = self.log_marginal_likelihood(res.x)
            if np.isfinite(val) and val > best_val:
                best_z, best_val = res.x, val
        if best_z is None:
            log.warning("hyperparameter fit failed; keeping %s", self.theta)
            return self.theta, False
        self.set_hyperparams(Hyperparams.from_log(best_z))
        return self.theta, True


def posterior(gp: GPModel, pose: ProbePose):
    mean, var = gp.predict(pose.as_array())
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(gp: GPModel, theta: Hyperparams | None = None):
    return gp.log_marginal_likelihood(None if theta is None else theta.log, with_grad=True)


def fit_hyperparams(gp: GPModel, n_restarts: int = 5, seed: int = 0) -> Hyperparams:
    return gp.fit(n_restarts=n_restarts, seed=seed)[0]
