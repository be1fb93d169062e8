"""One Bayesian-optimization run over probe poses, and run metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .acquisition import AcqConfig, propose
from .gp import GPError, GPModel, Hyperparams, KERNELS
from .phantom import PhantomModel, observe
from .pose import DEFAULT_BOUNDS, FIELDS, Bounds, ProbePose, clamp_pose, latin_hypercube_array
from .quality import FEEDBACKS, feedback_score

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    kernel: str = "deep"
    feedback: str = "q_s"
    variant: str = "P0"
    budget: int = 50
    n_init: int = 3
    hqr_threshold: float = 0.8
    seed: int = 0
    noise_seed: int = 0
    acq: AcqConfig = field(default_factory=AcqConfig)
    refit_warmup: int = 10  # refit at every step up to here
    refit_period: int = 2  # then every `refit_period` steps
    fit_restarts: int = 5
    bounds: Bounds = field(default=DEFAULT_BOUNDS)

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.feedback not in FEEDBACKS:
            raise ValueError(f"unknown feedback {self.feedback!r}")
        if self.budget < 1:
            raise ValueError("step budget must be >= 1")
        if self.n_init < 1:
            raise ValueError("initial design needs at least one pose")
        if not 0.0 < self.hqr_threshold < 1.0:
            raise ValueError("HQR threshold must lie in (0, 1)")

    def refit_due(self, step: int) -> bool:
        return step <= self.refit_warmup or step % self.refit_period == 0

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


@dataclass
class StepRecord:
    step: int  # 0 for the initial design, 1..budget for BO steps
    pose: ProbePose
    quality: float
    theta: dict | None = None
    ei: float | None = None
    fallback: bool = False
    fit_failed: bool = False
    refit: bool = False
    seconds: float = 0.0

    @property
    def is_design(self) -> bool:
        return self.step == 0

    def to_record(self) -> dict:
        rec = {"step": self.step}
        rec.update(zip(FIELDS, self.pose.as_array().tolist()))
        rec["quality"] = self.quality
        th = self.theta or {}
        rec["sigma_r"] = th.get("sigma_r")
        rec["sigma_w"] = th.get("sigma_w")
        rec["length"] = th.get("length")
        rec["ei"] = self.ei
        rec["fallback"] = self.fallback
        rec["fit_failed"] = self.fit_failed
        rec["refit"] = self.refit
        rec["seconds"] = self.seconds
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "StepRecord":
        theta = None
        if rec.get("sigma_r") is not None:
            theta = {k: rec[k] for k in ("sigma_r", "sigma_w", "length")}
        return cls(
            step=int(rec["step"]),
            pose=ProbePose(*(rec[k] for k in FIELDS)),
            quality=float(rec["quality"]),
            theta=theta,
            ei=rec.get("ei"),
            fallback=bool(rec.get("fallback", False)),
            fit_failed=bool(rec.get("fit_failed", False)),
            refit=bool(rec.get("refit", False)),
            seconds=float(rec.get("seconds", 0.0)),
        )


@dataclass
class RunTrace:
    steps: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    aborted: str | None = None

    def __len__(self):
        return len(self.steps)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([s.quality for s in self.steps], dtype=float)

    @property
    def bo_qualities(self) -> np.ndarray:
        return np.array([s.quality for s in self.steps if not s.is_design], dtype=float)

    @property
    def best_so_far(self) -> np.ndarray:
        q = self.qualities
        return np.maximum.accumulate(q) if q.size else q

    @property
    def wall_clock(self) -> float:
        return float(sum(s.seconds for s in self.steps))


def _design_seed(cfg: RunConfig) -> int:
    return int(np.random.SeedSequence([cfg.seed, 0]).generate_state(1)[0])


def _step_seed(cfg: RunConfig, step: int, stream: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, stream, step]).generate_state(1)[0])


def run_bo(cfg: RunConfig, phantom: PhantomModel, net=None) -> RunTrace:
    """Initial LHS design, then fit -> maximize EI -> clamp -> observe for
    `cfg.budget` steps."""
    if cfg.kernel == "deep" and net is None:
        raise ValueError("deep-kernel runs need a trained network")
    trace = RunTrace(config=_config_record(cfg))
    bounds = cfg.bounds

    def measure(pose, stream, index):
        noise = int(np.random.SeedSequence([cfg.noise_seed, stream, index]).generate_state(1)[0])
        obs = observe(phantom, pose, noise_seed=noise)
        return feedback_score(obs, cfg.feedback, phantom.max_area).value

    design = latin_hypercube_array(cfg.n_init, bounds, _design_seed(cfg))
    for i, row in enumerate(design):
        t0 = time.perf_counter()
        pose = clamp_pose(ProbePose.from_array(row), bounds)
        try:
            q = measure(pose, 1, i)
        except Exception as exc:
            trace.aborted = f"observation failed: {exc}"
            return trace
        trace.steps.append(StepRecord(0, pose, q, seconds=time.perf_counter() - t0))

    gp = GPModel(cfg.kernel, net=net if cfg.kernel == "deep" else None, bounds=bounds,
                 theta=_initial_theta(cfg))
    for step in range(1, cfg.budget + 1):
        t0 = time.perf_counter()
        gp.set_data([s.pose.as_array() for s in trace.steps], trace.qualities)
        refit = cfg.refit_due(step)
        fit_failed = False
        if refit:
            try:
                _, ok = gp.fit(n_restarts=cfg.fit_restarts, seed=_step_seed(cfg, step, 3))
                fit_failed = not ok
            except GPError as exc:
                log.warning("step %d: GP fit failed (%s); keeping previous theta", step, exc)
                fit_failed = True
        try:
            prop = propose(gp, bounds, cfg.acq, seed=_step_seed(cfg, step, 5))
        except GPError as exc:
            trace.aborted = f"acquisition failed at step {step}: {exc}"
            return trace
        pose = clamp_pose(prop.pose, bounds)
        try:
            q = measure(pose, 2, step)
        except Exception as exc:
            trace.aborted = f"observation failed at step {step}: {exc}"
            return trace
        trace.steps.append(StepRecord(
            step, pose, q, theta=gp.theta.as_dict(), ei=prop.ei, fallback=prop.fallback,
            fit_failed=fit_failed, refit=refit, seconds=time.perf_counter() - t0,
        ))
    return trace


def _initial_theta(cfg: RunConfig) -> Hyperparams:
    return Hyperparams(sigma_r=0.1, sigma_w=1e-3, length=0.3 if cfg.kernel == "rbf" else 0.1)


def _config_record(cfg: RunConfig) -> dict:
    rec = asdict(cfg)
    rec["bounds"] = cfg.bounds.to_dict()
    return rec


def steps_to_hqr(trace: RunTrace, threshold: float = 0.8):
    """1-based BO step of the first quality above `threshold`, or None."""
    for i, q in enumerate(trace.bo_qualities, start=1):
        if q > threshold:
            return i
    return None


def hqr_count(trace: RunTrace, threshold: float = 0.8) -> int:
    return int(np.sum(trace.bo_qualities > threshold))


@dataclass
class Summary:
    quality_mean: np.ndarray
    quality_sd: np.ndarray
    best_mean: np.ndarray
    best_sd: np.ndarray
    median_steps_to_hqr: float | None
    total_hqr: int
    success_rate: float
    n_runs: int


def aggregate(traces, threshold: float = 0.8) -> Summary:
    """Per-step mean and population SD across runs of equal length."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to aggregate")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have unequal lengths {sorted(lengths)}")
    # Sorting each column makes the statistics independent of run order.
    Q = np.sort(np.vstack([t.qualities for t in traces]), axis=0)
    B = np.sort(np.vstack([t.best_so_far for t in traces]), axis=0)
    hits = [steps_to_hqr(t, threshold) for t in traces]
    med = float(np.median([np.inf if h is None else h for h in hits]))
    return Summary(
        quality_mean=Q.mean(axis=0),
        quality_sd=Q.std(axis=0),
        best_mean=B.mean(axis=0),
        best_sd=B.std(axis=0),
        median_steps_to_hqr=None if not np.isfinite(med) else med,
        total_hqr=int(sum(hqr_count(t, threshold) for t in traces)),
        success_rate=sum(h is not None for h in hits) / len(traces),
        n_runs=len(traces),
    )
