"""Experiment harness: offline dataset collection, kernel training, the
kernel x feedback x phantom grid, and report generation.

Every file written here is a pure function of its inputs and seeds, except
``timing.csv`` and the per-step ``seconds`` field in trace files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import AcqConfig
from .engine import RunConfig, RunTrace, StepRecord, aggregate, hqr_count, run_bo, steps_to_hqr
from .gp import KERNELS
from .net import LearningCurve, OfflineDataset, TrainConfig, init_net, load_net, save_net, train
from .phantom import VARIANTS, make_phantom, observe
from .pose import DEFAULT_BOUNDS, FIELDS, Bounds, ProbePose, latin_hypercube_array
from .quality import FEEDBACKS, seg_score

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DATASET_HEADER = ["variant", *FIELDS, "q"]
SUMMARY_HEADER = ["variant", "kernel", "feedback", "run", "steps_to_hqr", "hqr_count",
                  "best_final", "trace_file"]
CURVE_HEADER = ["index", "step", "quality_mean", "quality_sd", "best_mean", "best_sd"]


class ConfigError(ValueError):
    """Invalid experiment configuration; reported before any run starts."""


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1)[0])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


# -- offline dataset ------------------------------------------------------

def collect_dataset(variants=("P0", "P1"), n_per_variant: int = 600, seed: int = 0,
                    bounds: Bounds = DEFAULT_BOUNDS, phantom_seed: int = 0,
                    sigma_obs: float = 0.02) -> OfflineDataset:
    """Scan each phantom at LHS poses and record the q_s feedback."""
    poses, qualities, tags = [], [], []
    for i, variant in enumerate(variants):
        phantom = make_phantom(variant, seed=phantom_seed, bounds=bounds, sigma_obs=sigma_obs)
        design = latin_hypercube_array(n_per_variant, bounds, derive_seed(seed, i))
        for j, row in enumerate(design):
            obs = observe(phantom, ProbePose.from_array(row), noise_seed=derive_seed(seed, i, j))
            poses.append(row)
            qualities.append(seg_score(obs.mask, phantom.max_area).value)
            tags.append(variant)
    return OfflineDataset(np.reshape(poses, (-1, 6)), np.asarray(qualities), tags)


def write_dataset(dataset: OfflineDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for tag, row, q in zip(dataset.variants, dataset.poses, dataset.qualities):
            w.writerow([tag, *(repr(float(v)) for v in row), repr(float(q))])


def read_dataset(path) -> OfflineDataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != DATASET_HEADER:
            raise ValueError(f"{path}: expected header {DATASET_HEADER}, got {reader.fieldnames}")
        rows = list(reader)
    poses = np.array([[float(r[k]) for k in FIELDS] for r in rows]).reshape(-1, 6)
    return OfflineDataset(poses, [float(r["q"]) for r in rows], [r["variant"] for r in rows])


def write_learning_curve(curve: LearningCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in curve.rows():
            w.writerow([epoch, repr(tr), repr(va)])


def train_kernel(dataset_path, weights_path, cfg: TrainConfig = TrainConfig(),
                 curve_path=None, init_seed: int | None = None):
    dataset = read_dataset(dataset_path)
    net = init_net(cfg.seed if init_seed is None else init_seed)
    net, curve = train(net, dataset, cfg)
    save_net(net, weights_path)
    if curve_path is None:
        curve_path = Path(weights_path).with_suffix(".curve.csv")
    write_learning_curve(curve, curve_path)
    return net, curve


# -- experiment configuration ----------------------------------------------

@dataclass
class ExperimentConfig:
    variants: list
    kernels: list
    feedbacks: list
    runs: int = 10
    master_seed: int = 0
    output_dir: Path = Path("results")
    weights: Path | None = None
    template: RunConfig = field(default_factory=RunConfig)
    phantom_seed: int = 0
    sigma_obs: float = 0.02

    def conditions(self):
        """(variant, kernel, feedback, pair index) in grid order.

        The pair index identifies (variant, feedback); both kernels share it,
        so they see the same initial designs and observation noise.
        """
        for vi, variant in enumerate(self.variants):
            for fi, feedback in enumerate(self.feedbacks):
                pair = vi * len(self.feedbacks) + fi
                for kernel in self.kernels:
                    yield variant, kernel, feedback, pair

    def planned(self):
        for variant, kernel, feedback, pair in self.conditions():
            for run in range(self.runs):
                seed = derive_seed(self.master_seed, pair, run)
                cfg = self.template.with_(kernel=kernel, feedback=feedback, variant=variant,
                                          seed=seed, noise_seed=derive_seed(seed, 1))
                yield variant, kernel, feedback, run, cfg


def _check_names(values, allowed, what):
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{what} must be a non-empty list")
    bad = [v for v in values if v not in allowed]
    if bad:
        raise ConfigError(f"unknown {what}: {bad}; allowed: {list(allowed)}")


def parse_config(data: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    known = {"schema_version", "variants", "kernels", "feedbacks", "runs", "master_seed",
             "output_dir", "weights", "run", "phantom", "bounds"}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown config keys: {extra}")
    _check_names(data.get("variants"), VARIANTS, "variants")
    _check_names(data.get("kernels"), KERNELS, "kernels")
    _check_names(data.get("feedbacks"), FEEDBACKS, "feedbacks")
    runs = data.get("runs", 10)
    if not isinstance(runs, int) or runs < 1:
        raise ConfigError("runs must be a positive integer")
    try:
        bounds = Bounds.from_dict(data["bounds"]) if "bounds" in data else DEFAULT_BOUNDS
        run = dict(data.get("run", {}))
        acq = AcqConfig(**run.pop("acq", {}))
        template = RunConfig(acq=acq, bounds=bounds, **run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    weights = data.get("weights")
    if weights is not None:
        weights = (base_dir / weights).resolve()
    if "deep" in data["kernels"] and weights is None:
        raise ConfigError("deep kernel requested but no 'weights' file given")
    phantom = data.get("phantom", {})
    return ExperimentConfig(
        variants=data["variants"], kernels=data["kernels"], feedbacks=data["feedbacks"],
        runs=runs, master_seed=int(data.get("master_seed", 0)),
        output_dir=(base_dir / data.get("output_dir", "results")).resolve(),
        weights=weights, template=template,
        phantom_seed=int(phantom.get("seed", 0)),
        sigma_obs=float(phantom.get("sigma_obs", 0.02)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data, path.parent)


# -- running ---------------------------------------------------------------

def trace_name(variant, kernel, feedback, run) -> str:
    return f"{variant}_{kernel}_{feedback}_run{run:02d}.jsonl"


def write_trace(trace: RunTrace, path, threshold: float = 0.8) -> None:
    lines = [json.dumps({"type": "config", **trace.config}, sort_keys=True)]
    for s in trace.steps:
        lines.append(json.dumps({"type": "step", **s.to_record()}))
    best = trace.best_so_far
    lines.append(json.dumps({
        "type": "summary",
        "steps_to_hqr": steps_to_hqr(trace, threshold),
        "hqr_count": hqr_count(trace, threshold),
        "best_final": float(best[-1]) if best.size else None,
        "wall_clock": trace.wall_clock,
        "aborted": trace.aborted,
    }))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> RunTrace:
    trace = RunTrace()
    for line in Path(path).read_text().splitlines():
        rec = json.loads(line)
        kind = rec.pop("type")
        if kind == "config":
            trace.config = rec
        elif kind == "step":
            trace.steps.append(StepRecord.from_record(rec))
        elif kind == "summary":
            trace.aborted = rec.get("aborted")
    return trace


_NET_CACHE = {}


def _execute(job):
    cfg, weights, phantom_seed, sigma_obs = job
    net = None
    if cfg.kernel == "deep":
        if weights not in _NET_CACHE:
            _NET_CACHE[weights] = load_net(weights)
        net = _NET_CACHE[weights]
    phantom = make_phantom(cfg.variant, seed=phantom_seed, bounds=cfg.bounds, sigma_obs=sigma_obs)
    return run_bo(cfg, phantom, net)


def run_experiment(exp: ExperimentConfig, workers: int = 1, net=None):
    """Run the whole grid and write traces, ``summary.csv`` and ``timing.csv``.

    Returns the list of ``(variant, kernel, feedback, run, trace)`` tuples.
    """
    plan = list(exp.planned())
    weights = str(exp.weights) if exp.weights is not None else None
    if net is not None:
        _NET_CACHE[weights] = net
    jobs = [(cfg, weights, exp.phantom_seed, exp.sigma_obs) for *_, cfg in plan]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_execute, jobs))
    else:
        traces = [_execute(job) for job in jobs]

    out = Path(exp.output_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    results = []
    threshold = exp.template.hqr_threshold
    for (variant, kernel, feedback, run, _), trace in zip(plan, traces):
        write_trace(trace, out / "traces" / trace_name(variant, kernel, feedback, run), threshold)
        results.append((variant, kernel, feedback, run, trace))
    write_summary(results, out / "summary.csv", threshold)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "kernel", "feedback", "run", "wall_clock"])
        for variant, kernel, feedback, run, trace in results:
            w.writerow([variant, kernel, feedback, run, f"{trace.wall_clock:.3f}"])
    aborted = [r for r in results if r[4].aborted]
    if aborted:
        raise RuntimeError(f"{len(aborted)} run(s) aborted, first: {aborted[0][4].aborted}")
    return results


def write_summary(results, path, threshold: float = 0.8) -> None:
    rows = []
    groups = {}
    for variant, kernel, feedback, run, trace in results:
        hit = steps_to_hqr(trace, threshold)
        count = hqr_count(trace, threshold)
        best = float(trace.best_so_far[-1]) if len(trace) else None
        rows.append([variant, kernel, feedback, run, hit, count, best,
                     f"traces/{trace_name(variant, kernel, feedback, run)}"])
        groups.setdefault((variant, kernel, feedback), []).append((hit, count, best))
    for (variant, kernel, feedback), vals in groups.items():
        hits = [h for h, _, _ in vals if h is not None]
        counts = [c for _, c, _ in vals]
        bests = [b for _, _, b in vals if b is not None]
        for label, stat in (("mean", np.mean), ("sd", np.std)):
            rows.append([variant, kernel, feedback, label,
                         float(stat(hits)) if hits else None,
                         float(stat(counts)), float(stat(bests)) if bests else None, ""])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_summary(path):
    """Per-run rows of a summary file (aggregate rows are skipped)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected summary header {reader.fieldnames}")
        rows = [r for r in reader if r["run"].isdigit()]
    for r in rows:
        r["run"] = int(r["run"])
        r["steps_to_hqr"] = int(r["steps_to_hqr"]) if r["steps_to_hqr"] else None
        r["hqr_count"] = int(r["hqr_count"])
        r["best_final"] = float(r["best_final"]) if r["best_final"] else None
    return rows


# -- reporting -------------------------------------------------------------

def percent_gain(deep: float, rbf: float):
    if rbf == 0:
        return math.inf if deep > 0 else None
    return 100.0 * (deep - rbf) / rbf


def report(summary_path, out_dir=None, threshold: float = 0.8, figures: bool = False):
    """Write per-condition curve CSVs and a DK-vs-RBF gain table.

    Returns the table text. With ``figures=True`` matplotlib PNGs of the
    curves and HQR counts are rendered next to the CSVs.
    """
    summary_path = Path(summary_path)
    base = summary_path.parent
    out = Path(out_dir) if out_dir is not None else base / "report"
    (out / "curves").mkdir(parents=True, exist_ok=True)
    rows = read_summary(summary_path)

    conditions = {}
    for r in rows:
        key = (r["variant"], r["kernel"], r["feedback"])
        trace_path = base / r["trace_file"]
        if not trace_path.exists():
            raise FileNotFoundError(f"trace file missing: {trace_path}")
        conditions.setdefault(key, []).append(read_trace(trace_path))

    summaries = {}
    for key, traces in sorted(conditions.items()):
        s = aggregate(traces, threshold)
        summaries[key] = s
        steps = [st.step for st in traces[0].steps]
        with open(out / "curves" / ("_".join(key) + ".csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            for i, step in enumerate(steps):
                w.writerow([i + 1, step, *(f"{a[i]:.6f}" for a in
                            (s.quality_mean, s.quality_sd, s.best_mean, s.best_sd))])

    table = format_table(summaries)
    (out / "hqr_gain.txt").write_text(table)
    if figures:
        from .plotting import plot_report
        plot_report(summaries, out)
    return table


def format_table(summaries) -> str:
    lines = ["condition                      runs  HQR total  HQR/run (mean +- sd)  success  median steps",
             "-" * 94]
    for (variant, kernel, feedback), s in sorted(summaries.items()):
        med = "-" if s.median_steps_to_hqr is None else f"{s.median_steps_to_hqr:g}"
        lines.append(f"{variant:<4} {kernel:<5} {feedback:<5}{'':14}{s.n_runs:>4}  {s.total_hqr:>9}"
                     f"  {s.total_hqr / s.n_runs:>8.2f}{'':14}{s.success_rate:>7.0%}  {med:>12}")
    lines.append("")
    lines.append("Deep vs RBF HQR sample gain")
    feedbacks = sorted({k[2] for k in summaries})
    variants = sorted({k[0] for k in summaries})
    for fb in feedbacks:
        kernels = {k[1] for k in summaries if k[2] == fb}
        if not {"deep", "rbf"} <= kernels:
            continue
        deep = sum(s.total_hqr for k, s in summaries.items() if k[1] == "deep" and k[2] == fb)
        rbf = sum(s.total_hqr for k, s in summaries.items() if k[1] == "rbf" and k[2] == fb)
        gain = percent_gain(deep, rbf)
        gain_txt = "n/a" if gain is None else f"{gain:+.2f}%"
        lines.append(f"  {fb} ({'+'.join(variants)}): deep {deep} vs rbf {rbf} -> {gain_txt}")
    return "\n".join(lines) + "\n"
