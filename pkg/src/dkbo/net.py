"""Deep-kernel embedding network: 6 -> 400 -> 300 -> 1 ReLU MLP in numpy.

Poses are normalized to the unit cube before the first layer. Training
minimizes the mean squared error to observed quality with Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pose import DEFAULT_BOUNDS, Bounds, ProbePose, normalize

log = logging.getLogger(__name__)

LAYER_SIZES = (6, 400, 300, 1)
_MAGIC = b"DKNET 1\n"


class TrainingError(RuntimeError):
    pass


@dataclass
class DeepKernelNet:
    """Weights ``W[k]`` have shape (fan_out, fan_in); biases shape (fan_out,)."""

    weights: list
    biases: list
    bounds: Bounds = field(default=DEFAULT_BOUNDS)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        shapes = [w.shape for w in self.weights]
        expected = [(o, i) for i, o in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:])]
        if shapes != expected:
            raise ValueError(f"layer shapes {shapes} != {expected}")
        for b, (o, _) in zip(self.biases, expected):
            if b.shape != (o,):
                raise ValueError(f"bias shape {b.shape} != {(o,)}")
        if not all(np.all(np.isfinite(p)) for p in self.params):
            raise ValueError("non-finite network parameters")

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "DeepKernelNet":
        return DeepKernelNet([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.bounds)

    def embed_unit(self, unit) -> np.ndarray:
        """Network output for unit-cube inputs of shape (n, 6)."""
        a = np.atleast_2d(np.asarray(unit, dtype=float))
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if k < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
        return a[:, 0]

    def embed(self, poses) -> np.ndarray:
        """Network output for raw pose arrays of shape (n, 6)."""
        return self.embed_unit(normalize(np.atleast_2d(poses), self.bounds))


def init_net(seed: int = 0, bounds: Bounds = DEFAULT_BOUNDS) -> DeepKernelNet:
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DeepKernelNet(weights, biases, bounds)


def forward(net: DeepKernelNet, pose) -> float | np.ndarray:
    if isinstance(pose, ProbePose):
        return float(net.embed(pose.as_array())[0])
    return net.embed(pose)


def _forward_cache(net, unit):
    acts = [unit]
    pre = []
    a = unit
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < len(net.weights) - 1 else z
        acts.append(a)
    return pre, acts


def loss_and_grad(net: DeepKernelNet, unit, target):
    """Batch MSE and its gradient for every parameter (same order as ``net.params``)."""
    unit = np.atleast_2d(np.asarray(unit, dtype=float))
    target = np.asarray(target, dtype=float).ravel()
    n = unit.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    pre, acts = _forward_cache(net, unit)
    resid = acts[-1][:, 0] - target
    loss = float(np.mean(resid ** 2))
    delta = (2.0 / n) * resid[:, None]
    grads = [None] * (2 * len(net.weights))
    for k in range(len(net.weights) - 1, -1, -1):
        grads[2 * k] = delta.T @ acts[k]
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ net.weights[k]) * (pre[k - 1] > 0)
    return loss, grads


def grad(net: DeepKernelNet, poses, qualities) -> list:
    """Gradients of batch MSE for raw poses; see :func:`loss_and_grad`."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    if poses.shape[0] == 0:
        raise ValueError("empty batch")
    return loss_and_grad(net, normalize(poses, net.bounds), qualities)[1]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 200
    split: float = 0.9
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epoch count must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class OfflineDataset:
    """Raw poses (n, 6), qualities (n,) and the phantom variant of each row."""

    poses: np.ndarray
    qualities: np.ndarray
    variants: list

    def __post_init__(self):
        self.poses = np.atleast_2d(np.asarray(self.poses, dtype=float)).reshape(-1, 6)
        self.qualities = np.asarray(self.qualities, dtype=float).ravel()
        self.variants = list(self.variants)
        if not (len(self.poses) == len(self.qualities) == len(self.variants)):
            raise ValueError("dataset columns have different lengths")
        if np.any((self.qualities < 0) | (self.qualities > 1)):
            raise ValueError("qualities must lie in [0, 1]")

    def __len__(self):
        return len(self.qualities)


@dataclass
class LearningCurve:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)

    def rows(self):
        for epoch, (tr, va) in enumerate(zip(self.train, self.val), start=1):
            yield epoch, tr, va


def split_indices(n: int, split: float, seed: int):
    order = np.random.default_rng([seed, 1]).permutation(n)
    n_train = min(max(1, int(round(split * n))), n - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def train(net: DeepKernelNet, dataset: OfflineDataset, cfg: TrainConfig = TrainConfig()):
    """Fit `net` (a copy is trained; the input is untouched).

    Returns the trained network and its per-epoch learning curve.
    """
    if len(dataset) < 10:
        raise ValueError("need at least 10 samples to train")
    net = net.copy()
    unit = normalize(dataset.poses, net.bounds)
    target = dataset.qualities
    tr_idx, va_idx = split_indices(len(dataset), cfg.split, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])

    params = net.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    curve = LearningCurve()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(tr_idx) if cfg.shuffle else tr_idx
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(net, unit[batch], target[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {t}")
            t += 1
            for p, g, mk, vk in zip(params, grads, m, v):
                mk *= beta1
                mk += (1 - beta1) * g
                vk *= beta2
                vk += (1 - beta2) * g * g
                p -= cfg.lr * (mk / (1 - beta1 ** t)) / (np.sqrt(vk / (1 - beta2 ** t)) + eps)
        tr_loss = float(np.mean((net.embed_unit(unit[tr_idx]) - target[tr_idx]) ** 2))
        va_loss = float(np.mean((net.embed_unit(unit[va_idx]) - target[va_idx]) ** 2))
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise TrainingError(f"non-finite loss after epoch {epoch}")
        curve.train.append(tr_loss)
        curve.val.append(va_loss)
        log.debug("epoch %d train %.5f val %.5f", epoch, tr_loss, va_loss)
    return net, curve


def save_net(net: DeepKernelNet, path) -> None:
    """Write a shape header line followed by little-endian float64 parameters."""
    shapes = " ".join("x".join(str(d) for d in p.shape) for p in net.params)
    bounds = " ".join(repr(v) for v in (*net.bounds.lo, *net.bounds.hi))
    header = _MAGIC + f"shapes {shapes}\nbounds {bounds}\n".encode()
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params)
    Path(path).write_bytes(header + body)


def load_net(path) -> DeepKernelNet:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a deep-kernel weights file")
    rest = data[len(_MAGIC):]
    shape_line, rest = rest.split(b"\n", 1)
    bounds_line, body = rest.split(b"\n", 1)
    shapes = [tuple(int(d) for d in tok.split("x")) for tok in shape_line.decode().split()[1:]]
    values = [float(v) for v in bounds_line.decode().split()[1:]]
    flat = np.frombuffer(body, dtype="<f8")
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
    params, offset = [], 0
    for s in shapes:
        size = int(np.prod(s))
        params.append(flat[offset:offset + size].reshape(s).copy())
        offset += size
    return DeepKernelNet(params[0::2], params[1::2], Bounds(lo=tuple(values[:6]), hi=tuple(values[6:])))
