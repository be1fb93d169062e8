"""Bayesian optimization of ultrasound probe poses with a deep kernel."""

from .acquisition import AcqConfig, expected_improvement, maximize_acquisition, propose
from .engine import RunConfig, RunTrace, aggregate, hqr_count, run_bo, steps_to_hqr
from .gp import GPModel, Hyperparams, fit_hyperparams, gram, kernel_deep, kernel_rbf, posterior
from .net import DeepKernelNet, OfflineDataset, TrainConfig, forward, init_net, load_net, save_net, train
from .phantom import PhantomModel, ground_truth_quality, make_phantom, observe, render_mask
from .pose import DEFAULT_BOUNDS, Bounds, ProbePose, clamp_pose, latin_hypercube, normalize

__version__ = "0.1.0"
