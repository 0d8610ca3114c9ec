"""Self-supervised monocular depth with self-reference distillation, in numpy.

Submodules: tensorcore (autodiff), geometry, imaging, warp, losses, mvcheck,
model, optim, distill, synthscene, metrics and the cli.
"""
from .distill import TrainConfig, train
from .geometry import Intrinsics, RigidTransform, depth_to_disparity, disparity_to_depth
from .losses import LossWeights
from .metrics import EvalResult, evaluate
from .model import DepthNetConfig, Network, WeightSnapshot
from .mvcheck import check_pair, filter_mask, soft_mask
from .synthscene import corrupt_depth, generate_dataset, load_dataset, write_dataset
from .warp import synthesize_view

__version__ = "0.1.0"

__all__ = [
    "DepthNetConfig", "EvalResult", "Intrinsics", "LossWeights", "Network", "RigidTransform",
    "TrainConfig", "WeightSnapshot", "check_pair", "corrupt_depth", "depth_to_disparity",
    "disparity_to_depth", "evaluate", "filter_mask", "generate_dataset", "load_dataset",
    "soft_mask", "synthesize_view", "train", "write_dataset",
]
