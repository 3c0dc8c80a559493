"""Textured 2D Gaussian surfels with content-aware texel sizes, on the CPU."""

from .adaptation import AdaptationConfig, adapt_step, prune, reallocate_scene, split
from .autodiff import LossWeights, backward
from .camera import Camera
from .geometry import Primitive
from .renderer import RenderOutput, error_accumulate, rasterize, render
from .scene import Scene, parameter_count
from .scene_io import Dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .synthetic import make_synthetic
from .texture import TextureGrid, TexturePool
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
