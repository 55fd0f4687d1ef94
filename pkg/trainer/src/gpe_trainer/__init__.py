"""U-Net trainer for solver-trajectory correction, GPDS in, GPUW out."""

from .export import archive_tensors, export_weights, write_gpuw
from .gpds import Dataset, GpdsError, Sample, read_gpds
from .model import CorrectionUnet, default_widths, gradient_step_init
from .train import TrainConfig, TrainingDiverged, l2_loss, train

__version__ = "0.1.0"
