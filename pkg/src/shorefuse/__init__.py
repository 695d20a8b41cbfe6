"""Temporal-fusion free-space segmentation for waterway video."""
from .config import ModelConfig, TrainConfig, load_config_file
from .data import Frame, FrameSequence, load_dataset, load_sequence, save_sequence
from .errors import (
    ConfigError,
    ContextError,
    FormatError,
    GenerationError,
    NumericError,
    OrderingError,
    ShorefuseError,
    ValidationError,
)
from .evaluation import EvalReport, build_selected_zone, evaluate, evaluate_sequence, miou
from .fusion import FreeSpaceNet, forward, load_checkpoint, save_checkpoint
from .harness import (
    FramePick,
    RobustnessCondition,
    apply_condition,
    pick_frames,
    run_ablation,
    run_robustness,
    train,
)
from .losses import contour_distance_sampled, contour_loss, dice_loss, total_loss
from .synthgen import SceneSpec, generate_benchmark, generate_sequence

__version__ = "0.1.0"
