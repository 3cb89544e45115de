"""UPerFlow and UPerNet models."""
from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelConfig, ModelConfigError
from .encoder import ShapeError, inflate_first_conv, load_three_channel_weights
from .flow import FlowBranch, FlowLevelFeatures, FlowPair
from .inference import flow_to_color, infer_video, make_predictor, pair_assignment, to_tensor
from .layers import cost_volume, upsample_flow, warp
from .networks import UPerFlow, UPerFlowOutput, UPerNet, build_model, count_parameters

__all__ = [
    "CHECKPOINT_VERSION", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "ModelConfig", "ModelConfigError", "ShapeError", "inflate_first_conv", "load_three_channel_weights",
    "FlowBranch", "FlowLevelFeatures", "FlowPair", "flow_to_color", "infer_video", "make_predictor",
    "pair_assignment", "to_tensor", "cost_volume", "upsample_flow", "warp",
    "UPerFlow", "UPerFlowOutput", "UPerNet", "build_model", "count_parameters",
]
