from .pillar_net import PillarEncoder, scatter_pillars
from .fusion import FusionModule, PlanarTransform, channel_attention, relative_transform, warp
from .completion import CompletionNet, DilatedBlock, DilatedBlockSpec, predict_classes
from .network import MultiFrameModel, SingleFrameModel

__all__ = [
    "PillarEncoder",
    "scatter_pillars",
    "FusionModule",
    "PlanarTransform",
    "channel_attention",
    "relative_transform",
    "warp",
    "CompletionNet",
    "DilatedBlock",
    "DilatedBlockSpec",
    "predict_classes",
    "SingleFrameModel",
    "MultiFrameModel",
]
