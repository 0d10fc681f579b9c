import torch
import torch.nn as nn

from xmseg.errors import InvalidArgumentError, UnknownNameError
from xmseg.nets.heads import FusionOutput, SegHead

FUSION_MODES = ("vanilla", "xmuda_fusion")


class FusionBlock(nn.Module):
    """
    Concatenated 2D/3D features -> Linear + ReLU -> Linear + softmax.
    ``xmuda_fusion`` adds one uni-modal head per stream estimating the fused output.
    """

    def __init__(self, features_2d, features_3d, num_classes, hidden=64, mode="vanilla"):
        super().__init__()
        if mode not in FUSION_MODES:
            raise UnknownNameError("fusion mode", mode, FUSION_MODES)
        self.mode = mode
        self.hidden = nn.Sequential(nn.Linear(features_2d + features_3d, hidden), nn.ReLU())
        self.fuse = SegHead(hidden, num_classes)
        if mode == "xmuda_fusion":
            self.toward_fuse_2d = SegHead(features_2d, num_classes)
            self.toward_fuse_3d = SegHead(features_3d, num_classes)

    def forward(self, features_2d, features_3d):
        if len(features_2d) != len(features_3d):
            raise InvalidArgumentError(
                f"Feature lengths differ: {len(features_2d)} (2D) vs {len(features_3d)} (3D)."
            )
        fuse = self.fuse(self.hidden(torch.cat([features_2d, features_3d], dim=1)))
        if self.mode == "vanilla":
            return FusionOutput(fuse)
        return FusionOutput(
            fuse, self.toward_fuse_2d(features_2d), self.toward_fuse_3d(features_3d)
        )

    def zero_init(self):
        self.fuse.zero_init()
        if self.mode == "xmuda_fusion":
            self.toward_fuse_2d.zero_init()
            self.toward_fuse_3d.zero_init()
