from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from xmseg.errors import UnknownNameError

HEAD_MODES = ("dual", "single")


class DualHeadOutput(NamedTuple):
    main: torch.Tensor
    mimic: torch.Tensor


class FusionOutput(NamedTuple):
    fuse: torch.Tensor
    toward_fuse_2d: Optional[torch.Tensor] = None
    toward_fuse_3d: Optional[torch.Tensor] = None


class SegHead(nn.Module):
    """Linear layer followed by a row softmax."""

    def __init__(self, in_features, num_classes):
        super().__init__()
        self.linear = nn.Linear(in_features, num_classes)

    def forward(self, x):
        return torch.softmax(self.linear(x), dim=1)

    def zero_init(self):
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)


class DualHead(nn.Module):
    """
    Main segmentation head plus a mimicry head. In ``single`` mode the mimicry
    output is the main output itself.
    """

    def __init__(self, in_features, num_classes, mode="dual"):
        super().__init__()
        if mode not in HEAD_MODES:
            raise UnknownNameError("head mode", mode, HEAD_MODES)
        self.mode = mode
        self.main = SegHead(in_features, num_classes)
        self.mimic = SegHead(in_features, num_classes) if mode == "dual" else None

    def forward(self, features):
        main = self.main(features)
        mimic = self.mimic(features) if self.mimic is not None else main
        return DualHeadOutput(main, mimic)

    def zero_init(self):
        self.main.zero_init()
        if self.mimic is not None:
            self.mimic.zero_init()
