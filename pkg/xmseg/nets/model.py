import torch
import torch.nn as nn

from xmseg.errors import EmptyBatchError, InvalidArgumentError, UnknownNameError
from xmseg.geometry import sample_features
from xmseg.nets.fusion import FusionBlock
from xmseg.nets.heads import DualHead
from xmseg.nets.net3d import PointVoxelNet
from xmseg.nets.unet2d import UNet2D

STREAMS = ("2d", "3d", "fuse")


class Net2D(nn.Module):
    def __init__(self, num_classes, features=64, base_width=16, dropout=0.3, head_mode="dual"):
        super().__init__()
        self.backbone = UNet2D(features, base_width, dropout)
        self.head = DualHead(features, num_classes, head_mode)

    def features(self, image, uv, batch_index=None, sampling="nearest"):
        """Dense (B, F, H, W) map sampled at the points' pixel coordinates, (N, F)."""
        fmap = self.backbone(image)
        if batch_index is None:
            batch_index = torch.zeros(len(uv), dtype=torch.long)

        order = torch.argsort(batch_index, stable=True)
        pieces = [
            sample_features(fmap[b].permute(1, 2, 0), uv[batch_index == b], sampling)
            for b in torch.unique(batch_index)
        ]
        return torch.cat(pieces, dim=0)[torch.argsort(order)]

    def forward(self, image, uv, batch_index=None, sampling="nearest"):
        if len(uv) == 0:
            raise EmptyBatchError("2D stream received a batch without points.")
        feats = self.features(image, uv, batch_index, sampling)
        return self.head(feats), feats


class Net3D(nn.Module):
    def __init__(self, num_classes, features=64, voxel_size=0.25, k=16, head_mode="dual"):
        super().__init__()
        self.backbone = PointVoxelNet(features, voxel_size, k)
        self.head = DualHead(features, num_classes, head_mode)

    def forward(self, points, batch_index=None):
        if len(points) == 0:
            raise EmptyBatchError("3D stream received a batch without points.")
        if not torch.isfinite(points).all():
            raise InvalidArgumentError("Point coordinates must be finite.")
        feats = self.backbone(points, batch_index)
        return self.head(feats), feats


class XModalModel(nn.Module):
    """
    Independent 2D and 3D streams (no shared parameters) with dual heads and an
    optional fusion block on top of their point-aligned features.
    """

    def __init__(
        self,
        num_classes,
        head_mode="dual",
        fusion=None,  # None, "vanilla" or "xmuda_fusion"
        features_2d=64,
        features_3d=64,
        base_width=16,
        dropout=0.3,
        voxel_size=0.25,
        k=16,
        fusion_hidden=64,
        sampling="nearest",
    ):
        super().__init__()
        self.num_classes = num_classes
        self.head_mode = head_mode
        self.sampling = sampling
        self.net_2d = Net2D(num_classes, features_2d, base_width, dropout, head_mode)
        self.net_3d = Net3D(num_classes, features_3d, voxel_size, k, head_mode)
        self.fusion = (
            FusionBlock(features_2d, features_3d, num_classes, fusion_hidden, fusion)
            if fusion
            else None
        )

    @classmethod
    def from_config(cls, num_classes, model_config):
        return cls(num_classes, **model_config)

    def forward_2d(self, batch):
        return self.net_2d(batch["image"], batch["uv"], batch.get("batch_index"), self.sampling)

    def forward_3d(self, batch):
        return self.net_3d(batch["points"], batch.get("batch_index"))

    def forward_fusion(self, features_2d, features_3d):
        if self.fusion is None:
            raise InvalidArgumentError("Model was built without a fusion block.")
        return self.fusion(features_2d, features_3d)

    def parameters_of(self, stream):
        if stream not in STREAMS:
            raise UnknownNameError("stream", stream, STREAMS)
        module = {"2d": self.net_2d, "3d": self.net_3d, "fuse": self.fusion}[stream]
        return [] if module is None else list(module.parameters())

    def named_parameters_of(self, stream):
        prefix = {"2d": "net_2d.", "3d": "net_3d.", "fuse": "fusion."}[stream]
        return [(n, p) for n, p in self.named_parameters() if n.startswith(prefix)]

    def zero_init_heads(self):
        self.net_2d.head.zero_init()
        self.net_3d.head.zero_init()
        if self.fusion is not None:
            self.fusion.zero_init()
