"""
Point/voxel network standing in for a sparse-convolution U-Net.

Points are voxelized, voxel features are aggregated over the k nearest voxel
centers (level 1) and over the k nearest voxels of a farthest-point subsample
(level 2), then propagated back to every point. Neighborhoods are computed on
integer voxel keys so selection is exact, with ties broken by index.
"""

import math

import numpy as np
import torch
import torch.nn as nn

from xmseg.geometry import voxelize

KNN_CHUNK = 512


class MLP(nn.Sequential):
    def __init__(self, *widths):
        layers = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            layers.append(nn.Linear(a, b))
            layers.append(nn.LeakyReLU())
        super().__init__(*layers)


def knn(query, reference, k):
    """(Q, min(k, R)) indices of the nearest reference keys, ties by lower index."""
    k = min(k, len(reference))
    out = np.empty((len(query), k), dtype=np.int64)
    for start in range(0, len(query), KNN_CHUNK):
        q = query[start : start + KNN_CHUNK]
        d2 = ((q[:, None, :] - reference[None, :, :]) ** 2).sum(axis=-1)
        out[start : start + KNN_CHUNK] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def farthest_point_sample(keys, m):
    """Deterministic farthest point sampling starting from the first key."""
    m = min(m, len(keys))
    selected = np.empty(m, dtype=np.int64)
    dist = np.full(len(keys), np.iinfo(np.int64).max, dtype=np.int64)
    last = 0
    for i in range(m):
        selected[i] = last
        dist = np.minimum(dist, ((keys - keys[last]) ** 2).sum(axis=1))
        last = int(np.argmax(dist))
    return selected


class PointVoxelNet(nn.Module):
    def __init__(self, out_features=64, voxel_size=0.25, k=16, width=32, coarse_ratio=4):
        super().__init__()
        self.voxel_size = voxel_size
        self.k = k
        self.coarse_ratio = coarse_ratio

        self.point_mlp = MLP(4, width)
        self.voxel_mlp = MLP(width, width)
        self.edge_1 = MLP(width + 3, 2 * width)
        self.edge_2 = MLP(2 * width + 3, 2 * width)
        self.up = MLP(4 * width, 2 * width)
        self.output = nn.Sequential(
            nn.Linear(3 * width, out_features),
            nn.LeakyReLU(),
            nn.Linear(out_features, out_features),
        )

    def _point_inputs(self, points):
        scaled = points / self.voxel_size
        offsets = scaled - torch.floor(scaled) - 0.5
        return torch.cat([offsets, points[:, 2:3] / 2.0], dim=1)

    def _edge_conv(self, mlp, features, keys_center, keys_all, neighbors):
        rel = (keys_all[neighbors] - keys_center[:, None, :]).astype(np.float64) * self.voxel_size
        rel = torch.as_tensor(rel, dtype=features.dtype, device=features.device)
        edges = mlp(torch.cat([features[torch.as_tensor(neighbors)], rel], dim=-1))
        return edges.max(dim=1).values

    def forward_single(self, points):
        dtype = points.dtype
        coords = points.detach().cpu().numpy().astype(np.float64)
        grid = voxelize(coords, self.voxel_size)
        keys = grid.keys
        inverse = torch.as_tensor(grid.inverse)

        h_point = self.point_mlp(self._point_inputs(points))

        # voxel means summed in coordinate order, independent of input order
        order = torch.as_tensor(
            np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], grid.inverse))
        )
        sums = torch.zeros(grid.num_voxels, h_point.shape[1], dtype=dtype, device=points.device)
        sums = sums.index_add(0, inverse[order], h_point[order])
        counts = torch.bincount(inverse, minlength=grid.num_voxels).to(dtype).unsqueeze(1)
        h_voxel = self.voxel_mlp(sums / counts)

        g1 = self._edge_conv(self.edge_1, h_voxel, keys, keys, knn(keys, keys, self.k))

        sampled = farthest_point_sample(keys, math.ceil(grid.num_voxels / self.coarse_ratio))
        g2 = self._edge_conv(
            self.edge_2, g1, keys[sampled], keys, knn(keys[sampled], keys, self.k)
        )
        nearest = torch.as_tensor(knn(keys, keys[sampled], 1)[:, 0])
        h = self.up(torch.cat([g1, g2[nearest]], dim=1))

        return self.output(torch.cat([h[inverse], h_point], dim=1))

    def forward(self, points, batch_index=None):
        """(N, 3) points, optionally several samples told apart by ``batch_index``."""
        if batch_index is None:
            return self.forward_single(points)

        order = torch.argsort(batch_index, stable=True)
        pieces = [
            self.forward_single(points[batch_index == b]) for b in torch.unique(batch_index)
        ]
        return torch.cat(pieces, dim=0)[torch.argsort(order)]
