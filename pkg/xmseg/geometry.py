"""
2D/3D plumbing shared by the scene generator and both network streams.

Camera frame convention: +z forward, +x right, +y down (pinhole, no distortion).
LiDAR/sensor frame convention: +x forward, +y left, +z up.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from xmseg.errors import InvalidArgumentError, OutOfRangeError, UnknownNameError

ORTHONORMAL_TOL = 1e-9
SAMPLING_MODES = ("nearest", "bilinear")
SAMPLING_TOLERANCE = 0.5  # px outside [0, W) x [0, H) that is still clamped
DEFAULT_SCALE_RANGE = (0.95, 1.05)
DEFAULT_JITTER = 0.2


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError(
                f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}."
            )
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(
                f"Image size must be positive, got {self.width}x{self.height}."
            )
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError(
                f"Principal point ({self.cx}, {self.cy}) lies outside the {self.width}x{self.height} image."
            )

    def matrix(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Maps sensor coordinates into the camera frame: p_cam = R p + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise InvalidArgumentError(
                f"Expected a 3x3 rotation and a 3-vector translation, got {rotation.shape} and {translation.shape}."
            )
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol=ORTHONORMAL_TOL):
        r = self.rotation
        return bool(
            np.all(np.abs(r.T @ r - np.eye(3)) <= tol)
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def validate(self, tol=ORTHONORMAL_TOL):
        if not self.is_valid(tol):
            raise InvalidArgumentError(
                "Extrinsic rotation is not orthonormal with determinant +1."
            )

    def apply(self, coords):
        return np.asarray(coords, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self):
        r_inv = self.rotation.T
        return RigidTransform(r_inv, -r_inv @ self.translation)

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


@dataclass(eq=False)
class PointCloud:
    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.size == 0:
            coords = coords.reshape(0, 3)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InvalidArgumentError(
                f"Point coordinates must have shape (N, 3), got {coords.shape}."
            )
        self.coords = coords

    @property
    def n(self):
        return self.coords.shape[0]

    def __len__(self):
        return self.n

    def is_finite(self):
        return bool(np.isfinite(self.coords).all())


@dataclass(eq=False)
class PixelCoords:
    """Continuous pixel coordinates; rows with ``mask`` False carry NaN."""

    uv: np.ndarray
    mask: np.ndarray
    depth: np.ndarray = None

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        if len(self.mask) != len(self.uv):
            raise InvalidArgumentError(
                f"uv ({len(self.uv)}) and mask ({len(self.mask)}) lengths differ."
            )

    def __len__(self):
        return len(self.uv)

    def masked(self):
        depth = None if self.depth is None else self.depth[self.mask]
        return PixelCoords(self.uv[self.mask], np.ones(self.mask.sum(), dtype=bool), depth)


@dataclass(frozen=True, eq=False)
class VoxelIndex:
    ijk: np.ndarray
    voxel_size: float


@dataclass(eq=False)
class VoxelGrid:
    """Result of ``voxelize``.

    ``keys`` are the occupied voxels in lexicographic order, ``representatives``
    the lowest point index inside each of them and ``inverse`` the voxel row of
    every input point.
    """

    index: VoxelIndex
    keys: np.ndarray
    representatives: np.ndarray
    inverse: np.ndarray

    @property
    def num_voxels(self):
        return len(self.keys)

    def representative_map(self):
        return {
            tuple(int(c) for c in key): int(rep)
            for key, rep in zip(self.keys, self.representatives)
        }

    def centers(self):
        return (self.keys.astype(np.float64) + 0.5) * self.index.voxel_size


def _as_coords(points):
    if isinstance(points, PointCloud):
        return points.coords
    return PointCloud(points).coords


def project_points(points, extrinsic, intr):
    coords = _as_coords(points)
    if not np.isfinite(coords).all():
        raise InvalidArgumentError("Point coordinates must be finite.")
    extrinsic.validate()

    cam = extrinsic.apply(coords)
    z = cam[:, 2]
    mask = z > 0

    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy

    mask &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)

    uv = np.full((len(coords), 2), np.nan)
    uv[mask, 0] = u[mask]
    uv[mask, 1] = v[mask]
    depth = np.where(mask, z, np.nan)

    return PixelCoords(uv, mask, depth)


def unproject_points(coords, extrinsic, intr):
    """Inverse pinhole map of the masked rows back into the sensor frame."""
    if coords.depth is None:
        raise InvalidArgumentError("Unprojection requires per-point depth.")
    uv = coords.uv[coords.mask]
    z = coords.depth[coords.mask]
    cam = np.stack(
        [
            (uv[:, 0] - intr.cx) * z / intr.fx,
            (uv[:, 1] - intr.cy) * z / intr.fy,
            z,
        ],
        axis=1,
    )
    return extrinsic.inverse().apply(cam)


def sample_features(feature_map, coords, mode="nearest"):
    """
    Reads an (H, W, F) feature map at continuous pixel locations.

    ``coords`` is either a PixelCoords (only its masked rows are sampled) or an
    (N, 2) array of (u, v). Works on numpy arrays and on torch tensors; with
    tensors, gradients flow into the feature map.
    """
    if mode not in SAMPLING_MODES:
        raise UnknownNameError("sampling mode", mode, SAMPLING_MODES)

    is_numpy = not isinstance(feature_map, torch.Tensor)
    fmap = torch.as_tensor(feature_map)
    if fmap.ndim == 2:
        fmap = fmap.unsqueeze(-1)
    height, width = fmap.shape[0], fmap.shape[1]

    uv = coords.uv[coords.mask] if isinstance(coords, PixelCoords) else coords
    coord_dtype = fmap.dtype if fmap.is_floating_point() else torch.float64
    uv = torch.as_tensor(uv, dtype=coord_dtype, device=fmap.device).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]

    outside = (
        ~torch.isfinite(u)
        | ~torch.isfinite(v)
        | (u < -SAMPLING_TOLERANCE)
        | (u >= width + SAMPLING_TOLERANCE)
        | (v < -SAMPLING_TOLERANCE)
        | (v >= height + SAMPLING_TOLERANCE)
    )
    if outside.any():
        first = int(torch.nonzero(outside)[0])
        raise OutOfRangeError(
            f"Pixel coordinate ({float(u[first])}, {float(v[first])}) lies outside the {width}x{height} feature map."
        )

    if mode == "nearest":
        # round half toward the lower index
        ui = torch.ceil(u - 0.5).long().clamp(0, width - 1)
        vi = torch.ceil(v - 0.5).long().clamp(0, height - 1)
        out = fmap[vi, ui]
    else:
        uc = u.clamp(0, width - 1)
        vc = v.clamp(0, height - 1)
        u0 = torch.floor(uc).long()
        v0 = torch.floor(vc).long()
        u1 = (u0 + 1).clamp(max=width - 1)
        v1 = (v0 + 1).clamp(max=height - 1)
        du = (uc - u0.to(uc.dtype)).unsqueeze(1)
        dv = (vc - v0.to(vc.dtype)).unsqueeze(1)
        out = (
            fmap[v0, u0] * (1 - du) * (1 - dv)
            + fmap[v0, u1] * du * (1 - dv)
            + fmap[v1, u0] * (1 - du) * dv
            + fmap[v1, u1] * du * dv
        )

    return out.numpy() if is_numpy else out


def voxelize(points, voxel_size):
    coords = _as_coords(points)
    if not voxel_size > 0:
        raise InvalidArgumentError(f"Voxel size must be positive, got {voxel_size}.")
    if not np.isfinite(coords).all():
        raise InvalidArgumentError("Point coordinates must be finite.")

    ijk = np.floor(coords / voxel_size).astype(np.int64)
    n = len(ijk)
    if n == 0:
        empty = np.zeros((0, 3), dtype=np.int64)
        return VoxelGrid(
            VoxelIndex(ijk, voxel_size), empty, np.zeros(0, np.int64), np.zeros(0, np.int64)
        )

    # np.unique sorts rows lexicographically, which is the canonical key order
    keys, inverse = np.unique(ijk, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    representatives = np.full(len(keys), n, dtype=np.int64)
    np.minimum.at(representatives, inverse, np.arange(n))

    return VoxelGrid(VoxelIndex(ijk, voxel_size), keys, representatives, inverse)


def yaw_matrix(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Augment3DParams:
    flip_x: bool = False
    scale: float = 1.0
    yaw: float = 0.0

    @classmethod
    def sample(cls, rng, scale_range=DEFAULT_SCALE_RANGE, flip_prob=0.5):
        return cls(
            flip_x=bool(rng.random() < flip_prob),
            scale=float(rng.uniform(*scale_range)),
            yaw=float(rng.uniform(0.0, 2.0 * math.pi)),
        )


def augment_3d(points, params, labels=None):
    """Returns (augmented points, labels). Point order and labels are untouched."""
    if not params.scale > 0:
        raise InvalidArgumentError(f"Scale must be positive, got {params.scale}.")

    coords = _as_coords(points).copy()
    if params.flip_x:
        coords[:, 0] = -coords[:, 0]
    coords = (params.scale * coords) @ yaw_matrix(params.yaw).T

    out = PointCloud(coords) if isinstance(points, PointCloud) else coords
    return out, labels


@dataclass(frozen=True)
class ColorJitter:
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0


@dataclass(frozen=True)
class Crop:
    u0: int
    width: int


@dataclass(frozen=True)
class Augment2DParams:
    flip_h: bool = False
    jitter: ColorJitter = ColorJitter()
    crop: Crop = None

    @classmethod
    def sample(cls, rng, image_width, crop_width=None, jitter=DEFAULT_JITTER, flip_prob=0.5):
        crop = None
        if crop_width is not None and crop_width < image_width:
            crop = Crop(int(rng.integers(0, image_width - crop_width + 1)), int(crop_width))
        factors = rng.uniform(1.0 - jitter, 1.0 + jitter, size=3)
        return cls(
            flip_h=bool(rng.random() < flip_prob),
            jitter=ColorJitter(*(float(f) for f in factors)),
            crop=crop,
        )


_LUMA = np.array([0.299, 0.587, 0.114])


def _jitter_image(image, jitter):
    for name in ("brightness", "contrast", "saturation"):
        if getattr(jitter, name) <= 0:
            raise InvalidArgumentError(f"Jitter factor `{name}` must be positive.")

    if (jitter.brightness, jitter.contrast, jitter.saturation) == (1.0, 1.0, 1.0):
        return image

    out = image.astype(np.float64)
    if jitter.brightness != 1.0:
        out = out * jitter.brightness
    if jitter.contrast != 1.0:
        mean = float((out @ _LUMA).mean())
        out = (out - mean) * jitter.contrast + mean
    if jitter.saturation != 1.0:
        gray = (out @ _LUMA)[..., None]
        out = gray + (out - gray) * jitter.saturation
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment_2d(image, coords, params):
    """
    Applies crop, horizontal flip and color jitter (in that order) to an
    (H, W, 3) image and keeps the pixel coordinates consistent with it.
    """
    image = np.asarray(image)
    height, width = image.shape[:2]
    uv = coords.uv.copy()
    mask = coords.mask.copy()

    if params.crop is not None:
        crop = params.crop
        if crop.width > width:
            raise InvalidArgumentError(
                f"Crop width {crop.width} exceeds image width {width}."
            )
        if crop.u0 < 0 or crop.u0 + crop.width > width or crop.width < 1:
            raise InvalidArgumentError(
                f"Crop window [{crop.u0}, {crop.u0 + crop.width}) is not inside the image."
            )
        image = image[:, crop.u0 : crop.u0 + crop.width]
        uv[:, 0] -= crop.u0
        width = crop.width
        with np.errstate(invalid="ignore"):
            mask &= (uv[:, 0] >= 0) & (uv[:, 0] < width)

    if params.flip_h:
        image = image[:, ::-1]
        uv[:, 0] = width - 1 - uv[:, 0]
        with np.errstate(invalid="ignore"):
            mask &= (uv[:, 0] >= 0) & (uv[:, 0] < width)

    image = _jitter_image(np.ascontiguousarray(image), params.jitter)
    uv[~mask] = np.nan

    depth = None
    if coords.depth is not None:
        depth = np.where(mask, coords.depth, np.nan)

    return image, PixelCoords(uv, mask, depth)
