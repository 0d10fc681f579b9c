"""
Procedural paired image / point cloud scenes.

A scene is a ground plane (optionally split into labeled strips) plus primitives
drawn from the class priors of a DomainProfile. LiDAR points are ray-cast from
the sensor origin on ``beam_layers`` elevation rings, the image is rendered by
z-buffered splatting of primitive surface samples.

Profiles with a ``class_map`` annotate in the raw vocabulary of their dataset:
every surface gets one raw class among those the map sends to its class, and
labels are ids into the map's source classes until mapped.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from xmseg.classmap import load_class_map
from xmseg.errors import InvalidArgumentError, UnknownNameError
from xmseg.geometry import (
    CameraIntrinsics,
    PixelCoords,
    PointCloud,
    RigidTransform,
    project_points,
    yaw_matrix,
)

NUSCENES_CLASSES = ("vehicle", "pedestrian", "bike", "traffic_boundary", "background")
SHARED_CLASSES = (
    "car",
    "truck",
    "bike",
    "person",
    "road",
    "parking",
    "sidewalk",
    "building",
    "nature",
    "other_objects",
)

SHAPE_KINDS = ("box", "cylinder", "sphere", "slab")
DOMAINS = ("source", "target")

_EPS = 1e-6
_MAX_SPLAT_RADIUS = 4
_LIGHT = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])


@dataclass(frozen=True)
class ShapePrior:
    """
    Geometric and appearance prior of one class.

    ``size_mean``/``size_std`` are (length, width, height) for boxes and slabs,
    (radius, radius, height) for cylinders and (radius, radius, radius) for spheres.
    """

    kind: str
    size_mean: tuple
    size_std: tuple = (0.0, 0.0, 0.0)
    albedo: tuple = (0.5, 0.5, 0.5)
    albedo_std: float = 0.04
    distance_range: tuple = (4.0, 28.0)
    yaw_range: float = math.pi
    elevation: float = 0.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidArgumentError(
                f"Unknown shape kind `{self.kind}`, expected one of {', '.join(SHAPE_KINDS)}."
            )


@dataclass(frozen=True)
class GroundStrip:
    """Flat labeled band mirrored on both sides of the driving direction."""

    cls: str
    y_min: float
    y_max: float
    height: float
    albedo: tuple


@dataclass(frozen=True)
class DomainProfile:
    name: str
    classes: tuple
    illumination_scale: float
    pixel_noise_sigma: float
    beam_layers: int
    class_shape_priors: dict
    class_frequency_priors: dict
    ground_class: str
    ground_albedo: tuple = (0.33, 0.33, 0.34)
    sky_albedo: tuple = (0.62, 0.74, 0.92)
    ground_strips: tuple = ()
    objects_per_scene: tuple = (6, 12)
    azimuth_steps: int = 96
    elevation_range: tuple = (-22.0, 6.0)  # degrees
    sensor_height: float = 1.8
    max_range: float = 40.0
    range_noise: float = 0.01
    class_map: str = None

    def __post_init__(self):
        if not self.illumination_scale > 0:
            raise InvalidArgumentError("illumination_scale must be positive.")
        if self.beam_layers < 1:
            raise InvalidArgumentError("beam_layers must be at least 1.")
        if self.pixel_noise_sigma < 0:
            raise InvalidArgumentError("pixel_noise_sigma must be non-negative.")
        if self.ground_class not in self.classes:
            raise InvalidArgumentError(
                f"Ground class `{self.ground_class}` is not in the class list."
            )

        unknown = (
            set(self.class_frequency_priors) | set(self.class_shape_priors)
        ) - set(self.classes)
        unknown |= {s.cls for s in self.ground_strips} - set(self.classes)
        if unknown:
            raise InvalidArgumentError(
                f"Profile `{self.name}` refers to unknown classes: {', '.join(sorted(unknown))}."
            )

        probs = np.array([self.class_frequency_priors.get(c, 0.0) for c in self.classes])
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(
                f"Class frequency priors of `{self.name}` must be non-negative and sum to 1."
            )
        missing = {
            c for c, p in self.class_frequency_priors.items() if p > 0
        } - set(self.class_shape_priors)
        if missing:
            raise InvalidArgumentError(
                f"Classes {', '.join(sorted(missing))} have a frequency prior but no shape prior."
            )
        if self.class_map is not None:
            self._check_class_map()

    def _check_class_map(self):
        cmap = load_class_map(self.class_map)
        if tuple(cmap.classes) != tuple(self.classes):
            raise InvalidArgumentError(
                f"Class map `{cmap.name}` does not target the classes of profile `{self.name}`."
            )
        drawn = {c for c, p in self.class_frequency_priors.items() if p > 0}
        drawn |= {self.ground_class} | {s.cls for s in self.ground_strips}
        unmapped = drawn - {t for t in cmap.entries.values() if t is not None}
        if unmapped:
            raise InvalidArgumentError(
                f"Class map `{cmap.name}` has no raw class for {', '.join(sorted(unmapped))}."
            )

    def raw_ids(self):
        """Per class, the ids of the raw source classes mapped onto it."""
        cmap = load_class_map(self.class_map)
        ids = {c: [] for c in self.classes}
        for i, target in enumerate(cmap.entries.values()):
            if target is not None:
                ids[target].append(i)
        return [np.array(ids[c], dtype=np.int64) for c in self.classes]

    @property
    def num_classes(self):
        return len(self.classes)

    def frequency_vector(self):
        return np.array([self.class_frequency_priors.get(c, 0.0) for c in self.classes])


@dataclass(eq=False)
class Sample:
    image: np.ndarray
    points: PointCloud
    labels: np.ndarray
    pixel_coords: PixelCoords
    domain: str
    seed: int = None
    profile: str = None
    sample_id: str = None
    label_map: str = None  # set while labels are raw ids of that class map

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise InvalidArgumentError(f"Unknown domain tag `{self.domain}`.")
        if len(self.labels) != self.points.n or len(self.pixel_coords) != self.points.n:
            raise InvalidArgumentError(
                "Labels, pixel coordinates and points must have the same length."
            )

    @property
    def num_points(self):
        return self.points.n


@dataclass(eq=False)
class Primitive:
    kind: str
    center: np.ndarray  # footprint center (x, y) and base height z
    size: np.ndarray
    yaw: float
    class_id: int
    albedo: np.ndarray

    @property
    def box_center(self):
        return self.center + np.array([0.0, 0.0, self.size[2] / 2])


def lidar_to_camera(camera_offset=(0.05, 0.0, -0.08)):
    """Extrinsic of a forward-looking camera mounted next to the LiDAR."""
    rotation = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    translation = -rotation @ np.asarray(camera_offset, dtype=np.float64)
    return RigidTransform(rotation, translation)


def horizontal_fov(intr):
    """Half-angle of the camera's horizontal field of view."""
    return math.atan(max(intr.cx, intr.width - intr.cx) / intr.fx)


# scene layout


def _sample_size(rng, prior):
    mean = np.asarray(prior.size_mean, dtype=np.float64)
    std = np.asarray(prior.size_std, dtype=np.float64)
    size = mean + std * rng.standard_normal(3)
    size = np.maximum(size, 0.3 * mean)
    if prior.kind == "cylinder":
        size[1] = size[0]
    elif prior.kind == "sphere":
        size[1] = size[2] = size[0]
    return size


def _footprint_radius(kind, size):
    if kind in ("cylinder", "sphere"):
        return size[0]
    return 0.5 * math.hypot(size[0], size[1])


def layout_scene(profile, intr, rng):
    ground_z = -profile.sensor_height
    half_fov = horizontal_fov(intr)
    class_ids = {c: i for i, c in enumerate(profile.classes)}
    primitives = []

    for strip in profile.ground_strips:
        for sign in (-1.0, 1.0):
            y_lo, y_hi = sorted((sign * strip.y_min, sign * strip.y_max))
            primitives.append(
                Primitive(
                    "slab",
                    np.array([profile.max_range / 2, (y_lo + y_hi) / 2, ground_z]),
                    np.array([profile.max_range + 2.0, y_hi - y_lo, strip.height]),
                    0.0,
                    class_ids[strip.cls],
                    np.asarray(strip.albedo, dtype=np.float64),
                )
            )

    probs = profile.frequency_vector()
    num_objects = int(rng.integers(profile.objects_per_scene[0], profile.objects_per_scene[1] + 1))
    footprints = []

    for _ in range(num_objects):
        cls = profile.classes[int(rng.choice(len(profile.classes), p=probs))]
        prior = profile.class_shape_priors[cls]
        size = _sample_size(rng, prior)
        radius = _footprint_radius(prior.kind, size)
        albedo = np.clip(
            np.asarray(prior.albedo) + prior.albedo_std * rng.standard_normal(3), 0.02, 1.0
        )
        yaw = float(rng.uniform(-prior.yaw_range, prior.yaw_range))

        # rejection sampling of a free spot inside the camera frustum
        for _attempt in range(12):
            x = float(rng.uniform(*prior.distance_range))
            y_max = 0.9 * x * math.tan(half_fov)
            y = float(rng.uniform(-y_max, y_max))
            if all(math.hypot(x - fx, y - fy) > radius + fr for fx, fy, fr in footprints):
                footprints.append((x, y, radius))
                primitives.append(
                    Primitive(
                        prior.kind,
                        np.array([x, y, ground_z + prior.elevation]),
                        size,
                        yaw,
                        class_ids[cls],
                        albedo,
                    )
                )
                break

    return primitives


# ray casting


def _intersect_box(dirs, prim):
    rot = yaw_matrix(-prim.yaw)
    o = (-prim.box_center) @ rot.T
    d = dirs @ rot.T
    d = np.where(np.abs(d) < 1e-12, 1e-12, d)
    half = prim.size / 2
    t1 = (-half - o) / d
    t2 = (half - o) / d
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    hit = (t_near <= t_far) & (t_near > _EPS)
    return np.where(hit, t_near, np.inf)


def _intersect_cylinder(dirs, prim):
    cx, cy, z0 = prim.center
    radius, height = prim.size[0], prim.size[2]
    z1 = z0 + height
    ox, oy = -cx, -cy
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]

    a = np.maximum(dx * dx + dy * dy, 1e-12)
    b = 2 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore"):
        t_side = (-b - np.sqrt(disc)) / (2 * a)
    z_side = t_side * dz
    side_ok = (disc >= 0) & (t_side > _EPS) & (z_side >= z0) & (z_side <= z1)
    t_side = np.where(side_ok, t_side, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_top = z1 / dz
    px, py = t_top * dx - cx, t_top * dy - cy
    top_ok = (dz < 0) & (z1 < 0) & (t_top > _EPS) & (px * px + py * py <= radius * radius)
    t_top = np.where(top_ok, t_top, np.inf)

    return np.minimum(t_side, t_top)


def _intersect_sphere(dirs, prim):
    radius = prim.size[0]
    center = prim.center + np.array([0.0, 0.0, radius])
    b = -2 * (dirs @ center)
    c = center @ center - radius * radius
    disc = b * b - 4 * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / 2
    return np.where((disc >= 0) & (t > _EPS), t, np.inf)


_INTERSECT = {
    "box": _intersect_box,
    "slab": _intersect_box,
    "cylinder": _intersect_cylinder,
    "sphere": _intersect_sphere,
}


def lidar_directions(profile, intr):
    half_fov = horizontal_fov(intr) * 1.05
    elevations = np.radians(
        np.linspace(profile.elevation_range[0], profile.elevation_range[1], profile.beam_layers)
        if profile.beam_layers > 1
        else np.array([np.mean(profile.elevation_range)])
    )
    azimuths = np.linspace(-half_fov, half_fov, profile.azimuth_steps)
    el, az = np.meshgrid(elevations, azimuths, indexing="ij")
    dirs = np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
    )
    return dirs.reshape(-1, 3)


def cast_rays(dirs, primitives, profile):
    """
    Returns hit distance, class id and surface index per ray (inf / -1 / -1 on a
    miss). Surface 0 is the ground plane, surface i the (i - 1)-th primitive.
    """
    ground_class = profile.classes.index(profile.ground_class)
    ground_z = -profile.sensor_height

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dirs[:, 2] < 0, ground_z / dirs[:, 2], np.inf)

    t_all = [t_ground] + [_INTERSECT[p.kind](dirs, p) for p in primitives]
    class_all = np.array([ground_class] + [p.class_id for p in primitives])
    t_all = np.stack(t_all, axis=0)

    nearest = np.argmin(t_all, axis=0)
    t_hit = t_all[nearest, np.arange(len(dirs))]
    hit = np.isfinite(t_hit)
    labels = np.where(hit, class_all[nearest], -1)
    return t_hit, labels, np.where(hit, nearest, -1)


def raw_surface_labels(primitives, profile, rng):
    """One raw class id per surface, drawn uniformly among the raw classes of its class."""
    raw_ids = profile.raw_ids()
    ground_class = profile.classes.index(profile.ground_class)
    classes = [ground_class] + [p.class_id for p in primitives]
    return np.array([rng.choice(raw_ids[c]) for c in classes], dtype=np.int64)


# image rendering


def _grid(n_a, n_b):
    a = (np.arange(n_a) + 0.5) / n_a - 0.5
    b = (np.arange(n_b) + 0.5) / n_b - 0.5
    ga, gb = np.meshgrid(a, b, indexing="ij")
    return ga.reshape(-1), gb.reshape(-1)


def _box_surface(prim, spacing):
    length, width, height = prim.size
    faces = [
        # (center offset, axis a, axis b, extent a, extent b, normal)
        ((length / 2, 0, 0), (0, 1, 0), (0, 0, 1), width, height, (1, 0, 0)),
        ((-length / 2, 0, 0), (0, 1, 0), (0, 0, 1), width, height, (-1, 0, 0)),
        ((0, width / 2, 0), (1, 0, 0), (0, 0, 1), length, height, (0, 1, 0)),
        ((0, -width / 2, 0), (1, 0, 0), (0, 0, 1), length, height, (0, -1, 0)),
        ((0, 0, height / 2), (1, 0, 0), (0, 1, 0), length, width, (0, 0, 1)),
    ]
    pts, normals, spacings = [], [], []
    for offset, axis_a, axis_b, ext_a, ext_b, normal in faces:
        step = max(spacing, max(ext_a, ext_b) / 150)
        n_a = max(2, int(math.ceil(ext_a / step)))
        n_b = max(2, int(math.ceil(ext_b / step)))
        ga, gb = _grid(n_a, n_b)
        p = (
            np.asarray(offset, dtype=np.float64)
            + np.outer(ga * ext_a, axis_a)
            + np.outer(gb * ext_b, axis_b)
        )
        pts.append(p)
        normals.append(np.tile(normal, (len(p), 1)))
        spacings.append(np.full(len(p), max(ext_a / n_a, ext_b / n_b)))

    rot = yaw_matrix(prim.yaw)
    pts = np.concatenate(pts) @ rot.T + prim.box_center
    normals = np.concatenate(normals).astype(np.float64) @ rot.T
    return pts, normals, np.concatenate(spacings)


def _cylinder_surface(prim, spacing):
    radius, height = prim.size[0], prim.size[2]
    n_ang = max(12, int(math.ceil(2 * math.pi * radius / spacing)))
    n_h = max(2, int(math.ceil(height / spacing)))
    ang = 2 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
    hs = (np.arange(n_h) + 0.5) / n_h * height
    a, h = np.meshgrid(ang, hs, indexing="ij")
    a, h = a.reshape(-1), h.reshape(-1)
    side = np.stack([radius * np.cos(a), radius * np.sin(a), h], axis=1)
    side_n = np.stack([np.cos(a), np.sin(a), np.zeros_like(a)], axis=1)

    n_r = max(2, int(math.ceil(radius / spacing)))
    rr = (np.arange(n_r) + 0.5) / n_r * radius
    r, a2 = np.meshgrid(rr, ang, indexing="ij")
    r, a2 = r.reshape(-1), a2.reshape(-1)
    top = np.stack([r * np.cos(a2), r * np.sin(a2), np.full_like(r, height)], axis=1)
    top_n = np.tile([0.0, 0.0, 1.0], (len(top), 1))

    pts = np.concatenate([side, top]) + prim.center
    normals = np.concatenate([side_n, top_n])
    spacings = np.full(len(pts), max(2 * math.pi * radius / n_ang, height / n_h))
    return pts, normals, spacings


def _sphere_surface(prim, spacing):
    radius = prim.size[0]
    n_lat = max(6, int(math.ceil(math.pi * radius / spacing)))
    n_lon = max(12, int(math.ceil(2 * math.pi * radius / spacing)))
    lat = math.pi * ((np.arange(n_lat) + 0.5) / n_lat - 0.5)
    lon = 2 * math.pi * (np.arange(n_lon) + 0.5) / n_lon
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    normals = np.stack(
        [np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1
    ).reshape(-1, 3)
    pts = radius * normals + prim.center + np.array([0.0, 0.0, radius])
    spacings = np.full(len(pts), 2 * math.pi * radius / n_lon)
    return pts, normals, spacings


_SURFACE = {
    "box": _box_surface,
    "slab": _box_surface,
    "cylinder": _cylinder_surface,
    "sphere": _sphere_surface,
}


def _ground_surface(profile, intr):
    half_fov = horizontal_fov(intr) * 1.1
    ratio = 1.03
    n_r = int(math.ceil(math.log(profile.max_range / 0.8) / math.log(ratio)))
    radii = 0.8 * ratio ** np.arange(n_r)
    n_ang = int(math.ceil(2 * half_fov / 0.008))
    angles = np.linspace(-half_fov, half_fov, n_ang)
    r, a = np.meshgrid(radii, angles, indexing="ij")
    r, a = r.reshape(-1), a.reshape(-1)
    pts = np.stack(
        [r * np.cos(a), r * np.sin(a), np.full_like(r, -profile.sensor_height)], axis=1
    )
    normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    spacings = np.maximum(r * (ratio - 1), r * 2 * half_fov / n_ang)
    return pts, normals, spacings


def render_image(primitives, profile, intr, extrinsic, rng, spacing=0.1):
    """z-buffered splatting of shaded surface samples, plus sky and pixel noise."""
    height, width = intr.height, intr.width
    illum = profile.illumination_scale

    pts, normals, spacings = _ground_surface(profile, intr)
    colors = [np.tile(np.asarray(profile.ground_albedo, dtype=np.float64), (len(pts), 1))]
    all_pts, all_normals, all_spacings = [pts], [normals], [spacings]

    for prim in primitives:
        p, n, s = _SURFACE[prim.kind](prim, spacing)
        all_pts.append(p)
        all_normals.append(n)
        all_spacings.append(s)
        colors.append(np.tile(prim.albedo, (len(p), 1)))

    pts = np.concatenate(all_pts)
    normals = np.concatenate(all_normals)
    spacings = np.concatenate(all_spacings)
    colors = np.concatenate(colors)

    shade = 0.5 + 0.5 * np.clip(normals @ _LIGHT, 0.0, None)
    colors = colors * shade[:, None] * illum

    cam = extrinsic.apply(pts)
    z = cam[:, 2]
    front = z > 0.1
    cam, z, colors, spacings = cam[front], z[front], colors[front], spacings[front]
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy
    ui = np.floor(u + 0.5).astype(np.int64)
    vi = np.floor(v + 0.5).astype(np.int64)
    radius = np.clip(
        np.ceil(0.5 * intr.fx * spacings / z).astype(np.int64), 0, _MAX_SPLAT_RADIUS
    )

    cand_pix, cand_z, cand_col = [], [], []
    for r in np.unique(radius):
        sel = radius == r
        for dv in range(-r, r + 1):
            for du in range(-r, r + 1):
                uu, vv = ui[sel] + du, vi[sel] + dv
                inside = (uu >= 0) & (uu < width) & (vv >= 0) & (vv < height)
                cand_pix.append((vv * width + uu)[inside])
                cand_z.append(z[sel][inside])
                cand_col.append(colors[sel][inside])

    sky = np.asarray(profile.sky_albedo, dtype=np.float64) * illum
    image = np.tile(sky, (height * width, 1))
    # darker toward the top of the frame
    image *= (0.8 + 0.2 * np.repeat(np.arange(height) / max(height - 1, 1), width))[:, None]

    if cand_pix:
        cand_pix = np.concatenate(cand_pix)
        cand_z = np.concatenate(cand_z)
        cand_col = np.concatenate(cand_col)
        order = np.lexsort((cand_z, cand_pix))
        pix_sorted = cand_pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        winners = order[first]
        image[cand_pix[winners]] = cand_col[winners]

    image = image.reshape(height, width, 3)
    if profile.pixel_noise_sigma > 0:
        image = image + profile.pixel_noise_sigma * rng.standard_normal(image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def generate_scene(profile, intr, seed, domain="source", manifest=None, extrinsic=None):
    """
    Deterministic paired sample for (profile, intr, seed).

    Layout, appearance and sensor noise use independent random streams so that
    two profiles sharing priors (e.g. day and night) produce the same layout.
    """
    if manifest is not None:
        manifest.check_seed(seed)
    extrinsic = extrinsic or lidar_to_camera()

    rng_layout = np.random.default_rng([seed, 0])
    rng_image = np.random.default_rng([seed, 1])
    rng_lidar = np.random.default_rng([seed, 2])
    rng_raw = np.random.default_rng([seed, 3])

    primitives = layout_scene(profile, intr, rng_layout)

    dirs = lidar_directions(profile, intr)
    t_hit, labels, surface = cast_rays(dirs, primitives, profile)
    if profile.class_map is not None:
        raw = raw_surface_labels(primitives, profile, rng_raw)
        labels = np.where(surface >= 0, raw[surface], -1)
    keep = np.isfinite(t_hit) & (t_hit <= profile.max_range)
    noise = profile.range_noise * rng_lidar.standard_normal(len(t_hit))
    coords = dirs * (t_hit + noise)[:, None]
    coords, labels = coords[keep], labels[keep]

    pixel_coords = project_points(coords, extrinsic, intr)
    # keep points inside the pixel-center box so horizontal flips stay in frame
    with np.errstate(invalid="ignore"):
        inside = (
            pixel_coords.mask
            & (pixel_coords.uv[:, 0] <= intr.width - 1)
            & (pixel_coords.uv[:, 1] <= intr.height - 1)
        )
    coords, labels = coords[inside], labels[inside]
    pixel_coords = PixelCoords(
        pixel_coords.uv[inside], pixel_coords.mask[inside], pixel_coords.depth[inside]
    )

    image = render_image(primitives, profile, intr, extrinsic, rng_image)

    return Sample(
        image=image,
        points=PointCloud(coords),
        labels=labels.astype(np.int64),
        pixel_coords=pixel_coords,
        domain=domain,
        seed=int(seed),
        profile=profile.name,
        label_map=profile.class_map,
    )


# domain profiles of the three shift scenarios

_NUSCENES_SHAPES = {
    "vehicle": ShapePrior("box", (4.4, 1.8, 1.5), (0.4, 0.1, 0.15), (0.72, 0.16, 0.14)),
    "pedestrian": ShapePrior(
        "cylinder", (0.3, 0.3, 1.75), (0.04, 0.0, 0.1), (0.22, 0.3, 0.68), distance_range=(4.0, 20.0)
    ),
    "bike": ShapePrior(
        "box", (1.8, 0.45, 1.2), (0.15, 0.05, 0.1), (0.86, 0.78, 0.12), distance_range=(4.0, 22.0)
    ),
    "traffic_boundary": ShapePrior(
        "box", (2.0, 0.25, 0.9), (0.3, 0.03, 0.1), (0.95, 0.55, 0.15), yaw_range=0.3
    ),
    "background": ShapePrior(
        "box", (8.0, 6.0, 6.0), (2.0, 1.5, 2.0), (0.55, 0.55, 0.5), distance_range=(18.0, 34.0), yaw_range=0.2
    ),
}
_NUSCENES_FREQ = {
    "vehicle": 0.35,
    "pedestrian": 0.25,
    "bike": 0.15,
    "traffic_boundary": 0.15,
    "background": 0.10,
}

_SINGAPORE_SHAPES = {
    "vehicle": ShapePrior("box", (3.9, 1.7, 1.55), (0.3, 0.1, 0.1), (0.64, 0.22, 0.2)),
    "pedestrian": ShapePrior(
        "cylinder", (0.28, 0.28, 1.65), (0.04, 0.0, 0.08), (0.3, 0.3, 0.55), distance_range=(4.0, 20.0)
    ),
    # delivery scooters with a storage box look vehicle-like in 3D
    "bike": ShapePrior(
        "box", (2.0, 0.75, 1.5), (0.15, 0.08, 0.1), (0.84, 0.76, 0.2), distance_range=(4.0, 22.0)
    ),
    "traffic_boundary": ShapePrior(
        "box", (1.6, 0.35, 1.0), (0.2, 0.04, 0.1), (0.85, 0.82, 0.8), yaw_range=0.3
    ),
    "background": ShapePrior(
        "box", (10.0, 7.0, 12.0), (2.5, 1.5, 3.0), (0.68, 0.63, 0.55), distance_range=(16.0, 34.0), yaw_range=0.2
    ),
}
_SINGAPORE_FREQ = {
    "vehicle": 0.3,
    "pedestrian": 0.2,
    "bike": 0.25,
    "traffic_boundary": 0.1,
    "background": 0.15,
}

_SHARED_SHAPES = {
    "car": ShapePrior("box", (4.3, 1.8, 1.45), (0.35, 0.1, 0.12), (0.7, 0.18, 0.15)),
    "truck": ShapePrior(
        "box", (8.0, 2.5, 3.2), (1.0, 0.1, 0.3), (0.85, 0.85, 0.88), distance_range=(8.0, 30.0)
    ),
    "bike": ShapePrior(
        "box", (1.8, 0.45, 1.2), (0.15, 0.05, 0.1), (0.86, 0.78, 0.12), distance_range=(4.0, 22.0)
    ),
    "person": ShapePrior(
        "cylinder", (0.3, 0.3, 1.75), (0.04, 0.0, 0.1), (0.22, 0.3, 0.68), distance_range=(4.0, 20.0)
    ),
    "parking": ShapePrior(
        "slab", (6.0, 4.0, 0.03), (1.0, 0.8, 0.0), (0.42, 0.4, 0.5), albedo_std=0.02, yaw_range=0.1
    ),
    "building": ShapePrior(
        "box", (10.0, 8.0, 8.0), (2.5, 2.0, 2.5), (0.6, 0.5, 0.45), distance_range=(18.0, 34.0), yaw_range=0.2
    ),
    "nature": ShapePrior(
        "sphere", (1.6, 1.6, 1.6), (0.4, 0.0, 0.0), (0.2, 0.52, 0.18), elevation=0.6
    ),
    "other_objects": ShapePrior(
        "cylinder", (0.12, 0.12, 3.0), (0.02, 0.0, 0.5), (0.35, 0.38, 0.55)
    ),
}
_SHARED_FREQ = {
    "car": 0.3,
    "truck": 0.08,
    "bike": 0.1,
    "person": 0.15,
    "parking": 0.05,
    "building": 0.12,
    "nature": 0.12,
    "other_objects": 0.08,
}
_SHARED_STRIPS = (
    GroundStrip("sidewalk", 4.0, 6.5, 0.12, (0.62, 0.6, 0.58)),
    GroundStrip("nature", 6.5, 40.0, 0.03, (0.26, 0.46, 0.2)),
)


def _with_albedo_shift(shapes, shift):
    return {
        cls: ShapePrior(
            p.kind,
            p.size_mean,
            p.size_std,
            tuple(float(np.clip(a + shift, 0.02, 1.0)) for a in p.albedo),
            p.albedo_std,
            p.distance_range,
            p.yaw_range,
            p.elevation,
        )
        for cls, p in shapes.items()
    }


PROFILES = {
    "day": DomainProfile(
        "day", NUSCENES_CLASSES, 1.0, 0.02, 32, _NUSCENES_SHAPES, _NUSCENES_FREQ, "background",
        class_map="nuscenes_to_5cat",
    ),
    "night": DomainProfile(
        "night", NUSCENES_CLASSES, 0.25, 0.06, 32, _NUSCENES_SHAPES, _NUSCENES_FREQ, "background",
        sky_albedo=(0.12, 0.12, 0.2), class_map="nuscenes_to_5cat",
    ),
    "usa": DomainProfile(
        "usa", NUSCENES_CLASSES, 1.0, 0.02, 32, _NUSCENES_SHAPES, _NUSCENES_FREQ, "background",
        class_map="nuscenes_to_5cat",
    ),
    "singapore": DomainProfile(
        "singapore", NUSCENES_CLASSES, 0.9, 0.03, 32, _SINGAPORE_SHAPES, _SINGAPORE_FREQ, "background",
        ground_albedo=(0.4, 0.38, 0.36), class_map="nuscenes_to_5cat",
    ),
    "a2d2": DomainProfile(
        "a2d2", SHARED_CLASSES, 1.0, 0.02, 16, _SHARED_SHAPES, _SHARED_FREQ, "road",
        ground_albedo=(0.3, 0.3, 0.32), ground_strips=_SHARED_STRIPS, elevation_range=(-20.0, 4.0),
        class_map="a2d2_to_shared",
    ),
    "semantic_kitti": DomainProfile(
        "semantic_kitti", SHARED_CLASSES, 0.85, 0.03, 64, _with_albedo_shift(_SHARED_SHAPES, -0.05),
        _SHARED_FREQ, "road",
        ground_albedo=(0.26, 0.26, 0.27), ground_strips=_SHARED_STRIPS, elevation_range=(-20.0, 4.0),
        class_map="semantic_kitti_to_shared",
    ),
}

INTRINSICS = {
    "nuscenes": CameraIntrinsics(fx=52.0, fy=52.0, cx=48.0, cy=24.0, width=96, height=48),
    "a2d2": CameraIntrinsics(fx=60.0, fy=60.0, cx=48.0, cy=24.0, width=96, height=48),
    "semantic_kitti": CameraIntrinsics(fx=44.0, fy=44.0, cx=64.0, cy=24.0, width=128, height=48),
}


def get_profile(name):
    if name not in PROFILES:
        raise UnknownNameError("domain profile", name, PROFILES.keys())
    return PROFILES[name]
