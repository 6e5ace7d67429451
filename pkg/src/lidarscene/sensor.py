"""Virtual LiDAR sensor model: angular grid, range images and the
bidirectional range-image <-> point-cloud conversions.

Conventions (fixed, documented, round-trip tested):
  * columns sweep yaw from +pi (left edge) toward -pi, pixel centers at
    yaw = pi - 2*pi*(u + 0.5)/W
  * row 0 is the topmost scan line, pixel centers at
    pitch = pitch_max - (v + 0.5)*(pitch_max - pitch_min)/H
  * a point p = (x, y, z) projects with depth = |p|, yaw = atan2(-y, x),
    pitch = asin(z / depth)
  * no-return pixels store depth 0 (never NaN)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

# HDL-64E-style vertical field of view (datasheet values).
DEFAULT_PITCH_MAX = math.radians(2.0)
DEFAULT_PITCH_MIN = math.radians(-24.8)


class SensorError(ValueError):
    pass


@dataclass(frozen=True)
class SensorSpec:
    """Angular layout of the virtual LiDAR.

    rows/cols define the range-image resolution; yaw always spans the full
    [-pi, pi) circle. ``origin_height`` is the sensor z above the ground
    plane when rendering scenes.
    """

    rows: int = 64
    cols: int = 1024
    pitch_max: float = DEFAULT_PITCH_MAX
    pitch_min: float = DEFAULT_PITCH_MIN
    max_range: float = 80.0
    origin_height: float = 1.73

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise SensorError("rows and cols must be >= 1")
        if not self.pitch_max > self.pitch_min:
            raise SensorError("pitch_max must exceed pitch_min")
        if not self.max_range > 0:
            raise SensorError("max_range must be positive")


@dataclass(frozen=True)
class RangeImage:
    """C x H x W grid: channel 0 is depth in meters (0 = no return),
    optional channel 1 stores integer semantic label ids as floats."""

    spec: SensorSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[1] != self.spec.rows or data.shape[2] != self.spec.cols:
            raise SensorError(
                f"data shape {data.shape} does not match spec "
                f"({self.spec.rows}x{self.spec.cols})"
            )
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def depth(self) -> np.ndarray:
        return self.data[0]

    @property
    def semantic(self) -> np.ndarray | None:
        return self.data[1] if self.channels > 1 else None


@dataclass(frozen=True)
class LabeledPointCloud:
    """3D points (N x 3, sensor frame, meters) with per-point label ids."""

    points: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.labels is None:
            labels = np.zeros(len(pts), dtype=np.int64)
        else:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) != len(pts):
            raise SensorError("points and labels length mismatch")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)


def pixel_to_angles(u, v, spec: SensorSpec):
    """Pixel-center (yaw, pitch) of column u, row v. Accepts arrays."""
    u = np.asarray(u)
    v = np.asarray(v)
    if np.any(u < 0) or np.any(u >= spec.cols) or np.any(v < 0) or np.any(v >= spec.rows):
        raise SensorError("pixel index out of bounds")
    yaw = math.pi - 2.0 * math.pi * (u + 0.5) / spec.cols
    pitch = spec.pitch_max - (v + 0.5) * (spec.pitch_max - spec.pitch_min) / spec.rows
    return yaw, pitch


def angles_to_direction(yaw, pitch):
    """Unit ray direction for (yaw, pitch); accepts arrays."""
    cp = np.cos(pitch)
    return np.stack(
        [np.cos(yaw) * cp, -np.sin(yaw) * cp, np.sin(pitch) * np.ones_like(np.asarray(yaw, dtype=float))],
        axis=-1,
    )


def unproject(yaw, pitch, depth):
    """3D point at the given angles and range; accepts arrays."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise SensorError("depth must be positive")
    cp = np.cos(pitch)
    x = np.cos(yaw) * cp * depth
    y = -np.sin(yaw) * cp * depth
    z = np.sin(pitch) * depth
    return np.stack([x, y, z], axis=-1)


def project(p, spec: SensorSpec):
    """Map a point to (u, v, depth) or None when out of view."""
    p = np.asarray(p, dtype=np.float64)
    u, v, depth, valid = project_points(p[None], spec)
    if not valid[0]:
        return None
    return int(u[0]), int(v[0]), float(depth[0])


def project_points(points, spec: SensorSpec):
    """Vectorized projection: arrays (u, v, depth, valid) for N x 3 input."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    depth = np.linalg.norm(points, axis=1)
    if np.any(depth == 0):
        raise SensorError("cannot project a zero-length point")
    yaw = np.arctan2(-points[:, 1], points[:, 0])
    pitch = np.arcsin(np.clip(points[:, 2] / depth, -1.0, 1.0))

    u = np.floor((math.pi - yaw) * spec.cols / (2.0 * math.pi)).astype(np.int64) % spec.cols
    v_f = (spec.pitch_max - pitch) * spec.rows / (spec.pitch_max - spec.pitch_min)
    v = np.clip(np.floor(v_f).astype(np.int64), 0, spec.rows - 1)

    valid = (
        (pitch >= spec.pitch_min)
        & (pitch <= spec.pitch_max)
        & (depth <= spec.max_range)
    )
    return u, v, depth, valid


def range_image_to_point_cloud(img: RangeImage) -> LabeledPointCloud:
    """One point per returned pixel (depth > 0), labels copied when present."""
    spec = img.spec
    v, u = np.nonzero(img.depth > 0)
    if len(u) == 0:
        return LabeledPointCloud(np.empty((0, 3)), np.empty(0, dtype=np.int64))
    yaw, pitch = pixel_to_angles(u, v, spec)
    pts = unproject(yaw, pitch, img.depth[v, u])
    if img.semantic is not None:
        labels = np.rint(img.semantic[v, u]).astype(np.int64)
    else:
        labels = np.zeros(len(u), dtype=np.int64)
    return LabeledPointCloud(pts, labels)


def point_cloud_to_range_image(cloud: LabeledPointCloud, spec: SensorSpec) -> RangeImage:
    """Z-buffer projection: each pixel keeps the minimum depth (and its label)."""
    data = np.zeros((2, spec.rows, spec.cols))
    if len(cloud) > 0:
        u, v, depth, valid = project_points(cloud.points, spec)
        u, v, depth = u[valid], v[valid], depth[valid]
        labels = cloud.labels[valid]
        # Write farthest first so the nearest point wins each pixel.
        order = np.argsort(-depth, kind="stable")
        data[0, v[order], u[order]] = depth[order]
        data[1, v[order], u[order]] = labels[order]
        # Pixels that received no point must keep label 0.
        data[1][data[0] == 0] = 0.0
    return RangeImage(spec, data)


def normalize_depth(d, spec: SensorSpec):
    """Log-scale depth to [0, 1]; 0 maps to 0 and max_range to 1."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0) or np.any(d > spec.max_range):
        raise SensorError("depth outside [0, max_range]")
    return np.log1p(d) / math.log(spec.max_range + 1.0)


def denormalize_depth(n, spec: SensorSpec):
    n = np.asarray(n, dtype=np.float64)
    return np.expm1(n * math.log(spec.max_range + 1.0))


# ---------------------------------------------------------------------------
# File formats


_LRI_MAGIC = b"LRI1"


def write_lri(path, img: RangeImage):
    """Binary range-image file: magic LRI1, u32 H W C, f64 pitch_max
    pitch_min max_range, then C*H*W little-endian f32 (channel-major)."""
    spec = img.spec
    with open(path, "wb") as f:
        f.write(_LRI_MAGIC)
        f.write(struct.pack("<III", spec.rows, spec.cols, img.channels))
        f.write(struct.pack("<ddd", spec.pitch_max, spec.pitch_min, spec.max_range))
        f.write(img.data.astype("<f4").tobytes())


def read_lri(path, origin_height: float = 1.73) -> RangeImage:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _LRI_MAGIC:
            raise SensorError(f"{path}: bad magic {magic!r}, expected LRI1")
        h, w, c = struct.unpack("<III", f.read(12))
        pitch_max, pitch_min, max_range = struct.unpack("<ddd", f.read(24))
        raw = f.read(4 * c * h * w)
        if len(raw) != 4 * c * h * w:
            raise SensorError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(c, h, w)
    spec = SensorSpec(h, w, pitch_max, pitch_min, max_range, origin_height)
    return RangeImage(spec, data)


def write_pgm(path, img: RangeImage):
    """16-bit PGM of the depth channel, linear scale to max_range."""
    depth = np.clip(img.depth / img.spec.max_range, 0.0, 1.0)
    pixels = np.round(depth * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.spec.cols} {img.spec.rows}\n65535\n".encode())
        f.write(pixels.tobytes())


def write_point_cloud(path, cloud: LabeledPointCloud):
    """Text format: one ``x y z label_id`` line per point."""
    with open(path, "w") as f:
        f.write("# x y z label_id\n")
        for (x, y, z), lab in zip(cloud.points, cloud.labels):
            f.write(f"{x:.6f} {y:.6f} {z:.6f} {int(lab)}\n")


def read_point_cloud(path) -> LabeledPointCloud:
    pts, labels = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise SensorError(f"{path}:{ln}: expected 'x y z label_id'")
            pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
            labels.append(int(parts[3]))
    return LabeledPointCloud(np.array(pts).reshape(-1, 3), np.array(labels, dtype=np.int64))
