"""Point clouds, axis-aligned boxes, IoU, and camera-frustum cropping.

Everything here is a pure function on immutable numpy data; safe to call
from any number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointCloud",
    "InstanceMask",
    "AABB",
    "CameraPose",
    "aabb_from_mask",
    "iou",
    "frustum_mask",
    "frustum_crop",
    "dominant_objects",
]


@dataclass(frozen=True)
class PointCloud:
    """N points with xyz coordinates (meters) and K auxiliary feature channels.

    ``xyz`` is (N, 3) and ``aux`` is (N, K); K may be 0. N must be >= 1 and
    all values finite.
    """

    xyz: np.ndarray
    aux: np.ndarray

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64)
        aux = np.asarray(self.aux, dtype=np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (N, 3), got {xyz.shape}")
        if xyz.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if aux.ndim != 2 or aux.shape[0] != xyz.shape[0]:
            raise ValueError(f"aux must be (N, K) with N={xyz.shape[0]}, got {aux.shape}")
        if not np.isfinite(xyz).all() or not np.isfinite(aux).all():
            raise ValueError("point cloud contains non-finite values")
        xyz.setflags(write=False)
        aux.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "aux", aux)

    @property
    def n_points(self) -> int:
        return self.xyz.shape[0]

    @property
    def n_aux(self) -> int:
        return self.aux.shape[1]

    def features(self) -> np.ndarray:
        """Per-point feature rows: xyz concatenated with aux, shape (N, 3 + K)."""
        return np.concatenate([self.xyz, self.aux], axis=1)

    def select(self, indices: np.ndarray) -> "PointCloud":
        """New cloud with the given point rows, input order preserved."""
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(self.xyz[idx], self.aux[idx])


@dataclass(frozen=True)
class InstanceMask:
    """Indices of one object instance's points, with its class and instance id."""

    point_indices: np.ndarray
    semantic_class: str
    instance_id: int

    def __post_init__(self):
        idx = np.asarray(self.point_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("instance mask must be a non-empty 1-d index array")
        if np.unique(idx).size != idx.size:
            raise ValueError("instance mask indices must be unique")
        if (idx < 0).any():
            raise ValueError("instance mask indices must be non-negative")
        idx.setflags(write=False)
        object.__setattr__(self, "point_indices", idx)

    @property
    def size(self) -> int:
        return int(self.point_indices.size)


@dataclass(frozen=True)
class AABB:
    """Axis-aligned bounding box; ``lo`` <= ``hi`` componentwise, both finite."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box corners must be finite")
        if (lo > hi).any():
            raise ValueError(f"box min {lo} exceeds max {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean per-row containment test (boundary inclusive)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.logical_and(p >= self.lo, p <= self.hi).all(axis=1)

    def translated(self, offset) -> "AABB":
        off = np.asarray(offset, dtype=np.float64)
        return AABB(self.lo + off, self.hi + off)


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera: intrinsics in pixels, a rigid world-to-camera transform,
    image size, and a [near, far] depth range in meters.

    Camera convention: +x right, +y down, +z forward (viewing direction).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    width: int
    height: int
    near: float
    far: float
    _rigid_tol: float = field(default=1e-8, repr=False)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        T = np.asarray(self.world_to_camera, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {T.shape}")
        R = T[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=self._rigid_tol):
            raise ValueError("rotation block is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation block must have determinant +1")
        if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=self._rigid_tol):
            raise ValueError("bottom row must be [0, 0, 0, 1]")
        T.setflags(write=False)
        object.__setattr__(self, "world_to_camera", T)


def aabb_from_mask(cloud: PointCloud, mask: InstanceMask) -> AABB:
    """Tightest axis-aligned box around the masked points.

    Raises ValueError("empty instance") for an empty mask and IndexError for
    out-of-range indices.
    """
    if mask.point_indices.size == 0:  # unreachable through InstanceMask, kept for raw arrays
        raise ValueError("empty instance")
    if mask.point_indices.max() >= cloud.n_points:
        raise IndexError("instance mask indexes past the end of the cloud")
    pts = cloud.xyz[mask.point_indices]
    return AABB(pts.min(axis=0), pts.max(axis=0))


def iou(a: AABB, b: AABB) -> float:
    """Volume intersection-over-union of two boxes, in [0, 1].

    Zero-volume conventions: 1.0 for identical boxes, otherwise 0.0 whenever
    the union has no volume.
    """
    inter_lo = np.maximum(a.lo, b.lo)
    inter_hi = np.minimum(a.hi, b.hi)
    inter = float(np.prod(np.maximum(inter_hi - inter_lo, 0.0)))
    union = a.volume + b.volume - inter
    if union <= 0.0:
        identical = np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)
        return 1.0 if identical else 0.0
    return inter / union


def frustum_mask(cloud: PointCloud, cam: CameraPose) -> np.ndarray:
    """Boolean per-point visibility: camera-space depth within [near, far]
    (inclusive) and pinhole projection inside [0, width) x [0, height)."""
    ones = np.ones((cloud.n_points, 1))
    p_cam = np.concatenate([cloud.xyz, ones], axis=1) @ cam.world_to_camera.T
    z = p_cam[:, 2]
    in_depth = (z >= cam.near) & (z <= cam.far)
    # Guard the division; points at z == 0 are already outside the depth range.
    safe_z = np.where(z == 0.0, 1.0, z)
    u = cam.fx * p_cam[:, 0] / safe_z + cam.cx
    v = cam.fy * p_cam[:, 1] / safe_z + cam.cy
    in_image = (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    return in_depth & in_image


def frustum_crop(cloud: PointCloud, cam: CameraPose) -> PointCloud | None:
    """Subset of the cloud visible in the camera frustum, point order preserved.

    Returns None for an empty crop so callers can skip the frame.
    """
    keep = frustum_mask(cloud, cam)
    if not keep.any():
        return None
    return cloud.select(np.flatnonzero(keep))


def dominant_objects(masks: list[InstanceMask], top_k: int) -> list[int]:
    """Instance ids of the up-to-``top_k`` largest masks by point count,
    descending; ties broken by smaller instance id."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    ranked = sorted(masks, key=lambda m: (-m.size, m.instance_id))
    return [m.instance_id for m in ranked[:top_k]]
