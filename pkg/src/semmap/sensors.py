"""Virtual camera and virtual LIDAR over a semantic mesh.

Both sensors share the camera frustum: one ray per pixel, cast through
the pixel center, nearest face wins (ties to the lowest face index).
Pixels with no intersection render as Sky and carry no cloud point.
LIDAR points are quantized to a 0.1 m grid in the camera-local frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ContractError
from .geometry import (
    CameraIntrinsics,
    DatumSpec,
    PoseState,
    Z_NEAR,
    pose_to_transform,
)
from .raycast import MeshBVH, render_kernel
from .scene import CLASS_PALETTE, SemanticClass, SemanticMesh

LIDAR_RESOLUTION = 0.1  # meters

FRAME_LOCAL = "local"
FRAME_WORLD = "world"


@dataclass(frozen=True)
class SegmentedImage:
    """Row-major grid of semantic class indices, one per pixel."""

    data: np.ndarray  # (h, w) uint8

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data, dtype=np.uint8))
        if d.ndim != 2:
            raise ContractError("segmented image must be 2D")
        if d.size and d.max() > 8:
            raise ContractError("class index above 8 in segmented image")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def save_png(self, path):
        Image.fromarray(self.data, mode="L").save(path)

    def save_palette_png(self, path):
        rgb = np.zeros((self.height, self.width, 3), dtype=np.uint8)
        for cls, color in CLASS_PALETTE.items():
            rgb[self.data == int(cls)] = color
        Image.fromarray(rgb, mode="RGB").save(path)

    @classmethod
    def load_png(cls, path):
        img = Image.open(path)
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.uint8)
        if arr.size and arr.max() > 8:
            raise ContractError(f"{path}: pixel value above 8; not a class-index PNG")
        return cls(arr)


@dataclass(frozen=True)
class PointCloudImage:
    """Per-pixel 3D points with a validity mask and a frame tag."""

    points: np.ndarray  # (h, w, 3) float64
    valid: np.ndarray  # (h, w) bool
    frame: str

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        v = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        if p.ndim != 3 or p.shape[2] != 3 or v.shape != p.shape[:2]:
            raise ContractError("point cloud image shape mismatch")
        if self.frame not in (FRAME_LOCAL, FRAME_WORLD):
            raise ContractError(f"unknown frame tag {self.frame!r}")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "valid", v)

    @property
    def width(self):
        return self.points.shape[1]

    @property
    def height(self):
        return self.points.shape[0]

    def save_text(self, path):
        lines = []
        for v in range(self.height):
            for u in range(self.width):
                if self.valid[v, u]:
                    x, y, z = (float(c) for c in self.points[v, u])
                    lines.append(f"{u} {v} {x!r} {y!r} {z!r} {self.frame}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))


def pixel_ray_directions(k: CameraIntrinsics) -> np.ndarray:
    """Camera-local ray directions through pixel centers, unit z; (h*w, 3)."""
    u0, v0 = k.principal_point
    us = (np.arange(k.width) + 0.5 - u0) / k.focal_px
    vs = (np.arange(k.height) + 0.5 - v0) / k.focal_px
    gu, gv = np.meshgrid(us, vs)
    dirs = np.stack([gu, gv, np.ones_like(gu)], axis=-1)
    return np.ascontiguousarray(dirs.reshape(-1, 3))


def _effective_intrinsics(state: PoseState, resolution):
    k = state.intrinsics
    if resolution is not None and (k.width, k.height) != tuple(resolution):
        k = k.scaled(*resolution)
    return k


def _cast(mesh_or_bvh, state: PoseState, datum: DatumSpec, resolution=None):
    bvh = mesh_or_bvh if isinstance(mesh_or_bvh, MeshBVH) else MeshBVH(mesh_or_bvh)
    k = _effective_intrinsics(state, resolution)
    transform = pose_to_transform(state.pose, datum)
    dirs = pixel_ray_directions(k)
    classes, depths = render_kernel(
        np.ascontiguousarray(transform.translation),
        np.ascontiguousarray(transform.rotation),
        dirs,
        *bvh.kernel_args(),
    )
    return k, transform, dirs, classes, depths


def render_views(mesh, state: PoseState, datum: DatumSpec, resolution=None):
    """Class image and local-frame point cloud from a single ray cast."""
    k, _, dirs, classes, depths = _cast(mesh, state, datum, resolution)
    img = SegmentedImage(classes.reshape(k.height, k.width))
    valid = np.isfinite(depths)
    pts = np.zeros((len(dirs), 3))
    pts[valid] = dirs[valid] * depths[valid, None]
    pts = np.round(pts / LIDAR_RESOLUTION) * LIDAR_RESOLUTION
    pts[~valid] = 0.0
    cloud = PointCloudImage(
        pts.reshape(k.height, k.width, 3),
        valid.reshape(k.height, k.width),
        FRAME_LOCAL,
    )
    return img, cloud


def render_class_image(mesh, state: PoseState, datum: DatumSpec,
                       resolution=None) -> SegmentedImage:
    """Virtual camera: per-pixel semantic class, Sky where no face is hit."""
    img, _ = render_views(mesh, state, datum, resolution)
    return img


def render_point_cloud(mesh, state: PoseState, datum: DatumSpec,
                       resolution=None) -> PointCloudImage:
    """Virtual LIDAR: per-pixel camera-local points on the 0.1 m grid."""
    _, cloud = render_views(mesh, state, datum, resolution)
    return cloud


def pointcloud_to_world(cloud: PointCloudImage, state: PoseState,
                        datum: DatumSpec) -> PointCloudImage:
    """Map every valid point through the pose's local-to-world transform."""
    if cloud.frame != FRAME_LOCAL:
        raise ContractError(f"expected a local-frame cloud, got {cloud.frame!r}")
    transform = pose_to_transform(state.pose, datum)
    pts = np.zeros_like(cloud.points)
    pts[cloud.valid] = transform.apply(cloud.points[cloud.valid])
    return PointCloudImage(pts, cloud.valid, FRAME_WORLD)


def project_cloud_to_image(points, k: CameraIntrinsics) -> PointCloudImage:
    """Scatter local 3D points onto the pixel grid; nearest point wins a pixel."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    u0, v0 = k.principal_point
    out = np.zeros((k.height, k.width, 3))
    valid = np.zeros((k.height, k.width), dtype=bool)
    depth = np.full((k.height, k.width), np.inf)
    # Stable iteration: later points only win on strictly smaller depth.
    for p in pts:
        x, y, z = p
        if z <= Z_NEAR:
            continue
        u = k.focal_px * x / z + u0
        v = k.focal_px * y / z + v0
        if not (0.0 <= u < k.width and 0.0 <= v < k.height):
            continue
        iu = int(u)
        iv = int(v)
        if z < depth[iv, iu]:
            depth[iv, iu] = z
            out[iv, iu] = p
            valid[iv, iu] = True
    return PointCloudImage(out, valid, FRAME_LOCAL)
