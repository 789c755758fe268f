"""Pose refinement by grid search over rendered candidates.

Candidates are laid out on a square position lattice clipped to a disc
around the initial position, crossed with a symmetric set of yaw values.
Each candidate is rendered and scored against the segmented camera image
with two overlap metrics (pixel agreement and mean-class-IoU); scores
are combined linearly and normalized into likelihoods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ContractError
from .geometry import (
    DatumSpec,
    GeoPose,
    GridPoint,
    PoseState,
    geodetic_to_grid,
    grid_to_geodetic,
    pose_to_transform,
)
from .raycast import MeshBVH, score_kernel
from .sensors import SegmentedImage, pixel_ray_directions


@dataclass(frozen=True)
class CandidateGrid:
    """Search grid geometry; defaults follow the production search scheme."""

    radius_m: float = 40.0
    step_m: float = 1.0
    yaw_span_deg: float = 40.0
    yaw_step_deg: float = 1.0

    def __post_init__(self):
        if self.step_m <= 0 or self.yaw_step_deg <= 0:
            raise ContractError("grid steps must be positive")
        if self.radius_m < 0 or self.yaw_span_deg < 0:
            raise ContractError("grid extents must be non-negative")

    def position_offsets(self):
        """Integer-lattice offsets (east, north) inside the disc, row-major.

        Rows run north-to-south, columns west-to-east.
        """
        n = int(math.floor(self.radius_m / self.step_m + 1e-9))
        r2 = self.radius_m * self.radius_m + 1e-9
        offsets = []
        for j in range(n, -n - 1, -1):
            for i in range(-n, n + 1):
                de = i * self.step_m
                dn = j * self.step_m
                if de * de + dn * dn <= r2:
                    offsets.append((de, dn))
        return offsets

    def yaw_offsets(self):
        k = int(math.floor(self.yaw_span_deg / 2.0 / self.yaw_step_deg + 1e-9))
        return [m * self.yaw_step_deg for m in range(-k, k + 1)]


@dataclass(frozen=True)
class CandidateScore:
    pose: GeoPose
    agreement: float
    mean_class_iou: float
    likelihood: float


@dataclass
class Heatmap:
    """Per-candidate likelihood records plus the chosen candidate."""

    records: list  # of CandidateScore
    best_index: int
    grid_positions: np.ndarray = field(default=None)  # (C, 2) easting/northing

    @property
    def best(self):
        return self.records[self.best_index]


def generate_candidates(state: PoseState, grid: CandidateGrid,
                        datum: DatumSpec) -> list[GeoPose]:
    """Hypothesized poses around the initial pose; includes the initial pose."""
    p0 = state.pose
    origin = geodetic_to_grid(p0, datum)
    poses = []
    yaws = grid.yaw_offsets()
    for de, dn in grid.position_offsets():
        if de == 0.0 and dn == 0.0:
            lat, lon = p0.lat, p0.lon
        else:
            g = grid_to_geodetic(
                GridPoint(origin.easting + de, origin.northing + dn, origin.up), datum
            )
            lat, lon = g.lat, g.lon
        for dy in yaws:
            poses.append(
                GeoPose(lat, lon, p0.alt, p0.yaw + dy, p0.pitch, p0.roll)
            )
    return poses


def score_candidate(cam: SegmentedImage, cand: SegmentedImage):
    """(pixel agreement, mean-class-IoU) between two segmented images."""
    if cam.data.shape != cand.data.shape:
        raise ContractError("image dimensions differ")
    a = cam.data
    b = cand.data
    agreement = float(np.count_nonzero(a == b)) / a.size
    ious = []
    for c in range(9):
        in_a = a == c
        in_b = b == c
        union = np.count_nonzero(in_a | in_b)
        if union:
            ious.append(np.count_nonzero(in_a & in_b) / union)
    miou = float(np.mean(ious)) if ious else 0.0
    return agreement, miou


def _downsample_nearest(img: SegmentedImage, width, height) -> SegmentedImage:
    """Nearest-neighbor resample by pixel-center sampling."""
    if (img.width, img.height) == (width, height):
        return img
    cols = np.minimum(((np.arange(width) + 0.5) * img.width / width).astype(int),
                      img.width - 1)
    rows = np.minimum(((np.arange(height) + 0.5) * img.height / height).astype(int),
                      img.height - 1)
    return SegmentedImage(img.data[np.ix_(rows, cols)])


def _pose_cache_key(pose: GeoPose):
    return (pose.lat, pose.lon, pose.alt, pose.yaw, pose.pitch, pose.roll)


def estimate_pose(cam: SegmentedImage, mesh, state: PoseState,
                  grid: CandidateGrid, datum: DatumSpec, *,
                  weights=(0.5, 0.5), resolution=None, score_cache=None):
    """Refined pose via Eq.-style candidate search; returns (PoseState, Heatmap).

    `score_cache`, when given, memoizes (agreement, iou) per candidate pose
    across calls; it is only valid for a fixed mesh / camera image /
    resolution combination.
    """
    candidates = generate_candidates(state, grid, datum)
    if not candidates:
        raise ContractError("empty candidate set")

    k = state.intrinsics
    if resolution is not None and (k.width, k.height) != tuple(resolution):
        k = k.scaled(*resolution)
    if (cam.width, cam.height) != (state.intrinsics.width, state.intrinsics.height):
        raise ContractError("camera image does not match the camera intrinsics")
    cam_small = _downsample_nearest(cam, k.width, k.height)

    bvh = mesh if isinstance(mesh, MeshBVH) else MeshBVH(mesh)
    dirs = pixel_ray_directions(k)
    cam_flat = np.ascontiguousarray(cam_small.data.reshape(-1))

    n = len(candidates)
    agreement = np.empty(n)
    miou = np.empty(n)
    todo = []
    if score_cache is None:
        todo = list(range(n))
    else:
        for i, pose in enumerate(candidates):
            hit = score_cache.get(_pose_cache_key(pose))
            if hit is None:
                todo.append(i)
            else:
                agreement[i], miou[i] = hit

    grid_xy = np.empty((n, 2))
    transforms = [pose_to_transform(p, datum) for p in candidates]
    for i, t in enumerate(transforms):
        grid_xy[i] = t.translation[:2]

    if todo:
        origins = np.ascontiguousarray(
            np.stack([transforms[i].translation for i in todo])
        )
        rots = np.ascontiguousarray(np.stack([transforms[i].rotation for i in todo]))
        a, m = score_kernel(cam_flat, dirs, origins, rots, *bvh.kernel_args())
        for j, i in enumerate(todo):
            agreement[i] = a[j]
            miou[i] = m[j]
            if score_cache is not None:
                score_cache[_pose_cache_key(candidates[i])] = (a[j], m[j])

    w1, w2 = weights
    raw = w1 * agreement + w2 * miou
    total = raw.sum()
    likelihood = raw / total if total > 0 else np.full(n, 1.0 / n)

    best = _argmax_with_ties(raw, candidates, grid_xy, state, datum)

    records = [
        CandidateScore(candidates[i], float(agreement[i]), float(miou[i]),
                       float(likelihood[i]))
        for i in range(n)
    ]
    heatmap = Heatmap(records, best, grid_xy)
    refined = PoseState(candidates[best], state.intrinsics)
    return refined, heatmap


def _argmax_with_ties(raw, candidates, grid_xy, state, datum):
    """Best raw score; ties to nearest-to-initial, then smallest yaw change,
    then candidate order."""
    best_raw = raw.max()
    tied = np.nonzero(raw == best_raw)[0]
    if len(tied) == 1:
        return int(tied[0])
    origin = geodetic_to_grid(state.pose, datum)
    o = np.array([origin.easting, origin.northing])
    best = None
    best_key = None
    for i in tied:
        d2 = float(np.sum((grid_xy[i] - o) ** 2)) + (candidates[i].alt - origin.up) ** 2
        dyaw = abs((candidates[i].yaw - state.pose.yaw + 180.0) % 360.0 - 180.0)
        key = (d2, dyaw, int(i))
        if best_key is None or key < best_key:
            best_key = key
            best = int(i)
    return best


def emit_heatmap(heatmap: Heatmap, csv_path, png_path=None):
    """Write candidate records as CSV and a max-over-yaw likelihood PNG."""
    lines = ["easting,northing,yaw,likelihood"]
    for rec, (e, nn) in zip(heatmap.records, heatmap.grid_positions):
        lines.append(
            f"{float(e)!r},{float(nn)!r},{rec.pose.yaw!r},{float(rec.likelihood)!r}"
        )
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if png_path is not None:
        _heatmap_png(heatmap, png_path)


def _heatmap_png(heatmap: Heatmap, png_path):
    xy = heatmap.grid_positions
    likes = np.array([r.likelihood for r in heatmap.records])
    es = np.unique(xy[:, 0])
    ns = np.unique(xy[:, 1])
    step_e = np.min(np.diff(es)) if len(es) > 1 else 1.0
    step_n = np.min(np.diff(ns)) if len(ns) > 1 else 1.0
    cols = np.rint((xy[:, 0] - es[0]) / step_e).astype(int)
    rows = np.rint((ns[-1] - xy[:, 1]) / step_n).astype(int)
    w = cols.max() + 1
    h = rows.max() + 1
    best_like = np.zeros((h, w))
    for r, c, v in zip(rows, cols, likes):
        if v > best_like[r, c]:
            best_like[r, c] = v
    peak = best_like.max()
    norm = best_like / peak if peak > 0 else best_like
    rgb = _colormap(norm)
    Image.fromarray(rgb, mode="RGB").save(png_path)


def _colormap(norm):
    """Blue-to-red map; deterministic byte output."""
    v = np.clip(norm, 0.0, 1.0)
    r = np.clip(2.0 * v - 0.5, 0.0, 1.0)
    g = 1.0 - np.abs(2.0 * v - 1.0)
    b = np.clip(1.0 - 2.0 * v, 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)
