"""Turning change regions into map edits.

Material regions go through corner detection (diagonal extreme points of
the region, a convex-polygon corner scheme), a four-gate update check
(full capture, range limit, coplanarity, rectangularity) and a planar
rectangle fit.  Dynamic regions are anchored at their bottom-center
pixel and placed on the ground; removed dynamic objects delete the
nearest stored descriptor of the same class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .changes import ChangeRegion, DIRECTION_ADDED, DIRECTION_REMOVED
from .errors import ContractError, InvalidCloudError
from .geometry import GridPoint
from .scene import (
    DescriptorStore,
    SemanticMesh,
    class_category,
    in_plane_angle,
    remove_nearest_dynamic,
)
from .sensors import FRAME_WORLD, PointCloudImage

GATE_NOT_FULLY_CAPTURED = "not-fully-captured"
GATE_BEYOND_RANGE = "beyond-50m"
GATE_NON_COPLANAR = "non-coplanar"
GATE_NON_RECTANGULAR = "non-rectangular"
GATE_INVALID_CLOUD = "invalid-cloud"

VERDICT_UPDATE = "update"
VERDICT_SKIP = "skip"


@dataclass(frozen=True)
class UpdateTolerances:
    """Gate tolerances; the formal check is equality-to-zero, these relax it."""

    max_range_m: float = 50.0
    eps_coplanar: float = 0.05  # normalized scalar triple product
    eps_rect: float = 0.10  # relative opposite-edge mismatch
    eps_perp: float = 0.10  # |cos| between adjacent edges


@dataclass(frozen=True)
class CornerQuad:
    """Four region corners, pixel and world coordinates, order a,b,c,d
    clockwise from the top-left diagonal extreme."""

    pixels: np.ndarray  # (4, 2) int (u, v)
    world: np.ndarray  # (4, 3) float

    def edges(self):
        a, b, c, d = self.world
        return {"ab": b - a, "ac": c - a, "ad": d - a, "dc": c - d, "bc": c - b}


@dataclass(frozen=True)
class UpdateDecision:
    verdict: str
    failed_gate: str | None = None

    def __post_init__(self):
        if (self.verdict == VERDICT_SKIP) != (self.failed_gate is not None):
            raise ContractError("skip verdicts carry exactly one failed gate")


def detect_corners(region: ChangeRegion, cloud: PointCloudImage) -> CornerQuad:
    """Diagonal-projection extreme points of the region, with world lookups."""
    if region.pixel_count == 0:
        raise ContractError("empty region")
    if cloud.frame != FRAME_WORLD:
        raise ContractError("corner detection needs a world-frame cloud")
    rows = region.pixels[:, 0]
    cols = region.pixels[:, 1]
    s = cols + rows  # u + v
    d = cols - rows  # u - v
    picks = [int(np.argmin(s)), int(np.argmax(d)), int(np.argmax(s)), int(np.argmin(d))]
    px = np.array([[cols[i], rows[i]] for i in picks], dtype=int)
    world = np.empty((4, 3))
    for k, (u, v) in enumerate(px):
        if not cloud.valid[v, u]:
            raise InvalidCloudError(f"corner pixel ({u}, {v}) has no cloud point")
        world[k] = cloud.points[v, u]
    return CornerQuad(px, world)


def check_update_requirements(region: ChangeRegion, quad: CornerQuad,
                              vps_position: GridPoint, mask,
                              tolerances: UpdateTolerances = UpdateTolerances(),
                              ) -> UpdateDecision:
    """Evaluate the four update gates in order; first failure wins."""
    border = _region_border_pixels(region, mask)
    if border:
        return UpdateDecision(VERDICT_SKIP, GATE_NOT_FULLY_CAPTURED)

    p = vps_position.as_array()
    dists = np.linalg.norm(quad.world - p, axis=1)
    if np.any(dists > tolerances.max_range_m):
        return UpdateDecision(VERDICT_SKIP, GATE_BEYOND_RANGE)

    e = quad.edges()
    ab, ac, ad = e["ab"], e["ac"], e["ad"]
    norms = np.linalg.norm(ab) * np.linalg.norm(ac) * np.linalg.norm(ad)
    if norms > 0:
        triple = abs(float(np.dot(ab, np.cross(ac, ad)))) / norms
        if triple > tolerances.eps_coplanar:
            return UpdateDecision(VERDICT_SKIP, GATE_NON_COPLANAR)

    dc = e["dc"]
    len_ab = np.linalg.norm(ab)
    len_dc = np.linalg.norm(dc)
    len_ad = np.linalg.norm(ad)
    longest = max(len_ab, len_dc)
    if longest == 0.0 or len_ad == 0.0:
        return UpdateDecision(VERDICT_SKIP, GATE_NON_RECTANGULAR)
    if np.linalg.norm(ab - dc) > tolerances.eps_rect * longest:
        return UpdateDecision(VERDICT_SKIP, GATE_NON_RECTANGULAR)
    if len_ab == 0.0 or abs(float(np.dot(ad, ab))) / (len_ad * len_ab) > tolerances.eps_perp:
        return UpdateDecision(VERDICT_SKIP, GATE_NON_RECTANGULAR)
    return UpdateDecision(VERDICT_UPDATE)


def _region_border_pixels(region: ChangeRegion, mask):
    """Region pixels lying on the image border."""
    h, w = mask.data.shape
    rows = region.pixels[:, 0]
    cols = region.pixels[:, 1]
    on = (rows == 0) | (rows == h - 1) | (cols == 0) | (cols == w - 1)
    return [tuple(p) for p in region.pixels[on]]


def triangle_area(a, b, c):
    """Half the cross-product magnitude of two edge vectors."""
    ab = np.asarray(b, float) - np.asarray(a, float)
    ac = np.asarray(c, float) - np.asarray(a, float)
    return 0.5 * float(np.linalg.norm(np.cross(ab, ac)))


def quad_area(quad: CornerQuad) -> float:
    """Area of the corner quad as the two triangles abc + acd."""
    a, b, c, d = quad.world
    return triangle_area(a, b, c) + triangle_area(a, c, d)


def estimate_material_descriptor(region: ChangeRegion, quad: CornerQuad,
                                 store: DescriptorStore, vps_position: GridPoint):
    """Fit a planar rectangle descriptor to an added material region.

    Returns the descriptor (already inserted into the store).
    """
    if region.direction != DIRECTION_ADDED:
        raise ContractError("material estimation needs an added-direction region")
    if class_category(region.cam_class) != "material":
        raise ContractError(f"{region.cam_class!r} is not a material class")
    a, b, c, d = quad.world
    centroid = quad.world.mean(axis=0)
    ab = b - a
    dc = c - d
    ad = d - a
    bc = c - b
    width = 0.5 * (np.linalg.norm(ab) + np.linalg.norm(dc))
    height = 0.5 * (np.linalg.norm(ad) + np.linalg.norm(bc))
    normal = np.cross(ab, ad)
    nn = np.linalg.norm(normal)
    if nn == 0.0:
        raise ContractError("degenerate quad: undefined plane normal")
    normal = normal / nn
    if float(np.dot(vps_position.as_array() - centroid, normal)) < 0:
        normal = -normal
    angle = in_plane_angle(ab, normal)
    return store.add_material(
        region.cam_class,
        (float(width), float(height)),
        GridPoint(*centroid),
        tuple(float(x) for x in normal),
        angle,
    )


def _anchor_pixel(region: ChangeRegion):
    """Bottom-center anchor: centroid column snapped to a region column,
    bottommost region row."""
    cols = region.pixels[:, 1]
    rows = region.pixels[:, 0]
    mean_col = float(cols.mean())
    uniq = np.unique(cols)
    u = int(uniq[np.argmin(np.abs(uniq - mean_col))])
    v = int(rows.max())
    return u, v


def _world_at_anchor(region: ChangeRegion, cloud: PointCloudImage):
    """World point at the valid region pixel nearest the anchor."""
    if cloud.frame != FRAME_WORLD:
        raise ContractError("anchor lookup needs a world-frame cloud")
    u, v = _anchor_pixel(region)
    rows = region.pixels[:, 0]
    cols = region.pixels[:, 1]
    ok = cloud.valid[rows, cols]
    if not np.any(ok):
        raise InvalidCloudError("no valid cloud pixel inside the region")
    rr = rows[ok]
    cc = cols[ok]
    d2 = (rr - v) ** 2 + (cc - u) ** 2
    i = int(np.argmin(d2))  # ties resolve to the first pixel in row-major order
    return GridPoint(*cloud.points[rr[i], cc[i]])


def estimate_dynamic_descriptor(region: ChangeRegion, cloud: PointCloudImage,
                                store: DescriptorStore, dimensions):
    """Place a predefined-size dynamic descriptor at the region's ground anchor.

    `dimensions` maps dynamic SemanticClass -> (w, d, h).  Returns the
    descriptor (already inserted into the store).
    """
    if region.direction != DIRECTION_ADDED:
        raise ContractError("dynamic estimation needs an added-direction region")
    if class_category(region.cam_class) != "dynamic":
        raise ContractError(f"{region.cam_class!r} is not a dynamic class")
    position = _world_at_anchor(region, cloud)
    dim3d = tuple(dimensions[region.cam_class])
    return store.add_dynamic(region.cam_class, dim3d, position)


def resolve_removal(region: ChangeRegion, cloud: PointCloudImage,
                    store: DescriptorStore, mesh: SemanticMesh):
    """Remove the stored dynamic descriptor nearest the removed object.

    Returns (removed_id, updated_mesh).
    """
    if region.direction != DIRECTION_REMOVED:
        raise ContractError("removal needs a removed-direction region")
    e = _world_at_anchor(region, cloud)
    return remove_nearest_dynamic(store, mesh, e, region.render_class)


def format_audit_record(index, region, verdict, reason=None, descriptor=None,
                        removed_id=None):
    """One-line structured audit record for a processed region."""
    parts = [
        f"region={index}",
        f"direction={region.direction}",
        f"cam_class={int(region.cam_class)}",
        f"render_class={int(region.render_class)}",
        f"pixels={region.pixel_count}",
        f"verdict={verdict}",
    ]
    if reason:
        parts.append(f"reason={reason}")
    if descriptor is not None:
        p = descriptor.position
        parts.append(f"descriptor_id={descriptor.id}")
        parts.append(f"position={p.easting!r},{p.northing!r},{p.up!r}")
    if removed_id is not None:
        parts.append(f"removed_id={removed_id}")
    return " ".join(parts)
