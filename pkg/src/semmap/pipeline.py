"""End-to-end runs: localization, map update, and the error sweep.

Each run is split into named stages; any exception inside a stage is
re-raised as PipelineStageError carrying the stage name, so callers (the
CLI in particular) can report where a run fell over.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .changes import (
    DIRECTION_REMOVED,
    detect_changes,
    extract_regions,
    filter_regions,
    save_region_report,
)
from .config import PipelineConfig
from .errors import (
    ContractError,
    DescriptorNotFoundError,
    InvalidCloudError,
    PipelineStageError,
    SemmapError,
)
from .geometry import GeoPose, GridPoint, PoseState, geodetic_to_grid, grid_to_geodetic
from .scene import (
    DescriptorStore,
    class_category,
    load_mesh,
    load_store,
    save_mesh,
    save_store,
)
from .sensors import SegmentedImage, pointcloud_to_world, render_views
from .update import (
    VERDICT_SKIP,
    VERDICT_UPDATE,
    check_update_requirements,
    detect_corners,
    estimate_dynamic_descriptor,
    estimate_material_descriptor,
    format_audit_record,
    quad_area,
    resolve_removal,
)
from .vps import emit_heatmap, estimate_pose

STAGE_LOCALIZE = "localize"
STAGE_RENDER = "render"
STAGE_DETECT = "detect"
STAGE_UPDATE = "update"
STAGE_PERSIST = "persist"


def _check_camera_size(cam: SegmentedImage, state: PoseState):
    h, w = cam.data.shape
    k = state.intrinsics
    if (w, h) != (k.width, k.height):
        raise ContractError(
            f"camera image is {w}x{h}, configured intrinsics expect "
            f"{k.width}x{k.height}")


@contextmanager
def _stage(name):
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:  # noqa: BLE001 - stage boundary
        raise PipelineStageError(name, str(exc)) from exc


@dataclass
class LocalizeResult:
    state: PoseState
    heatmap: object
    outputs: dict = field(default_factory=dict)


@dataclass
class UpdateResult:
    state: PoseState
    store: DescriptorStore
    mesh: object
    audit: list = field(default_factory=list)
    regions: list = field(default_factory=list)
    quad_areas: dict = field(default_factory=dict)  # region index -> m^2
    inserted: dict = field(default_factory=dict)  # region index -> descriptor
    removed: dict = field(default_factory=dict)  # region index -> descriptor id
    outputs: dict = field(default_factory=dict)


def run_render(cfg: PipelineConfig, mesh_path, pose: GeoPose, out_dir=None):
    """Render the virtual camera and LIDAR at a given pose."""
    out_dir = out_dir or cfg.out_dir
    mesh = load_mesh(mesh_path)
    state = PoseState(pose, cfg.intrinsics())
    with _stage(STAGE_RENDER):
        img, cloud = render_views(mesh, state, cfg.datum())
        os.makedirs(out_dir, exist_ok=True)
        outputs = {
            "class_image": os.path.join(out_dir, "render_class.png"),
            "class_rgb": os.path.join(out_dir, "render_rgb.png"),
            "cloud": os.path.join(out_dir, "render_cloud.txt"),
        }
        img.save_png(outputs["class_image"])
        img.save_palette_png(outputs["class_rgb"])
        cloud.save_text(outputs["cloud"])
    return img, cloud, outputs


def run_localize(cfg: PipelineConfig, mesh_path, image_path, initial_pose: GeoPose,
                 out_dir=None, score_cache=None) -> LocalizeResult:
    out_dir = out_dir or cfg.out_dir
    mesh = load_mesh(mesh_path)
    cam = SegmentedImage.load_png(image_path)
    state = PoseState(initial_pose, cfg.intrinsics())
    _check_camera_size(cam, state)
    with _stage(STAGE_LOCALIZE):
        refined, heatmap = estimate_pose(
            cam, mesh, state, cfg.candidate_grid(), cfg.datum(),
            weights=(cfg.weight_agreement, cfg.weight_iou),
            resolution=cfg.render_resolution(),
            score_cache=score_cache,
        )
        os.makedirs(out_dir, exist_ok=True)
        outputs = {
            "pose": os.path.join(out_dir, "refined_pose.txt"),
            "heatmap_csv": os.path.join(out_dir, "heatmap.csv"),
            "heatmap_png": os.path.join(out_dir, "heatmap.png"),
        }
        _write_pose(refined.pose, outputs["pose"])
        emit_heatmap(heatmap, outputs["heatmap_csv"], outputs["heatmap_png"])
    return LocalizeResult(refined, heatmap, outputs)


def run_update(cfg: PipelineConfig, mesh_path, image_path, store_path,
               initial_pose: GeoPose, out_dir=None, localize=True,
               score_cache=None) -> UpdateResult:
    """Localize (optionally), detect changes, and apply map updates.

    With localize=False the initial pose is trusted as-is.  The store and
    mesh files are rewritten in place only after every region has been
    processed.
    """
    out_dir = out_dir or cfg.out_dir
    mesh = load_mesh(mesh_path)
    cam = SegmentedImage.load_png(image_path)
    store = load_store(store_path)
    state = PoseState(initial_pose, cfg.intrinsics())
    _check_camera_size(cam, state)
    datum = cfg.datum()

    if localize:
        with _stage(STAGE_LOCALIZE):
            state, heatmap = estimate_pose(
                cam, mesh, state, cfg.candidate_grid(), datum,
                weights=(cfg.weight_agreement, cfg.weight_iou),
                resolution=cfg.render_resolution(),
                score_cache=score_cache,
            )

    with _stage(STAGE_RENDER):
        rendered, cloud_local = render_views(mesh, state, datum)
        cloud = pointcloud_to_world(cloud_local, state, datum)
        vps_position = geodetic_to_grid(state.pose, datum)

    with _stage(STAGE_DETECT):
        mask = detect_changes(cam, rendered)
        kept = filter_regions(mask, cfg.min_region_fraction)
        regions = extract_regions(kept, cam, rendered)

    audit = []
    quad_areas = {}
    inserted = {}
    removed_ids = {}
    with _stage(STAGE_UPDATE):
        tolerances = cfg.tolerances()
        dims = cfg.dynamic_dimensions()
        for i, region in enumerate(regions):
            if region.direction == DIRECTION_REMOVED:
                try:
                    removed_id, mesh = resolve_removal(region, cloud, store, mesh)
                except (DescriptorNotFoundError, InvalidCloudError) as exc:
                    audit.append(format_audit_record(
                        i, region, VERDICT_SKIP, reason=str(exc)))
                    continue
                removed_ids[i] = removed_id
                audit.append(format_audit_record(
                    i, region, VERDICT_UPDATE, removed_id=removed_id))
                continue

            category = class_category(region.cam_class)
            if category == "material":
                try:
                    quad = detect_corners(region, cloud)
                except SemmapError as exc:
                    audit.append(format_audit_record(
                        i, region, VERDICT_SKIP, reason=str(exc)))
                    continue
                decision = check_update_requirements(
                    region, quad, vps_position, kept, tolerances)
                if decision.verdict == VERDICT_SKIP:
                    audit.append(format_audit_record(
                        i, region, VERDICT_SKIP, reason=decision.failed_gate))
                    continue
                d = estimate_material_descriptor(region, quad, store, vps_position)
                mesh = mesh.with_quad(d.quad_corners(), d.class_id)
                quad_areas[i] = quad_area(quad)
                inserted[i] = d
                audit.append(format_audit_record(
                    i, region, VERDICT_UPDATE, descriptor=d))
            elif category == "dynamic":
                try:
                    d = estimate_dynamic_descriptor(region, cloud, store, dims)
                except SemmapError as exc:
                    audit.append(format_audit_record(
                        i, region, VERDICT_SKIP, reason=str(exc)))
                    continue
                mesh = mesh.with_box(d.box_corners(), d.class_id)
                inserted[i] = d
                audit.append(format_audit_record(
                    i, region, VERDICT_UPDATE, descriptor=d))
            else:
                audit.append(format_audit_record(
                    i, region, VERDICT_SKIP, reason="non-updatable-class"))

    with _stage(STAGE_PERSIST):
        os.makedirs(out_dir, exist_ok=True)
        outputs = {
            "mesh": mesh_path,
            "store": store_path,
            "pose": os.path.join(out_dir, "refined_pose.txt"),
            "mask": os.path.join(out_dir, "change_mask.png"),
            "regions": os.path.join(out_dir, "regions.txt"),
            "audit": os.path.join(out_dir, "audit.txt"),
        }
        save_mesh(mesh, mesh_path)
        save_store(store, store_path)
        _write_pose(state.pose, outputs["pose"])
        kept.save_png(outputs["mask"])
        save_region_report(regions, outputs["regions"])
        with open(outputs["audit"], "w", encoding="utf-8") as fh:
            fh.write("\n".join(audit) + ("\n" if audit else ""))

    return UpdateResult(state, store, mesh, audit, regions, quad_areas,
                        inserted, removed_ids, outputs)


def eval_sweep(cfg: PipelineConfig, mesh_path, image_path, store_path,
               true_pose: GeoPose, sweep_direction, errors_m, out_dir=None):
    """Descriptor accuracy vs. injected pose error; localization bypassed.

    For each error the camera pose is displaced along sweep_direction and
    the update pipeline runs against scratch copies of the map.  Returns
    rows of (injected_error_m, position_error_m, area_error_pct), judged
    against the material descriptor estimated at zero injected error.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    datum = cfg.datum()
    direction = np.asarray(sweep_direction, dtype=float)
    n = np.linalg.norm(direction)
    if n == 0:
        raise ContractError("sweep direction must be non-zero")
    direction = direction / n
    origin = geodetic_to_grid(true_pose, datum)

    reference = None
    rows = []
    for err in errors_m:
        offset = direction * float(err)
        shifted = grid_to_geodetic(
            GridPoint(origin.easting + offset[0], origin.northing + offset[1],
                      origin.up + offset[2]),
            datum,
        )
        pose = GeoPose(shifted.lat, shifted.lon, shifted.alt,
                       true_pose.yaw, true_pose.pitch, true_pose.roll)
        scratch_mesh = os.path.join(out_dir, "sweep_map.mesh")
        scratch_store = os.path.join(out_dir, "sweep_store.txt")
        _copy_file(mesh_path, scratch_mesh)
        _copy_file(store_path, scratch_store)
        result = run_update(cfg, scratch_mesh, image_path, scratch_store, pose,
                            out_dir=out_dir, localize=False)
        d, area = _first_material(result)
        if d is None:
            rows.append((float(err), float("nan"), float("nan")))
            continue
        if reference is None:
            if err != errors_m[0] or float(err) != 0.0:
                raise PipelineStageError(
                    STAGE_UPDATE, "sweep needs a zero-error reference first")
            reference = (d.position.as_array(), area)
        ref_pos, ref_area = reference
        pos_err = float(np.linalg.norm((d.position.as_array() - ref_pos)[:2]))
        area_err = abs(area - ref_area) / ref_area * 100.0
        rows.append((float(err), pos_err, float(area_err)))

    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("injected_error_m,position_error_m,area_error_pct\n")
        for err, pos, area in rows:
            fh.write(f"{err!r},{pos!r},{area!r}\n")
    return rows, csv_path


def _first_material(result: UpdateResult):
    """First material descriptor inserted by an update run, with its quad area."""
    for i in sorted(result.quad_areas):
        return result.inserted[i], result.quad_areas[i]
    return None, None


def _write_pose(pose: GeoPose, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{pose.lat!r},{pose.lon!r},{pose.alt!r},"
                 f"{pose.yaw!r},{pose.pitch!r},{pose.roll!r}\n")


def _copy_file(src, dst):
    with open(src, "rb") as fh:
        data = fh.read()
    with open(dst, "wb") as fh:
        fh.write(data)
