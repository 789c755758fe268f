"""Seeded synthetic scenes with ground-truth manifests.

Two scene kinds:

``street``   a box street: ground plane, two rows of buildings with
             window quads, used for localization experiments.
``wall``     camera facing a large frontal wall over a ground plane,
             used for update and error-sweep experiments.

Every scenario produces a prior map mesh, a "world" mesh (the map with
the injected changes applied), the descriptor store matching the map,
the segmented camera image (a render of the world at the ground-truth
pose) and a JSON manifest of all ground truths.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import ContractError
from .geometry import CameraIntrinsics, DatumSpec, GeoPose, GridPoint, PoseState
from .scene import (
    DEFAULT_DYNAMIC_DIMENSIONS,
    DescriptorStore,
    SemanticClass,
    SemanticMesh,
    box_corners,
    material_quad_corners,
    save_mesh,
    save_store,
)
from .sensors import render_class_image

CHANGE_KINDS = ("add_banner", "add_chair", "add_pedestrian", "remove_chair")

_MIN_REGION_MARGIN = 1.15  # injected changes must clear the 5% filter by this factor


@dataclass
class SyntheticScenario:
    seed: int
    kind: str
    map_mesh: SemanticMesh
    world_mesh: SemanticMesh
    store: DescriptorStore
    state: PoseState
    datum: DatumSpec
    truths: list = field(default_factory=list)
    sweep_direction: tuple = (0.0, 0.0, 0.0)
    dynamic_dims: dict = field(default_factory=lambda: dict(DEFAULT_DYNAMIC_DIMENSIONS))

    def manifest(self):
        p = self.state.pose
        k = self.state.intrinsics
        return {
            "seed": self.seed,
            "kind": self.kind,
            "pose": [p.lat, p.lon, p.alt, p.yaw, p.pitch, p.roll],
            "intrinsics": {
                "focal_px": k.focal_px,
                "principal_point": list(k.principal_point),
                "width": k.width,
                "height": k.height,
            },
            "map_faces": int(self.map_mesh.num_faces),
            "world_faces": int(self.world_mesh.num_faces),
            "dynamic_dims": {int(k): list(v) for k, v in self.dynamic_dims.items()},
            "sweep_direction": list(self.sweep_direction),
            "truths": self.truths,
        }


def _empty_mesh():
    return SemanticMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                        np.zeros(0, dtype=np.uint8))


def _ground(mesh, half_e=80.0, south=-50.0, north=120.0):
    quad = np.array(
        [
            [-half_e, south, 0.0],
            [half_e, south, 0.0],
            [half_e, north, 0.0],
            [-half_e, north, 0.0],
        ]
    )
    return mesh.with_quad(quad, SemanticClass.OTHERS)


def _building(mesh, x0, x1, y0, y1, height, rng, with_windows=True):
    lo = np.array([min(x0, x1), y0, 0.0])
    hi = np.array([max(x0, x1), y1, height])
    center = (lo + hi) / 2.0
    dims = hi - lo
    corners = box_corners(GridPoint(center[0], center[1], 0.0),
                          (dims[0], dims[1], dims[2]))
    mesh = mesh.with_box(corners, SemanticClass.STONE)
    if not with_windows:
        return mesh
    # Window quads on the street-facing facade (the one nearer x = 0), one
    # per slot so no two windows share the (coincident) facade plane.
    facing_east = center[0] < 0  # east side of a west-row building faces the street
    face_x = hi[0] if facing_east else lo[0]
    normal = np.array([1.0, 0.0, 0.0]) if facing_east else np.array([-1.0, 0.0, 0.0])
    n_slots = int(rng.integers(2, 5))
    slot = (y1 - y0) / n_slots
    for i in range(n_slots):
        if rng.random() < 0.2:
            continue
        w = float(rng.uniform(0.4, 0.85)) * slot
        h = float(rng.uniform(1.2, min(2.8, height - 2.2)))
        cy = y0 + (i + 0.5) * slot + float(rng.uniform(-0.05, 0.05)) * slot
        cz = float(rng.uniform(1.0 + h / 2, height - 1.0 - h / 2))
        cls = SemanticClass.GLASS if rng.random() < 0.8 else SemanticClass.METAL
        quad = material_quad_corners(GridPoint(face_x, cy, cz), (w, h), normal, 0.0)
        mesh = mesh.with_quad(quad, cls)
    return mesh


def street_scene(seed, width=64, height=48, focal=40.0) -> SyntheticScenario:
    """Asymmetric box street for localization experiments (map == world)."""
    rng = np.random.default_rng(seed)
    mesh = _ground(_empty_mesh())
    for side in (-1, 1):
        y = -10.0 + float(rng.uniform(0.0, 4.0))
        while y < 75.0:
            depth = float(rng.uniform(6.0, 14.0))
            h = float(rng.uniform(5.0, 18.0))
            x_in = side * float(rng.uniform(7.0, 10.0))
            x_out = x_in + side * float(rng.uniform(6.0, 10.0))
            mesh = _building(mesh, x_in, x_out, y, y + depth, h, rng)
            y += depth + float(rng.uniform(2.0, 7.0))
    # A cross-street end building gives the yaw search something frontal.
    end_y = 60.0 + float(rng.uniform(0.0, 8.0))
    mesh = _building(mesh, -12.0, 12.0, end_y, end_y + 8.0,
                     float(rng.uniform(8.0, 16.0)), rng, with_windows=False)
    intr = CameraIntrinsics(float(focal), (width / 2.0, height / 2.0), width, height)
    pose = GeoPose(0.0, 0.0, 1.6, 0.0, 0.0, 0.0)
    return SyntheticScenario(
        seed=seed,
        kind="street",
        map_mesh=mesh,
        world_mesh=mesh,
        store=DescriptorStore(),
        state=PoseState(pose, intr),
        datum=DatumSpec.identity_local(),
    )


# Slim profiles for the wall scenes: the ground anchor sits on the object's
# camera-facing face, so a shallow body keeps the anchor near the box center.
WALL_SCENE_DYNAMIC_DIMS = {
    SemanticClass.PEDESTRIAN: (0.5, 0.2, 1.7),
    SemanticClass.CHAIR: (0.5, 0.2, 0.9),
}


def wall_scene(seed, changes=("add_banner",), width=128, height=96,
               focal=128.0, wall_dist=12.0, dynamic_dims=None) -> SyntheticScenario:
    """Frontal wall scene for update and error-sweep experiments."""
    rng = np.random.default_rng(seed)
    dims_cfg = dict(WALL_SCENE_DYNAMIC_DIMS)
    if dynamic_dims:
        dims_cfg.update(dynamic_dims)

    mesh = _ground(_empty_mesh())
    wall_lo = GridPoint(0.0, wall_dist + 1.0, 0.0)
    mesh = mesh.with_box(box_corners(wall_lo, (90.0, 2.0, 30.0)), SemanticClass.STONE)

    map_mesh = mesh
    world_mesh = mesh
    store = DescriptorStore()
    truths = []

    intr = CameraIntrinsics(float(focal), (width / 2.0, height / 2.0), width, height)
    # Low rig: dynamic objects must clear the 5% region filter while keeping
    # their ground contact inside the frame, which bounds the camera height.
    pose = GeoPose(0.0, 0.0, 0.8, 0.0, 0.0, 0.0)
    state = PoseState(pose, intr)
    datum = DatumSpec.identity_local()

    wall_face_y = wall_dist  # south face of the wall box
    # Lateral slots keep dynamic objects clear of the banner's pixel columns.
    lateral = [0.95, -0.95]

    for change in changes:
        if change == "add_banner":
            w = float(rng.uniform(3.6, 4.4))
            h = float(rng.uniform(2.4, 3.0))
            cx = float(rng.uniform(-0.3, 0.3))
            cz = float(rng.uniform(1.9, 2.2))
            pos = GridPoint(cx, wall_face_y, cz)
            normal = (0.0, -1.0, 0.0)
            quad = material_quad_corners(pos, (w, h), normal, 0.0)
            world_mesh = world_mesh.with_quad(quad, SemanticClass.BANNER)
            truths.append(
                {
                    "kind": change,
                    "class": int(SemanticClass.BANNER),
                    "position": [pos.easting, pos.northing - 0.01, pos.up],
                    "dim2d": [w, h],
                    "normal": list(normal),
                    "area": w * h,
                }
            )
        elif change in ("add_chair", "add_pedestrian", "remove_chair"):
            cls = (SemanticClass.PEDESTRIAN if change == "add_pedestrian"
                   else SemanticClass.CHAIR)
            d3 = dims_cfg[cls]
            if change == "add_pedestrian":
                dist = float(rng.uniform(2.9, 3.5))
            else:
                dist = float(rng.uniform(2.55, 2.85))
            if not lateral:
                raise ContractError("at most two dynamic changes per scenario")
            cx = lateral.pop(0) + float(rng.uniform(-0.05, 0.05))
            pos = GridPoint(cx, dist, 0.0)
            box = box_corners(pos, d3)
            truth = {
                "kind": change,
                "class": int(cls),
                "position": [pos.easting, pos.northing, pos.up],
                "dim3d": list(d3),
            }
            if change == "remove_chair":
                # Present in the map (mesh + store), absent from the world.
                map_mesh = map_mesh.with_box(box, cls)
                d = store.add_dynamic(cls, d3, pos)
                truth["removed_descriptor_id"] = d.id
                # A decoy chair well away from the removed one, in both meshes.
                decoy = GridPoint(cx - 3.0, dist + 4.0, 0.0)
                decoy_box = box_corners(decoy, d3)
                map_mesh = map_mesh.with_box(decoy_box, cls)
                world_mesh = world_mesh.with_box(decoy_box, cls)
                store.add_dynamic(cls, d3, decoy)
            else:
                world_mesh = world_mesh.with_box(box, cls)
            truths.append(truth)
        else:
            raise ContractError(f"unknown change kind {change!r}")

    scenario = SyntheticScenario(
        seed=seed,
        kind="wall",
        map_mesh=map_mesh,
        world_mesh=world_mesh,
        store=store,
        state=state,
        datum=datum,
        truths=truths,
        sweep_direction=(np.sqrt(0.5), -np.sqrt(0.5), 0.0),
        dynamic_dims=dims_cfg,
    )
    _check_changes_visible(scenario)
    return scenario


def _check_changes_visible(scenario: SyntheticScenario, min_fraction=0.05):
    """Generator self-check: every injected change must survive the filter."""
    cam = render_class_image(scenario.world_mesh, scenario.state, scenario.datum)
    ref = render_class_image(scenario.map_mesh, scenario.state, scenario.datum)
    diff = cam.data != ref.data
    need = _MIN_REGION_MARGIN * min_fraction * diff.size
    for truth in scenario.truths:
        if truth["kind"] == "remove_chair":
            changed = diff & (ref.data == truth["class"])
        else:
            changed = diff & (cam.data == truth["class"])
        count = int(np.count_nonzero(changed))
        if count < need:
            raise ContractError(
                f"{truth['kind']} region too small: {count} px < {need:.0f}"
            )
        rows, cols = np.nonzero(changed)
        if truth["kind"] == "add_banner":
            h, w = diff.shape
            if (rows.min() == 0 or rows.max() == h - 1
                    or cols.min() == 0 or cols.max() == w - 1):
                raise ContractError("add_banner region touches the image border")


def generate_scenario(kind, seed, changes=(), **kwargs) -> SyntheticScenario:
    if kind == "street":
        if changes:
            raise ContractError("street scenarios carry no injected changes")
        return street_scene(seed, **kwargs)
    if kind == "wall":
        return wall_scene(seed, changes=changes or ("add_banner",), **kwargs)
    raise ContractError(f"unknown scenario kind {kind!r}")


def write_scenario(scenario: SyntheticScenario, out_dir) -> dict:
    """Persist all scenario files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "map_mesh": os.path.join(out_dir, "map.mesh"),
        "world_mesh": os.path.join(out_dir, "world.mesh"),
        "store": os.path.join(out_dir, "store.txt"),
        "camera_image": os.path.join(out_dir, "cam.png"),
        "manifest": os.path.join(out_dir, "manifest.json"),
        "config": os.path.join(out_dir, "scenario.cfg"),
    }
    save_mesh(scenario.map_mesh, paths["map_mesh"])
    save_mesh(scenario.world_mesh, paths["world_mesh"])
    save_store(scenario.store, paths["store"])
    cam = render_class_image(scenario.world_mesh, scenario.state, scenario.datum)
    cam.save_png(paths["camera_image"])
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(scenario.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    cfg = scenario_config(scenario)
    from .config import save_config

    save_config(cfg, paths["config"])
    return paths


def scenario_config(scenario: SyntheticScenario) -> PipelineConfig:
    k = scenario.state.intrinsics
    cfg = PipelineConfig()
    cfg.camera_width = k.width
    cfg.camera_height = k.height
    cfg.camera_focal = k.focal_px
    cfg.camera_u0, cfg.camera_v0 = k.principal_point
    cfg.pedestrian_dims = tuple(scenario.dynamic_dims[SemanticClass.PEDESTRIAN])
    cfg.chair_dims = tuple(scenario.dynamic_dims[SemanticClass.CHAIR])
    return cfg


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def manifest_state(manifest) -> PoseState:
    lat, lon, alt, yaw, pitch, roll = manifest["pose"]
    ki = manifest["intrinsics"]
    return PoseState(
        GeoPose(lat, lon, alt, yaw, pitch, roll),
        CameraIntrinsics(ki["focal_px"], tuple(ki["principal_point"]),
                         ki["width"], ki["height"]),
    )
