"""Pipeline configuration: flat key=value file with CLI overrides.

Every production default lives here: 40 m / 1 m search radius and step,
40 deg / 1 deg yaw span and step, 5% change-region filter, 50 m range
limit for material updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ContractError
from .geometry import (
    DatumSpec,
    MODE_IDENTITY_LOCAL,
    MODE_TRANSVERSE_MERCATOR,
)
from .scene import DEFAULT_DYNAMIC_DIMENSIONS, SemanticClass
from .update import UpdateTolerances
from .vps import CandidateGrid


@dataclass
class PipelineConfig:
    # datum
    datum_mode: str = MODE_IDENTITY_LOCAL
    datum_semi_major_axis: float = 6378137.0
    datum_flattening: float = 1.0 / 298.257223563
    datum_central_meridian: float = 0.0
    datum_latitude_of_origin: float = 0.0
    datum_scale_factor: float = 1.0
    datum_false_easting: float = 0.0
    datum_false_northing: float = 0.0
    # candidate search grid
    grid_radius_m: float = 40.0
    grid_step_m: float = 1.0
    grid_yaw_span_deg: float = 40.0
    grid_yaw_step_deg: float = 1.0
    # similarity weights
    weight_agreement: float = 0.5
    weight_iou: float = 0.5
    # change filtering
    min_region_fraction: float = 0.05
    # material update gates
    max_range_m: float = 50.0
    eps_coplanar: float = 0.05
    eps_rect: float = 0.10
    eps_perp: float = 0.10
    # predefined dynamic dimensions (w, d, h)
    pedestrian_dims: tuple = DEFAULT_DYNAMIC_DIMENSIONS[SemanticClass.PEDESTRIAN]
    chair_dims: tuple = DEFAULT_DYNAMIC_DIMENSIONS[SemanticClass.CHAIR]
    # camera intrinsics (default: 960x720, 120 deg diagonal field of view)
    camera_width: int = 960
    camera_height: int = 720
    camera_focal: float = 346.4101615137755
    camera_u0: float = 480.0
    camera_v0: float = 360.0
    # candidate rendering resolution; 0 means the camera resolution
    render_width: int = 0
    render_height: int = 0
    # output directory
    out_dir: str = "out"

    def datum(self) -> DatumSpec:
        if self.datum_mode == MODE_IDENTITY_LOCAL:
            return DatumSpec.identity_local()
        return DatumSpec(
            semi_major_axis=self.datum_semi_major_axis,
            flattening=self.datum_flattening,
            central_meridian=self.datum_central_meridian,
            latitude_of_origin=self.datum_latitude_of_origin,
            scale_factor=self.datum_scale_factor,
            false_easting=self.datum_false_easting,
            false_northing=self.datum_false_northing,
            mode=MODE_TRANSVERSE_MERCATOR,
        )

    def candidate_grid(self) -> CandidateGrid:
        return CandidateGrid(
            radius_m=self.grid_radius_m,
            step_m=self.grid_step_m,
            yaw_span_deg=self.grid_yaw_span_deg,
            yaw_step_deg=self.grid_yaw_step_deg,
        )

    def tolerances(self) -> UpdateTolerances:
        return UpdateTolerances(
            max_range_m=self.max_range_m,
            eps_coplanar=self.eps_coplanar,
            eps_rect=self.eps_rect,
            eps_perp=self.eps_perp,
        )

    def dynamic_dimensions(self):
        return {
            SemanticClass.PEDESTRIAN: tuple(self.pedestrian_dims),
            SemanticClass.CHAIR: tuple(self.chair_dims),
        }

    def intrinsics(self):
        from .geometry import CameraIntrinsics

        return CameraIntrinsics(
            self.camera_focal,
            (self.camera_u0, self.camera_v0),
            self.camera_width,
            self.camera_height,
        )

    def render_resolution(self):
        if self.render_width > 0 and self.render_height > 0:
            return (self.render_width, self.render_height)
        return None

    def apply_overrides(self, overrides: dict):
        for key, value in overrides.items():
            _set_field(self, key, value)
        return self


_TUPLE_FIELDS = {"pedestrian_dims", "chair_dims"}
_INT_FIELDS = {"render_width", "render_height", "camera_width", "camera_height"}
_STR_FIELDS = {"datum_mode", "out_dir"}


def _set_field(cfg: PipelineConfig, key, value):
    names = {f.name for f in fields(PipelineConfig)}
    if key not in names:
        raise ContractError(f"unknown config key {key!r}")
    if key in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = tuple(float(p) for p in value.split("x"))
        setattr(cfg, key, tuple(value))
    elif key in _INT_FIELDS:
        setattr(cfg, key, int(value))
    elif key in _STR_FIELDS:
        setattr(cfg, key, str(value))
    else:
        setattr(cfg, key, float(value))


def load_config(path) -> PipelineConfig:
    cfg = PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            _set_field(cfg, key, value)
    return cfg


def save_config(cfg: PipelineConfig, path):
    lines = []
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        if f.name in _TUPLE_FIELDS:
            v = "x".join(repr(float(x)) for x in v)
        lines.append(f"{f.name} = {v}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
