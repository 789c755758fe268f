"""Coordinate frames, geodetic/grid conversion, rigid transforms and pinhole projection.

Conventions used throughout the package:

World frame (grid): X east, Y north, Z up, meters.
Camera frame:       X right, Y down, Z forward along the optic axis.
At yaw=pitch=roll=0 the optic axis points to grid north and image-down
maps to world-down.  Yaw is a heading, clockwise from north; positive
pitch tilts the optic axis up; roll is about the optic axis.  Rotations
compose yaw -> pitch -> roll (intrinsic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ProjectionDomainError

Z_NEAR = 0.01  # meters; rays/projections closer than this are discarded

_POLE_GUARD_DEG = 0.1


def _normalize_yaw(yaw):
    y = yaw % 360.0
    return y if y >= 0.0 else y + 360.0


def _normalize_roll(roll):
    r = (roll + 180.0) % 360.0 - 180.0
    return 180.0 if r == -180.0 else r


@dataclass(frozen=True)
class GeoPose:
    """WGS84 position plus heading/pitch/roll orientation, degrees and meters."""

    lat: float
    lon: float
    alt: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("lat", "lon", "alt", "yaw", "pitch", "roll"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (-90.0 <= self.lat <= 90.0):
            raise ContractError(f"lat {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ContractError(f"lon {self.lon} outside [-180, 180]")
        if not (-90.0 <= self.pitch <= 90.0):
            raise ContractError(f"pitch {self.pitch} outside [-90, 90]")
        object.__setattr__(self, "yaw", _normalize_yaw(self.yaw))
        object.__setattr__(self, "roll", _normalize_roll(self.roll))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Single-focal-length pinhole intrinsics (square pixels)."""

    focal_px: float
    principal_point: tuple[float, float]
    width: int
    height: int

    def __post_init__(self):
        u0, v0 = self.principal_point
        if self.focal_px <= 0:
            raise ContractError("focal_px must be positive")
        if not (0 <= u0 < self.width and 0 <= v0 < self.height):
            raise ContractError("principal point outside the image")

    def scaled(self, width, height):
        """Intrinsics for the same field of view at a different resolution."""
        sx = width / self.width
        sy = height / self.height
        u0, v0 = self.principal_point
        return CameraIntrinsics(self.focal_px * sx, (u0 * sx, v0 * sy), width, height)


@dataclass(frozen=True)
class PoseState:
    """Full camera state: geodetic pose plus intrinsics."""

    pose: GeoPose
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class GridPoint:
    """Position in the local Cartesian grid frame, meters."""

    easting: float
    northing: float
    up: float

    def __post_init__(self):
        for name in ("easting", "northing", "up"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not all(math.isfinite(v) for v in (self.easting, self.northing, self.up)):
            raise ContractError("grid point coordinates must be finite")

    def as_array(self):
        return np.array([self.easting, self.northing, self.up], dtype=float)


MODE_TRANSVERSE_MERCATOR = "transverse-mercator"
MODE_IDENTITY_LOCAL = "identity-local"


@dataclass(frozen=True)
class DatumSpec:
    """Projection parameters for the grid frame.

    In identity-local mode (lon, lat, alt) are read directly as
    (easting, northing, up) meters; the ellipsoid fields are ignored.
    """

    semi_major_axis: float = 6378137.0
    flattening: float = 1.0 / 298.257223563
    central_meridian: float = 0.0
    latitude_of_origin: float = 0.0
    scale_factor: float = 1.0
    false_easting: float = 0.0
    false_northing: float = 0.0
    mode: str = MODE_TRANSVERSE_MERCATOR

    def __post_init__(self):
        if self.semi_major_axis <= 0:
            raise ContractError("semi-major axis must be positive")
        if not (0.0 < self.flattening < 1.0):
            raise ContractError("flattening must be in (0, 1)")
        if self.scale_factor <= 0:
            raise ContractError("scale factor must be positive")
        if self.mode not in (MODE_TRANSVERSE_MERCATOR, MODE_IDENTITY_LOCAL):
            raise ContractError(f"unknown datum mode {self.mode!r}")

    @classmethod
    def identity_local(cls):
        return cls(mode=MODE_IDENTITY_LOCAL)

    @classmethod
    def hk1980(cls):
        """Hong Kong 1980 Grid (Intl 1924 ellipsoid), public survey constants."""
        return cls(
            semi_major_axis=6378388.0,
            flattening=1.0 / 297.0,
            central_meridian=114.0 + 10.0 / 60.0 + 42.80 / 3600.0,
            latitude_of_origin=22.0 + 18.0 / 60.0 + 43.68 / 3600.0,
            scale_factor=1.0,
            false_easting=836694.05,
            false_northing=819069.80,
        )


def _meridian_arc(a, e2, phi):
    e4 = e2 * e2
    e6 = e4 * e2
    return a * (
        (1 - e2 / 4 - 3 * e4 / 64 - 5 * e6 / 256) * phi
        - (3 * e2 / 8 + 3 * e4 / 32 + 45 * e6 / 1024) * math.sin(2 * phi)
        + (15 * e4 / 256 + 45 * e6 / 1024) * math.sin(4 * phi)
        - (35 * e6 / 3072) * math.sin(6 * phi)
    )


def _tm_forward(lat_deg, lon_deg, datum):
    a = datum.semi_major_axis
    f = datum.flattening
    e2 = f * (2 - f)
    ep2 = e2 / (1 - e2)
    k0 = datum.scale_factor

    phi = math.radians(lat_deg)
    dlam = math.radians(lon_deg - datum.central_meridian)

    sin_phi = math.sin(phi)
    cos_phi = math.cos(phi)
    n_rad = a / math.sqrt(1 - e2 * sin_phi * sin_phi)
    t = math.tan(phi) ** 2
    c = ep2 * cos_phi * cos_phi
    big_a = dlam * cos_phi

    m = _meridian_arc(a, e2, phi)
    m0 = _meridian_arc(a, e2, math.radians(datum.latitude_of_origin))

    a2 = big_a * big_a
    easting = datum.false_easting + k0 * n_rad * (
        big_a
        + (1 - t + c) * big_a * a2 / 6
        + (5 - 18 * t + t * t + 72 * c - 58 * ep2) * big_a * a2 * a2 / 120
    )
    northing = datum.false_northing + k0 * (
        m
        - m0
        + n_rad
        * math.tan(phi)
        * (
            a2 / 2
            + (5 - t + 9 * c + 4 * c * c) * a2 * a2 / 24
            + (61 - 58 * t + t * t + 600 * c - 330 * ep2) * a2 * a2 * a2 / 720
        )
    )
    return easting, northing


def _tm_inverse_series(easting, northing, datum):
    a = datum.semi_major_axis
    f = datum.flattening
    e2 = f * (2 - f)
    ep2 = e2 / (1 - e2)
    k0 = datum.scale_factor

    m0 = _meridian_arc(a, e2, math.radians(datum.latitude_of_origin))
    m = m0 + (northing - datum.false_northing) / k0
    mu = m / (a * (1 - e2 / 4 - 3 * e2 * e2 / 64 - 5 * e2 ** 3 / 256))
    e1 = (1 - math.sqrt(1 - e2)) / (1 + math.sqrt(1 - e2))

    phi1 = (
        mu
        + (3 * e1 / 2 - 27 * e1 ** 3 / 32) * math.sin(2 * mu)
        + (21 * e1 * e1 / 16 - 55 * e1 ** 4 / 32) * math.sin(4 * mu)
        + (151 * e1 ** 3 / 96) * math.sin(6 * mu)
        + (1097 * e1 ** 4 / 512) * math.sin(8 * mu)
    )

    sin1 = math.sin(phi1)
    cos1 = math.cos(phi1)
    c1 = ep2 * cos1 * cos1
    t1 = math.tan(phi1) ** 2
    n1 = a / math.sqrt(1 - e2 * sin1 * sin1)
    r1 = a * (1 - e2) / (1 - e2 * sin1 * sin1) ** 1.5
    d = (easting - datum.false_easting) / (n1 * k0)
    d2 = d * d

    phi = phi1 - (n1 * math.tan(phi1) / r1) * (
        d2 / 2
        - (5 + 3 * t1 + 10 * c1 - 4 * c1 * c1 - 9 * ep2) * d2 * d2 / 24
        + (61 + 90 * t1 + 298 * c1 + 45 * t1 * t1 - 252 * ep2 - 3 * c1 * c1)
        * d2 * d2 * d2 / 720
    )
    lam = math.radians(datum.central_meridian) + (
        d
        - (1 + 2 * t1 + c1) * d * d2 / 6
        + (5 - 2 * c1 + 28 * t1 - 3 * c1 * c1 + 8 * ep2 + 24 * t1 * t1) * d * d2 * d2 / 120
    ) / cos1
    return math.degrees(phi), math.degrees(lam)


def geodetic_to_grid(pose: GeoPose, datum: DatumSpec) -> GridPoint:
    """Project a geodetic position into the grid frame."""
    if datum.mode == MODE_IDENTITY_LOCAL:
        return GridPoint(pose.lon, pose.lat, pose.alt)
    if abs(pose.lat) > 90.0 - _POLE_GUARD_DEG:
        raise ProjectionDomainError(
            f"latitude {pose.lat} within {_POLE_GUARD_DEG} deg of a pole"
        )
    easting, northing = _tm_forward(pose.lat, pose.lon, datum)
    return GridPoint(easting, northing, pose.alt)


def grid_to_geodetic(point: GridPoint, datum: DatumSpec) -> GeoPose:
    """Invert geodetic_to_grid; returns a GeoPose with zero orientation."""
    if datum.mode == MODE_IDENTITY_LOCAL:
        return GeoPose(point.northing, point.easting, point.up)
    lat, lon = _tm_inverse_series(point.easting, point.northing, datum)
    # Newton refinement on the forward projection; the series alone is only
    # good to ~0.1 mm and the round-trip contract is tighter than that.
    delta = 1e-7  # radians-equivalent step in degrees for the numeric Jacobian
    for _ in range(4):
        e0, n0 = _tm_forward(lat, lon, datum)
        rx = e0 - point.easting
        ry = n0 - point.northing
        if abs(rx) < 1e-9 and abs(ry) < 1e-9:
            break
        e1, n1 = _tm_forward(lat + delta, lon, datum)
        e2_, n2 = _tm_forward(lat, lon + delta, datum)
        j00 = (e1 - e0) / delta
        j10 = (n1 - n0) / delta
        j01 = (e2_ - e0) / delta
        j11 = (n2 - n0) / delta
        det = j00 * j11 - j01 * j10
        if det == 0.0:
            break
        lat -= (j11 * rx - j01 * ry) / det
        lon -= (-j10 * rx + j00 * ry) / det
    return GeoPose(lat, lon, point.up)


@dataclass(frozen=True)
class RigidTransform:
    """4x4 homogeneous rigid transform (orthonormal rotation, unit last row)."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ContractError("transform matrix must be 4x4")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ContractError("rotation block is not orthonormal")
        if not abs(np.linalg.det(r) - 1.0) <= 1e-9:
            raise ContractError("rotation block is not a proper rotation")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ContractError("last row must be (0, 0, 0, 1)")
        object.__setattr__(self, "matrix", m)
        m.setflags(write=False)

    @property
    def rotation(self):
        return self.matrix[:3, :3]

    @property
    def translation(self):
        return self.matrix[:3, 3]

    def inverse(self):
        r = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = -r @ self.translation
        return RigidTransform(m)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.matrix @ other.matrix)

    def apply(self, points):
        """Transform an (..., 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation


def _rotation_world_from_camera(yaw_deg, pitch_deg, roll_deg):
    psi = math.radians(yaw_deg)
    theta = math.radians(pitch_deg)
    phi = math.radians(roll_deg)
    cy, sy = math.cos(psi), math.sin(psi)
    cp, sp = math.cos(theta), math.sin(theta)
    cr, sr = math.cos(phi), math.sin(phi)
    # Heading clockwise from north = rotation by -yaw about world up.
    rz = np.array([[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    ry = np.array([[cr, 0.0, sr], [0.0, 1.0, 0.0], [-sr, 0.0, cr]])
    # Camera local (right, down, forward) -> vehicle (east, north, up) at rest.
    r0 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    return rz @ rx @ ry @ r0


def pose_to_transform(pose: GeoPose, datum: DatumSpec) -> RigidTransform:
    """Camera-local to world transform for a geodetic pose."""
    origin = geodetic_to_grid(pose, datum)
    m = np.eye(4)
    m[:3, :3] = _rotation_world_from_camera(pose.yaw, pose.pitch, pose.roll)
    m[:3, 3] = origin.as_array()
    return RigidTransform(m)


def transform_point(transform: RigidTransform, point) -> np.ndarray:
    """Apply a rigid transform to a single 3D point (GridPoint or array)."""
    if isinstance(point, GridPoint):
        point = point.as_array()
    return transform.apply(np.asarray(point, dtype=float))


def project_point(p_local, k: CameraIntrinsics):
    """Pinhole projection; None when behind the near plane or out of frame."""
    x, y, z = np.asarray(p_local, dtype=float)
    if z <= Z_NEAR:
        return None
    u0, v0 = k.principal_point
    u = k.focal_px * x / z + u0
    v = k.focal_px * y / z + v0
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        return None
    return (u, v)


def backproject_pixel(px, depth_z, k: CameraIntrinsics) -> np.ndarray:
    """Invert project_point for a pixel at a given depth along the optic axis."""
    if depth_z <= 0:
        raise ContractError("depth must be positive")
    u, v = px
    u0, v0 = k.principal_point
    return np.array(
        [(u - u0) * depth_z / k.focal_px, (v - v0) * depth_z / k.focal_px, depth_z]
    )
