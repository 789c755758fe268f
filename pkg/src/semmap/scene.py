"""Class-labelled triangle mesh, descriptor store and their file formats.

Mesh file format (text, one record per line):
    v <x> <y> <z>                vertex, meters, grid frame
    f <i> <j> <k> class_<n>      face, 1-based vertex indices, n in 0..8

Descriptor store format (text):
    semmap-store v1
    <id> material <class> <w> <h> <x> <y> <z> <nx> <ny> <nz> <angle_deg>
    <id> dynamic <class> <w> <d> <h> <x> <y> <z>
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import (
    ContractError,
    DescriptorNotFoundError,
    MeshParseError,
    StoreVersionError,
)
from .geometry import GridPoint

STORE_VERSION = "v1"
STORE_HEADER = f"semmap-store {STORE_VERSION}"

MATERIAL_OVERLAY_OFFSET = 0.01  # m; inserted quads sit just off the wall

MIN_FACE_AREA = 1e-12  # m^2; faces below this are degenerate


class SemanticClass(IntEnum):
    STONE = 0
    GLASS = 1
    METAL = 2
    BANNER = 3
    PEDESTRIAN = 4
    CHAIR = 5
    SKY = 6
    FOLIAGE = 7
    OTHERS = 8


MATERIAL_CLASSES = frozenset(
    {SemanticClass.STONE, SemanticClass.GLASS, SemanticClass.METAL, SemanticClass.BANNER}
)
DYNAMIC_CLASSES = frozenset({SemanticClass.PEDESTRIAN, SemanticClass.CHAIR})

# Visualization-only palette; all computation uses indices.
CLASS_PALETTE = {
    SemanticClass.STONE: (0, 0, 255),
    SemanticClass.GLASS: (0, 255, 0),
    SemanticClass.METAL: (255, 165, 0),
    SemanticClass.BANNER: (150, 75, 0),
    SemanticClass.PEDESTRIAN: (255, 0, 0),
    SemanticClass.CHAIR: (255, 192, 203),
    SemanticClass.SKY: (0, 0, 0),
    SemanticClass.FOLIAGE: (255, 255, 0),
    SemanticClass.OTHERS: (173, 216, 230),
}

# Defaults for "pre-defined" dynamic object dimensions (w, d, h) meters.
DEFAULT_DYNAMIC_DIMENSIONS = {
    SemanticClass.PEDESTRIAN: (0.5, 0.5, 1.7),
    SemanticClass.CHAIR: (0.5, 0.5, 0.9),
}


def class_category(c: SemanticClass) -> str:
    c = SemanticClass(c)
    if c in MATERIAL_CLASSES:
        return "material"
    if c in DYNAMIC_CLASSES:
        return "dynamic"
    return "non-updatable"


def _face_areas(vertices, faces):
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class SemanticMesh:
    """Triangle soup with one semantic class per face.  Immutable once built."""

    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (F, 3) int64, vertex indices
    classes: np.ndarray  # (F,) uint8

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        c = np.ascontiguousarray(np.asarray(self.classes, dtype=np.uint8).reshape(-1))
        if len(f) != len(c):
            raise ContractError("face/class count mismatch")
        for arr, name in ((v, "vertices"), (f, "faces"), (c, "classes")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    def validate(self):
        if len(self.faces) and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise ContractError("face references a vertex out of range")
        if np.any(self.classes > 8):
            raise ContractError("face class index out of range")
        if len(self.faces):
            bad = np.nonzero(_face_areas(self.vertices, self.faces) <= MIN_FACE_AREA)[0]
            if len(bad):
                raise ContractError(f"degenerate faces (area <= {MIN_FACE_AREA}): {bad.tolist()}")

    @property
    def num_faces(self):
        return len(self.faces)

    @property
    def bounding_box(self):
        if not len(self.vertices):
            return np.zeros(3), np.zeros(3)
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def with_quad(self, corners, class_id):
        """New mesh with a two-triangle quad (corners in order a,b,c,d)."""
        corners = np.asarray(corners, dtype=float).reshape(4, 3)
        base = len(self.vertices)
        verts = np.vstack([self.vertices, corners]) if len(self.vertices) else corners
        new_faces = np.array(
            [[base, base + 1, base + 2], [base, base + 2, base + 3]], dtype=np.int64
        )
        faces = np.vstack([self.faces, new_faces]) if len(self.faces) else new_faces
        classes = np.concatenate([self.classes, np.full(2, int(class_id), dtype=np.uint8)])
        return SemanticMesh(verts, faces, classes)

    def with_box(self, corners, class_id):
        """New mesh with a 12-triangle axis-aligned box (8 corner points)."""
        corners = np.asarray(corners, dtype=float).reshape(8, 3)
        base = len(self.vertices)
        verts = np.vstack([self.vertices, corners]) if len(self.vertices) else corners
        quads = _BOX_QUADS + base
        tris = []
        for q in quads:
            tris.append([q[0], q[1], q[2]])
            tris.append([q[0], q[2], q[3]])
        new_faces = np.array(tris, dtype=np.int64)
        faces = np.vstack([self.faces, new_faces]) if len(self.faces) else new_faces
        classes = np.concatenate([self.classes, np.full(12, int(class_id), dtype=np.uint8)])
        return SemanticMesh(verts, faces, classes)

    def without_faces(self, face_indices):
        """New mesh with the given faces removed (vertices are kept)."""
        keep = np.ones(len(self.faces), dtype=bool)
        keep[np.asarray(face_indices, dtype=int)] = False
        return SemanticMesh(self.vertices, self.faces[keep], self.classes[keep])


# Box corner order: bottom ring (counter-clockwise seen from above), then top ring.
_BOX_CORNER_SIGNS = np.array(
    [
        [-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
    ],
    dtype=float,
)
_BOX_QUADS = np.array(
    [
        [0, 1, 2, 3],  # bottom
        [4, 7, 6, 5],  # top
        [0, 4, 5, 1],  # south
        [1, 5, 6, 2],  # east
        [2, 6, 7, 3],  # north
        [3, 7, 4, 0],  # west
    ],
    dtype=np.int64,
)


def box_corners(position: GridPoint, dim3d):
    """Eight corners of an axis-aligned box whose bottom-face center is `position`."""
    w, d, h = dim3d
    half = np.array([w / 2.0, d / 2.0, h], dtype=float)
    return position.as_array() + _BOX_CORNER_SIGNS * half


def material_quad_corners(position: GridPoint, dim2d, normal, angle_deg,
                          offset=MATERIAL_OVERLAY_OFFSET):
    """Corners (a,b,c,d) of a material quad, offset slightly along its normal."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = _in_plane_reference(n)
    ang = math.radians(angle_deg)
    u_axis = math.cos(ang) * ref + math.sin(ang) * np.cross(n, ref)
    v_axis = np.cross(n, u_axis)
    w, h = dim2d
    center = position.as_array() + n * offset
    hw, hh = w / 2.0, h / 2.0
    return np.array(
        [
            center - hw * u_axis - hh * v_axis,
            center + hw * u_axis - hh * v_axis,
            center + hw * u_axis + hh * v_axis,
            center - hw * u_axis + hh * v_axis,
        ]
    )


def _in_plane_reference(normal):
    """Deterministic in-plane reference direction for a unit normal."""
    up = np.array([0.0, 0.0, 1.0])
    ref = np.cross(up, normal)
    norm = np.linalg.norm(ref)
    if norm < 1e-9:  # wall lying flat; fall back to east
        return np.array([1.0, 0.0, 0.0])
    return ref / norm


def in_plane_angle(edge, normal):
    """Angle (degrees) of an in-plane edge vector against the reference direction."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = _in_plane_reference(n)
    e = np.asarray(edge, dtype=float)
    return math.degrees(math.atan2(float(np.dot(e, np.cross(n, ref))), float(np.dot(e, ref))))


@dataclass(frozen=True)
class MaterialDescriptor:
    """Planar rectangular patch of a material class."""

    id: int
    class_id: SemanticClass
    dim2d: tuple[float, float]  # (width, height) meters
    position: GridPoint  # quad centroid
    normal: tuple[float, float, float]  # unit normal
    angle_deg: float  # in-plane orientation of the width edge

    def __post_init__(self):
        object.__setattr__(self, "dim2d", tuple(float(v) for v in self.dim2d))
        object.__setattr__(self, "normal", tuple(float(v) for v in self.normal))
        object.__setattr__(self, "angle_deg", float(self.angle_deg))
        if class_category(self.class_id) != "material":
            raise ContractError(f"{self.class_id!r} is not a material class")
        if self.dim2d[0] <= 0 or self.dim2d[1] <= 0:
            raise ContractError("material dimensions must be positive")
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ContractError("normal must have unit length")

    def quad_corners(self):
        return material_quad_corners(
            self.position, self.dim2d, self.normal, self.angle_deg
        )


@dataclass(frozen=True)
class DynamicDescriptor:
    """Axis-aligned box of a dynamic class, anchored at its ground contact."""

    id: int
    class_id: SemanticClass
    dim3d: tuple[float, float, float]  # (w, d, h) meters
    position: GridPoint  # bottom-face center

    def __post_init__(self):
        object.__setattr__(self, "dim3d", tuple(float(v) for v in self.dim3d))
        if class_category(self.class_id) != "dynamic":
            raise ContractError(f"{self.class_id!r} is not a dynamic class")
        if any(d <= 0 for d in self.dim3d):
            raise ContractError("dynamic dimensions must be positive")

    def box_corners(self):
        return box_corners(self.position, self.dim3d)


@dataclass
class DescriptorStore:
    """Insertion-ordered descriptor collection with a monotone id counter."""

    descriptors: list = field(default_factory=list)
    next_id: int = 1
    version: str = STORE_VERSION

    def __len__(self):
        return len(self.descriptors)

    def __iter__(self):
        return iter(self.descriptors)

    def _take_id(self):
        i = self.next_id
        self.next_id += 1
        return i

    def add_material(self, class_id, dim2d, position, normal, angle_deg):
        d = MaterialDescriptor(
            self._take_id(), SemanticClass(class_id), tuple(dim2d), position,
            tuple(float(x) for x in normal), float(angle_deg),
        )
        self.descriptors.append(d)
        return d

    def add_dynamic(self, class_id, dim3d, position):
        d = DynamicDescriptor(
            self._take_id(), SemanticClass(class_id), tuple(dim3d), position
        )
        self.descriptors.append(d)
        return d

    def remove(self, descriptor_id):
        for i, d in enumerate(self.descriptors):
            if d.id == descriptor_id:
                return self.descriptors.pop(i)
        raise DescriptorNotFoundError(f"no descriptor with id {descriptor_id}")

    def of_class(self, class_id):
        return [d for d in self.descriptors if d.class_id == class_id]

    def copy(self):
        return DescriptorStore(list(self.descriptors), self.next_id, self.version)


def insert_material(store: DescriptorStore, mesh: SemanticMesh, class_id, dim2d,
                    position, normal, angle_deg=0.0):
    """Add a material descriptor and its two-triangle quad; returns (descriptor, mesh)."""
    d = store.add_material(class_id, dim2d, position, normal, angle_deg)
    return d, mesh.with_quad(d.quad_corners(), d.class_id)


def insert_dynamic(store: DescriptorStore, mesh: SemanticMesh, class_id, dim3d, position):
    """Add a dynamic descriptor and its box; returns (descriptor, mesh)."""
    d = store.add_dynamic(class_id, dim3d, position)
    return d, mesh.with_box(d.box_corners(), d.class_id)


def _find_descriptor_faces(mesh: SemanticMesh, descriptor, tol=1e-9):
    """Mesh faces whose vertices coincide with the descriptor's geometry."""
    if isinstance(descriptor, DynamicDescriptor):
        target = descriptor.box_corners()
    else:
        target = descriptor.quad_corners()
    hits = []
    for fi in range(mesh.num_faces):
        if mesh.classes[fi] != int(descriptor.class_id):
            continue
        tri = mesh.vertices[mesh.faces[fi]]
        ok = True
        for p in tri:
            if np.min(np.linalg.norm(target - p, axis=1)) > tol:
                ok = False
                break
        if ok:
            hits.append(fi)
    return hits


def remove_nearest_dynamic(store: DescriptorStore, mesh: SemanticMesh,
                           point: GridPoint, class_id):
    """Remove the dynamic descriptor of `class_id` closest to `point`.

    Ties break to the smallest id.  Returns (removed_id, mesh).
    """
    if class_category(class_id) != "dynamic":
        raise ContractError(f"{class_id!r} is not a dynamic class")
    candidates = store.of_class(SemanticClass(class_id))
    if not candidates:
        raise DescriptorNotFoundError(f"no descriptor of class {SemanticClass(class_id).name}")
    e = point.as_array()
    best = min(
        candidates,
        key=lambda d: (float(np.linalg.norm(d.position.as_array() - e)), d.id),
    )
    faces = _find_descriptor_faces(mesh, best)
    store.remove(best.id)
    return best.id, mesh.without_faces(faces)


def load_mesh(path) -> SemanticMesh:
    vertices = []
    faces = []
    classes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    raise MeshParseError("vertex needs 3 coordinates", path, lineno)
                try:
                    vertices.append([float(p) for p in parts[1:]])
                except ValueError:
                    raise MeshParseError("bad vertex coordinate", path, lineno) from None
            elif parts[0] == "f":
                if len(parts) != 5:
                    raise MeshParseError("face needs 3 indices and a class", path, lineno)
                try:
                    idx = [int(p) - 1 for p in parts[1:4]]
                except ValueError:
                    raise MeshParseError("bad face index", path, lineno) from None
                tag = parts[4]
                if not tag.startswith("class_"):
                    raise MeshParseError(f"unknown class tag {tag!r}", path, lineno)
                try:
                    cid = int(tag[len("class_"):])
                except ValueError:
                    raise MeshParseError(f"unknown class tag {tag!r}", path, lineno) from None
                if not 0 <= cid <= 8:
                    raise MeshParseError(f"class index {cid} out of range", path, lineno)
                faces.append(idx)
                classes.append(cid)
            else:
                raise MeshParseError(f"unknown record {parts[0]!r}", path, lineno)
    verts = np.array(vertices, dtype=float).reshape(-1, 3)
    farr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(farr) and (farr.min() < 0 or farr.max() >= len(verts)):
        bad = int(np.nonzero((farr < 0) | (farr >= len(verts)))[0][0])
        raise MeshParseError(
            f"face {bad} references a vertex outside the {len(verts)}-vertex file", path
        )
    try:
        return SemanticMesh(verts, farr, np.array(classes, dtype=np.uint8))
    except ContractError as exc:
        raise MeshParseError(str(exc), path) from exc


def save_mesh(mesh: SemanticMesh, path):
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f, c in zip(mesh.faces, mesh.classes):
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1} class_{int(c)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def save_store(store: DescriptorStore, path):
    lines = [STORE_HEADER]
    for d in store:
        if isinstance(d, MaterialDescriptor):
            w, h = d.dim2d
            nx, ny, nz = d.normal
            p = d.position
            lines.append(
                f"{d.id} material {int(d.class_id)} {w!r} {h!r} "
                f"{p.easting!r} {p.northing!r} {p.up!r} {nx!r} {ny!r} {nz!r} {d.angle_deg!r}"
            )
        else:
            w, dd, h = d.dim3d
            p = d.position
            lines.append(
                f"{d.id} dynamic {int(d.class_id)} {w!r} {dd!r} {h!r} "
                f"{p.easting!r} {p.northing!r} {p.up!r}"
            )
    _atomic_write(path, "\n".join(lines) + "\n")


def load_store(path) -> DescriptorStore:
    store = DescriptorStore()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != STORE_HEADER:
            raise StoreVersionError(
                f"expected header {STORE_HEADER!r}, found {header!r}"
            )
        max_id = 0
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            try:
                did = int(parts[0])
                kind = parts[1]
                cid = SemanticClass(int(parts[2]))
                nums = [float(p) for p in parts[3:]]
                if kind == "material":
                    w, h, x, y, z, nx, ny, nz, ang = nums
                    d = MaterialDescriptor(did, cid, (w, h), GridPoint(x, y, z),
                                           (nx, ny, nz), ang)
                elif kind == "dynamic":
                    w, dd, h, x, y, z = nums
                    d = DynamicDescriptor(did, cid, (w, dd, h), GridPoint(x, y, z))
                else:
                    raise MeshParseError(f"unknown descriptor kind {kind!r}", path, lineno)
            except (ValueError, IndexError) as exc:
                raise MeshParseError(f"bad descriptor record: {exc}", path, lineno) from exc
            store.descriptors.append(d)
            max_id = max(max_id, did)
        store.next_id = max_id + 1
    return store


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
