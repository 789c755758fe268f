"""Per-pixel semantic change detection and region extraction.

A change mask marks pixels whose class differs between the camera image
and the render at the refined pose.  Components use 4-connectivity;
regions smaller than a fraction of the frame are filtered out before
descriptor estimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ContractError
from .scene import SemanticClass, class_category
from .sensors import SegmentedImage

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

DEFAULT_MIN_REGION_FRACTION = 0.05

DIRECTION_ADDED = "added"
DIRECTION_REMOVED = "removed"


@dataclass(frozen=True)
class ChangeMask:
    """Binary image: 1 where the class changed, 0 elsewhere."""

    data: np.ndarray  # (h, w) uint8 in {0, 1}

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data, dtype=np.uint8))
        if d.ndim != 2:
            raise ContractError("change mask must be 2D")
        if d.size and d.max() > 1:
            raise ContractError("change mask values must be 0 or 1")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    def save_png(self, path):
        Image.fromarray(self.data * np.uint8(255), mode="L").save(path)


@dataclass(frozen=True)
class ChangeRegion:
    """One 4-connected changed region with its class interpretation."""

    pixels: np.ndarray  # (n, 2) int rows/cols, row-major order
    cam_class: SemanticClass
    render_class: SemanticClass
    direction: str  # added | removed
    area_fraction: float
    touches_border: bool

    @property
    def pixel_count(self):
        return len(self.pixels)

    def bounding_box(self):
        r = self.pixels[:, 0]
        c = self.pixels[:, 1]
        return int(r.min()), int(c.min()), int(r.max()), int(c.max())


def detect_changes(cam: SegmentedImage, rendered: SegmentedImage) -> ChangeMask:
    """Mask pixel = 1 iff the class indices differ."""
    if cam.data.shape != rendered.data.shape:
        raise ContractError("image dimensions differ")
    return ChangeMask((cam.data != rendered.data).astype(np.uint8))


def filter_regions(mask: ChangeMask,
                   min_fraction=DEFAULT_MIN_REGION_FRACTION) -> ChangeMask:
    """Zero 4-connected components strictly smaller than min_fraction of the frame."""
    if not (0.0 <= min_fraction <= 1.0):
        raise ContractError("min_fraction must be in [0, 1]")
    labels, count = ndimage.label(mask.data, structure=FOUR_CONNECTED)
    if count == 0:
        return mask
    threshold = min_fraction * mask.data.size
    sizes = np.bincount(labels.reshape(-1))
    keep = sizes >= threshold
    keep[0] = False
    return ChangeMask(keep[labels].astype(np.uint8))


def extract_regions(mask: ChangeMask, cam: SegmentedImage,
                    rendered: SegmentedImage) -> list[ChangeRegion]:
    """One ChangeRegion per surviving component, in first-pixel (row-major) order."""
    if not (mask.data.shape == cam.data.shape == rendered.data.shape):
        raise ContractError("mask/image dimensions differ")
    labels, count = ndimage.label(mask.data, structure=FOUR_CONNECTED)
    regions = []
    h, w = mask.data.shape
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        pixels = np.column_stack([rows, cols])
        cam_class = SemanticClass(_mode_class(cam.data[rows, cols]))
        render_class = SemanticClass(_mode_class(rendered.data[rows, cols]))
        removed = (
            class_category(render_class) == "dynamic"
            and class_category(cam_class) != "dynamic"
        )
        touches = bool(
            np.any(rows == 0) or np.any(rows == h - 1)
            or np.any(cols == 0) or np.any(cols == w - 1)
        )
        regions.append(
            ChangeRegion(
                pixels=pixels,
                cam_class=cam_class,
                render_class=render_class,
                direction=DIRECTION_REMOVED if removed else DIRECTION_ADDED,
                area_fraction=len(pixels) / mask.data.size,
                touches_border=touches,
            )
        )
    return regions


def _mode_class(values):
    """Most frequent class index; ties resolve to the lowest index."""
    counts = np.bincount(values, minlength=9)
    return int(np.argmax(counts))


def save_region_report(regions, path):
    """Structured-text region export: one region per line."""
    lines = []
    for r in regions:
        r0, c0, r1, c1 = r.bounding_box()
        lines.append(
            f"{r.direction} cam={int(r.cam_class)} render={int(r.render_class)} "
            f"pixels={r.pixel_count} bbox={r0},{c0},{r1},{c1} "
            f"border={'yes' if r.touches_border else 'no'}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
