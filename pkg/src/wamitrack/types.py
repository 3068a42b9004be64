"""Geometric, raster, and trajectory types shared by every tracker stage.

Conventions: pixel coordinates are (x right, y down), box centers are
real-valued, and every raster read rounds to the nearest integer pixel
(targets are small, sub-pixel registration is out of scope). Grayscale
patches are float32 arrays so correlation math never overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingObservation, OutOfFrame

ROTATION_ANGLES = (-90, -60, -30, 0, 30, 60, 90)

SOURCE_DETECTION = "DETECTION"
SOURCE_LCT = "LCT"
SOURCE_INTERPOLATED = "INTERPOLATED"


def iround(x: float) -> int:
    """Round half away from zero toward +inf; deterministic, unlike banker's."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class GrayFrame:
    """One 8-bit grayscale frame; pixels are a read-only (height, width) array."""

    pixels: np.ndarray
    frame_index: int

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ValueError("frame pixels must be a non-empty 2-D array")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with a real-valued center and positive pixel size."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("box width and height must be positive")

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains(self, x: float, y: float) -> bool:
        return abs(x - self.cx) <= self.w / 2 and abs(y - self.cy) <= self.h / 2

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def moved_to(self, cx: float, cy: float) -> "BBox":
        return BBox(cx, cy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    """A motion-blob detection; synthetic ones are created by merge splitting."""

    frame_index: int
    box: BBox
    blob_area: float
    synthetic: bool = False

    def __post_init__(self):
        if self.blob_area <= 0:
            raise ValueError("blob_area must be positive")


@dataclass(frozen=True)
class Observation:
    frame_index: int
    box: BBox
    source: str = SOURCE_DETECTION


def center_distance(a: BBox, b: BBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def centers_match(a: BBox, b: BBox) -> bool:
    """Either center lies inside the other box (the observation match rule)."""
    return a.contains(b.cx, b.cy) or b.contains(a.cx, a.cy)


def rotate_patch(patch: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate a patch about its center with nearest-neighbor resampling.

    Output keeps the input shape; pixels whose source falls outside the
    patch are filled with the patch mean so flat fill never dominates NCC.
    """
    if degrees == 0:
        return patch.copy()
    h, w = patch.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs - cx
    dy = ys - cy
    # inverse mapping: output pixel pulls from the un-rotated source location
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy
    rx = np.floor(src_x + 0.5).astype(np.int64)
    ry = np.floor(src_y + 0.5).astype(np.int64)
    inside = (rx >= 0) & (rx < w) & (ry >= 0) & (ry < h)
    out = np.full_like(patch, float(patch.mean()))
    out[inside] = patch[ry[inside], rx[inside]]
    return out


@dataclass(frozen=True)
class TemplateSet:
    """A base appearance patch plus its rotation variants.

    The variant at the index of angle 0 is pixel-identical to the base;
    regeneration from the same base is deterministic.
    """

    base: np.ndarray
    variants: tuple
    angles: tuple = ROTATION_ANGLES

    @classmethod
    def from_base(cls, base: np.ndarray, angles=ROTATION_ANGLES) -> "TemplateSet":
        base = np.ascontiguousarray(base, dtype=np.float32)
        base.flags.writeable = False
        variants = []
        for a in angles:
            v = np.ascontiguousarray(rotate_patch(base, a), dtype=np.float32)
            v.flags.writeable = False
            variants.append(v)
        return cls(base=base, variants=tuple(variants), angles=tuple(angles))


def template_box(box: BBox) -> BBox:
    """Square support centered on a box, sized by its larger side.

    Rotated template variants need a square canvas — rotating an elongated
    patch inside its own rectangle clips the body and fills half the support
    with synthetic pixels. Capturing the square region keeps real scene
    pixels everywhere; only post-rotation corners ever see fill.
    """
    side = max(box.w, box.h)
    return BBox(box.cx, box.cy, side, side)


def crop_patch(frame: GrayFrame, box: BBox) -> np.ndarray:
    """Crop the axis-aligned patch under ``box``, zero-filled outside the frame.

    The center is rounded to the nearest pixel and the patch size is the
    rounded box size (at least 1x1). Raises OutOfFrame when the box does
    not intersect the frame at all.
    """
    w = max(1, iround(box.w))
    h = max(1, iround(box.h))
    x0 = iround(box.cx) - w // 2
    y0 = iround(box.cy) - h // 2
    x1, y1 = x0 + w, y0 + h
    if x1 <= 0 or y1 <= 0 or x0 >= frame.width or y0 >= frame.height:
        raise OutOfFrame(f"box {box} does not intersect frame {frame.width}x{frame.height}")
    out = np.zeros((h, w), dtype=np.float32)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x1, frame.width), min(y1, frame.height)
    out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frame.pixels[sy0:sy1, sx0:sx1]
    return out


@dataclass
class Track:
    """An identity trajectory. Mutated only during the association phase."""

    id: int
    observations: list = field(default_factory=list)
    stable_template: TemplateSet | None = None
    consecutive_misses: int = 0
    active: bool = True

    def __post_init__(self):
        self._by_frame = {o.frame_index: o for o in self.observations}

    def observation_at(self, t: int) -> Observation | None:
        return self._by_frame.get(t)

    @property
    def first_frame(self) -> int:
        return self.observations[0].frame_index

    @property
    def last_frame(self) -> int:
        return self.observations[-1].frame_index

    @property
    def last_box(self) -> BBox:
        return self.observations[-1].box

    def append(self, obs: Observation) -> None:
        if self.observations and obs.frame_index <= self.last_frame:
            raise ValueError(
                f"track {self.id}: observation at frame {obs.frame_index} "
                f"does not extend past frame {self.last_frame}"
            )
        self.observations.append(obs)
        self._by_frame[obs.frame_index] = obs

    def replace(self, obs: Observation) -> None:
        """Swap the observation already recorded at the same frame."""
        if obs.frame_index not in self._by_frame:
            raise MissingObservation(
                f"track {self.id} has no observation at frame {obs.frame_index}")
        for i in range(len(self.observations) - 1, -1, -1):
            if self.observations[i].frame_index == obs.frame_index:
                self.observations[i] = obs
                break
        self._by_frame[obs.frame_index] = obs

    def velocity_at(self, t: int) -> tuple[float, float]:
        """Center displacement from t-1 to t, in pixels/frame."""
        cur = self.observation_at(t)
        prev = self.observation_at(t - 1)
        if cur is None or prev is None:
            raise MissingObservation(
                f"track {self.id} lacks observations at frames {t - 1} and {t}"
            )
        return (cur.box.cx - prev.box.cx, cur.box.cy - prev.box.cy)

    def velocity_near(self, t: int) -> tuple[float, float]:
        """velocity_at(t) with graceful fallbacks at track boundaries.

        Falls back to the mean per-frame displacement of the nearest
        observation pair (the forward pair at the track start), then to
        (0, 0) for single-observation tracks.
        """
        try:
            return self.velocity_at(t)
        except MissingObservation:
            pass
        if len(self.observations) < 2:
            return (0.0, 0.0)
        if t <= self.first_frame:
            a, b = self.observations[0], self.observations[1]
        else:
            a, b = self.observations[-2], self.observations[-1]
        dt = b.frame_index - a.frame_index
        return ((b.box.cx - a.box.cx) / dt, (b.box.cy - a.box.cy) / dt)


@dataclass
class TrackPool:
    """All tracks ever created, keyed by id. Only association code writes it."""

    tracks: dict = field(default_factory=dict)
    next_id: int = 1

    def new_track(self, observations, stable_template=None) -> Track:
        track = Track(id=self.next_id, observations=list(observations),
                      stable_template=stable_template)
        self.tracks[track.id] = track
        self.next_id += 1
        return track

    def snapshot(self) -> tuple:
        """Frozen view for concurrent per-target readers, ordered by id."""
        return tuple(self.tracks[i] for i in sorted(self.tracks))

    def active_tracks_ending_at(self, t: int) -> list:
        return [tr for tr in self.snapshot() if tr.active and tr.last_frame == t]
