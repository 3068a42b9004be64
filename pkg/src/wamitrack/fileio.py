"""File formats: PGM frames, detection/track CSVs, flow dumps, key=value configs.

Frames are binary 8-bit PGM (P5, maxval 255) named ``frame_%06d.pgm``.
Detections: CSV ``frame,cx,cy,w,h,area``. Tracks: CSV
``track_id,frame,cx,cy,w,h,source`` with source in {DET,LCT,INTERP};
ground-truth files use the same schema without the source column.
"""

from __future__ import annotations

import csv
import re
import struct
from pathlib import Path

import numpy as np

from .errors import InputFormatError
from .types import (BBox, Detection, GrayFrame, Observation, Track,
                    SOURCE_DETECTION, SOURCE_INTERPOLATED, SOURCE_LCT)

FRAME_NAME = "frame_{:06d}.pgm"

_SOURCE_TO_CSV = {SOURCE_DETECTION: "DET", SOURCE_LCT: "LCT", SOURCE_INTERPOLATED: "INTERP"}
_CSV_TO_SOURCE = {v: k for k, v in _SOURCE_TO_CSV.items()}


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise InputFormatError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval; '#' comments allowed between tokens
    tokens, pos = [], 2
    while len(tokens) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if m is None:
            raise InputFormatError(f"{path}: malformed PGM header")
        tokens.append(int(m.group(1)))
        pos += m.end()
    w, h, maxval = tokens
    if maxval != 255:
        raise InputFormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + w * h]
    if len(raw) != w * h:
        raise InputFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)


def write_frames(dirpath, frames) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for fr in frames:
        write_pgm(d / FRAME_NAME.format(fr.frame_index), fr.pixels)


def load_frames(dirpath) -> list:
    """Load all frame_*.pgm files in index order."""
    d = Path(dirpath)
    paths = sorted(d.glob("frame_*.pgm"))
    if not paths:
        raise InputFormatError(f"{dirpath}: no frame_*.pgm files found")
    frames = []
    for p in paths:
        idx = int(p.stem.split("_")[1])
        frames.append(GrayFrame(read_pgm(p), idx))
    return frames


def write_detections_csv(path, detections_per_frame: dict) -> None:
    """detections_per_frame maps frame index -> list of Detection."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "cx", "cy", "w", "h", "area"])
        for t in sorted(detections_per_frame):
            for d in detections_per_frame[t]:
                b = d.box
                writer.writerow([t, _fmt(b.cx), _fmt(b.cy), _fmt(b.w), _fmt(b.h),
                                 _fmt(d.blob_area)])


def read_detections_csv(path) -> dict:
    """Parse a detections CSV into {frame: [Detection, ...]}, frames ascending."""
    out: dict[int, list] = {}
    last_frame = None
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["frame", "cx", "cy", "w", "h", "area"]:
            raise InputFormatError(f"{path}: expected header frame,cx,cy,w,h,area")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = int(row[0])
                cx, cy, w, h, area = (float(v) for v in row[1:6])
            except (ValueError, IndexError):
                raise InputFormatError(f"{path}: line {lineno}: malformed row {row!r}")
            if w <= 0 or h <= 0:
                raise InputFormatError(f"{path}: line {lineno}: non-positive box size")
            if area <= 0:
                raise InputFormatError(f"{path}: line {lineno}: non-positive area")
            if last_frame is not None and t < last_frame:
                raise InputFormatError(f"{path}: line {lineno}: frames not ascending")
            last_frame = t
            out.setdefault(t, []).append(
                Detection(frame_index=t, box=BBox(cx, cy, w, h), blob_area=area))
    return out


def write_tracks_csv(path, tracks, with_source: bool = True) -> None:
    header = ["track_id", "frame", "cx", "cy", "w", "h"]
    if with_source:
        header.append("source")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for tr in sorted(tracks, key=lambda t: t.id):
            for o in tr.observations:
                b = o.box
                row = [tr.id, o.frame_index, _fmt(b.cx), _fmt(b.cy), _fmt(b.w), _fmt(b.h)]
                if with_source:
                    row.append(_SOURCE_TO_CSV[o.source])
                writer.writerow(row)


def read_tracks_csv(path) -> list:
    """Parse a tracks CSV (with or without the source column) into Track objects."""
    rows: dict[int, list] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise InputFormatError(f"{path}: empty tracks file")
        header = [c.strip() for c in header]
        if header[:6] != ["track_id", "frame", "cx", "cy", "w", "h"]:
            raise InputFormatError(f"{path}: expected header track_id,frame,cx,cy,w,h[,source]")
        has_source = len(header) == 7 and header[6] == "source"
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tid = int(row[0])
                t = int(row[1])
                cx, cy, w, h = (float(v) for v in row[2:6])
            except (ValueError, IndexError):
                raise InputFormatError(f"{path}: line {lineno}: malformed row {row!r}")
            if w <= 0 or h <= 0:
                raise InputFormatError(f"{path}: line {lineno}: non-positive box size")
            source = SOURCE_DETECTION
            if has_source:
                try:
                    source = _CSV_TO_SOURCE[row[6].strip()]
                except (KeyError, IndexError):
                    raise InputFormatError(f"{path}: line {lineno}: bad source {row[6:7]!r}")
            rows.setdefault(tid, []).append(Observation(t, BBox(cx, cy, w, h), source))
    tracks = []
    for tid in sorted(rows):
        obs = sorted(rows[tid], key=lambda o: o.frame_index)
        for a, b in zip(obs, obs[1:]):
            if b.frame_index <= a.frame_index:
                raise InputFormatError(f"{path}: track {tid} has duplicate frame {b.frame_index}")
        tracks.append(Track(id=tid, observations=obs))
    return tracks


def write_flow_dump(path, u: np.ndarray, v: np.ndarray) -> None:
    """Two-channel float32 flow dump: u32le width, u32le height, then
    interleaved (u, v) float32le pairs in row-major order."""
    h, w = u.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[..., 0] = u
    inter[..., 1] = v
    with open(path, "wb") as f:
        f.write(struct.pack("<II", w, h))
        f.write(inter.tobytes())


def read_flow_dump(path):
    data = Path(path).read_bytes()
    w, h = struct.unpack("<II", data[:8])
    inter = np.frombuffer(data[8:], dtype="<f4").reshape(h, w, 2)
    return inter[..., 0].copy(), inter[..., 1].copy()


def parse_keyvalue_file(path) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment, blanks ignored."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputFormatError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _fmt(x: float) -> str:
    """Compact, deterministic float formatting (integers print bare)."""
    if x == int(x):
        return str(int(x))
    return repr(round(float(x), 6))
