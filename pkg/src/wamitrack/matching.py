"""Normalized cross-correlation scoring, template scanning, and suppression.

All scores are Pearson correlations in [-1, 1]; patches with zero variance
score 0 so flat regions safely fail every acceptance gate. Regions are small
(at most a few hundred pixels on a side) so scans are evaluated directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatch, RegionTooSmall
from .types import BBox, GrayFrame, TemplateSet, iround


@dataclass(frozen=True)
class ScoredCandidate:
    box: BBox
    score: float
    best_variant: int | None = None


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Correlation of two equal-size patches; 0 when either is constant."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"patch shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DimensionMismatch("patches must contain at least one pixel")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return 0.0
    return float((da * db).sum() / denom)


def best_variant_score(patch: np.ndarray, templates: TemplateSet) -> tuple[float, int]:
    """Max NCC over the rotation variants; ties resolve to the lowest index."""
    best_score, best_idx = -2.0, 0
    for idx, variant in enumerate(templates.variants):
        s = ncc(patch, variant)
        if s > best_score:
            best_score, best_idx = s, idx
    return best_score, best_idx


def ncc_scan(frame: GrayFrame, template: np.ndarray, region: BBox,
             stride: int = 1, threshold: float = 0.5) -> list:
    """Scan ``region`` with ``template`` and return thresholded local maxima.

    Placements are stride-spaced positions where the template fits fully
    inside the region (clipped to the frame). Survivors are strict maxima
    over their 8-neighborhood in the placement grid with score > threshold.
    """
    th, tw = template.shape
    rw = max(1, iround(region.w))
    rh = max(1, iround(region.h))
    x0 = max(iround(region.cx) - rw // 2, 0)
    y0 = max(iround(region.cy) - rh // 2, 0)
    x1 = min(iround(region.cx) - rw // 2 + rw, frame.width)
    y1 = min(iround(region.cy) - rh // 2 + rh, frame.height)
    if x1 - x0 < tw or y1 - y0 < th:
        raise RegionTooSmall(
            f"no {tw}x{th} placement fits in region {x1 - x0}x{y1 - y0}")
    sub = frame.pixels[y0:y1, x0:x1].astype(np.float64)
    scores = _score_grid(sub, np.asarray(template, dtype=np.float64))[::stride, ::stride]
    keep = _strict_local_maxima(scores) & (scores > threshold)
    out = []
    for gy, gx in np.argwhere(keep):
        px = x0 + gx * stride + tw // 2
        py = y0 + gy * stride + th // 2
        out.append(ScoredCandidate(BBox(float(px), float(py), float(tw), float(th)),
                                   float(scores[gy, gx])))
    return out


def _score_grid(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """NCC of the template against every placement, via sliding windows."""
    th, tw = template.shape
    n = th * tw
    t0 = template - template.mean()
    t_norm = np.sqrt((t0 * t0).sum())
    windows = sliding_window_view(image, (th, tw))
    cross = np.tensordot(windows, t0, axes=([2, 3], [0, 1]))
    sums = windows.sum(axis=(2, 3))
    sqsums = (windows * windows).sum(axis=(2, 3))
    var = np.maximum(sqsums - sums * sums / n, 0.0)
    denom = np.sqrt(var) * t_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(denom > 0.0, cross / denom, 0.0)
    if t_norm == 0.0:
        scores[:] = 0.0
    return scores


def scan_variants(frame: GrayFrame, templates: TemplateSet, region: BBox,
                  threshold: float = 0.5, votes: np.ndarray | None = None,
                  min_votes: float = 0.0) -> list:
    """Scan with every rotation variant, keeping the best score per placement.

    When a vote raster is given, only placements whose window collects at
    least ``min_votes`` set pixels are scored at all — the few offsets near
    moving-blob boundaries — so the scan cost tracks scene motion, not
    region size. Survivors are strict 8-neighborhood maxima above the
    threshold; unscored neighbors count as -inf.
    """
    th, tw = templates.base.shape
    rw = max(1, iround(region.w))
    rh = max(1, iround(region.h))
    x0 = max(iround(region.cx) - rw // 2, 0)
    y0 = max(iround(region.cy) - rh // 2, 0)
    x1 = min(iround(region.cx) - rw // 2 + rw, frame.width)
    y1 = min(iround(region.cy) - rh // 2 + rh, frame.height)
    if x1 - x0 < tw or y1 - y0 < th:
        raise RegionTooSmall(
            f"no {tw}x{th} placement fits in region {x1 - x0}x{y1 - y0}")
    sub = frame.pixels[y0:y1, x0:x1].astype(np.float64)
    if votes is not None:
        counts = _box_counts(votes[y0:y1, x0:x1], th, tw)
        allowed = counts >= min_votes
    else:
        allowed = np.ones((sub.shape[0] - th + 1, sub.shape[1] - tw + 1), dtype=bool)
    if not allowed.any():
        return []
    idx_y, idx_x = np.nonzero(allowed)
    windows = sliding_window_view(sub, (th, tw))[idx_y, idx_x]
    n = th * tw
    flat = windows.reshape(len(idx_y), n)
    centered = flat - flat.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    best = np.full(len(idx_y), -np.inf)
    best_var = np.zeros(len(idx_y), dtype=np.int64)
    for vi, variant in enumerate(templates.variants):
        t0 = np.asarray(variant, dtype=np.float64)
        t0 = t0 - t0.mean()
        t_norm = np.sqrt((t0 * t0).sum())
        denom = norms * t_norm
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0.0, centered @ t0.ravel() / denom, 0.0)
        better = s > best
        best = np.where(better, s, best)
        best_var = np.where(better, vi, best_var)
    grid = np.full(allowed.shape, -np.inf)
    grid[idx_y, idx_x] = best
    keep = _strict_local_maxima(grid) & (grid > threshold)
    out = []
    for gy, gx in np.argwhere(keep):
        k = np.flatnonzero((idx_y == gy) & (idx_x == gx))[0]
        px = x0 + gx + tw // 2
        py = y0 + gy + th // 2
        out.append(ScoredCandidate(BBox(float(px), float(py), float(tw), float(th)),
                                   float(grid[gy, gx]), best_variant=int(best_var[k])))
    return out


def _box_counts(mask: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Count of set pixels in every th x tw window, via an integral image."""
    integral = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0), axis=1, out=integral[1:, 1:])
    return (integral[th:, tw:] - integral[:-th, tw:]
            - integral[th:, :-tw] + integral[:-th, :-tw])


def _strict_local_maxima(scores: np.ndarray) -> np.ndarray:
    padded = np.pad(scores, 1, mode="constant", constant_values=-np.inf)
    center = padded[1:-1, 1:-1]
    keep = np.ones_like(scores, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            keep &= center > padded[1 + dy:padded.shape[0] - 1 + dy,
                                    1 + dx:padded.shape[1] - 1 + dx]
    return keep


def non_max_suppression(candidates: list, radius: float) -> list:
    """Greedy suppression: best score first, then smaller cx, then smaller cy."""
    pending = sorted(candidates, key=lambda c: (-c.score, c.box.cx, c.box.cy))
    kept: list = []
    r2 = radius * radius
    for cand in pending:
        if any((cand.box.cx - k.box.cx) ** 2 + (cand.box.cy - k.box.cy) ** 2 <= r2
               for k in kept):
            continue
        kept.append(cand)
    return kept
