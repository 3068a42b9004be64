"""Dense and sparse optical flow plus the flow-gradient voting map.

Dense flow is coarse-to-fine per-pixel Lucas-Kanade (box pyramid, small
integration window, fixed iteration count) — deterministic and accurate
enough to expose moving-blob boundaries at large displacements, which is
all the voting map needs. Sparse flow tracks individual points with a
single-level iterative LK and validates them with a forward-backward
round trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates, uniform_filter

from .errors import DimensionMismatch
from .types import GrayFrame

# Sobel responses scaled to derivative units (per-pixel flow difference)
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float32) / 8.0
_SOBEL_Y = _SOBEL_X.T


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement from the previous frame to the current one."""

    u: np.ndarray
    v: np.ndarray

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class VotingMap:
    """Binary raster marking pixels with a strong flow-gradient magnitude."""

    votes: np.ndarray  # bool, same shape as the flow field

    @property
    def width(self) -> int:
        return self.votes.shape[1]

    @property
    def height(self) -> int:
        return self.votes.shape[0]


@dataclass(frozen=True)
class Correspondence:
    origin: tuple
    tracked: tuple
    fb_error: float
    valid: bool


def dense_flow(prev: GrayFrame, cur: GrayFrame, levels: int = 3,
               iterations: int = 10, window: int = 5,
               eig_floor: float = 10.0) -> FlowField:
    """Coarse-to-fine LK flow between two frames of equal size.

    Pixels whose integration window is untextured (minimum structure-tensor
    eigenvalue below ``eig_floor``) keep zero flow instead of amplifying
    sensor noise into spurious motion.
    """
    if prev.pixels.shape != cur.pixels.shape:
        raise DimensionMismatch(
            f"frame sizes differ: {prev.pixels.shape} vs {cur.pixels.shape}")
    a = prev.pixels.astype(np.float32)
    b = cur.pixels.astype(np.float32)
    pyr_a = _pyramid(a, levels)
    pyr_b = _pyramid(b, levels)
    u = np.zeros_like(pyr_a[-1])
    v = np.zeros_like(pyr_a[-1])
    for lvl in range(len(pyr_a) - 1, -1, -1):
        al, bl = pyr_a[lvl], pyr_b[lvl]
        if u.shape != al.shape:
            u = _upsample2(u, al.shape) * 2.0
            v = _upsample2(v, al.shape) * 2.0
        u, v = _lk_refine(al, bl, u, v, iterations, window, eig_floor)
    return FlowField(u=u, v=v)


def _pyramid(img: np.ndarray, levels: int) -> list:
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        h, w = prev.shape
        if min(h, w) < 16:
            break
        he, we = h - h % 2, w - w % 2
        down = prev[:he, :we].reshape(he // 2, 2, we // 2, 2).mean(axis=(1, 3))
        pyr.append(down)
    return pyr


def _upsample2(field: np.ndarray, shape: tuple) -> np.ndarray:
    up = np.repeat(np.repeat(field, 2, axis=0), 2, axis=1)
    pad_y = shape[0] - up.shape[0]
    pad_x = shape[1] - up.shape[1]
    if pad_y > 0 or pad_x > 0:
        up = np.pad(up, ((0, max(pad_y, 0)), (0, max(pad_x, 0))), mode="edge")
    return up[:shape[0], :shape[1]]


def _lk_refine(a, b, u, v, iterations, window, eig_floor):
    gy, gx = np.gradient(a)
    sxx = uniform_filter(gx * gx, window)
    sxy = uniform_filter(gx * gy, window)
    syy = uniform_filter(gy * gy, window)
    det = sxx * syy - sxy * sxy
    trace = sxx + syy
    min_eig = 0.5 * (trace - np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy))
    solvable = (det > 1e-6) & (min_eig > eig_floor)
    if not solvable.any():
        return u, v
    safe_det = np.where(solvable, det, 1.0)
    ys, xs = np.mgrid[0:a.shape[0], 0:a.shape[1]].astype(np.float32)
    step_cap = float(window)
    for _ in range(iterations):
        warped = map_coordinates(b, [ys + v, xs + u], order=1, mode="nearest",
                                 output=np.float32)
        it = warped - a
        sxt = uniform_filter(gx * it, window)
        syt = uniform_filter(gy * it, window)
        du = -(syy * sxt - sxy * syt) / safe_det
        dv = -(sxx * syt - sxy * sxt) / safe_det
        du = np.clip(np.where(solvable, du, 0.0), -step_cap, step_cap)
        dv = np.clip(np.where(solvable, dv, 0.0), -step_cap, step_cap)
        u = u + du
        v = v + dv
        if max(float(np.abs(du).max()), float(np.abs(dv).max())) < 0.01:
            break
    return u, v


def flow_gradient_voting_map(flow: FlowField, grad_threshold: float = 1.0) -> VotingMap:
    """Threshold the combined Sobel gradient magnitude of both flow channels.

    A pixel votes when sqrt(Gx(u)^2 + Gy(u)^2 + Gx(v)^2 + Gy(v)^2) exceeds
    the threshold; Sobel responses are in derivative units (kernel / 8).
    Border pixels never vote.
    """
    mag2 = np.zeros_like(flow.u, dtype=np.float64)
    for channel in (flow.u, flow.v):
        ch = np.asarray(channel, dtype=np.float64)
        for kernel in (_SOBEL_X, _SOBEL_Y):
            resp = _convolve3x3(ch, kernel.astype(np.float64))
            mag2 += resp * resp
    votes = np.sqrt(mag2) > grad_threshold
    votes[0, :] = votes[-1, :] = False
    votes[:, 0] = votes[:, -1] = False
    return VotingMap(votes=votes)


def _convolve3x3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def sparse_flow_fb(prev: GrayFrame, cur: GrayFrame, points, window: int = 15,
                   fb_threshold: float = 1.0) -> list:
    """Track points prev->cur and back; valid iff both legs converge and the
    round-trip error stays within fb_threshold pixels.

    Points on untextured windows (near-singular structure tensor) are
    returned invalid rather than guessed.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return []
    a = prev.pixels.astype(np.float32)
    b = cur.pixels.astype(np.float32)
    fwd, ok_f = _lk_points(a, b, pts, window)
    tracked = pts + fwd
    bwd, ok_b = _lk_points(b, a, tracked, window)
    back = tracked + bwd
    fb_err = np.hypot(back[:, 0] - pts[:, 0], back[:, 1] - pts[:, 1])
    out = []
    for i in range(pts.shape[0]):
        valid = bool(ok_f[i] and ok_b[i] and fb_err[i] <= fb_threshold)
        out.append(Correspondence(origin=(float(pts[i, 0]), float(pts[i, 1])),
                                  tracked=(float(tracked[i, 0]), float(tracked[i, 1])),
                                  fb_error=float(fb_err[i]), valid=valid))
    return out


def _lk_points(a, b, pts, window, max_iter: int = 20, tol: float = 0.03,
               min_eig_per_px: float = 0.1):
    """Single-level iterative LK for a batch of points. Returns (flow, ok)."""
    n = pts.shape[0]
    r = window // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    offx = dx.ravel()[None, :]  # (1, window^2)
    offy = dy.ravel()[None, :]
    win_x = pts[:, 0:1] + offx
    win_y = pts[:, 1:2] + offy
    gy_img, gx_img = np.gradient(a)
    gx = _sample(gx_img, win_x, win_y)
    gy = _sample(gy_img, win_x, win_y)
    patch_a = _sample(a, win_x, win_y)
    gxx = (gx * gx).sum(axis=1)
    gxy = (gx * gy).sum(axis=1)
    gyy = (gy * gy).sum(axis=1)
    trace = gxx + gyy
    min_eig = 0.5 * (trace - np.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy))
    det = gxx * gyy - gxy * gxy
    ok = (min_eig > min_eig_per_px * window * window) & (det > 1e-9)
    safe_det = np.where(ok, det, 1.0)

    d = np.zeros((n, 2))
    converged = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        active = ok & ~converged
        if not active.any():
            break
        patch_b = _sample(b, win_x + d[:, 0:1], win_y + d[:, 1:2])
        resid = patch_b - patch_a
        bx = (gx * resid).sum(axis=1)
        by = (gy * resid).sum(axis=1)
        step_x = -(gyy * bx - gxy * by) / safe_det
        step_y = -(gxx * by - gxy * bx) / safe_det
        step_x = np.where(active, step_x, 0.0)
        step_y = np.where(active, step_y, 0.0)
        d[:, 0] += step_x
        d[:, 1] += step_y
        converged |= active & (np.hypot(step_x, step_y) < tol)
    h, w = a.shape
    inside = ((pts[:, 0] + d[:, 0] >= 0) & (pts[:, 0] + d[:, 0] <= w - 1)
              & (pts[:, 1] + d[:, 1] >= 0) & (pts[:, 1] + d[:, 1] <= h - 1))
    return d, ok & converged & inside


def _sample(img, xs, ys):
    """Bilinear sampling with edge clamping, batched over point windows."""
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    flat = img.ravel()
    stride = img.shape[1]
    i00 = flat[y0 * stride + x0]
    i01 = flat[y0 * stride + x1]
    i10 = flat[y1 * stride + x0]
    i11 = flat[y1 * stride + x1]
    top = i00 + (i01 - i00) * fx
    bottom = i10 + (i11 - i10) * fx
    return top + (bottom - top) * fy
