"""Local context tracking: per-target hypothesis sampling and selection.

Each active target gets candidate boxes from two flow-driven routes — a
vote-gated template scan around the motion-predicted center (dense route)
and the median displacement of forward-backward-validated point tracks
inside the previous box (sparse route). Candidates are scored by appearance
against the target's stable template and by motion smoothness, then the
winner is chosen on a star graph per target: the target's own score plus,
for every co-moving neighbor, the best jointly-consistent neighbor
candidate under a structural term that penalizes deformation of the
neighbor offset along and across the travel direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .errors import EmptyTargetSet, OutOfFrame, RegionTooSmall
from .flow import FlowField, VotingMap, sparse_flow_fb
from .matching import best_variant_score, non_max_suppression, scan_variants
from .types import BBox, GrayFrame, Observation, SOURCE_LCT, Track, crop_patch, iround


@dataclass(frozen=True)
class Hypothesis:
    box: BBox
    appearance: float  # best-variant NCC against the stable template
    route: str         # "dense" or "sparse"

    @property
    def center(self) -> tuple:
        return (self.box.cx, self.box.cy)


@dataclass(frozen=True)
class LctResult:
    track_id: int
    observation: Observation | None
    appearance: float = 0.0
    n_candidates: int = 0

    @property
    def hit(self) -> bool:
        return self.observation is not None


def predicted_center(track: Track) -> tuple:
    vx, vy = track.velocity_near(track.last_frame)
    box = track.last_box
    return (box.cx + vx, box.cy + vy)


def sample_dense(track: Track, cur: GrayFrame, votes: VotingMap,
                 cfg: PipelineConfig) -> list:
    """Template-scan candidates inside the search window, gated by votes."""
    if track.stable_template is None:
        return []
    pcx, pcy = predicted_center(track)
    region = BBox(pcx, pcy, cfg.dense_search_window, cfg.dense_search_window)
    need = max(1.0, track.last_box.area * cfg.vote_fraction)
    try:
        cands = scan_variants(cur, track.stable_template, region,
                              threshold=cfg.ncc_threshold, votes=votes.votes,
                              min_votes=need)
    except RegionTooSmall:
        return []
    radius = cfg.nms_radius if cfg.nms_radius > 0 else track.stable_template.base.shape[1] / 2.0
    cands = non_max_suppression(cands, radius)
    # candidates carry the square matching support; observations keep the
    # target's own extent
    return [Hypothesis(box=track.last_box.moved_to(c.box.cx, c.box.cy),
                       appearance=c.score, route="dense") for c in cands]


def sample_sparse(track: Track, prev: GrayFrame, cur: GrayFrame,
                  cfg: PipelineConfig) -> list:
    """One candidate at the last box shifted by the median valid point flow."""
    if track.stable_template is None:
        return []
    box = track.last_box
    w = max(1, iround(box.w))
    h = max(1, iround(box.h))
    x0 = iround(box.cx) - w // 2
    y0 = iround(box.cy) - h // 2
    xs = np.arange(max(x0, 0), min(x0 + w, prev.width))
    ys = np.arange(max(y0, 0), min(y0 + h, prev.height))
    if xs.size == 0 or ys.size == 0:
        return []
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    cors = sparse_flow_fb(prev, cur, points, window=cfg.sparse_window,
                          fb_threshold=cfg.fb_error_threshold)
    valid = [c for c in cors if c.valid]
    if len(valid) < max(1.0, box.area * cfg.sparse_valid_fraction):
        return []
    dx = float(np.median([c.tracked[0] - c.origin[0] for c in valid]))
    dy = float(np.median([c.tracked[1] - c.origin[1] for c in valid]))
    cand = box.shifted(dx, dy)
    try:
        patch = crop_patch(cur, BBox(cand.cx, cand.cy,
                                     track.stable_template.base.shape[1],
                                     track.stable_template.base.shape[0]))
    except OutOfFrame:
        return []
    score, _ = best_variant_score(patch, track.stable_template)
    if score <= cfg.ncc_threshold:
        return []
    return [Hypothesis(box=cand, appearance=score, route="sparse")]


def gather_hypotheses(track: Track, prev: GrayFrame, cur: GrayFrame,
                      flow: FlowField, votes: VotingMap,
                      cfg: PipelineConfig) -> list:
    hyps = sample_dense(track, cur, votes, cfg)
    hyps.extend(sample_sparse(track, prev, cur, cfg))
    return hyps


# ---------------------------------------------------------------------------
# motion-consistency scoring


def _gauss(delta: float, sigma: float) -> float:
    return math.exp(-(delta * delta) / (2.0 * sigma * sigma))


def _angle_between(a: tuple, b: tuple, floor: float) -> float:
    """Unsigned angle difference; directions of near-stationary vectors are
    meaningless, so those pairs compare as aligned."""
    ma = math.hypot(*a)
    mb = math.hypot(*b)
    if ma < floor or mb < floor:
        return 0.0
    d = math.atan2(a[1], a[0]) - math.atan2(b[1], b[0])
    while d > math.pi:
        d -= 2.0 * math.pi
    while d < -math.pi:
        d += 2.0 * math.pi
    return abs(d)


def _recent_velocities(track: Track) -> list:
    """Per-frame velocities of the last two observation pairs (newest last)."""
    obs = track.observations[-3:]
    out = []
    for a, b in zip(obs, obs[1:]):
        dt = b.frame_index - a.frame_index
        out.append(((b.box.cx - a.box.cx) / dt, (b.box.cy - a.box.cy) / dt))
    return out


def unary_score(track: Track, hyp: Hypothesis, cfg: PipelineConfig) -> float:
    """Appearance x velocity smoothness x acceleration smoothness in [0, 1]."""
    app = min(max(hyp.appearance, 0.0), 1.0)
    vels = _recent_velocities(track)
    box = track.last_box
    v_new = (hyp.box.cx - box.cx, hyp.box.cy - box.cy)
    vel_sim = 1.0
    acc_sim = 1.0
    if vels:
        v_prev = vels[-1]
        dm = abs(math.hypot(*v_new) - math.hypot(*v_prev))
        dth = _angle_between(v_new, v_prev, cfg.stopped_speed_floor)
        vel_sim = _gauss(dm, cfg.sigma_speed) * _gauss(dth, cfg.sigma_heading)
        if len(vels) >= 2:
            a_new = (v_new[0] - v_prev[0], v_new[1] - v_prev[1])
            a_prev = (v_prev[0] - vels[-2][0], v_prev[1] - vels[-2][1])
            dam = abs(math.hypot(*a_new) - math.hypot(*a_prev))
            dath = _angle_between(a_new, a_prev, cfg.stopped_speed_floor)
            acc_sim = _gauss(dam, cfg.sigma_accel) * _gauss(dath, cfg.sigma_accel_heading)
    return app * vel_sim * acc_sim


def reference_direction(track: Track, floor: float) -> tuple:
    """Unit travel direction: the most recent per-frame velocity at or above
    the stopped floor, else the +x axis."""
    obs = track.observations
    for i in range(len(obs) - 1, 0, -1):
        dt = obs[i].frame_index - obs[i - 1].frame_index
        vx = (obs[i].box.cx - obs[i - 1].box.cx) / dt
        vy = (obs[i].box.cy - obs[i - 1].box.cy) / dt
        m = math.hypot(vx, vy)
        if m >= floor:
            return (vx / m, vy / m)
    return (1.0, 0.0)


def binary_score(track_i: Track, track_j: Track, hyp_i: Hypothesis,
                 hyp_j: Hypothesis, cfg: PipelineConfig) -> float:
    """Structural agreement of the i->j offset before and after the move,
    decomposed along i's travel direction and its left normal."""
    bi, bj = track_i.last_box, track_j.last_box
    d_prev = (bj.cx - bi.cx, bj.cy - bi.cy)
    d_new = (hyp_j.box.cx - hyp_i.box.cx, hyp_j.box.cy - hyp_i.box.cy)
    dd = (d_new[0] - d_prev[0], d_new[1] - d_prev[1])
    ux, uy = reference_direction(track_i, cfg.stopped_speed_floor)
    along = abs(dd[0] * ux + dd[1] * uy)
    normal = abs(dd[0] * -uy + dd[1] * ux)
    return math.exp(-cfg.context_along_decay * along
                    - cfg.context_normal_decay * normal)


def motion_neighbors(targets: list, i: int, cfg: PipelineConfig) -> list:
    """Indices of co-moving context targets for targets[i].

    Neighbors must sit within the context radius at the previous frame;
    when both are moving, their headings must also agree within the angle
    threshold (stationary pairs always qualify — structure is exactly what
    survives a stop).
    """
    ti = targets[i]
    bi = ti.last_box
    vi = ti.velocity_near(ti.last_frame)
    mi = math.hypot(*vi)
    out = []
    limit = math.radians(cfg.neighbor_angle_threshold)
    for j, tj in enumerate(targets):
        if j == i:
            continue
        bj = tj.last_box
        if math.hypot(bj.cx - bi.cx, bj.cy - bi.cy) > cfg.neighbor_radius:
            continue
        vj = tj.velocity_near(tj.last_frame)
        mj = math.hypot(*vj)
        if (mi >= cfg.stopped_speed_floor and mj >= cfg.stopped_speed_floor
                and _angle_between(vi, vj, cfg.stopped_speed_floor) > limit):
            continue
        out.append(j)
    return out


def optimize_star(unary: np.ndarray, neighbor_unaries: list, binaries: list,
                  weight: float) -> tuple:
    """Pick the center node of a star graph.

    score(n) = weight*U[n] + sum_j max_m (weight*U_j[m] + B_j[n, m]);
    exact because, once the center is fixed, leaves decouple. Ties resolve
    to the lowest node index. Returns (index, score).
    """
    unary = np.asarray(unary, dtype=np.float64)
    if unary.size == 0:
        raise EmptyTargetSet("star graph has no center candidates")
    scores = weight * unary.copy()
    for nu, b in zip(neighbor_unaries, binaries):
        nu = np.asarray(nu, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        scores += np.max(weight * nu[None, :] + b, axis=1)
    best = int(np.argmax(scores))
    return best, float(scores[best])


def lct_step(tracks, prev: GrayFrame, cur: GrayFrame, flow: FlowField,
             votes: VotingMap, t: int, cfg: PipelineConfig,
             pool_map=None) -> list:
    """Run one frame of local context tracking for every eligible target.

    Eligible targets are active tracks observed at t-1. ``pool_map`` may be
    an order-preserving parallel map (hypothesis gathering dominates and is
    independent per target); selection is sequential and deterministic.
    """
    targets = [tr for tr in tracks if tr.active and tr.last_frame == t - 1]
    if not targets:
        return []

    def gather(track):
        return gather_hypotheses(track, prev, cur, flow, votes, cfg)

    if pool_map is not None:
        hyp_lists = list(pool_map(gather, targets))
    else:
        hyp_lists = [gather(tr) for tr in targets]

    unaries = [np.array([unary_score(tr, h, cfg) for h in hyps], dtype=np.float64)
               for tr, hyps in zip(targets, hyp_lists)]

    results = []
    for i, track in enumerate(targets):
        hyps = hyp_lists[i]
        if not hyps:
            results.append(LctResult(track_id=track.id, observation=None))
            continue
        neighbor_unaries = []
        binaries = []
        for j in motion_neighbors(targets, i, cfg):
            if not hyp_lists[j]:
                continue
            if cfg.context_enabled:
                b = np.array([[binary_score(track, targets[j], hi, hj, cfg)
                               for hj in hyp_lists[j]] for hi in hyps],
                             dtype=np.float64)
            else:
                # pairwise term forced to a constant: selection degrades to
                # the unary-only argmax while the graph shape stays intact
                b = np.ones((len(hyps), len(hyp_lists[j])), dtype=np.float64)
            neighbor_unaries.append(unaries[j])
            binaries.append(b)
        best, _ = optimize_star(unaries[i], neighbor_unaries, binaries,
                                cfg.unary_weight)
        chosen = hyps[best]
        results.append(LctResult(
            track_id=track.id,
            observation=Observation(t, chosen.box, SOURCE_LCT),
            appearance=chosen.appearance, n_candidates=len(hyps)))
    return results
