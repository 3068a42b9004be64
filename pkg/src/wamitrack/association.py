"""Tracklet-to-track association and fusion.

Two greedy passes link freshly extracted tracklets to the track pool:
an overlap pass (the tracklet shares frames with a track, scored by the
fraction of frame-wise center agreements) and a gap pass (the tracklet
starts after the track ended, scored by constant-velocity back-projection
distance). Both multiply in a velocity-agreement term and accept above a
single threshold. Gap association may revive a terminated track — a target
rediscovered within the allowed gap keeps its identity.

Fusion prefers confirmed detections: where the tracklet and the track both
have an observation, the detection replaces the flow-predicted one when it
correlates at least as well with the track's previous-frame appearance.
Appended segments get linear interpolation across any missing frames.
"""

from __future__ import annotations

import math

from .config import PipelineConfig
from .dbt import Tracklet
from .errors import GapTooLarge, NoOverlap, OutOfFrame
from .matching import ncc
from .types import (BBox, Observation, SOURCE_DETECTION, SOURCE_INTERPOLATED,
                    TemplateSet, Track, centers_match, crop_patch, template_box)


def associate_overlap(track: Track, tracklet: Tracklet,
                      cfg: PipelineConfig) -> float:
    """Score a tracklet against a track it shares frames with."""
    pairs = []
    for obs in tracklet.observations:
        mine = track.observation_at(obs.frame_index)
        if mine is not None:
            pairs.append((mine, obs))
    if not pairs:
        raise NoOverlap(
            f"track {track.id} shares no frames with tracklet "
            f"[{tracklet.start_frame}, {tracklet.end_frame}]")
    matches = sum(1 for mine, theirs in pairs if centers_match(mine.box, theirs.box))
    s_pos = matches / len(pairs)
    s_vel = _velocity_agreement(track.velocity_near(track.last_frame),
                                tracklet.velocity(), cfg)
    return s_pos * s_vel


def associate_gap(track: Track, tracklet: Tracklet,
                  cfg: PipelineConfig) -> float:
    """Score a tracklet that starts after the track's last observation."""
    missing = tracklet.start_frame - track.last_frame - 1
    if missing < 0:
        raise NoOverlap(
            f"tracklet starts at {tracklet.start_frame}, inside track "
            f"{track.id} which ends at {track.last_frame}")
    if missing > cfg.max_gap:
        raise GapTooLarge(f"{missing} missing frames exceeds {cfg.max_gap}")
    v = track.velocity_near(track.last_frame)
    dt = tracklet.start_frame - track.last_frame
    last = track.last_box
    pred = (last.cx + v[0] * dt, last.cy + v[1] * dt)
    first = tracklet.first_box
    dist = math.hypot(pred[0] - first.cx, pred[1] - first.cy)
    s_pos = math.exp(-cfg.gap_position_decay * dist)
    s_vel = _velocity_agreement(v, tracklet.velocity(), cfg)
    return s_pos * s_vel


def _velocity_agreement(va: tuple, vb: tuple, cfg: PipelineConfig) -> float:
    d2 = (va[0] - vb[0]) ** 2 + (va[1] - vb[1]) ** 2
    return math.exp(-d2 / (2.0 * cfg.sigma_velocity_match ** 2))


def resolve_associations(tracks, tracklets, cfg: PipelineConfig):
    """Greedy one-to-one assignment, overlap pass before gap pass.

    Returns ({tracklet_index: track}, [unassigned tracklet indices]).
    Tracks extended by the overlap pass are not offered to the gap pass in
    the same round.
    """
    assignments: dict[int, Track] = {}
    used_tracks = set()

    def run_pass(scorer, candidate_tracks):
        scored = []
        for track in candidate_tracks:
            for idx, tracklet in enumerate(tracklets):
                if idx in assignments:
                    continue
                try:
                    s = scorer(track, tracklet, cfg)
                except (NoOverlap, GapTooLarge):
                    continue
                if s > cfg.association_threshold:
                    scored.append((-s, track.id, idx, track))
        scored.sort()
        for _, _, idx, track in scored:
            if idx in assignments or track.id in used_tracks:
                continue
            assignments[idx] = track
            used_tracks.add(track.id)

    run_pass(associate_overlap, tracks)
    run_pass(associate_gap, [tr for tr in tracks if tr.id not in used_tracks])
    leftovers = [i for i in range(len(tracklets)) if i not in assignments]
    return assignments, leftovers


def fuse_and_update(track: Track, tracklet: Tracklet, frames: list,
                    cfg: PipelineConfig) -> None:
    """Merge an associated tracklet into its track, newest evidence last."""
    for obs in tracklet.observations:
        f = obs.frame_index
        if f <= track.last_frame:
            _reconcile(track, obs, frames)
        else:
            _append_with_fill(track, obs)
    track.consecutive_misses = 0
    track.active = True
    update_stable_template(track, frames, cfg)


def _reconcile(track: Track, det_obs: Observation, frames: list) -> None:
    """Detection vs existing observation at one frame: the detection wins
    unless the existing one correlates better with yesterday's appearance."""
    f = det_obs.frame_index
    existing = track.observation_at(f)
    if existing is None or existing.source == SOURCE_DETECTION:
        return
    winner = Observation(f, det_obs.box, SOURCE_DETECTION)
    prev = track.observation_at(f - 1)
    if prev is not None and 0 <= f - 1 < len(frames) and f < len(frames):
        try:
            ref = crop_patch(frames[f - 1], prev.box)
            probe = BBox(det_obs.box.cx, det_obs.box.cy,
                         prev.box.w, prev.box.h)
            held = BBox(existing.box.cx, existing.box.cy,
                        prev.box.w, prev.box.h)
            det_score = ncc(ref, crop_patch(frames[f], probe))
            lct_score = ncc(ref, crop_patch(frames[f], held))
            if lct_score > det_score:
                return
        except OutOfFrame:
            pass
    track.replace(winner)


def _append_with_fill(track: Track, obs: Observation) -> None:
    last = track.observations[-1]
    gap = obs.frame_index - last.frame_index
    for k in range(1, gap):
        a = k / gap
        box = BBox(last.box.cx + a * (obs.box.cx - last.box.cx),
                   last.box.cy + a * (obs.box.cy - last.box.cy),
                   last.box.w + a * (obs.box.w - last.box.w),
                   last.box.h + a * (obs.box.h - last.box.h))
        track.append(Observation(last.frame_index + k, box, SOURCE_INTERPOLATED))
    track.append(Observation(obs.frame_index, obs.box, SOURCE_DETECTION))


def update_stable_template(track: Track, frames: list,
                           cfg: PipelineConfig) -> None:
    """Refresh the template from the newest observation's appearance."""
    f = track.last_frame
    if not 0 <= f < len(frames):
        return
    try:
        patch = crop_patch(frames[f], template_box(track.last_box))
    except OutOfFrame:
        return
    track.stable_template = TemplateSet.from_base(patch, cfg.rotations)
