"""Per-frame tracking loop coupling the local context tracker with the
detection trees.

Frame order per step t: flow artifacts (only when some active track can
use them), local-context updates against the pool snapshot, tree growth
and extraction, association/fusion, then termination bookkeeping. With a
worker pool, per-target hypothesis gathering runs in parallel through an
order-preserving map, so results are byte-identical to the serial run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .association import fuse_and_update, resolve_associations
from .config import PipelineConfig
from .dbt import DbtForest
from .errors import OutOfFrame
from .fileio import write_flow_dump, write_pgm
from .flow import dense_flow, flow_gradient_voting_map
from .lct import lct_step
from .types import TemplateSet, TrackPool, crop_patch, template_box


def run_tracking(frames: list, detections: dict, cfg: PipelineConfig,
                 dbt_only: bool = False, workers: int = 0,
                 debug_dir=None) -> TrackPool:
    """Track through a frame sequence; returns the full track pool.

    ``detections`` maps frame index -> [Detection]. ``workers`` > 0 adds a
    thread pool for per-target sampling. ``debug_dir`` dumps the dense flow
    and voting map for every frame where they were computed.
    """
    pool = TrackPool()
    forest = DbtForest(cfg)
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
    pool_map = executor.map if executor is not None else None
    if debug_dir is not None:
        os.makedirs(debug_dir, exist_ok=True)
    try:
        for t in range(len(frames)):
            if not dbt_only and t > 0 and pool.active_tracks_ending_at(t - 1):
                flow = dense_flow(frames[t - 1], frames[t], cfg.flow_levels,
                                  cfg.flow_iterations, cfg.flow_window,
                                  cfg.flow_eig_floor)
                votes = flow_gradient_voting_map(flow, cfg.flow_grad_threshold)
                if debug_dir is not None:
                    write_flow_dump(os.path.join(debug_dir, f"flow_{t:06d}.flo2"),
                                    flow.u, flow.v)
                    write_pgm(os.path.join(debug_dir, f"votes_{t:06d}.pgm"),
                              votes.votes.astype("uint8") * 255)
                results = lct_step(pool.snapshot(), frames[t - 1], frames[t],
                                   flow, votes, t, cfg, pool_map=pool_map)
                for r in results:
                    if r.hit:
                        pool.tracks[r.track_id].append(r.observation)

            forest.grow(detections.get(t, []), frames[t], t)
            _absorb_tracklets(pool, forest.extract(t), frames, cfg)

            for track in pool.snapshot():
                if not track.active:
                    continue
                track.consecutive_misses = max(t - track.last_frame, 0)
                if track.consecutive_misses >= cfg.termination_misses:
                    track.active = False

        # flush trees still growing when the sequence ends
        _absorb_tracklets(pool, forest.extract(len(frames)), frames, cfg)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return pool


def _absorb_tracklets(pool: TrackPool, tracklets: list, frames: list,
                      cfg: PipelineConfig) -> None:
    if not tracklets:
        return
    assignments, leftovers = resolve_associations(pool.snapshot(), tracklets, cfg)
    for idx in sorted(assignments):
        fuse_and_update(assignments[idx], tracklets[idx], frames, cfg)
    for idx in leftovers:
        tracklet = tracklets[idx]
        track = pool.new_track(tracklet.observations)
        try:
            patch = crop_patch(frames[tracklet.start_frame],
                               template_box(tracklet.first_box))
            track.stable_template = TemplateSet.from_base(patch, cfg.rotations)
        except OutOfFrame:
            pass
