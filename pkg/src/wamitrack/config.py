"""Tracker configuration: every tunable with its default, file parsing, validation.

Config files are flat ``key = value`` lines with '#' comments. Unknown keys
are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import InvalidConfig
from .fileio import parse_keyvalue_file
from .types import ROTATION_ANGLES


@dataclass(frozen=True)
class PipelineConfig:
    # appearance gating
    ncc_threshold: float = 0.5           # acceptance score for every NCC gate
    rotations: tuple = ROTATION_ANGLES   # stable-template rotation variants, degrees
    # hypothesis sampling
    dense_search_window: int = 160       # square search window around the previous location
    sparse_window: int = 15              # LK window for slow/stopped targets
    vote_fraction: float = 0.25          # votes required inside a box, as fraction of blob area
    sparse_valid_fraction: float = 0.125  # valid correspondences required, fraction of blob area
    scan_stride: int = 1
    nms_radius: float = 0.0              # 0 = half the target box width
    flow_grad_threshold: float = 1.0     # voting-map gate on flow-gradient magnitude
    fb_error_threshold: float = 1.0      # forward-backward round-trip gate, pixels
    flow_levels: int = 3                 # dense-flow pyramid levels
    flow_iterations: int = 10            # LK iterations per pyramid level
    flow_window: int = 5                 # dense-flow integration window
    flow_eig_floor: float = 10.0         # min structure-tensor eigenvalue for solvable flow
    # context graph
    unary_weight: float = 3.0            # weight of per-node scores vs pairwise scores
    context_along_decay: float = 0.01    # decay along the motion direction
    context_normal_decay: float = 0.05   # decay along the left normal (stiffer)
    neighbor_radius: float = 50.0        # motion-neighbor search radius, pixels
    neighbor_angle_threshold: float = 45.0  # max heading difference for neighbors, degrees
    stopped_speed_floor: float = 0.5     # below this speed a heading is undefined, px/frame
    context_enabled: bool = True         # False forces every pairwise score to 1
    # motion-consistency kernels (velocity and acceleration)
    sigma_speed: float = 10.0
    sigma_heading: float = 0.7853981633974483      # pi/4 radians
    sigma_accel: float = 10.0
    sigma_accel_heading: float = 1.5707963267948966  # pi/2 radians
    # detection trees
    dbt_window: int = 8                  # sliding window length, frames
    gating_distance: float = 80.0        # max displacement between consecutive frames
    merge_size_factor: float = 1.5       # child/parent blob-area ratio flagging a merge
    split_merged_enabled: bool = True
    edge_ncc_threshold: float = 0.3      # below this no tree edge is created
    edge_motion_floor: float = 1e-4
    max_children: int = 5                # branching cap per node
    min_tracklet_length: int = 3
    # track association
    association_threshold: float = 0.6   # acceptance score for tracklet-track pairs
    gap_position_decay: float = 0.01     # exp decay on back-projection distance
    sigma_velocity_match: float = 10.0
    max_gap: int = 8                     # frames
    termination_misses: int = 8          # consecutive missed frames before a track goes inactive

    def validate(self) -> "PipelineConfig":
        checks = [
            (0.0 <= self.ncc_threshold <= 1.0, "ncc_threshold must be in [0, 1]"),
            (len(self.rotations) >= 1, "rotations must list at least one angle"),
            (0 in self.rotations, "rotations must include 0 degrees"),
            (self.dense_search_window >= 8, "dense_search_window too small"),
            (self.sparse_window >= 3 and self.sparse_window % 2 == 1,
             "sparse_window must be odd and >= 3"),
            (0.0 < self.vote_fraction <= 1.0, "vote_fraction must be in (0, 1]"),
            (0.0 < self.sparse_valid_fraction <= 1.0, "sparse_valid_fraction must be in (0, 1]"),
            (self.scan_stride >= 1, "scan_stride must be >= 1"),
            (self.nms_radius >= 0.0, "nms_radius must be >= 0"),
            (self.flow_grad_threshold > 0.0, "flow_grad_threshold must be positive"),
            (self.fb_error_threshold > 0.0, "fb_error_threshold must be positive"),
            (self.flow_levels >= 1, "flow_levels must be >= 1"),
            (self.flow_iterations >= 1, "flow_iterations must be >= 1"),
            (self.flow_window >= 3 and self.flow_window % 2 == 1,
             "flow_window must be odd and >= 3"),
            (self.flow_eig_floor >= 0.0, "flow_eig_floor must be >= 0"),
            (self.unary_weight > 0.0, "unary_weight must be positive"),
            (self.context_along_decay >= 0.0, "context_along_decay must be >= 0"),
            (self.context_normal_decay >= 0.0, "context_normal_decay must be >= 0"),
            (self.neighbor_radius > 0.0, "neighbor_radius must be positive"),
            (0.0 < self.neighbor_angle_threshold <= 180.0,
             "neighbor_angle_threshold must be in (0, 180]"),
            (self.stopped_speed_floor >= 0.0, "stopped_speed_floor must be >= 0"),
            (min(self.sigma_speed, self.sigma_heading, self.sigma_accel,
                 self.sigma_accel_heading, self.sigma_velocity_match) > 0.0,
             "kernel sigmas must be positive"),
            (self.dbt_window >= 2, "dbt_window must be >= 2"),
            (self.gating_distance > 0.0, "gating_distance must be positive"),
            (self.merge_size_factor > 1.0, "merge_size_factor must exceed 1"),
            (0.0 <= self.edge_ncc_threshold < 1.0, "edge_ncc_threshold must be in [0, 1)"),
            (self.edge_motion_floor >= 0.0, "edge_motion_floor must be >= 0"),
            (self.max_children >= 1, "max_children must be >= 1"),
            (self.min_tracklet_length >= 1, "min_tracklet_length must be >= 1"),
            (0.0 <= self.association_threshold <= 1.0,
             "association_threshold must be in [0, 1]"),
            (self.gap_position_decay > 0.0, "gap_position_decay must be positive"),
            (self.max_gap >= 1, "max_gap must be >= 1"),
            (self.termination_misses >= 1, "termination_misses must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfig(msg)
        return self

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs).validate()

    @classmethod
    def from_mapping(cls, mapping: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            if key not in known:
                raise InvalidConfig(f"unknown config key: {key}")
            values[key] = _parse_value(key, raw, getattr(cls, key))
        return cls(**values).validate()

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_mapping(parse_keyvalue_file(path))


def _parse_value(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(float(part)) for part in raw.split(",") if part.strip())
    except ValueError:
        raise InvalidConfig(f"config key {key}: cannot parse value {raw!r}")
    raise InvalidConfig(f"config key {key}: unsupported type")
