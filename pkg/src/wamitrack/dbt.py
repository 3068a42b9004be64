"""Detection-based tracking: layered detection trees over a sliding window.

Every unclaimed detection roots a tree. Each frame, detections attach to
the single best frontier node (previous-frame node anywhere in the forest)
under appearance and motion gates, so trees stay disjoint and deterministic.
Oversized detections — blobs whose area outgrows a candidate parent by the
merge factor — are treated as detector merge artifacts: instead of linking
the union blob, each affected parent continues through a synthetic
detection at its predicted position with its own box, which is what keeps
identities apart while two targets share one blob.

When a tree fills the sliding window its best path is committed as a
tracklet and the tree re-roots at the newest committed node, keeping the
target's frontier unbroken. A stalled tree can never grow again because
children only ever attach to previous-frame nodes, so it commits its best
path once and dies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import OutOfFrame
from .matching import ncc
from .types import (BBox, Detection, GrayFrame, Observation, Track,
                    center_distance, crop_patch)


@dataclass
class TreeNode:
    detection: Detection
    patch: np.ndarray           # appearance at creation, own box dims
    node_id: int
    parent: "TreeNode | None" = None
    children: list = field(default_factory=list)
    depth: int = 1
    log_score: float = 0.0      # sum of log edge scores from the root
    velocity: tuple | None = None  # center step from the parent, px/frame


@dataclass
class DetectionTree:
    tree_id: int
    root: TreeNode
    nodes_by_frame: dict = field(default_factory=dict)
    last_extended: int = 0

    def add(self, node: TreeNode) -> None:
        t = node.detection.frame_index
        self.nodes_by_frame.setdefault(t, []).append(node)
        self.last_extended = max(self.last_extended, t)

    @property
    def root_frame(self) -> int:
        return self.root.detection.frame_index

    def leaves(self) -> list:
        out = []
        for t in sorted(self.nodes_by_frame):
            out.extend(n for n in self.nodes_by_frame[t] if not n.children)
        return out


@dataclass(frozen=True)
class Tracklet:
    observations: tuple
    score: float
    tree_id: int

    @property
    def start_frame(self) -> int:
        return self.observations[0].frame_index

    @property
    def end_frame(self) -> int:
        return self.observations[-1].frame_index

    @property
    def first_box(self) -> BBox:
        return self.observations[0].box

    @property
    def last_box(self) -> BBox:
        return self.observations[-1].box

    def velocity(self) -> tuple:
        """Mean per-frame center displacement over the whole tracklet."""
        a, b = self.observations[0], self.observations[-1]
        dt = max(b.frame_index - a.frame_index, 1)
        return ((b.box.cx - a.box.cx) / dt, (b.box.cy - a.box.cy) / dt)

    def as_track(self, track_id: int) -> Track:
        return Track(id=track_id, observations=list(self.observations))


def _gauss(delta: float, sigma: float) -> float:
    return math.exp(-(delta * delta) / (2.0 * sigma * sigma))


def _chain_velocity(node: TreeNode, steps: int = 5) -> tuple:
    """Mean per-frame step over the node's most recent ancestry.

    Single-step velocities carry the full centroid jitter; averaging a few
    steps keeps predictions from drifting when a chain coasts without real
    detections.
    """
    vx = vy = 0.0
    n = 0
    cur = node
    while cur is not None and cur.velocity is not None and n < steps:
        vx += cur.velocity[0]
        vy += cur.velocity[1]
        n += 1
        cur = cur.parent
    if n == 0:
        return (0.0, 0.0)
    return (vx / n, vy / n)


def _angle_between(a: tuple, b: tuple, floor: float = 0.5) -> float:
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


class DbtForest:
    """All live detection trees plus growth/extraction bookkeeping."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.trees: list = []
        self._next_tree = 1
        self._next_node = 1

    # -- growth ------------------------------------------------------------

    def grow(self, detections: list, frame: GrayFrame, t: int) -> None:
        cfg = self.cfg
        frontier = []
        for tree in self.trees:
            for node in tree.nodes_by_frame.get(t - 1, []):
                frontier.append((tree, node))

        consumed = set()
        if cfg.split_merged_enabled:
            for di, det in enumerate(detections):
                parents = []
                for tree, node in frontier:
                    # A merge artifact is an oversized blob that an already
                    # moving parent predicts itself inside of; singletons
                    # without a velocity cannot claim one.
                    if node.velocity is None:
                        continue
                    if center_distance(node.detection.box, det.box) > cfg.gating_distance:
                        continue
                    if det.blob_area <= cfg.merge_size_factor * node.detection.blob_area:
                        continue
                    pb = node.detection.box
                    v = _chain_velocity(node)
                    if not det.box.contains(pb.cx + v[0], pb.cy + v[1]):
                        continue
                    parents.append((tree, node))
                if not parents:
                    continue
                consumed.add(di)
                for tree, node in parents:
                    self._attach_synthetic(tree, node, det, frame, t)

        # one best parent per detection keeps the forest disjoint
        proposals: dict[int, list] = {}
        for di, det in enumerate(detections):
            if di in consumed:
                continue
            best = None
            for tree, node in frontier:
                if center_distance(node.detection.box, det.box) > cfg.gating_distance:
                    continue
                eps = self._edge_score(node, det, frame)
                if eps is None:
                    continue
                key = (-eps, tree.tree_id, node.node_id)
                if best is None or key < best[0]:
                    best = (key, tree, node, eps)
            if best is not None:
                _, tree, node, eps = best
                proposals.setdefault(node.node_id, []).append((di, det, tree, node, eps))

        claimed = set()
        for node_id in sorted(proposals):
            entries = proposals[node_id]
            entries.sort(key=lambda e: (-e[4], e[0]))
            for di, det, tree, node, eps in entries[:self.cfg.max_children]:
                self._attach(tree, node, det, frame, eps)
                claimed.add(di)

        for di, det in enumerate(detections):
            if di in consumed or di in claimed:
                continue
            self._root_tree(det, frame)

    def _edge_score(self, parent: TreeNode, det: Detection,
                    frame: GrayFrame) -> float | None:
        """NCC x motion smoothness, or None when either gate rejects."""
        cfg = self.cfg
        pb = parent.detection.box
        # Detector centroids jitter by a pixel or so per frame, and two
        # independent draws plus raster rounding can land the best alignment
        # two pixels out; probe a 5x5 neighborhood and keep the
        # best-aligned correlation.
        appearance = None
        for dy in (-2, -1, 0, 1, 2):
            for dx in (-2, -1, 0, 1, 2):
                try:
                    patch = crop_patch(frame, BBox(det.box.cx + dx,
                                                   det.box.cy + dy,
                                                   parent.patch.shape[1],
                                                   parent.patch.shape[0]))
                except OutOfFrame:
                    continue
                score = ncc(parent.patch, patch)
                if appearance is None or score > appearance:
                    appearance = score
        if appearance is None or appearance <= cfg.edge_ncc_threshold:
            return None
        v = (det.box.cx - pb.cx, det.box.cy - pb.cy)
        if parent.velocity is None:
            # A parentless node has no motion history; rank its candidate
            # children under a zero-velocity prior so a same-spot successor
            # outbids an equally similar body a lane away.
            motion = _gauss(math.hypot(*v), cfg.sigma_speed)
        else:
            dm = abs(math.hypot(*v) - math.hypot(*parent.velocity))
            dth = _angle_between(v, parent.velocity, cfg.stopped_speed_floor)
            vel_sim = _gauss(dm, cfg.sigma_speed) * _gauss(dth, cfg.sigma_heading)
            accel = math.hypot(v[0] - parent.velocity[0], v[1] - parent.velocity[1])
            acc_sim = _gauss(accel, cfg.sigma_accel)
            motion = vel_sim * acc_sim
        if motion <= cfg.edge_motion_floor:
            return None
        return appearance * motion

    def _attach(self, tree: DetectionTree, parent: TreeNode, det: Detection,
                frame: GrayFrame, eps: float) -> None:
        patch = crop_patch(frame, det.box)
        node = TreeNode(detection=det, patch=patch, node_id=self._next_node,
                        parent=parent, depth=parent.depth + 1,
                        log_score=parent.log_score + math.log(eps),
                        velocity=(det.box.cx - parent.detection.box.cx,
                                  det.box.cy - parent.detection.box.cy))
        self._next_node += 1
        parent.children.append(node)
        tree.add(node)

    def _attach_synthetic(self, tree: DetectionTree, parent: TreeNode,
                          merged: Detection, frame: GrayFrame, t: int) -> None:
        """Continue a parent through a merged blob at its predicted center."""
        pb = parent.detection.box
        v = _chain_velocity(parent)
        cx = pb.cx + v[0]
        cy = pb.cy + v[1]
        mb = merged.box
        cx = min(max(cx, mb.cx - mb.w / 2), mb.cx + mb.w / 2)
        cy = min(max(cy, mb.cy - mb.h / 2), mb.cy + mb.h / 2)
        det = Detection(frame_index=t, box=BBox(cx, cy, pb.w, pb.h),
                        blob_area=parent.detection.blob_area, synthetic=True)
        eps = self._edge_score(parent, det, frame)
        if eps is not None:
            self._attach(tree, parent, det, frame, eps)

    def _root_tree(self, det: Detection, frame: GrayFrame) -> None:
        try:
            patch = crop_patch(frame, det.box)
        except OutOfFrame:
            return
        node = TreeNode(detection=det, patch=patch, node_id=self._next_node)
        self._next_node += 1
        tree = DetectionTree(tree_id=self._next_tree, root=node,
                             last_extended=det.frame_index)
        self._next_tree += 1
        tree.add(node)
        self.trees.append(tree)

    # -- extraction ----------------------------------------------------------

    def extract(self, t: int) -> list:
        """Commit finished window spans as tracklets (longest path first,
        best score on ties).

        A stalled tree can never grow again, so its best path is emitted
        (dropped as clutter when shorter than the minimum length) and the
        tree dies. A tree that fills the window emits its best path and
        slides: the newest committed node is kept as the new root, so the
        target keeps an unbroken frontier and consecutive tracklets share
        their boundary frame.
        """
        cfg = self.cfg
        tracklets = []
        keep = []
        for tree in self.trees:
            span = t - tree.root_frame + 1
            stalled = tree.last_extended < t
            if not stalled and span < cfg.dbt_window:
                keep.append(tree)
                continue
            path = self._best_path(tree)
            if len(path) >= cfg.min_tracklet_length:
                obs = tuple(Observation(n.detection.frame_index, n.detection.box)
                            for n in path)
                tracklets.append(Tracklet(observations=obs,
                                          score=path[-1].log_score,
                                          tree_id=tree.tree_id))
            if not stalled:
                # children only ever hang off previous-frame nodes, so the
                # best leaf of a just-filled window sits at frame t with no
                # children yet; it restarts the tree as a bare root.
                leaf = path[-1]
                leaf.parent = None
                leaf.depth = 1
                leaf.log_score = 0.0
                tree.root = leaf
                tree.nodes_by_frame = {leaf.detection.frame_index: [leaf]}
                tree.last_extended = leaf.detection.frame_index
                keep.append(tree)
        self.trees = keep
        tracklets.sort(key=lambda tr: tr.tree_id)
        return tracklets

    @staticmethod
    def _best_path(tree: DetectionTree) -> list:
        best = None
        for leaf in tree.leaves():
            key = (-leaf.depth, -leaf.log_score, leaf.node_id)
            if best is None or key < best[0]:
                best = (key, leaf)
        node = best[1]
        path = []
        while node is not None:
            path.append(node)
            node = node.parent
        path.reverse()
        return path
