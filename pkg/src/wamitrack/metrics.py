"""CLEAR-style evaluation of predicted tracks against ground truth.

Per frame, predictions and ground truth are matched greedily by ascending
center distance among pairs where either box contains the other's center.
Identity errors are counted from the matched sequences: a swap is a
predicted track whose ground-truth identity changes between its own
consecutive matched frames; a break is a ground-truth track whose matched
predicted identity changes between its consecutive matched frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import EmptyGroundTruth, EmptyOverlap
from .types import center_distance, centers_match


@dataclass(frozen=True)
class MetricsReport:
    recall: float
    precision: float
    fp_per_frame: float
    fp_per_gt: float
    moda: float
    swaps_per_track: float
    breaks_per_track: float
    mota: float
    gt_total: int
    pred_total: int
    matched: int
    false_positives: int
    false_negatives: int
    swaps: int
    breaks: int
    frame_count: int
    gt_track_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(gt_tracks: list, pred_tracks: list) -> MetricsReport:
    gt_total = sum(len(tr.observations) for tr in gt_tracks)
    if gt_total == 0:
        raise EmptyGroundTruth("ground truth contains no observations")
    pred_total = sum(len(tr.observations) for tr in pred_tracks)

    gt_frames = set()
    for tr in gt_tracks:
        gt_frames.update(o.frame_index for o in tr.observations)
    pred_frames = set()
    for tr in pred_tracks:
        pred_frames.update(o.frame_index for o in tr.observations)
    if pred_total and not (gt_frames & pred_frames):
        raise EmptyOverlap("ground truth and predictions cover disjoint frames")
    frames = gt_frames | pred_frames

    matched = 0
    fp = 0
    fn = 0
    gt_matches: dict[int, list] = {tr.id: [] for tr in gt_tracks}
    pred_matches: dict[int, list] = {tr.id: [] for tr in pred_tracks}

    for t in sorted(frames):
        gt_items = [(tr.id, tr.observation_at(t).box) for tr in gt_tracks
                    if tr.observation_at(t) is not None]
        pred_items = [(tr.id, tr.observation_at(t).box) for tr in pred_tracks
                      if tr.observation_at(t) is not None]
        pairs = []
        for gi, (gid, gbox) in enumerate(gt_items):
            for pi, (pid, pbox) in enumerate(pred_items):
                if centers_match(gbox, pbox):
                    pairs.append((center_distance(gbox, pbox), gid, pid, gi, pi))
        pairs.sort(key=lambda p: (p[0], p[1], p[2]))
        taken_gt = set()
        taken_pred = set()
        for dist, gid, pid, gi, pi in pairs:
            if gi in taken_gt or pi in taken_pred:
                continue
            taken_gt.add(gi)
            taken_pred.add(pi)
            matched += 1
            gt_matches[gid].append((t, pid))
            pred_matches[pid].append((t, gid))
        fn += len(gt_items) - len(taken_gt)
        fp += len(pred_items) - len(taken_pred)

    swaps = sum(_transitions(seq) for seq in pred_matches.values())
    breaks = sum(_transitions(seq) for seq in gt_matches.values())

    n_frames = max(len(frames), 1)
    n_gt_tracks = max(len(gt_tracks), 1)
    return MetricsReport(
        recall=matched / gt_total,
        precision=matched / pred_total if pred_total else 0.0,
        fp_per_frame=fp / n_frames,
        fp_per_gt=fp / gt_total,
        moda=1.0 - (fn + fp) / gt_total,
        swaps_per_track=swaps / n_gt_tracks,
        breaks_per_track=breaks / n_gt_tracks,
        mota=1.0 - (fn + fp + swaps) / gt_total,
        gt_total=gt_total, pred_total=pred_total, matched=matched,
        false_positives=fp, false_negatives=fn, swaps=swaps, breaks=breaks,
        frame_count=len(frames), gt_track_count=len(gt_tracks))


def _transitions(seq: list) -> int:
    """Identity changes along one track's matched (frame, other-id) pairs."""
    ordered = sorted(seq)
    return sum(1 for a, b in zip(ordered, ordered[1:]) if a[1] != b[1])


_COLUMNS = ("Recall", "Precision", "FP/Frame", "FP/GT", "MODA",
            "Swaps/Track", "Breaks/Track", "MOTA")


def format_report(report: MetricsReport) -> str:
    values = (report.recall, report.precision, report.fp_per_frame,
              report.fp_per_gt, report.moda, report.swaps_per_track,
              report.breaks_per_track, report.mota)
    width = max(len(c) for c in _COLUMNS) + 2
    header = "".join(c.rjust(width) for c in _COLUMNS)
    row = "".join(f"{v:.4f}".rjust(width) for v in values)
    return header + "\n" + row
