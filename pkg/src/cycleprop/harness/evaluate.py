"""Average precision at a 3D IoU threshold."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..boxes import IOU_3D_MODES
from .scene import Scene


class Interpolation(str, enum.Enum):
    CONTINUOUS = "continuous"
    ELEVEN_POINT = "eleven_point"


@dataclass
class EvalReport:
    iou_threshold: float
    interpolation: str
    per_class_ap: dict = field(default_factory=dict)  # class id -> AP, classes with ground truth only
    ap_base: Optional[float] = None
    ap_novel: Optional[float] = None
    ap_all: Optional[float] = None
    recall: Optional[float] = None
    num_gt: int = 0
    num_dets: int = 0
    num_tp: int = 0
    excluded_classes: list = field(default_factory=list)  # vocabulary ids with no ground truth

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["per_class_ap"] = {str(k): v for k, v in sorted(self.per_class_ap.items())}
        return rec


def average_precision(recall, precision, interpolation=Interpolation.CONTINUOUS) -> float:
    """Area under a precision-recall curve.

    ``continuous`` integrates the monotone precision envelope over every
    recall change; ``eleven_point`` averages the best precision reached at
    recall >= 0, 0.1, ..., 1.0.
    """
    rec = np.asarray(recall, dtype=float)
    prec = np.asarray(precision, dtype=float)
    if Interpolation(interpolation) is Interpolation.ELEVEN_POINT:
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = rec >= t - 1e-12
            total += prec[mask].max() if mask.any() else 0.0
        return total / 11.0
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def match_detections(dets, gts, iou_threshold, iou_fn) -> np.ndarray:
    """Greedy TP flags for one class in one scene.

    ``dets`` must already be in score order; each detection takes the
    highest-IoU ground truth not yet matched, if that IoU reaches the
    threshold.
    """
    taken = np.zeros(len(gts), dtype=bool)
    tp = np.zeros(len(dets), dtype=bool)
    for k, d in enumerate(dets):
        best, best_iou = -1, iou_threshold
        for g, box in enumerate(gts):
            if taken[g]:
                continue
            iou = iou_fn(d.box3d, box)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = g, iou
        if best >= 0:
            taken[best] = True
            tp[k] = True
    return tp


def evaluate(
    dets_per_scene: Sequence[Sequence],
    scenes: Sequence[Scene],
    iou_threshold: float = 0.25,
    interpolation=Interpolation.CONTINUOUS,
    iou_mode: str = "rotated",
) -> EvalReport:
    """Per-class AP over a set of scenes plus base/novel/all means.

    Detections are ranked by score across scenes; equal scores keep input
    order (scene order, then position in the scene's list). Classes without
    ground truth are excluded from the means and listed in the report.
    """
    if len(dets_per_scene) != len(scenes):
        raise ValueError(f"{len(dets_per_scene)} detection lists for {len(scenes)} scenes")
    interpolation = Interpolation(interpolation)
    iou_fn = IOU_3D_MODES[iou_mode]
    vocab_size = max((len(s.vocabulary) for s in scenes), default=0)
    novel = frozenset().union(*(s.novel for s in scenes)) if scenes else frozenset()
    for s_idx, dets in enumerate(dets_per_scene):
        for d in dets:
            if not 0 <= d.class_id < len(scenes[s_idx].vocabulary):
                raise ValueError(f"detection class {d.class_id} not in vocabulary of scene {scenes[s_idx].id}")

    report = EvalReport(iou_threshold, interpolation.value)
    report.num_dets = sum(len(d) for d in dets_per_scene)
    for c in range(vocab_size):
        gts = [[o.box3d for o in s.gt3d if o.class_id == c] for s in scenes]
        n_gt = sum(len(g) for g in gts)
        ranked = [(s_idx, d) for s_idx, dets in enumerate(dets_per_scene) for d in dets if d.class_id == c]
        ranked.sort(key=lambda t: -t[1].score)
        if n_gt == 0:
            report.excluded_classes.append(c)
            continue
        tp = np.zeros(len(ranked), dtype=bool)
        for s_idx in range(len(scenes)):
            rows = [k for k, (si, _) in enumerate(ranked) if si == s_idx]
            if rows:
                tp[rows] = match_detections([ranked[k][1] for k in rows], gts[s_idx], iou_threshold, iou_fn)
        ctp = np.cumsum(tp)
        recall = ctp / n_gt
        precision = ctp / np.arange(1, len(ranked) + 1)
        report.per_class_ap[c] = average_precision(recall, precision, interpolation)
        report.num_gt += n_gt
        report.num_tp += int(tp.sum())

    def mean(ids):
        vals = [report.per_class_ap[c] for c in ids if c in report.per_class_ap]
        return float(np.mean(vals)) if vals else None

    report.ap_all = mean(range(vocab_size))
    report.ap_base = mean(c for c in range(vocab_size) if c not in novel)
    report.ap_novel = mean(c for c in range(vocab_size) if c in novel)
    report.recall = report.num_tp / report.num_gt if report.num_gt else None
    return report
