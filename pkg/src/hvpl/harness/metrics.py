"""Video-level AP / AR1 and the forgetting rates FAP / FAR1."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = np.round(np.arange(0.50, 0.951, 0.05), 2)


@dataclass
class Detection:
    video: int
    class_id: int
    score: float
    mask: np.ndarray  # (N_f, H, W) bool


@dataclass
class GroundTruth:
    video: int
    class_id: int
    mask: np.ndarray


def st_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Spatio-temporal IoU: intersection and union summed over all frames."""
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def precision_envelope_area(tp: np.ndarray, n_gt: int) -> float:
    """Area under the monotone (all-point) precision envelope over recall."""
    if n_gt == 0:
        return float("nan")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * env))


def _greedy_tp(dets, gts_by_video, ious, thr):
    used = {v: np.zeros(len(g), dtype=bool) for v, g in gts_by_video.items()}
    tp = np.zeros(len(dets))
    for i, det in enumerate(dets):
        cand = ious[i]
        if cand is None or len(cand) == 0:
            continue
        free = np.where(used[det.video], -1.0, cand)
        j = int(np.argmax(free))
        if free[j] >= thr:
            used[det.video][j] = True
            tp[i] = 1.0
    return tp


def class_scores(dets: list[Detection], gts: list[GroundTruth], thresholds=IOU_THRESHOLDS):
    """AP per threshold for one class; detections and GT must already be filtered to the class."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    dets = [dets[i] for i in order]
    gts_by_video: dict[int, list[GroundTruth]] = {}
    for g in gts:
        gts_by_video.setdefault(g.video, []).append(g)
    ious = [np.array([st_iou(d.mask, g.mask) for g in gts_by_video.get(d.video, [])]) for d in dets]
    return {float(thr): precision_envelope_area(_greedy_tp(dets, gts_by_video, ious, thr), len(gts))
            for thr in thresholds}


def class_recall_at_1(dets: list[Detection], gts: list[GroundTruth], thresholds=IOU_THRESHOLDS) -> float:
    """Recall averaged over thresholds when each video keeps only its top-scoring detection.

    A single detection recovers at most one GT instance, so a video with two
    instances of the class can contribute at most one hit.
    """
    if not gts:
        return float("nan")
    top: dict[int, Detection] = {}
    for d in dets:
        if d.video not in top or d.score > top[d.video].score:
            top[d.video] = d
    best: dict[int, float] = {}
    for g in gts:
        d = top.get(g.video)
        if d is not None:
            best[g.video] = max(best.get(g.video, 0.0), st_iou(d.mask, g.mask))
    recalls = [sum(iou >= thr for iou in best.values()) / len(gts) for thr in thresholds]
    return float(np.mean(recalls))


@dataclass
class ClassMetrics:
    ap: float
    ap50: float
    ap75: float
    ar1: float


def evaluate_detections(dets: list[Detection], gts: list[GroundTruth], classes) -> dict[int, ClassMetrics]:
    out = {}
    for c in classes:
        dc = [d for d in dets if d.class_id == c]
        gc = [g for g in gts if g.class_id == c]
        if not gc:
            continue
        per_thr = class_scores(dc, gc)
        out[int(c)] = ClassMetrics(
            ap=float(np.mean(list(per_thr.values()))),
            ap50=per_thr[0.5],
            ap75=per_thr[0.75],
            ar1=class_recall_at_1(dc, gc),
        )
    return out


# ---------------------------------------------------------------------------
# forgetting


@dataclass
class ForgettingResult:
    value: float | None
    excluded: list[int] = field(default_factory=list)  # classes whose first-learned score was 0


def compute_fap(history: dict, learned_at: dict, final_t: int) -> ForgettingResult:
    """Forgetting rate over the classes of tasks 1..T-1.

    ``history[k][t]`` is the score of class k evaluated after task t and
    ``learned_at[k]`` the task that introduced k. For each old task t the
    relative drops (A_k^t - A_k^T) / A_k^t of its classes are summed and
    divided by T - t; the task sums are added and divided by the number of
    old classes. Classes with A_k^t = 0 are left out and listed in
    ``excluded``. Returns ``value=None`` when there are no old classes.
    """
    by_task: dict[int, list[int]] = {}
    for k, t in learned_at.items():
        if t < final_t:
            by_task.setdefault(t, []).append(k)
    total, counted, excluded = 0.0, 0, []
    for t in sorted(by_task):
        inner = 0.0
        for k in sorted(by_task[t]):
            first = history[k][t]
            if first == 0:
                excluded.append(k)
                continue
            inner += (first - history[k][final_t]) / first
            counted += 1
        total += inner / (final_t - t)
    if counted == 0:
        return ForgettingResult(None, excluded)
    return ForgettingResult(total / counted, excluded)


def compute_far(history: dict, learned_at: dict, final_t: int) -> ForgettingResult:
    """Same formula as :func:`compute_fap` applied to AR1 histories."""
    return compute_fap(history, learned_at, final_t)
