"""Inference over concatenated prompts and per-class AP / AR1 evaluation."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..detector import transformer_decode
from ..errors import StateError
from ..video_decoder import Route, VideoPredictions, concat_for_inference, decode_video, route_predictions
from .metrics import Detection, GroundTruth, evaluate_detections
from .tasks import TaskSequence
from .training import HVPLState


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("HVPL_THREADS", "1")))
    except ValueError:
        return 1


def infer(state: HVPLState, video, feats, t: int) -> VideoPredictions:
    """Predictions for one video with the prompts and heads of tasks 1..t concatenated."""
    cfg = state.cfg
    use_msa = not cfg.disable_video_prompt
    p_frm, p_vid, routes = concat_for_inference(state.prompts, state.heads, state.labels, t, use_msa)
    return _decode(state, video, feats, p_frm, p_vid, routes)


def infer_single(state: HVPLState, video, feats, t: int) -> VideoPredictions:
    """Predictions from task t's prompts and heads alone, without concatenation."""
    cfg = state.cfg
    pr = state.prompts[t]
    n_rows = len(pr["p_frm"]) if cfg.disable_video_prompt else len(pr["p_vid"])
    route = Route(t, slice(0, n_rows), slice(0, len(pr["p_frm"])), list(state.labels[t]))
    return _decode(state, video, feats, pr["p_frm"], pr["p_vid"], [route])


def _decode(state, video, feats, p_frm, p_vid, routes) -> VideoPredictions:
    cfg = state.cfg
    z = transformer_decode(p_frm, feats, state.detector, state.encoded(video, feats)).value
    f_vid = decode_video(z, p_vid, state.decoder, cfg.n_heads, cfg.phi,
                         use_gss=not cfg.disable_gtssm, use_msa=not cfg.disable_video_prompt,
                         gss_residual=cfg.gss_residual, msa_layernorm=cfg.msa_layernorm).value
    return route_predictions(f_vid, state.heads, routes, feats.out, video.label_map.shape)


def evaluate(state: HVPLState, tasks: TaskSequence, t: int | None = None) -> dict:
    """Per-class metrics on the test videos of tasks 1..t after training through task t.

    Returns ``{class_id: ClassMetrics}``.
    """
    t = state.finished if t is None else t
    if state.finished == 0:
        raise StateError("evaluation requested before any task was trained")
    if t > state.finished:
        raise StateError(f"task {t} has not been trained yet")
    videos = [vf for task in range(1, t + 1) for vf in tasks[task].test]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        preds = list(pool.map(lambda vf: infer(state, vf[0], vf[1], t), videos))
    dets, gts = [], []
    for i, ((video, _), p) in enumerate(zip(videos, preds)):
        masks = p.masks
        for r in range(len(p.class_id)):
            dets.append(Detection(i, int(p.class_id[r]), float(p.confidence[r]), masks[r]))
        for inst in video.instances:
            gts.append(GroundTruth(i, inst.class_id, inst.masks))
    classes = sorted(c for task in range(1, t + 1) for c in tasks[task].labels)
    return evaluate_detections(dets, gts, classes)
