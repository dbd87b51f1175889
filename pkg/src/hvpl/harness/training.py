"""Model state, forward pass and the per-task training loop.

Task 1 trains its prompts, its heads and the video decoder. From task 2 on
the video decoder is frozen; the video prompt and heads take plain Adam
steps while the frame-prompt gradient is first projected away from the
previous task's protected feature directions. After each task the feature
space of that task replaces the previous one.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..config import TrainConfig
from ..detector import EncodedVideo, FrameFeatures, FrozenDecoderWeights, SyntheticVideo, encode_features, \
    transformer_decode
from ..errors import StateError
from ..ogc import OrthoSpace, apply_projected_update, build_feature_space, make_space, project_gradient
from ..optim import Adam
from ..rng import stream
from ..video_decoder import classify_logits, decode_video, init_decoder_weights, init_heads, predict_masks
from .loss import set_prediction_loss
from .tasks import TaskSequence


@dataclass
class HVPLState:
    cfg: TrainConfig
    detector: FrozenDecoderWeights
    decoder: dict  # video decoder weights, frozen after task 1
    prompts: dict = field(default_factory=dict)  # task -> {"p_frm", "p_vid"}
    heads: dict = field(default_factory=dict)  # task -> head arrays
    labels: dict = field(default_factory=dict)  # task -> global class ids
    finished: int = 0
    space: OrthoSpace | None = None
    projection_calls: int = 0
    leak: list = field(default_factory=list)  # per projected step: ||dP* V1|| / max(1, ||dP*||)
    step_leak: list = field(default_factory=list)  # same for the applied frame-prompt change
    losses: dict = field(default_factory=dict)  # task -> per-epoch mean loss
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, cfg: TrainConfig) -> "HVPLState":
        detector = FrozenDecoderWeights.create(cfg.d, cfg.n_heads, cfg.l_d, cfg.seed)
        decoder = init_decoder_weights(stream(cfg.seed, "decoder"), cfg.d, cfg.q, cfg.l_g, cfg.l_m)
        return cls(cfg, detector, decoder)

    def encoded(self, video: SyntheticVideo, feats: FrameFeatures) -> EncodedVideo:
        """Frozen-detector keys and values, cached per video when enabled."""
        if not self.cfg.cache_features:
            return encode_features(feats, self.detector)
        hit = self._cache.get(video.id)
        if hit is None:
            hit = self._cache[video.id] = encode_features(feats, self.detector)
        return hit

    def snapshot(self) -> "HVPLState":
        """Deep copy without the feature cache."""
        cache, self._cache = self._cache, {}
        try:
            out = copy.deepcopy(self)
        finally:
            self._cache = cache
        out._cache = cache  # the detector is frozen, so the cache stays valid
        return out


def forward(state: HVPLState, p_frm, p_vid, decoder: dict, heads: dict, video: SyntheticVideo,
            feats: FrameFeatures):
    """Class logits (R, C+1) and mask logits (R, N_f*H*W) for one video and one task's prompts."""
    cfg = state.cfg
    z = transformer_decode(p_frm, feats, state.detector, state.encoded(video, feats))
    f_vid = decode_video(z, p_vid, decoder, cfg.n_heads, cfg.phi,
                         use_gss=not cfg.disable_gtssm, use_msa=not cfg.disable_video_prompt,
                         gss_residual=cfg.gss_residual, msa_layernorm=cfg.msa_layernorm)
    return classify_logits(f_vid, heads), predict_masks(f_vid, heads, feats.out)


def targets(video: SyntheticVideo, labels) -> tuple[list[int], np.ndarray]:
    """Task-local class indices and flattened instance masks."""
    local = {c: i for i, c in enumerate(labels)}
    classes = [local[inst.class_id] for inst in video.instances]
    masks = np.array([inst.masks.reshape(-1) for inst in video.instances], dtype=np.float64)
    return classes, masks.reshape(len(classes), -1)


def video_loss(state: HVPLState, t: int, video, feats, tape: ad.GradTape | None = None,
               params: dict | None = None) -> ad.Node:
    """Set-prediction loss of task t's model on one video.

    ``params`` overrides any of p_frm, p_vid, head arrays (``head.<key>``) or
    decoder arrays (``dec.<key>``); arrays registered on ``tape`` become
    trainable leaves.
    """
    params = params or {}

    def leaf(name, value):
        value = params.get(name, value)
        return tape.param(value, name) if tape is not None and name in params else value

    pr = state.prompts[t]
    p_frm = leaf("p_frm", pr["p_frm"])
    p_vid = leaf("p_vid", pr["p_vid"])
    heads = {k: leaf(f"head.{k}", v) for k, v in state.heads[t].items()}
    decoder = {k: leaf(f"dec.{k}", v) for k, v in state.decoder.items()}
    cls, masks = forward(state, p_frm, p_vid, decoder, heads, video, feats)
    gt_classes, gt_masks = targets(video, state.labels[t])
    return set_prediction_loss(cls, masks, gt_classes, gt_masks)


def trainable(state: HVPLState, t: int) -> dict:
    """Arrays updated while training task t."""
    out = {"p_frm": state.prompts[t]["p_frm"], "p_vid": state.prompts[t]["p_vid"]}
    out.update({f"head.{k}": v for k, v in state.heads[t].items()})
    if t == 1:
        out.update({f"dec.{k}": v for k, v in state.decoder.items()})
    return out


def _write_back(state: HVPLState, t: int, params: dict):
    state.prompts[t] = {"p_frm": params["p_frm"], "p_vid": params["p_vid"]}
    state.heads[t] = {k[5:]: v for k, v in params.items() if k.startswith("head.")}
    if t == 1:
        state.decoder = {k[4:]: v for k, v in params.items() if k.startswith("dec.")}


def init_task(state: HVPLState, t: int, labels):
    cfg = state.cfg
    lpf, lpv = cfg.prompt_lengths(t)
    rng = stream(cfg.seed, f"prompts/{t}")
    p_frm = rng.normal(0.0, 1.0, (lpf, cfg.d))
    p_vid = rng.normal(0.0, 1.0, (lpv, cfg.d))
    prev = state.prompts.get(t - 1)
    if cfg.frame_prompt_init == "inherit" and prev is not None and prev["p_frm"].shape == p_frm.shape:
        p_frm = prev["p_frm"].copy()
    state.prompts[t] = {"p_frm": p_frm, "p_vid": p_vid}
    state.heads[t] = init_heads(stream(cfg.seed, f"heads/{t}"), cfg.d, len(labels))
    state.labels[t] = list(labels)


def train_step(state: HVPLState, t: int, params: dict, batch, optimizer: Adam) -> tuple[dict, float]:
    """One optimizer step over a batch of (video, feats) pairs; returns new params and the mean loss."""
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    total = 0.0
    for video, feats in batch:
        tape = ad.GradTape()
        loss = video_loss(state, t, video, feats, tape, params)
        for k, g in tape.backward(loss).items():
            grads[k] += g
        total += float(loss.value)
    n = len(batch)
    new = {}
    for k, v in params.items():
        g = grads[k] / n
        if k == "p_frm" and t >= 2 and not state.cfg.disable_ogc:
            g = project_gradient(g, state.space)
            state.projection_calls += 1
            state.leak.append(float(np.linalg.norm(g @ state.space.v1) / max(1.0, np.linalg.norm(g))))
            basis = state.space.v0 if state.cfg.ogc_update == "subspace" else None
            new[k] = apply_projected_update(v, g, optimizer, t, name=k, basis=basis)
            step = new[k] - v
            state.step_leak.append(float(np.linalg.norm(step @ state.space.v1) / max(1.0, np.linalg.norm(step))))
        else:
            new[k] = optimizer.step(k, v, g)
    return new, total / n


def train_task(state: HVPLState, t: int, tasks: TaskSequence, store=None, epochs: int | None = None,
               log=None) -> HVPLState:
    """Train task t in place and build its feature space."""
    cfg = state.cfg
    if t != state.finished + 1:
        raise StateError(f"task {t} requested but {state.finished} task(s) are finished")
    if t >= 2 and state.space is None:
        raise StateError(f"no feature space of task {t - 1} is available")
    tasks.release_before(t)
    if store is not None:
        store.write_manifest(tasks)
        store.audit_rehearsal_free(tasks, t)
    task = tasks[t]
    init_task(state, t, task.labels)
    train = task.train
    optimizer = Adam(cfg.lr)
    params = trainable(state, t)
    history = []
    for epoch in range(epochs if epochs is not None else cfg.epochs):
        order = stream(cfg.seed, f"shuffle/{t}/{epoch}").permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            params, loss = train_step(state, t, params, batch, optimizer)
            _write_back(state, t, params)
            total += loss * len(batch)
        history.append(total / len(train))
        if log is not None:
            log(f"task {t} epoch {epoch + 1}: loss {history[-1]:.4f}")
    state.losses[t] = history
    finish_task(state, t, tasks, store)
    return state


def finish_task(state: HVPLState, t: int, tasks: TaskSequence, store=None):
    """Build O^t from task t's training videos and replace the previous space."""
    cfg = state.cfg
    task = tasks[t]
    b = cfg.sample_count(len(task.labels))
    o = build_feature_space(task.train, task.labels, state.prompts[t]["p_frm"], state.detector, b,
                            cfg.seed, task=t)
    state.space = make_space(o, cfg.xi, t, b, cfg.seed)
    state.finished = t
    if store is not None:
        store.save_space(state.space)
        store.save_state(state)
