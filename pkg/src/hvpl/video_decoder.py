"""Video context decoder, task heads and inference-time prompt concatenation.

Frame prompt features are flattened frame-major into N_v = N_f * L_p^f rows,
passed through the GSS stack and then through MSA layers whose queries are
the task's video prompt rows. Each task owns a classifier (with its own
no-object column) and a mask head; at inference the prompts of all learned
tasks are concatenated and every video-prompt row is routed to the heads of
the task it came from.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .errors import ShapeError, StateError
from .gtssm import gss_layer, init_gss_weights

MSA_KEYS = ("w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2")
HEAD_KEYS = ("gamma_c", "m_w1", "m_b1", "m_w2", "m_b2")


def init_decoder_weights(rng: np.random.Generator, d: int, q: int, l_g: int, l_m: int) -> dict:
    """Flat name -> array map: ``gss{i}.<key>`` for GSS layers, ``msa{i}.<key>`` for MSA layers."""
    out = {}
    for i in range(l_g):
        for k, v in init_gss_weights(rng, d, q).items():
            out[f"gss{i}.{k}"] = v
    s = 1.0 / np.sqrt(d)
    for i in range(l_m):
        for k in ("w_q", "w_k", "w_v", "w_o", "w1", "w2"):
            out[f"msa{i}.{k}"] = rng.normal(0.0, s, (d, d))
        out[f"msa{i}.b1"] = np.zeros(d)
        out[f"msa{i}.b2"] = np.zeros(d)
    return out


def layer_weights(weights: dict, prefix: str) -> dict:
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in weights.items() if k.startswith(prefix + ".")}


def count_layers(weights: dict, kind: str) -> int:
    return len({k.split(".")[0] for k in weights if k.startswith(kind)})


def init_heads(rng: np.random.Generator, d: int, n_classes: int) -> dict:
    s = 1.0 / np.sqrt(d)
    return {
        "gamma_c": rng.normal(0.0, s, (d, n_classes + 1)),
        "m_w1": rng.normal(0.0, s, (d, d)),
        "m_b1": np.zeros(d),
        "m_w2": rng.normal(0.0, s, (d, d)),
        "m_b2": np.zeros(d),
    }


def msa_layer(p_vid, f_prev, w: dict, n_heads: int, layernorm: bool = False) -> ad.Node:
    """Video prompts attend to the previous features; residual on the prompt, then residual MLP.

    Per head: softmax(P W_q (F W_k)^T / sqrt(d)) (F W_v). The heads are
    concatenated, mapped by W_o and added to P; the MLP output is added on top.
    """
    p, f = ad._lift(p_vid), ad._lift(f_prev)
    w = {k: ad._lift(v) for k, v in w.items()}
    d_model = w["w_q"].value.shape[0]
    if p.value.shape[-1] != d_model or f.value.shape[-1] != d_model:
        raise ShapeError(f"msa_layer: prompt {p.value.shape}, features {f.value.shape}, D={d_model}")
    if d_model % n_heads:
        raise ShapeError(f"D={d_model} is not divisible by {n_heads} heads")
    d = d_model // n_heads
    q = ad.matmul(p, w["w_q"])
    k = ad.matmul(f, w["w_k"])
    v = ad.matmul(f, w["w_v"])
    heads = []
    for h in range(n_heads):
        hs = slice(h * d, (h + 1) * d)
        qh, kh, vh = ad.take(q, hs, axis=-1), ad.take(k, hs, axis=-1), ad.take(v, hs, axis=-1)
        att = ad.softmax_rows(ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(d)))
        heads.append(ad.matmul(att, vh))
    msa = ad.add(p, ad.matmul(ad.concat(heads, axis=-1), w["w_o"]))
    if layernorm:
        msa = ad.layer_norm(msa)
    hidden = ad.silu(ad.linear(msa, w["w1"], w["b1"]))
    out = ad.add(msa, ad.linear(hidden, w["w2"], w["b2"]))
    return ad.layer_norm(out) if layernorm else out


def decode_video(z_frm, p_vid, weights: dict, n_heads: int, phi: int, *, use_gss: bool = True,
                 use_msa: bool = True, gss_residual: bool = False, msa_layernorm: bool = False) -> ad.Node:
    """F_vid from frame prompt features (N_f, L_p^f, D) and the video prompt (L_p^v, D).

    Without the MSA stack there is no video prompt; the GSS output is averaged
    over frames and each frame-prompt position becomes one output row.
    """
    z = ad._lift(z_frm)
    if z.value.ndim != 3:
        raise ShapeError(f"frame prompt features must be (N_f, L, D), got {z.value.shape}")
    n_f, length, d = z.value.shape
    x = ad.reshape(z, (n_f * length, d))
    if use_gss:
        for i in range(count_layers(weights, "gss")):
            x = gss_layer(x, layer_weights(weights, f"gss{i}"), phi, residual=gss_residual)
    if not use_msa:
        return ad.mean_axis(ad.reshape(x, (n_f, length, d)), axis=0)
    p = ad._lift(p_vid)
    if p.value.shape[-1] != d:
        raise ShapeError(f"video prompt {p.value.shape} vs feature width {d}")
    f = x
    n_m = count_layers(weights, "msa")
    if n_m == 0:
        return p
    for i in range(n_m):
        f = msa_layer(p, f, layer_weights(weights, f"msa{i}"), n_heads, msa_layernorm)
    return f


def classify_logits(f_vid, heads: dict) -> ad.Node:
    return ad.matmul(f_vid, heads["gamma_c"])


def classify(f_vid, heads: dict) -> ad.Node:
    """Row-wise class distribution over the task's classes plus no-object (last column)."""
    return ad.softmax_rows(classify_logits(f_vid, heads))


def mask_embedding(f_vid, heads: dict) -> ad.Node:
    hidden = ad.silu(ad.linear(f_vid, heads["m_w1"], heads["m_b1"]))
    return ad.linear(hidden, heads["m_w2"], heads["m_b2"])


def predict_masks(f_vid, heads: dict, f_out: np.ndarray) -> ad.Node:
    """Mask logits (L, N_f * H * W): inner product of each pixel embedding with each mask embedding."""
    f_out = np.asarray(f_out)
    if f_out.ndim != 3:
        raise ShapeError(f"pixel embeddings must be (N_f, HW, D), got {f_out.shape}")
    e = mask_embedding(f_vid, heads)
    if e.value.shape[-1] != f_out.shape[-1]:
        raise ShapeError(f"mask embedding width {e.value.shape[-1]} vs pixel width {f_out.shape[-1]}")
    return ad.matmul(e, f_out.reshape(-1, f_out.shape[-1]).T)


def binarize(mask_logits: np.ndarray) -> np.ndarray:
    """sigmoid(logit) > 0.5, i.e. logit > 0."""
    return mask_logits > 0.0


@dataclass
class Route:
    task: int
    rows: slice  # rows of the concatenated video prompt (F_vid) owned by the task
    frame_rows: slice  # rows of the concatenated frame prompt
    labels: list  # global class id of each classifier column except no-object


def concat_for_inference(prompts: dict, heads: dict, labels: dict, t: int, video_prompt: bool = True):
    """Stack the prompts of tasks 1..t and record which output rows belong to which task.

    Returns ``(p_frm_star, p_vid_star, routes)``. Without video prompts the
    output rows are the frame-prompt positions.
    """
    frm, vid, routes = [], [], []
    r_f = r_v = 0
    for task in range(1, t + 1):
        if task not in prompts or task not in heads:
            raise StateError(f"task {task} has no trained prompt or head")
        pf, pv = prompts[task]["p_frm"], prompts[task]["p_vid"]
        frm.append(pf)
        vid.append(pv)
        fs = slice(r_f, r_f + len(pf))
        n_rows = len(pv) if video_prompt else len(pf)
        vs = slice(r_v, r_v + n_rows)
        routes.append(Route(task, vs, fs, list(labels[task])))
        r_f += len(pf)
        r_v += n_rows
    return np.vstack(frm), np.vstack(vid), routes


@dataclass
class VideoPredictions:
    """Per output row: task, global class id, confidence, class distribution and mask logits."""

    task: np.ndarray  # (R,)
    class_id: np.ndarray  # (R,) global id of the most likely real class
    confidence: np.ndarray  # (R,) max probability over real classes
    probs: list  # per row, distribution over that task's classes + no-object
    mask_logits: np.ndarray  # (R, N_f, H, W)

    @property
    def masks(self) -> np.ndarray:
        return binarize(self.mask_logits)


def route_predictions(f_vid: np.ndarray, heads: dict, routes: list, f_out: np.ndarray,
                      frame_shape) -> VideoPredictions:
    tasks, cls, conf, probs, logits = [], [], [], [], []
    for r in routes:
        rows = f_vid[r.rows]
        p = classify(rows, heads[r.task]).value
        m = predict_masks(rows, heads[r.task], f_out).value
        real = p[:, :-1]
        best = real.argmax(axis=1)
        tasks.extend([r.task] * len(rows))
        cls.extend(r.labels[i] for i in best)
        conf.extend(real[np.arange(len(rows)), best])
        probs.extend(list(p))
        logits.append(m.reshape((len(rows),) + tuple(frame_shape)))
    return VideoPredictions(np.array(tasks), np.array(cls), np.array(conf), probs,
                            np.concatenate(logits) if logits else np.zeros((0,) + tuple(frame_shape)))
