"""Frozen frame-level detector.

A seeded renderer stands in for the backbone and pixel decoder: every pixel
embedding is a fixed linear mix of its class prototype (or the background
prototype) plus Gaussian noise. A frozen Transformer decoder with random
weights turns frame prompts into per-frame prompt features by cross-attending
to the first-scale pixel features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .config import TrainConfig
from .errors import ShapeError, UsageError
from .rng import stream


@dataclass
class Instance:
    class_id: int
    masks: np.ndarray  # (N_f, H, W) bool, visible pixels only


@dataclass
class SyntheticVideo:
    id: str
    seed: int
    label_map: np.ndarray  # (N_f, H, W) instance index per pixel, -1 for background
    instances: list[Instance]

    @property
    def class_ids(self) -> list[int]:
        return [inst.class_id for inst in self.instances]

    @property
    def n_frames(self) -> int:
        return self.label_map.shape[0]


@dataclass
class FrameFeatures:
    """Per-frame pixel features. ``scales[s]`` is (N_f, H_s, W_s, D), finest first."""

    scales: list[np.ndarray]
    out: np.ndarray  # (N_f, H*W, D) full-resolution per-pixel embedding

    @property
    def first(self) -> np.ndarray:
        """First-scale features flattened to (N_f, H_1 * W_1, D)."""
        f = self.scales[0]
        return f.reshape(f.shape[0], -1, f.shape[-1])

    @property
    def n_scales(self) -> int:
        return len(self.scales)


@dataclass
class SyntheticWorld:
    """Everything the renderer keeps fixed: prototypes, background and the mixing map."""

    prototypes: np.ndarray  # (n_classes, D)
    background: np.ndarray  # (D,)
    mix: np.ndarray  # (D, D)

    @classmethod
    def create(cls, n_classes: int, d: int, seed: int) -> "SyntheticWorld":
        rng = stream(seed, "prototypes")
        return cls(
            prototypes=rng.normal(0.0, 1.0, (n_classes, d)),
            background=rng.normal(0.0, 1.0, d),
            mix=rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)),
        )

    def mixed(self, class_id: int | None) -> np.ndarray:
        proto = self.background if class_id is None else self.prototypes[class_id]
        return proto @ self.mix


def _downsample(x: np.ndarray, f: int) -> np.ndarray:
    n, h, w, d = x.shape
    return x.reshape(n, h // f, f, w // f, f, d).mean(axis=(2, 4))


def render(world: SyntheticWorld, label_map: np.ndarray, class_ids, rng, noise: float, scales: int = 2):
    """Pixel features for a label map. Scale s is a 2^(s+1) average-pool of the full embedding."""
    n, h, w = label_map.shape
    d = world.mix.shape[0]
    table = np.vstack([world.mixed(None)] + [world.mixed(c) for c in class_ids])
    emb = table[label_map + 1]
    if noise > 0:
        emb = emb + rng.normal(0.0, noise, emb.shape)
    levels = []
    for s in range(scales):
        f = 2 ** (s + 1)
        if h % f or w % f:
            raise ShapeError(f"frame {h}x{w} cannot be pooled by {f}")
        levels.append(_downsample(emb, f))
    return FrameFeatures(levels, emb.reshape(n, h * w, d))


def _layout(rng, n_inst: int, n_frames: int, h: int, w: int) -> np.ndarray:
    """Moving rectangles; later instances occlude earlier ones."""
    for _ in range(100):
        label = np.full((n_frames, h, w), -1, dtype=np.int64)
        for i in range(n_inst):
            rh = int(rng.integers(h // 4, h // 2 + 1))
            rw = int(rng.integers(w // 4, w // 2 + 1))
            y0 = float(rng.integers(0, h - rh + 1))
            x0 = float(rng.integers(0, w - rw + 1))
            vy, vx = rng.uniform(-2.0, 2.0, 2)
            for f in range(n_frames):
                y = int(np.clip(round(y0 + vy * f), 0, h - rh))
                x = int(np.clip(round(x0 + vx * f), 0, w - rw))
                label[f, y:y + rh, x:x + rw] = i
        area = [(label == i).sum() for i in range(n_inst)]
        if min(area) >= 4 * n_frames:
            return label
    raise RuntimeError("could not place visible instances")


def synth_video(labels, instance_range, seed: int, cfg: TrainConfig, world: SyntheticWorld,
                video_id: str | None = None, classes=None):
    """Render one synthetic video whose instances draw classes from ``labels``.

    ``classes`` forces the instance classes (used for stratified sampling).
    Returns ``(SyntheticVideo, FrameFeatures)``; the same seed gives identical output.
    """
    labels = list(labels)
    if not labels:
        raise UsageError("empty label set")
    rng = np.random.default_rng(seed)
    lo, hi = instance_range
    if classes is None:
        k = min(int(rng.integers(lo, hi + 1)), len(labels))
        classes = [int(c) for c in rng.choice(labels, size=k, replace=False)]
    else:
        classes = [int(c) for c in classes]
        if any(c not in labels for c in classes):
            raise UsageError(f"forced classes {classes} outside label set {labels}")
    label_map = _layout(rng, len(classes), cfg.n_frames, cfg.height, cfg.width)
    feats = render(world, label_map, classes, rng, cfg.noise, cfg.scales)
    instances = [Instance(c, label_map == i) for i, c in enumerate(classes)]
    return SyntheticVideo(video_id or f"v{seed}", seed, label_map, instances), feats


# ---------------------------------------------------------------------------
# frozen transformer decoder


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass
class FrozenDecoderWeights:
    """Per-layer W_q, W_k, W_v (D x D, head h owns columns h*d:(h+1)*d), W_o and a 2-layer MLP."""

    layers: list[dict]
    n_heads: int

    @classmethod
    def create(cls, d: int, n_heads: int, n_layers: int, seed: int) -> "FrozenDecoderWeights":
        if d % n_heads:
            raise ShapeError(f"D={d} is not divisible by {n_heads} heads")
        rng = stream(seed, "detector")
        s = 1.0 / np.sqrt(d)
        layers = []
        for _ in range(n_layers):
            layer = {k: rng.normal(0.0, s, (d, d)) for k in ("w_q", "w_k", "w_v", "w_o", "w1", "w2")}
            layer["b1"] = np.zeros(d)
            layer["b2"] = np.zeros(d)
            layers.append({k: _frozen(v) for k, v in layer.items()})
        return cls(layers, n_heads)

    @property
    def d(self) -> int:
        return self.layers[0]["w_q"].shape[0] if self.layers else 0

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def arrays(self) -> dict:
        return {f"layer{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.items()}

    def head(self, layer: int, h: int) -> slice:
        d = self.head_dim
        return slice(h * d, (h + 1) * d)


def cross_attention_scores(p, f, weights: FrozenDecoderWeights, layer: int, head: int) -> np.ndarray:
    """softmax(P W_q (F W_k)^T / sqrt(d)) for one layer and head; (L x N)."""
    p = T.as_matrix(p, "P")
    f = T.as_matrix(f, "F")
    d_model = weights.d
    if p.shape[1] != d_model or f.shape[1] != d_model:
        raise ShapeError(f"cross attention: P {p.shape}, F {f.shape}, D={d_model}")
    w = weights.layers[layer]
    hs = weights.head(layer, head)
    logits = (p @ w["w_q"][:, hs]) @ (f @ w["w_k"][:, hs]).T / np.sqrt(weights.head_dim)
    return T.softmax_rows(logits)


@dataclass
class EncodedVideo:
    """Cached keys and values of the frozen decoder for one video's first-scale features."""

    keys: list[list[np.ndarray]] = field(default_factory=list)  # [layer][head] (N_f, d, N)
    values: list[list[np.ndarray]] = field(default_factory=list)  # [layer][head] (N_f, N, d)


def encode_features(feats: FrameFeatures, weights: FrozenDecoderWeights) -> EncodedVideo:
    f = feats.first
    enc = EncodedVideo()
    for i, w in enumerate(weights.layers):
        k = f @ w["w_k"]
        v = f @ w["w_v"]
        enc.keys.append([np.swapaxes(k[..., weights.head(i, h)], -1, -2).copy() for h in range(weights.n_heads)])
        enc.values.append([v[..., weights.head(i, h)].copy() for h in range(weights.n_heads)])
    return enc


def transformer_decode(p_frm, feats: FrameFeatures, weights: FrozenDecoderWeights,
                       encoded: EncodedVideo | None = None) -> ad.Node:
    """Frame prompt features Z_frm of shape (N_f, L_p^f, D).

    Each layer is cross-attention from the prompt rows to the first-scale
    pixel features with a residual, followed by a residual 2-layer MLP.
    Prompt rows never attend to each other.
    """
    p = ad._lift(p_frm)
    n_f = feats.first.shape[0]
    if p.value.ndim != 2 or p.value.shape[1] != feats.first.shape[-1]:
        raise ShapeError(f"frame prompt {p.value.shape} vs feature width {feats.first.shape[-1]}")
    if weights.layers and p.value.shape[1] != weights.d:
        raise ShapeError(f"frame prompt width {p.value.shape[1]} vs decoder width {weights.d}")
    enc = encoded or encode_features(feats, weights)
    z = ad.add(np.zeros((n_f,) + p.value.shape), p)
    scale = 1.0 / np.sqrt(weights.head_dim) if weights.layers else 1.0
    for i, w in enumerate(weights.layers):
        q = ad.matmul(z, w["w_q"])
        heads = []
        for h in range(weights.n_heads):
            qh = ad.take(q, weights.head(i, h), axis=-1)
            att = ad.softmax_rows(ad.scale(ad.matmul(qh, enc.keys[i][h]), scale))
            heads.append(ad.matmul(att, enc.values[i][h]))
        z = ad.add(z, ad.matmul(ad.concat(heads, axis=-1), w["w_o"]))
        hidden = ad.silu(ad.linear(z, w["w1"], w["b1"]))
        z = ad.add(z, ad.linear(hidden, w["w2"], w["b2"]))
    return z
