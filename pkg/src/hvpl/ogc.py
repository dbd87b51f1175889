"""Orthogonal gradient correction for frame prompts.

After a task finishes, the frame-prompt features of a few of its videos are
compressed into a representative matrix O. Its right singular vectors are
split by the elastic threshold xi: the leading floor(xi * D) directions are
protected, and frame-prompt gradients of the next task are projected onto the
remaining directions before the optimizer sees them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import matio
from . import tensor as T
from .detector import FrameFeatures, FrozenDecoderWeights, SyntheticVideo, transformer_decode
from .errors import CoverageError, ConfigError, FormatError, ShapeError, UsageError
from .rng import stream

RANK_RTOL = 1e-8


@dataclass(frozen=True)
class OrthoSpace:
    task: int
    o: np.ndarray  # (N_o, D)
    v1: np.ndarray  # (D, floor(xi D)) protected directions
    v0: np.ndarray  # (D, D - floor(xi D)) free directions
    s: np.ndarray  # singular values, descending
    xi: float
    b: int = 0
    seed: int = 0

    @property
    def d(self) -> int:
        return self.o.shape[1]

    @property
    def rank(self) -> int:
        return numerical_rank(self.s)

    @property
    def projector(self) -> np.ndarray:
        return self.v0 @ self.v0.T


def numerical_rank(s: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if len(s) == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def split_index(xi: float, d: int) -> int:
    """floor(xi * D), guarded against products like 0.29 * 100 = 28.999..."""
    return min(d, int(math.floor(xi * d + 1e-9)))


def sample_videos(videos: list[SyntheticVideo], labels, b: int, rng: np.random.Generator) -> list[int]:
    """Pick ``b`` video indices so every class in ``labels`` appears at least once."""
    labels = sorted(set(int(c) for c in labels))
    if b < len(labels):
        raise CoverageError(f"B={b} cannot cover {len(labels)} classes")
    if b > len(videos):
        raise CoverageError(f"B={b} exceeds the {len(videos)} available videos")
    chosen: list[int] = []
    covered: set[int] = set()
    for c in labels:
        if c in covered:
            continue
        pool = [i for i, v in enumerate(videos) if c in v.class_ids and i not in chosen]
        if not pool:
            raise CoverageError(f"no video of class {c} available")
        pick = pool[int(rng.integers(len(pool)))]
        chosen.append(pick)
        covered.update(videos[pick].class_ids)
    rest = [i for i in range(len(videos)) if i not in chosen]
    extra = rng.permutation(len(rest))[: b - len(chosen)]
    chosen.extend(rest[i] for i in sorted(extra.tolist()))
    return chosen


def reduce_prompt_features(z: np.ndarray) -> np.ndarray:
    """PCA one video's (N_f, L, D) prompt features to D/N_f and regroup per prompt: (L, D)."""
    n_f, length, d = z.shape
    if d % n_f:
        raise ConfigError(f"D={d} is not divisible by N_f={n_f}")
    reduced, _ = T.pca_reduce(z.reshape(n_f * length, d), d // n_f)
    return reduced.reshape(n_f, length, d // n_f).transpose(1, 0, 2).reshape(length, d)


def build_feature_space(videos, labels, p_frm: np.ndarray, weights: FrozenDecoderWeights,
                        b: int, seed: int, task: int = 0) -> np.ndarray:
    """Representative feature matrix O (B * L_p^f x D) for a finished task.

    ``videos`` is a list of ``(SyntheticVideo, FrameFeatures)`` pairs from the
    task's training split; the B sampled videos cover every class.
    """
    vids = [v for v, _ in videos]
    idx = sample_videos(vids, labels, b, stream(seed, f"sampling/{task}"))
    rows = []
    for i in idx:
        feats: FrameFeatures = videos[i][1]
        z = transformer_decode(p_frm, feats, weights).value
        rows.append(reduce_prompt_features(z))
    return np.vstack(rows)


def svd_split(o: np.ndarray, xi: float):
    """Return ``(v1, v0, s)``: the first floor(xi D) right singular vectors, the rest, and S."""
    if not 0.0 <= xi <= 1.0:
        raise ConfigError(f"xi must lie in [0, 1], got {xi}")
    _, s, v = T.svd(o, full_v=True)
    k = split_index(xi, o.shape[1])
    return v[:, :k], v[:, k:], s


def make_space(o: np.ndarray, xi: float, task: int, b: int = 0, seed: int = 0) -> OrthoSpace:
    v1, v0, s = svd_split(o, xi)
    return OrthoSpace(task, o, v1, v0, s, float(xi), b, seed)


def project_gradient(dp: np.ndarray, space: OrthoSpace) -> np.ndarray:
    """dP* = dP V0 V0^T: drop every component along the protected directions."""
    dp = T.as_matrix(dp, "gradient")
    if dp.shape[1] != space.v0.shape[0]:
        raise ShapeError(f"gradient width {dp.shape[1]} vs feature space width {space.v0.shape[0]}")
    if space.v1.shape[1] == 0:
        return dp.copy()  # nothing protected; V0 V0^T is the identity
    return (dp @ space.v0) @ space.v0.T


def apply_projected_update(p_frm: np.ndarray, dp_star: np.ndarray, optimizer, t: int,
                           name: str = "p_frm", basis: np.ndarray | None = None) -> np.ndarray:
    """One optimizer step on the frame prompt of task t (t >= 2) using the projected gradient.

    With ``basis`` (the free directions V0) the optimizer runs on the
    coordinates dP* V0 and its step is mapped back through V0^T, so the
    parameter change itself has no component along the protected
    directions. Without it the optimizer consumes dP* directly; an
    element-wise method such as Adam then rescales entries and the step
    leaves the free subspace.
    """
    if t < 2:
        raise UsageError("gradient projection applies from the second task on")
    if p_frm.shape != dp_star.shape:
        raise ShapeError(f"prompt {p_frm.shape} vs gradient {dp_star.shape}")
    if basis is None:
        return optimizer.step(name, p_frm, dp_star)
    coords = dp_star @ basis
    step = optimizer.step(name, np.zeros_like(coords), coords)
    return p_frm + step @ basis.T


# ---------------------------------------------------------------------------
# persistence


def space_path(directory, task: int) -> Path:
    return Path(directory) / f"ortho_space_t{task}.hvpl"


def persist_space(space: OrthoSpace, directory, dtype: str = "f8") -> Path:
    """Write the space for its task and delete every other stored space."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = space_path(directory, space.task)
    matio.save(path, space.o, space.v1, space.v0, space.s, dtype=dtype)
    meta = {"t": space.task, "xi": space.xi, "B": space.b, "seed": space.seed, "dtype": dtype}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))
    for old in directory.glob("ortho_space_t*.hvpl"):
        if old != path:
            old.unlink()
            old.with_suffix(".json").unlink(missing_ok=True)
    return path


def load_space(path) -> OrthoSpace:
    path = Path(path)
    arrays = matio.read_all(path)
    if len(arrays) != 4:
        raise FormatError(f"{path}: expected 4 sections (O, V1, V0, S), found {len(arrays)}")
    try:
        meta = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path.with_suffix('.json')}: {exc}") from exc
    o, v1, v0, s = (a.astype(np.float64) for a in arrays)
    return OrthoSpace(int(meta["t"]), o, v1, v0, s, float(meta["xi"]), int(meta["B"]), int(meta["seed"]))


def stored_spaces(directory) -> list[Path]:
    return sorted(Path(directory).glob("ortho_space_t*.hvpl"))
