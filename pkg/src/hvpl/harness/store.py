"""Run directory: trained state in HVPL-MAT files, feature spaces, metrics and manifest.

Layout::

    <run>/config.json
    <run>/state/state.json           finished task count, labels, losses, array index
    <run>/state/detector.hvpl        frozen detector weights
    <run>/state/decoder.hvpl         video decoder weights
    <run>/state/task{t}.hvpl         p_frm, p_vid and head arrays of task t
    <run>/ortho_space_t{N}.hvpl      O, V1, V0, S of the last finished task (+ .json sidecar)
    <run>/manifest.json              task labels and video ids still in use
    <run>/metrics.json
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import matio
from ..config import TrainConfig
from ..detector import FrozenDecoderWeights
from ..errors import FormatError, StateError
from ..ogc import OrthoSpace, load_space, persist_space, stored_spaces
from .tasks import TaskSequence
from .training import HVPLState

TEXT_SUFFIXES = {".json", ".jsonl", ".csv", ".txt"}


def _save_named(path: Path, arrays: dict, dtype: str) -> list:
    names = sorted(arrays)
    matio.save(path, *(arrays[k] for k in names), dtype=dtype)
    return names


def _load_named(path: Path, names: list) -> dict:
    arrays = matio.read_all(path)
    if len(arrays) != len(names):
        raise FormatError(f"{path}: expected {len(names)} arrays, found {len(arrays)}")
    return dict(zip(names, arrays))


class RunStore:
    def __init__(self, root, dtype: str = "f8"):
        self.root = Path(root)
        self.dtype = dtype
        self.state_dir = self.root / "state"

    def prepare(self, cfg: TrainConfig):
        self.state_dir.mkdir(parents=True, exist_ok=True)
        (self.root / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1))

    # -- state ---------------------------------------------------------------

    def save_state(self, state: HVPLState):
        self.state_dir.mkdir(parents=True, exist_ok=True)
        index = {
            "detector": _save_named(self.state_dir / "detector.hvpl", state.detector.arrays(), self.dtype),
            "decoder": _save_named(self.state_dir / "decoder.hvpl", state.decoder, self.dtype),
            "tasks": {},
        }
        for t in sorted(state.prompts):
            arrays = {"p_frm": state.prompts[t]["p_frm"], "p_vid": state.prompts[t]["p_vid"]}
            arrays.update({f"head.{k}": v for k, v in state.heads[t].items()})
            index["tasks"][str(t)] = _save_named(self.state_dir / f"task{t}.hvpl", arrays, self.dtype)
        meta = {
            "config": state.cfg.to_dict(),
            "finished": state.finished,
            "labels": {str(t): v for t, v in sorted(state.labels.items())},
            "losses": {str(t): v for t, v in sorted(state.losses.items())},
            "n_heads": state.detector.n_heads,
            "index": index,
        }
        (self.state_dir / "state.json").write_text(json.dumps(meta, sort_keys=True, indent=1))

    def load_state(self) -> HVPLState:
        try:
            meta = json.loads((self.state_dir / "state.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StateError(f"{self.state_dir}: no readable trained state ({exc})") from exc
        cfg = TrainConfig.from_dict(meta["config"])
        idx = meta["index"]
        det = _load_named(self.state_dir / "detector.hvpl", idx["detector"])
        n_layers = len({k.split(".")[0] for k in det})
        layers = []
        for i in range(n_layers):
            layer = {}
            for k, v in det.items():
                if k.startswith(f"layer{i}."):
                    v = np.ascontiguousarray(v, dtype=np.float64)
                    v.flags.writeable = False
                    layer[k.split(".", 1)[1]] = v
            layers.append(layer)
        state = HVPLState(cfg, FrozenDecoderWeights(layers, int(meta["n_heads"])),
                          _load_named(self.state_dir / "decoder.hvpl", idx["decoder"]))
        for t_str, names in idx["tasks"].items():
            t = int(t_str)
            arrays = _load_named(self.state_dir / f"task{t}.hvpl", names)
            state.prompts[t] = {"p_frm": arrays["p_frm"], "p_vid": arrays["p_vid"]}
            state.heads[t] = {k[5:]: v for k, v in arrays.items() if k.startswith("head.")}
        state.labels = {int(t): v for t, v in meta["labels"].items()}
        state.losses = {int(t): v for t, v in meta["losses"].items()}
        state.finished = int(meta["finished"])
        spaces = stored_spaces(self.root)
        if spaces:
            state.space = load_space(spaces[-1])
        return state

    # -- feature spaces ------------------------------------------------------

    def save_space(self, space: OrthoSpace) -> Path:
        return persist_space(space, self.root, self.dtype)

    def spaces(self) -> list[Path]:
        return stored_spaces(self.root)

    # -- reports -------------------------------------------------------------

    def write_metrics(self, report) -> Path:
        path = self.root / "metrics.json"
        path.write_text(report.to_json())
        return path

    def write_manifest(self, tasks: TaskSequence) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(tasks.manifest(), sort_keys=True, indent=1))
        return path

    # -- rehearsal-free audit ------------------------------------------------

    def audit_rehearsal_free(self, tasks: TaskSequence, t: int):
        """Fail if any file in the run directory still names a training video of a task before t."""
        old_ids = {f"t{j}-train-" for j in range(1, t)}
        if not old_ids or not self.root.exists():
            return
        for path in sorted(self.root.rglob("*")):
            if not path.is_file() or path.suffix not in TEXT_SUFFIXES:
                continue
            text = path.read_text(errors="ignore")
            for prefix in old_ids:
                if prefix in text:
                    raise StateError(f"{path} still references old training videos ({prefix}*) at task {t}")
