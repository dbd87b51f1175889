"""Synthetic continual VIS task sequences with disjoint label spaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import TrainConfig
from ..detector import FrameFeatures, SyntheticVideo, SyntheticWorld, synth_video
from ..errors import ConfigError, StateError
from ..rng import stream


@dataclass
class Task:
    index: int
    labels: list[int]
    test: list[tuple[SyntheticVideo, FrameFeatures]]
    _train: list | None = field(default=None, repr=False)
    n_train: int = 0

    @property
    def train(self) -> list[tuple[SyntheticVideo, FrameFeatures]]:
        if self._train is None:
            raise StateError(f"training videos of task {self.index} were released (rehearsal-free)")
        return self._train

    @property
    def released(self) -> bool:
        return self._train is None


@dataclass
class TaskSequence:
    tasks: list[Task]
    world: SyntheticWorld
    seed: int

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, t: int) -> Task:
        """1-based task access."""
        return self.tasks[t - 1]

    @property
    def labels(self) -> dict[int, list[int]]:
        return {task.index: task.labels for task in self.tasks}

    def release_before(self, t: int):
        """Drop the training videos of every task before t."""
        for task in self.tasks[: t - 1]:
            task._train = None

    def manifest(self) -> dict:
        out = {"seed": self.seed, "tasks": []}
        for task in self.tasks:
            entry = {"task": task.index, "labels": task.labels, "test": [
                {"id": v.id, "seed": v.seed, "classes": v.class_ids} for v, _ in task.test]}
            if not task.released:
                entry["train"] = [{"id": v.id, "seed": v.seed, "classes": v.class_ids} for v, _ in task.train]
            out["tasks"].append(entry)
        return out


def _videos(cfg, world, labels, t, split, count):
    out = []
    k_hi = min(cfg.instances[1], len(labels))
    for i in range(count):
        rng = stream(cfg.seed, f"video/{t}/{split}/{i}")
        first = labels[i % len(labels)]
        k = int(rng.integers(min(cfg.instances[0], k_hi), k_hi + 1))
        others = [c for c in labels if c != first]
        extra = rng.choice(others, size=k - 1, replace=False).tolist() if k > 1 else []
        seed = int(rng.integers(2 ** 31))
        out.append(synth_video(labels, cfg.instances, seed, cfg, world,
                               video_id=f"t{t}-{split}-{i:03d}", classes=[first] + extra))
    return out


def generate_tasks(cfg: TrainConfig, n_classes: int | None = None) -> TaskSequence:
    """Partition class ids into consecutive disjoint label sets and render every split.

    Each class is the leading instance of every len(labels)-th video, so each
    split covers all of its task's classes.
    """
    sizes = [int(s) for s in cfg.split]
    budget = sum(sizes) if n_classes is None else int(n_classes)
    if budget < sum(sizes):
        raise ConfigError(f"class budget {budget} is smaller than the {sum(sizes)} classes the split needs")
    world = SyntheticWorld.create(budget, cfg.d, cfg.seed)
    tasks, start = [], 0
    for t, size in enumerate(sizes, start=1):
        labels = list(range(start, start + size))
        start += size
        train = _videos(cfg, world, labels, t, "train", cfg.train_videos)
        test = _videos(cfg, world, labels, t, "test", cfg.test_videos)
        tasks.append(Task(t, labels, test, train, len(train)))
    return TaskSequence(tasks, world, cfg.seed)
