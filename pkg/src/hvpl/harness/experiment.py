"""End-to-end runs: train every task, evaluate after each, and report forgetting."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import TrainConfig
from .evaluation import evaluate
from .metrics import compute_far, compute_fap
from .tasks import TaskSequence, generate_tasks
from .training import HVPLState, train_task

ABLATION_SEEDS = (42, 43, 44, 45, 46)


def ablation_config(**overrides) -> TrainConfig:
    """Two-task comparison settings: 4 + 2 classes, 40 / 20 videos, 30 epochs.

    The learning rate is raised from the default so that 30 epochs at desk
    scale move the prompts appreciably.
    """
    return TrainConfig(split=[4, 2], train_videos=40, test_videos=20, epochs=30, lr=1e-3).replace(**overrides)


def _clean(x):
    """NaN-free JSON value."""
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


@dataclass
class MetricsReport:
    config: dict
    learned_at: dict  # class -> task that introduced it
    history: dict = field(default_factory=dict)  # t -> class -> {ap, ap50, ap75, ar1}
    losses: dict = field(default_factory=dict)  # t -> per-epoch mean training loss

    def record(self, t: int, per_class: dict):
        self.history[t] = {k: {"ap": m.ap, "ap50": m.ap50, "ap75": m.ap75, "ar1": m.ar1}
                           for k, m in sorted(per_class.items())}

    @property
    def final_t(self) -> int:
        return max(self.history) if self.history else 0

    def _series(self, key: str) -> dict:
        out: dict = {}
        for t, per_class in self.history.items():
            for k, m in per_class.items():
                out.setdefault(k, {})[t] = m[key]
        return out

    def fap(self):
        return compute_fap(self._series("ap"), self.learned_at, self.final_t)

    def far(self):
        return compute_far(self._series("ar1"), self.learned_at, self.final_t)

    def task_summary(self, t: int) -> dict:
        """Mean AP / AP50 / AP75 / AR1 over each learned task's classes, evaluated after task t."""
        out = {}
        per_class = self.history[t]
        for task in sorted(set(self.learned_at.values())):
            ks = [k for k, lt in self.learned_at.items() if lt == task and k in per_class]
            if ks:
                out[task] = {m: float(np.mean([per_class[k][m] for k in ks])) for m in ("ap", "ap50", "ap75", "ar1")}
        return out

    def to_dict(self) -> dict:
        fap, far = self.fap(), self.far()
        return {
            "config": self.config,
            "learned_at": {str(k): v for k, v in sorted(self.learned_at.items())},
            "history": {str(t): {str(k): {m: _clean(v) for m, v in ms.items()} for k, ms in pc.items()}
                        for t, pc in sorted(self.history.items())},
            "tasks": {str(t): {str(j): s for j, s in self.task_summary(t).items()} for t in sorted(self.history)},
            "losses": {str(t): v for t, v in sorted(self.losses.items())},
            "fap": fap.value,
            "fap_excluded": fap.excluded,
            "far": far.value,
            "far_excluded": far.excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def new_report(cfg: TrainConfig, tasks: TaskSequence) -> MetricsReport:
    learned = {k: task.index for task in tasks.tasks for k in task.labels}
    return MetricsReport(cfg.to_dict(), learned)


def run_experiment(cfg: TrainConfig, store=None, log=None, tasks: TaskSequence | None = None,
                   state: HVPLState | None = None, report: MetricsReport | None = None):
    """Train and evaluate every task in order; returns ``(report, state)``.

    A partially trained ``state`` (with its ``report``) resumes at the next task.
    """
    tasks = tasks or generate_tasks(cfg)
    state = state or HVPLState.create(cfg)
    report = report or new_report(cfg, tasks)
    if store is not None:
        store.write_manifest(tasks)
    for t in range(state.finished + 1, len(tasks) + 1):
        train_task(state, t, tasks, store, log=log)
        report.losses[t] = state.losses[t]
        report.record(t, evaluate(state, tasks, t))
        if store is not None:
            store.write_manifest(tasks)
            store.write_metrics(report)
    return report, state


def run_ablation(cfg: TrainConfig, variants: dict | None = None, seeds=ABLATION_SEEDS, log=None) -> dict:
    """Run the full model and each variant on the same task sequence per seed.

    Variants whose flags leave task 1 unchanged (only ``disable_ogc`` acts
    after task 1) share the trained task-1 state with the full model.
    Returns ``{seed: {variant: report_dict}}`` plus a ``summary`` entry.
    """
    variants = {"full": {}, "disable_ogc": {"disable_ogc": True}} if variants is None else variants
    out: dict = {}
    for seed in seeds:
        base = cfg.replace(seed=seed)
        tasks = generate_tasks(base)
        shared = None
        runs = {}
        for name, flags in variants.items():
            vcfg = base.replace(**flags)
            after_first = set(flags) <= {"disable_ogc"}
            if after_first and shared is not None:
                state, report = shared[0].snapshot(), _copy_report(shared[1], vcfg)
                state.cfg = vcfg
            else:
                state, report = HVPLState.create(vcfg), new_report(vcfg, tasks)
            if after_first and shared is None:
                train_task(state, 1, tasks, log=log)
                report.losses[1] = state.losses[1]
                report.record(1, evaluate(state, tasks, 1))
                shared = (state.snapshot(), _copy_report(report, vcfg))
            report, _ = run_experiment(vcfg, tasks=tasks, state=state, report=report, log=log)
            runs[name] = report.to_dict()
            if log is not None:
                log(f"seed {seed} {name}: FAP {runs[name]['fap']}")
        out[seed] = runs
    out["summary"] = summarize(out, list(variants))
    return out


def _copy_report(report: MetricsReport, cfg: TrainConfig) -> MetricsReport:
    return MetricsReport(cfg.to_dict(), dict(report.learned_at), copy.deepcopy(report.history),
                         copy.deepcopy(report.losses))


def summarize(results: dict, variants: list) -> dict:
    seeds = [s for s in results if s != "summary"]
    summary = {v: {"fap": [results[s][v]["fap"] for s in seeds]} for v in variants}
    if "full" in variants and "disable_ogc" in variants:
        wins = [a is not None and b is not None and a < b
                for a, b in zip(summary["full"]["fap"], summary["disable_ogc"]["fap"])]
        summary["ogc_wins"] = int(sum(wins))
        summary["seeds"] = len(seeds)
    return summary
