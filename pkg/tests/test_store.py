import json

import numpy as np
import pytest

from hvpl.errors import StateError
from hvpl.harness.evaluation import evaluate
from hvpl.harness.experiment import run_experiment
from hvpl.harness.store import RunStore
from hvpl.harness.tasks import generate_tasks

from conftest import tiny_config


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    cfg = tiny_config(split=[2, 1], epochs=1)
    root = tmp_path_factory.mktemp("run")
    store = RunStore(root)
    store.prepare(cfg)
    report, state = run_experiment(cfg, store=store)
    return cfg, root, store, report, state


def test_layout(run):
    _, root, *_ = run
    names = {p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()}
    assert {"config.json", "metrics.json", "manifest.json", "state/state.json", "state/decoder.hvpl",
            "state/detector.hvpl", "state/task1.hvpl", "state/task2.hvpl", "ortho_space_t2.hvpl",
            "ortho_space_t2.json"} <= names


def test_state_roundtrip_is_exact(run):
    _, _, store, _, state = run
    back = store.load_state()
    assert back.finished == state.finished and back.labels == state.labels
    for k, v in state.decoder.items():
        assert np.array_equal(back.decoder[k], v)
    for t in state.prompts:
        for k in ("p_frm", "p_vid"):
            assert np.array_equal(back.prompts[t][k], state.prompts[t][k])
    assert np.array_equal(back.space.v0, state.space.v0)


def test_reloaded_state_evaluates_identically(run):
    cfg, _, store, report, _ = run
    back = store.load_state()
    res = evaluate(back, generate_tasks(cfg), 2)
    assert {str(k): m.ap for k, m in res.items()} == {k: v["ap"] for k, v in report.to_dict()["history"]["2"].items()}


def test_metrics_file_matches_report(run):
    _, root, _, report, _ = run
    assert json.loads((root / "metrics.json").read_text()) == json.loads(report.to_json())


def test_manifest_drops_released_training_videos(run):
    _, root, *_ = run
    text = (root / "manifest.json").read_text()
    assert "t1-train-" not in text


def test_audit_catches_leftover_training_data(tmp_path):
    cfg = tiny_config(split=[2, 1])
    tasks = generate_tasks(cfg)
    store = RunStore(tmp_path)
    store.write_manifest(tasks)
    with pytest.raises(StateError):
        store.audit_rehearsal_free(tasks, 2)


def test_missing_state(tmp_path):
    with pytest.raises(StateError):
        RunStore(tmp_path).load_state()
