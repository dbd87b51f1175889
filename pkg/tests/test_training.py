import numpy as np
import pytest

from hvpl.errors import StateError
from hvpl.harness.evaluation import evaluate, infer, infer_single
from hvpl.harness.experiment import run_experiment
from hvpl.harness.store import RunStore
from hvpl.harness.tasks import generate_tasks
from hvpl.harness.training import HVPLState, train_task

from conftest import tiny_config


@pytest.fixture(scope="module")
def three_tasks(tmp_path_factory):
    cfg = tiny_config()
    tasks = generate_tasks(cfg)
    store = RunStore(tmp_path_factory.mktemp("run"))
    store.prepare(cfg)
    state = HVPLState.create(cfg)
    det_before = {k: v.copy() for k, v in state.detector.arrays().items()}
    calls, decoders = [], []
    for t in (1, 2, 3):
        train_task(state, t, tasks, store)
        calls.append(state.projection_calls)
        decoders.append({k: v.copy() for k, v in state.decoder.items()})
    return cfg, tasks, store, state, det_before, calls, decoders


def test_first_task_never_projects(three_tasks):
    *_, calls, _ = three_tasks
    assert calls[0] == 0
    assert calls[1] > 0 and calls[2] > calls[1]


def test_every_projected_step_misses_protected_directions(three_tasks):
    state = three_tasks[3]
    assert state.leak and max(state.leak) <= 1e-10
    assert max(state.step_leak) <= 1e-10


def test_only_last_space_is_kept(three_tasks):
    store = three_tasks[2]
    assert [p.name for p in store.spaces()] == ["ortho_space_t3.hvpl"]


def test_frozen_weights(three_tasks):
    _, _, _, state, det_before, _, decoders = three_tasks
    assert all(np.array_equal(v, det_before[k]) for k, v in state.detector.arrays().items())
    for later in decoders[1:]:
        assert all(np.array_equal(later[k], decoders[0][k]) for k in decoders[0])


def test_out_of_order_task(three_tasks):
    cfg, tasks = three_tasks[0], generate_tasks(three_tasks[0])
    with pytest.raises(StateError):
        train_task(HVPLState.create(cfg), 2, tasks)


def test_evaluate_before_training():
    cfg = tiny_config()
    with pytest.raises(StateError):
        evaluate(HVPLState.create(cfg), generate_tasks(cfg), 1)


def test_evaluation_covers_all_learned_classes(three_tasks):
    _, tasks, _, state, *_ = three_tasks
    res = evaluate(state, tasks, 3)
    assert sorted(res) == [0, 1, 2, 3]
    for m in res.values():
        assert 0.0 <= m.ap <= 1.0 and 0.0 <= m.ar1 <= 1.0


def test_old_training_videos_are_gone(three_tasks):
    _, tasks, store, *_ = three_tasks
    with pytest.raises(StateError):
        tasks[1].train
    store.audit_rehearsal_free(tasks, 3)


def test_single_task_concatenation_is_identity():
    cfg = tiny_config(split=[2])
    tasks = generate_tasks(cfg)
    state = HVPLState.create(cfg)
    train_task(state, 1, tasks, epochs=1)
    for video, feats in tasks[1].test:
        a, b = infer(state, video, feats, 1), infer_single(state, video, feats, 1)
        assert np.array_equal(a.mask_logits, b.mask_logits)
        assert np.array_equal(a.confidence, b.confidence) and np.array_equal(a.class_id, b.class_id)


def test_disable_video_prompt_still_reports_ap():
    cfg = tiny_config(split=[2, 1], disable_video_prompt=True)
    report, _ = run_experiment(cfg)
    d = report.to_dict()
    assert set(d["history"]["2"]) == {"0", "1", "2"}
    assert d["fap"] is None or isinstance(d["fap"], float)


def test_disable_gtssm_runs():
    report, _ = run_experiment(tiny_config(split=[2, 1], disable_gtssm=True))
    assert "2" in report.to_dict()["history"]


def test_random_frame_prompt_init_differs():
    cfg = tiny_config(split=[2, 1], frame_prompt_init="random", epochs=1)
    tasks = generate_tasks(cfg)
    state = HVPLState.create(cfg)
    train_task(state, 1, tasks)
    train_task(state, 2, tasks)
    assert not np.allclose(state.prompts[1]["p_frm"], state.prompts[2]["p_frm"], atol=0.5)


def test_report_is_deterministic():
    cfg = tiny_config(split=[2, 1], epochs=1)
    assert run_experiment(cfg)[0].to_json() == run_experiment(cfg)[0].to_json()


def test_training_loss_halves_on_one_task():
    from hvpl.harness.experiment import ablation_config

    cfg = ablation_config().replace(split=[4])
    tasks = generate_tasks(cfg)
    state = HVPLState.create(cfg)
    train_task(state, 1, tasks)
    losses = state.losses[1]
    assert len(losses) == 30
    assert losses[-1] < 0.5 * losses[0]
