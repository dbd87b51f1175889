"""Two tasks of synthetic continual video instance segmentation.

Trains on four classes, then two new ones without revisiting the old videos,
and compares forgetting with and without gradient projection. Takes a couple
of minutes on one core.
"""
from hvpl.harness.experiment import ablation_config, run_ablation

cfg = ablation_config().replace(train_videos=20, test_videos=10, epochs=10)
print("classes per task:", cfg.split, " D:", cfg.d, " frames:", cfg.n_frames, " xi:", cfg.xi)

res = run_ablation(cfg, seeds=[42], log=print)
for name, r in res[42].items():
    print(f"\n{name}")
    for t, per_task in r["tasks"].items():
        aps = ", ".join(f"task {j} AP {m['ap']:.3f}" for j, m in per_task.items())
        print(f"  after task {t}: {aps}")
    print(f"  FAP {r['fap']:.3f}  FAR {r['far']:.3f}")
