"""Command line entry point: ``python -m hvpl <command>``.

Exit status 0 on success, 1 on invalid input or configuration, 2 on a
numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import matio
from .config import TrainConfig
from .errors import HVPLError, NumericError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not sizes or min(sizes) < 2:
        raise argparse.ArgumentTypeError("sizes must be integers >= 2")
    return sizes


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def cmd_train(args) -> int:
    from .harness.experiment import run_experiment
    from .harness.store import RunStore

    cfg = TrainConfig.from_json(args.config)
    out = Path(args.out or f"runs/seed{cfg.seed}")
    store = RunStore(out)
    store.prepare(cfg)
    report, _ = run_experiment(cfg, store=store, log=None if args.quiet else _log)
    data = report.to_dict()
    print(json.dumps({"run": str(out), "fap": data["fap"], "far": data["far"], "tasks": data["tasks"]},
                     sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .harness.evaluation import evaluate
    from .harness.experiment import new_report
    from .harness.store import RunStore
    from .harness.tasks import generate_tasks

    store = RunStore(args.state)
    state = store.load_state()
    tasks = generate_tasks(state.cfg)
    report = new_report(state.cfg, tasks)
    t = state.finished
    report.record(t, evaluate(state, tasks, t))
    classes = {str(k): v for k, v in report.history[t].items()}
    summary = {str(j): v for j, v in report.task_summary(t).items()}
    print(json.dumps({"t": t, "classes": classes, "tasks": summary}, sort_keys=True, indent=1))
    return 0


def cmd_ablate(args) -> int:
    from .harness.experiment import ABLATION_SEEDS, run_ablation

    cfg = TrainConfig.from_json(args.config)
    seeds = args.seeds or list(ABLATION_SEEDS)
    res = run_ablation(cfg, seeds=seeds, log=None if args.quiet else _log)
    text = json.dumps({str(k): v for k, v in res.items()}, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    summary = res["summary"]
    for name in ("full", "disable_ogc"):
        print(f"{name:12s} FAP per seed: {summary[name]['fap']}")
    print(f"FAP(full) < FAP(disable_ogc) on {summary['ogc_wins']}/{summary['seeds']} seeds")
    return 0


def cmd_bench(args) -> int:
    from .harness.bench import loglog_slope, time_scans, write_csv

    rows = {n: {"n_v": n, "fast_ns": None, "brute_ns": None} for n in sorted(set(args.sizes) | set(args.brute_sizes))}
    for r in time_scans(args.sizes, brute=False):
        rows[r["n_v"]]["fast_ns"] = r["fast_ns"]
    for r in time_scans(args.brute_sizes, fast=False):
        rows[r["n_v"]]["brute_ns"] = r["brute_ns"]
    table = [rows[n] for n in sorted(rows)]
    write_csv(table, args.out)
    fast = [r for r in table if r["fast_ns"] is not None]
    brute = [r for r in table if r["brute_ns"] is not None]
    if len(fast) >= 2:
        print(f"fast slope {loglog_slope([r['n_v'] for r in fast], [r['fast_ns'] for r in fast]):.3f}")
    if len(brute) >= 2:
        print(f"brute slope {loglog_slope([r['n_v'] for r in brute], [r['brute_ns'] for r in brute]):.3f}")
    return 0


def cmd_oracle(args) -> int:
    from .oracles import SUITES, run_all

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        print(f"unknown suite(s): {unknown}; available: {sorted(SUITES)}", file=sys.stderr)
        return 1
    results = run_all(names)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


def cmd_dump(args) -> int:
    for path in args.files:
        buf = matio._read(path)
        off, i = 0, 0
        while off < len(buf):
            start = off
            _, off = matio.decode(buf, off, source=path)
            head = matio.header(buf, start)
            print(f"{path}[{i}] dtype={head['dtype']} rank={head['rank']} dims={head['dims']}")
            i += 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hvpl", description="Synthetic continual video instance segmentation with prompts.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train every task of a config and write a run directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="run directory (default runs/seed<seed>)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a trained run directory")
    s.add_argument("--state", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablate", help="full model against disable_ogc over several seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=_sizes_any)
    s.add_argument("--out", help="write the full comparison as JSON")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("bench-traversal", help="time the fast and all-pairs tree scans")
    s.add_argument("--sizes", type=_sizes, default=[256, 512, 1024, 2048])
    s.add_argument("--brute-sizes", type=_sizes, default=[64, 128, 256, 512])
    s.add_argument("--out", default="bench.csv")
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("oracle-check", help="run the reference-check suites")
    s.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    s.set_defaults(fn=cmd_oracle)

    s = sub.add_parser("fmt-dump", help="print HVPL-MAT record headers")
    s.add_argument("files", nargs="+")
    s.set_defaults(fn=cmd_dump)
    return p


def _sizes_any(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except (HVPLError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
