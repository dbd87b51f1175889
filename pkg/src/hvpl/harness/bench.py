"""Timing of the linear-time tree scan against the all-pairs walk."""
from __future__ import annotations

import csv
import time

import numpy as np

from ..gtssm import spanning_tree_of, tree_scan, tree_scan_bruteforce
from ..rng import stream

FAST_SIZES = (256, 512, 1024, 2048)
BRUTE_SIZES = (64, 128, 256, 512)


def _case(n: int, d: int, q: int, phi: int, seed: int):
    rng = stream(seed, f"bench/{n}")
    x = rng.normal(size=(n, d))
    tree = spanning_tree_of(x, phi)
    a_bar = rng.uniform(0.05, 0.95, (n, q))
    u = rng.normal(size=(n, q))
    return tree, a_bar, u


def _best_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return int(best)


def time_scans(sizes, *, fast: bool = True, brute: bool = True, d: int = 16, q: int = 16, phi: int = 4,
               seed: int = 42, repeats: int = 5) -> list[dict]:
    """Best-of-``repeats`` wall time in ns per size; a skipped path is reported as None."""
    rows = []
    for n in sizes:
        tree, a_bar, u = _case(int(n), d, q, phi, seed)
        row = {"n_v": int(n), "fast_ns": None, "brute_ns": None}
        if fast:
            row["fast_ns"] = _best_ns(lambda: tree_scan(a_bar, u, tree), repeats)
        if brute:
            row["brute_ns"] = _best_ns(lambda: tree_scan_bruteforce(a_bar, u, tree), repeats)
        rows.append(row)
    return rows


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    x, y = np.log(np.asarray(sizes, dtype=float)), np.log(np.asarray(times, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def run_benchmark(fast_sizes=FAST_SIZES, brute_sizes=BRUTE_SIZES, seed: int = 42) -> dict:
    fast_rows = time_scans(fast_sizes, brute=False, seed=seed)
    brute_rows = time_scans(brute_sizes, fast=False, seed=seed)
    return {
        "fast": fast_rows,
        "brute": brute_rows,
        "fast_slope": loglog_slope([r["n_v"] for r in fast_rows], [r["fast_ns"] for r in fast_rows]),
        "brute_slope": loglog_slope([r["n_v"] for r in brute_rows], [r["brute_ns"] for r in brute_rows]),
    }


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_v", "fast_ns", "brute_ns"])
        for r in rows:
            w.writerow([r["n_v"], "" if r["fast_ns"] is None else r["fast_ns"],
                        "" if r["brute_ns"] is None else r["brute_ns"]])
