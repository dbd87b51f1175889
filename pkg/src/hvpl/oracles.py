"""Independent reference checks for the fast paths.

Each suite compares an optimized routine against a slow but obviously
correct counterpart (all-pairs tree walks, Kruskal, exhaustive assignment,
central differences, hand-evaluated formulas) and returns a SuiteResult.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .gtssm import (SSMParams, SequenceGraph, SpanningTree, boruvka_mst, build_knn_graph, gt_ssm_bruteforce,
                    gt_ssm_fast, kruskal_mst, selective_terms, tree_weight)
from .ogc import make_space, project_gradient
from .rng import stream


@dataclass
class SuiteResult:
    name: str
    passed: int
    total: int
    worst: float = 0.0  # largest observed deviation, where meaningful
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.passed == self.total

    def line(self) -> str:
        return f"{self.name}: {self.passed}/{self.total} passed (worst {self.worst:.3g}, {self.seconds:.1f}s)"


def _timed(fn):
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def random_tree(rng: np.random.Generator, n: int) -> SpanningTree:
    """Random recursive tree rooted at 0, optionally with a long path to vary the depth."""
    parent = np.zeros(n, dtype=np.intp)
    chain = rng.random() < 0.3
    for j in range(1, n):
        parent[j] = j - 1 if chain and rng.random() < 0.8 else rng.integers(j)
    return SpanningTree(parent)


def random_connected_graph(rng: np.random.Generator, n: int, extra: float = 0.3, ties: bool = False):
    """Random spanning tree plus extra edges; integer weights when ``ties`` to force equal weights."""
    edges = {}
    for j in range(1, n):
        i = int(rng.integers(j))
        edges[(i, j)] = None
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < extra:
                edges[(i, j)] = None
    keys = sorted(edges)
    w = rng.integers(0, 5, len(keys)).astype(float) if ties else rng.random(len(keys))
    u = np.array([k[0] for k in keys], dtype=np.intp)
    v = np.array([k[1] for k in keys], dtype=np.intp)
    return SequenceGraph(n, u, v, w)


# ---------------------------------------------------------------------------


@_timed
def gtssm_equivalence(cases: int = 200, seed: int = 0, tol: float = 1e-6, max_n: int = 64) -> SuiteResult:
    """Level-batched scan against the all-pairs path walk on random trees and parameters."""
    rng = stream(seed, "oracle/gtssm")
    passed, worst = 0, 0.0
    for i in range(cases):
        n = int(rng.integers(1, max_n + 1))
        q = (1, 4, 16)[i % 3]
        d = int(rng.integers(2, 9))
        x = rng.normal(size=(n, d))
        p = SSMParams.init(rng, d, q)
        p.a_log = rng.normal(0.0, 1.0, q)
        p.b_delta = rng.normal(0.0, 1.0, 1)
        tree = random_tree(rng, n)
        terms = selective_terms(x, p)
        fast = gt_ssm_fast(x, p, tree, terms)
        brute = gt_ssm_bruteforce(x, p, tree, terms)
        dev = float(np.max(np.abs(fast - brute)) / max(np.max(np.abs(brute)), 1e-300)) if n else 0.0
        worst = max(worst, dev)
        passed += dev <= tol
    return SuiteResult("gtssm-equivalence", passed, cases, worst)


@_timed
def mst_weights(cases: int = 100, seed: int = 0) -> SuiteResult:
    """Borůvka total weight equals Kruskal's on random connected graphs, ties included."""
    rng = stream(seed, "oracle/mst")
    passed, worst = 0, 0.0
    for i in range(cases):
        g = random_connected_graph(rng, int(rng.integers(2, 40)), ties=i % 2 == 1)
        tree = boruvka_mst(g)
        _, total = kruskal_mst(g)
        dev = abs(tree_weight(g, tree) - total)
        worst = max(worst, dev)
        passed += dev == 0.0 and len(tree.edges()) == g.n - 1
    return SuiteResult("mst-weight", passed, cases, worst)


@_timed
def bto_property(cases: int = 100, seed: int = 0) -> SuiteResult:
    """Every vertex appears after its parent in the breadth-first traversal order."""
    rng = stream(seed, "oracle/bto")
    passed = 0
    for _ in range(cases):
        n = int(rng.integers(1, 80))
        perm = rng.permutation(n)
        base = random_tree(rng, n).parent
        # relabel so the root is arbitrary
        parent = np.empty(n, dtype=np.intp)
        parent[perm] = perm[base]
        tree = SpanningTree(parent)
        pos = np.empty(n, dtype=np.intp)
        pos[tree.bto] = np.arange(n)
        ok = sorted(tree.bto.tolist()) == list(range(n))
        ok = ok and all(pos[parent[j]] < pos[j] for j in range(n) if parent[j] != j)
        passed += ok
    return SuiteResult("bto-order", passed, cases)


@_timed
def knn_mst_pipeline(cases: int = 50, seed: int = 0) -> SuiteResult:
    """Trees built from feature similarity graphs also match Kruskal."""
    rng = stream(seed, "oracle/knn")
    passed = 0
    for _ in range(cases):
        n = int(rng.integers(2, 64))
        x = rng.normal(size=(n, 8))
        g = build_knn_graph(x, int(rng.integers(1, min(6, n))))
        _, total = kruskal_mst(g)
        passed += abs(tree_weight(g, boruvka_mst(g)) - total) <= 1e-12 * max(1.0, abs(total))
    return SuiteResult("knn-mst", passed, cases)


def rank_deficient(rng: np.random.Generator, rows: int, d: int, rank: int) -> np.ndarray:
    return rng.normal(size=(rows, rank)) @ rng.normal(size=(rank, d))


@_timed
def ogc_algebra(cases: int = 20, seed: int = 0, d: int = 64, rank: int = 16, xi: float = 0.7) -> SuiteResult:
    """Projected gradients annihilate the feature rows, are idempotent and miss the protected directions."""
    rng = stream(seed, "oracle/ogc")
    passed, worst = 0, 0.0
    for _ in range(cases):
        o = rank_deficient(rng, 48, d, rank)
        space = make_space(o, xi, 1)
        dp = rng.normal(size=(8, d))
        star = project_gradient(dp, space)
        r1 = np.linalg.norm(star @ o.T) / (np.linalg.norm(dp) * np.linalg.norm(o))
        r2 = np.linalg.norm(project_gradient(star, space) - star) / np.linalg.norm(star)
        r3 = np.linalg.norm(star @ space.v1)
        ident = np.array_equal(project_gradient(dp, make_space(o, 0.0, 1)), dp)
        annihilated = np.linalg.norm(project_gradient(dp, make_space(o, 1.0, 1))) == 0.0
        worst = max(worst, r1, r3)
        passed += r1 <= 1e-8 and r2 <= 1e-12 and r3 <= 1e-10 and ident and annihilated
    return SuiteResult("ogc-algebra", passed, cases, worst)


def hungarian_cost(cost: np.ndarray, rows, cols) -> float:
    return float(cost[rows, cols].sum())


@_timed
def matching(cases: int = 50, seed: int = 0) -> SuiteResult:
    """Bipartite matching cost equals the best of every injective assignment."""
    from .harness.loss import match

    rng = stream(seed, "oracle/matching")
    passed = 0
    for _ in range(cases):
        n_p = int(rng.integers(1, 6))
        n_g = int(rng.integers(0, n_p + 1))
        cost = rng.random((n_p, n_g))
        rows, cols = match(cost)
        got = hungarian_cost(cost, rows, cols)
        best = min((sum(cost[p, g] for g, p in enumerate(perm))
                    for perm in itertools.permutations(range(n_p), n_g)), default=0.0)
        passed += abs(got - best) <= 1e-12 and len(rows) == n_g
    return SuiteResult("matching", passed, cases)


def fap_fixtures() -> list[tuple[dict, dict, int, float]]:
    """(history, learned_at, T, expected) cases evaluated by hand."""
    return [
        ({0: {1: 0.5, 2: 0.5}, 1: {2: 0.7}}, {0: 1, 1: 2}, 2, 0.0),
        ({0: {1: 0.5, 2: 0.25}, 1: {2: 0.9}}, {0: 1, 1: 2}, 2, 0.5),
        ({0: {1: 0.4, 2: 0.3, 3: 0.2}, 1: {1: 0.6, 2: 0.6, 3: 0.6}, 2: {2: 0.5, 3: 0.25}, 3: {3: 0.8}},
         {0: 1, 1: 1, 2: 2, 3: 3}, 3, 0.25),
    ]


@_timed
def fap_formula() -> SuiteResult:
    """Forgetting rate of the hand-evaluated fixtures, compared exactly."""
    from .harness.metrics import compute_fap

    cases = fap_fixtures()
    passed = sum(compute_fap(h, l, t).value == want for h, l, t, want in cases)
    return SuiteResult("fap-formula", passed, len(cases))


def hand_ap_case():
    """Three ranked predictions against two ground-truth videos: TP, FP, TP.

    Precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1; the envelope is 1 up to
    recall 1/2 and 2/3 after, so the area is 1/2 + (1/2)(2/3) = 5/6.
    """
    from .harness.metrics import Detection, GroundTruth

    m = np.zeros((1, 2, 2), dtype=bool)
    m[0, 0, 0] = True
    other = np.zeros_like(m)
    other[0, 1, 1] = True
    gts = [GroundTruth(0, 0, m), GroundTruth(1, 0, m)]
    dets = [Detection(0, 0, 0.9, m), Detection(1, 0, 0.8, other), Detection(1, 0, 0.7, m)]
    return dets, gts, 5.0 / 6.0


@_timed
def ap_hand() -> SuiteResult:
    from .harness.metrics import class_scores

    dets, gts, want = hand_ap_case()
    got = class_scores(dets, gts)[0.5]
    return SuiteResult("ap-envelope", int(abs(got - want) <= 1e-15), 1, abs(got - want))


# ---------------------------------------------------------------------------
# end-to-end gradients


def toy_gradient_config(rng: np.random.Generator, seed: int) -> TrainConfig:
    n_f = int(rng.choice([1, 2]))
    return TrainConfig(d=8, q=int(rng.choice([1, 2, 4])), n_heads=2, n_frames=n_f, height=8, width=8,
                       scales=1, phi=int(rng.integers(1, 4)), lpf=int(rng.integers(2, 5)),
                       lpv=int(rng.integers(2, 5)), l_g=int(rng.integers(1, 3)), l_m=int(rng.integers(1, 3)),
                       l_d=int(rng.integers(1, 3)), split=[3], train_videos=1, test_videos=1,
                       instances=[1, 2], seed=seed, gss_residual=bool(rng.random() < 0.5),
                       msa_layernorm=bool(rng.random() < 0.5))


def gradient_case(cfg: TrainConfig, step: float = 1e-6) -> float:
    """Relative error of the analytic P_frm / P_vid gradient against central differences."""
    from .harness.tasks import generate_tasks
    from .harness.training import HVPLState, init_task, video_loss

    tasks = generate_tasks(cfg)
    state = HVPLState.create(cfg)
    init_task(state, 1, tasks[1].labels)
    rng = stream(cfg.seed, "oracle/heads")
    # heads with non-trivial weights so every term of the loss carries signal
    state.heads[1] = {k: v + rng.normal(0.0, 0.3, v.shape) for k, v in state.heads[1].items()}
    video, feats = tasks[1].train[0]
    params = {"p_frm": state.prompts[1]["p_frm"], "p_vid": state.prompts[1]["p_vid"]}
    tape = ad.GradTape()
    grads = tape.backward(video_loss(state, 1, video, feats, tape, params))
    worst = 0.0
    for name, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            hi, lo = value.copy(), value.copy()
            hi[idx] += step
            lo[idx] -= step
            f_hi = video_loss(state, 1, video, feats, None, {**params, name: hi}).value
            f_lo = video_loss(state, 1, video, feats, None, {**params, name: lo}).value
            fd[idx] = (float(f_hi) - float(f_lo)) / (2 * step)
        g = grads[name]
        scale = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-12)
        worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    return worst


@_timed
def gradients(cases: int = 20, seed: int = 0, tol: float = 1e-5) -> SuiteResult:
    rng = stream(seed, "oracle/gradients")
    passed, worst = 0, 0.0
    for i in range(cases):
        err = gradient_case(toy_gradient_config(rng, seed * 1000 + i))
        worst = max(worst, err)
        passed += err <= tol
    return SuiteResult("gradients", passed, cases, worst)


SUITES = {
    "gtssm-equivalence": gtssm_equivalence,
    "mst-weight": mst_weights,
    "bto-order": bto_property,
    "knn-mst": knn_mst_pipeline,
    "ogc-algebra": ogc_algebra,
    "matching": matching,
    "fap-formula": fap_formula,
    "ap-envelope": ap_hand,
    "gradients": gradients,
}


def run_all(names=None) -> list[SuiteResult]:
    return [SUITES[n]() for n in (names or SUITES)]
