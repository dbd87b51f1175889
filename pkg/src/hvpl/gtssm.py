"""Graph-traversal selective state space machinery.

The hidden state of every position is a sum over all other positions of a
minimum spanning tree, each contribution damped by the discretized transition
of every tree edge on the connecting path. Each edge contributes the ``a_bar``
of its child endpoint. With diagonal transitions this path sum is evaluated in
linear time by an upward (leaf to root) and a downward (root to leaf) pass.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .errors import ConnectivityError, DegenerateInputError, ParameterError, ShapeError, StructureError


# ---------------------------------------------------------------------------
# discretization


def discretize(a, delta, b):
    """Zero-order hold for a diagonal transition.

    ``a`` holds the (strictly negative) diagonal of A, ``delta`` the timescale
    and ``b`` the Q x D input matrix. Returns ``(a_bar, b_bar)`` where a_bar is
    the diagonal of exp(delta A) and b_bar = (exp(delta A) - I) A^-1 b.
    """
    a = np.asarray(a, dtype=np.float64)
    if np.any(a >= 0):
        raise ParameterError("every diagonal entry of A must be negative")
    if np.any(np.asarray(delta) <= 0):
        raise ParameterError("timescale must be positive")
    a_bar = np.exp(delta * a)
    # expm1 keeps the small-timescale limit accurate
    b_bar = (np.expm1(delta * a) / a)[:, None] * np.asarray(b, dtype=np.float64)
    return a_bar, b_bar


# ---------------------------------------------------------------------------
# graph and spanning tree


@dataclass
class SequenceGraph:
    n: int
    u: np.ndarray  # edge endpoints with u < v
    v: np.ndarray
    w: np.ndarray  # 1 - cosine similarity

    def edges(self):
        return list(zip(self.u.tolist(), self.v.tolist(), self.w.tolist()))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=bool)
        adj[self.u, self.v] = True
        adj[self.v, self.u] = True
        return adj


@dataclass
class SpanningTree:
    parent: np.ndarray  # roots map to themselves
    bto: np.ndarray = field(default=None)
    depth: np.ndarray = field(default=None)

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.intp)
        if self.bto is None:
            self.bto = bto_order(self.parent)
        n = len(self.parent)
        depth = np.zeros(n, dtype=np.intp)
        for j in self.bto:
            p = self.parent[j]
            if p != j:
                depth[j] = depth[p] + 1
        self.depth = depth
        order = self.bto
        d = depth[order]
        # bto is breadth-first, so each depth level is a contiguous run
        cuts = np.flatnonzero(np.diff(d)) + 1
        self.levels = np.split(order, cuts) if n else []

    @property
    def n(self) -> int:
        return len(self.parent)

    @property
    def roots(self) -> np.ndarray:
        return np.flatnonzero(self.parent == np.arange(self.n))

    @property
    def root(self) -> int:
        return int(self.roots[0])

    def children(self) -> list[list[int]]:
        kids = [[] for _ in range(self.n)]
        for j, p in enumerate(self.parent.tolist()):
            if p != j:
                kids[p].append(j)
        return kids

    def edges(self):
        return sorted((min(j, int(p)), max(j, int(p))) for j, p in enumerate(self.parent) if p != j)

    def edge_factors(self, a_bar: np.ndarray) -> np.ndarray:
        """Transition carried by the edge above each vertex (its own a_bar); roots get 1."""
        f = a_bar.copy()
        f[self.roots] = 1.0
        return f


def cosine_similarity(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise DegenerateInputError(f"zero-norm rows at {np.flatnonzero(norms == 0).tolist()}; cosine undefined")
    xn = x / norms[:, None]
    return np.clip(xn @ xn.T, -1.0, 1.0)


class _DisjointSet:
    def __init__(self, n):
        self.p = np.arange(n)

    def find(self, i):
        p = self.p
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if ra < rb:
            self.p[rb] = ra
        else:
            self.p[ra] = rb
        return True

    def labels(self):
        return np.array([self.find(i) for i in range(len(self.p))])


def build_knn_graph(x, phi: int) -> SequenceGraph:
    """Symmetrized phi-nearest-neighbour graph under cosine similarity.

    Ties prefer the lower vertex index. A disconnected result is joined by
    repeatedly adding the most similar edge between two different components.
    """
    x = T.as_matrix(x, "X")
    n = x.shape[0]
    if n == 1:
        return SequenceGraph(1, np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros(0))
    if phi < 1 or phi >= n:
        raise ShapeError(f"phi={phi} must lie in [1, {n - 1}]")
    sim = cosine_similarity(x)
    cols = np.arange(n)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        s = sim[i].copy()
        s[i] = -np.inf
        # lexsort: last key is primary -> descending similarity, then ascending index
        order = np.lexsort((cols, -s))
        adj[i, order[:phi]] = True
    adj |= adj.T

    ds = _DisjointSet(n)
    iu, iv = np.nonzero(np.triu(adj, 1))
    for a, b in zip(iu.tolist(), iv.tolist()):
        ds.union(a, b)
    labels = ds.labels()
    while len(np.unique(labels)) > 1:
        cross = labels[:, None] != labels[None, :]
        s = np.where(np.triu(cross, 1), sim, -np.inf)
        flat = int(np.argmax(s))  # first maximum in row-major order = lowest indices
        a, b = divmod(flat, n)
        adj[a, b] = adj[b, a] = True
        ds.union(a, b)
        labels = ds.labels()

    iu, iv = np.nonzero(np.triu(adj, 1))
    w = np.clip(1.0 - sim[iu, iv], 0.0, 2.0)
    return SequenceGraph(n, iu.astype(np.intp), iv.astype(np.intp), w)


def _edge_rank(g: SequenceGraph) -> np.ndarray:
    """Total order on edges: by weight, then lower endpoint, then upper endpoint."""
    order = np.lexsort((g.v, g.u, g.w))
    rank = np.empty(len(order), dtype=np.intp)
    rank[order] = np.arange(len(order))
    return rank


def _tree_from_edges(n: int, edges, root: int = 0) -> SpanningTree:
    nbrs = [[] for _ in range(n)]
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    parent = np.full(n, -1, dtype=np.intp)
    order = []
    for r in [root] + [i for i in range(n) if i != root]:
        if parent[r] != -1:
            continue
        parent[r] = r
        queue = deque([r])
        while queue:
            j = queue.popleft()
            order.append(j)
            for k in sorted(nbrs[j]):
                if parent[k] == -1:
                    parent[k] = j
                    queue.append(k)
    return SpanningTree(parent, np.array(order, dtype=np.intp))


def boruvka_mst(g: SequenceGraph, root: int = 0) -> SpanningTree:
    """Minimum spanning tree by contractive Borůvka rounds, rooted at ``root``.

    Every round each component picks its cheapest outgoing edge, the picked
    edges are contracted, and edges that became internal are dropped.
    """
    n = g.n
    if n == 0:
        raise StructureError("empty graph")
    rank = _edge_rank(g)
    ds = _DisjointSet(n)
    eu, ev, er = g.u.copy(), g.v.copy(), rank.copy()
    chosen = []
    comps = n
    while comps > 1:
        labels = ds.labels()
        lu, lv = labels[eu], labels[ev]
        live = lu != lv
        eu, ev, er, lu, lv = eu[live], ev[live], er[live], lu[live], lv[live]
        if len(eu) == 0:
            raise ConnectivityError(f"graph is disconnected ({comps} components remain)")
        best = np.full(n, np.iinfo(np.intp).max, dtype=np.intp)
        np.minimum.at(best, lu, er)
        np.minimum.at(best, lv, er)
        picked = np.unique(best[best != np.iinfo(np.intp).max])
        pos = {int(r): i for i, r in enumerate(er.tolist())}
        for r in picked.tolist():
            i = pos[r]
            if ds.union(int(eu[i]), int(ev[i])):
                chosen.append((int(eu[i]), int(ev[i])))
                comps -= 1
    return _tree_from_edges(n, chosen, root)


def kruskal_mst(g: SequenceGraph):
    """Reference MST by Kruskal's algorithm; returns (edges, total weight)."""
    ds = _DisjointSet(g.n)
    edges, total = [], 0.0
    for i in np.argsort(_edge_rank(g)):
        a, b = int(g.u[i]), int(g.v[i])
        if ds.union(a, b):
            edges.append((a, b))
            total += float(g.w[i])
    return edges, total


def tree_weight(g: SequenceGraph, tree: SpanningTree) -> float:
    lookup = {(int(a), int(b)): float(w) for a, b, w in zip(g.u, g.v, g.w)}
    return sum(lookup[e] for e in sorted(tree.edges(), key=lambda e: lookup[e]))


def bto_order(parent) -> np.ndarray:
    """Breadth-first topological order of a rooted forest given as a parent array.

    Roots (parent[j] == j) come first in ascending order; every vertex appears
    after its parent. Raises StructureError on cycles or dangling parents.
    """
    parent = np.asarray(parent, dtype=np.intp)
    n = len(parent)
    if np.any((parent < 0) | (parent >= n)):
        raise StructureError("parent index out of range")
    kids = [[] for _ in range(n)]
    for j, p in enumerate(parent.tolist()):
        if p != j:
            kids[p].append(j)
    queue = deque(np.flatnonzero(parent == np.arange(n)).tolist())
    order = []
    while queue:
        j = queue.popleft()
        order.append(j)
        queue.extend(kids[j])
    if len(order) != n:
        raise StructureError(f"cycle detected: {n - len(order)} vertices unreachable from any root")
    return np.array(order, dtype=np.intp)


# ---------------------------------------------------------------------------
# tree scans on (a_bar, u) where u_j = B_bar_j X_j


def _check_scan(a_bar, u, tree):
    if a_bar.shape != u.shape or a_bar.shape[0] != tree.n:
        raise ShapeError(f"tree scan: a_bar {a_bar.shape}, u {u.shape}, tree of {tree.n} vertices")


def tree_scan_bruteforce(a_bar: np.ndarray, u: np.ndarray, tree: SpanningTree) -> np.ndarray:
    """H_j = sum_k Omega(j, k) u_k by walking the tree from every vertex. O(N^2)."""
    _check_scan(a_bar, u, tree)
    n = tree.n
    parent = tree.parent
    nbrs = [[] for _ in range(n)]
    for j, p in enumerate(parent.tolist()):
        if p != j:
            nbrs[j].append(p)
            nbrs[p].append(j)
    h = np.zeros_like(u)
    for j in range(n):
        omega = {j: np.ones(u.shape[1])}
        acc = u[j].copy()
        stack = [j]
        while stack:
            x = stack.pop()
            for y in nbrs[x]:
                if y in omega:
                    continue
                # the edge (x, y) carries the a_bar of whichever endpoint is the child
                edge = a_bar[y] if parent[y] == x else a_bar[x]
                omega[y] = omega[x] * edge
                acc += omega[y] * u[y]
                stack.append(y)
        h[j] = acc
    return h


def _scan(a_bar, u, tree):
    parent = tree.parent
    zeta = u.copy()
    for lvl in reversed(tree.levels[1:]):
        np.add.at(zeta, parent[lvl], a_bar[lvl] * zeta[lvl])
    h = zeta.copy()
    for lvl in tree.levels[1:]:
        h[lvl] = a_bar[lvl] * (h[parent[lvl]] - a_bar[lvl] * zeta[lvl]) + zeta[lvl]
    return zeta, h


def tree_scan(a_bar: np.ndarray, u: np.ndarray, tree: SpanningTree) -> np.ndarray:
    """Linear-time hidden states by one upward and one downward pass.

    Upward (leaves to root): zeta_j = u_j + sum over children s of a_bar_s zeta_s.
    Downward (root to leaves): H_root = zeta_root, otherwise
    H_j = a_bar_j (H_parent - a_bar_j zeta_j) + zeta_j. Vertices of one depth
    level are independent within each pass and are processed together.
    """
    _check_scan(a_bar, u, tree)
    return _scan(a_bar, u, tree)[1]


def tree_scan_node(a_bar: ad.Node, u: ad.Node, tree: SpanningTree) -> ad.Node:
    """Differentiable tree scan.

    The path operator is symmetric, so the input cotangent is another scan of
    the output cotangent. The derivative for an edge factor pairs the
    subtree sum below the edge with the outside sum above it, for both the
    forward states and the cotangent scan.
    """
    av, uv = a_bar.value, u.value
    _check_scan(av, uv, tree)
    zu, hu = _scan(av, uv, tree)

    def back(g):
        zg, hg = _scan(av, g, tree)
        ga = np.zeros_like(av)
        p = tree.parent
        nr = p != np.arange(tree.n)
        m = np.flatnonzero(nr)
        out_u = hu[p[m]] - av[m] * zu[m]
        out_g = hg[p[m]] - av[m] * zg[m]
        ga[m] = zg[m] * out_u + out_g * zu[m]
        return ga, hg

    return ad._make(hu, (a_bar, u), back)


# ---------------------------------------------------------------------------
# selective parameterization


@dataclass
class SSMParams:
    """Weights producing per-position timescales and input/output maps.

    B_j = diag(x_j w_b) r_b^T and C_j = r_c^T diag(x_j w_c); A is the shared
    diagonal -exp(a_log).
    """

    a_log: np.ndarray  # (Q,)
    w_delta: np.ndarray  # (D, 1)
    b_delta: np.ndarray  # (1,)
    w_b: np.ndarray  # (D, Q)
    r_b: np.ndarray  # (D, Q)
    w_c: np.ndarray  # (D, Q)
    r_c: np.ndarray  # (Q, D)
    d_skip: np.ndarray  # (D,)

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.a_log)

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, q: int) -> "SSMParams":
        s = 1.0 / np.sqrt(d)
        return cls(
            a_log=np.log(np.arange(1, q + 1, dtype=np.float64)),
            w_delta=rng.normal(0.0, s, (d, 1)),
            b_delta=np.array([-1.0]),
            w_b=rng.normal(0.0, s, (d, q)),
            r_b=rng.normal(0.0, s, (d, q)),
            w_c=rng.normal(0.0, s, (d, q)),
            r_c=rng.normal(0.0, 1.0 / np.sqrt(q), (q, d)),
            d_skip=np.ones(d),
        )

    def arrays(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SelectiveTerms:
    delta: np.ndarray  # (N,)
    a_bar: np.ndarray  # (N, Q)
    b: np.ndarray  # (N, Q) per-position diagonal of B_j
    c: np.ndarray  # (N, Q) per-position diagonal of C_j


def selective_terms(x: np.ndarray, p: SSMParams) -> SelectiveTerms:
    delta = T.softplus(x @ p.w_delta + p.b_delta)[:, 0]
    a_bar = np.exp(delta[:, None] * p.A[None, :])
    return SelectiveTerms(delta, a_bar, x @ p.w_b, x @ p.w_c)


def input_drive(x, p: SSMParams, terms: SelectiveTerms) -> np.ndarray:
    """Rows B_bar_j X_j of the discretized input."""
    return np.expm1(terms.delta[:, None] * p.A[None, :]) / p.A * terms.b * (x @ p.r_b)


def gt_ssm_bruteforce(x, p: SSMParams, tree: SpanningTree, terms: SelectiveTerms | None = None):
    x = T.as_matrix(x, "X")
    terms = terms or selective_terms(x, p)
    return tree_scan_bruteforce(terms.a_bar, input_drive(x, p, terms), tree)


def gt_ssm_fast(x, p: SSMParams, tree: SpanningTree, terms: SelectiveTerms | None = None):
    x = T.as_matrix(x, "X")
    terms = terms or selective_terms(x, p)
    return tree_scan(terms.a_bar, input_drive(x, p, terms), tree)


def ssm_output(h, p: SSMParams, x, terms: SelectiveTerms | None = None) -> np.ndarray:
    """Y_j = C_j H_j + D * X_j."""
    x = T.as_matrix(x, "X")
    if h.shape[0] != x.shape[0]:
        raise ShapeError(f"ssm_output: H has {h.shape[0]} rows, X has {x.shape[0]}")
    terms = terms or selective_terms(x, p)
    return (terms.c * h) @ p.r_c + x * p.d_skip


def spanning_tree_of(x: np.ndarray, phi: int) -> SpanningTree:
    n = x.shape[0]
    if n == 1:
        return SpanningTree(np.zeros(1, dtype=np.intp))
    return boruvka_mst(build_knn_graph(x, min(phi, n - 1)))


# ---------------------------------------------------------------------------
# GSS layer


GSS_KEYS = ("w_x", "b_x", "conv_w", "conv_b", "w_left", "b_left", "ln_g", "ln_b", "w_p")
SSM_KEYS = ("a_log", "w_delta", "b_delta", "w_b", "r_b", "w_c", "r_c", "d_skip")


def init_gss_weights(rng: np.random.Generator, d: int, q: int, kernel: int = T.CONV_KERNEL) -> dict:
    s = 1.0 / np.sqrt(d)
    w = {
        "w_x": rng.normal(0.0, s, (d, d)),
        "b_x": np.zeros(d),
        "conv_w": rng.normal(0.0, 1.0 / np.sqrt(kernel), (kernel, d)),
        "conv_b": np.zeros(d),
        "w_left": rng.normal(0.0, s, (d, d)),
        "b_left": np.zeros(d),
        "ln_g": np.ones(d),
        "ln_b": np.zeros(d),
        "w_p": rng.normal(0.0, s, (d, d)),
    }
    w.update(SSMParams.init(rng, d, q).arrays())
    return w


def gt_ssm_node(x: ad.Node, w: dict, tree: SpanningTree) -> ad.Node:
    """Differentiable GT-SSM output Y for input rows X."""
    a = ad.scale(ad.exp(w["a_log"]), -1.0)
    delta = ad.softplus(ad.linear(x, w["w_delta"], w["b_delta"]))  # (N, 1)
    da = ad.mul(delta, a)  # (N, Q)
    a_bar = ad.exp(da)
    b = ad.matmul(x, w["w_b"])
    drive = ad.mul(ad.div(ad.sub(a_bar, 1.0), a), ad.mul(b, ad.matmul(x, w["r_b"])))
    h = tree_scan_node(a_bar, drive, tree)
    c = ad.matmul(x, w["w_c"])
    return ad.add(ad.matmul(ad.mul(c, h), w["r_c"]), ad.mul(x, w["d_skip"]))


def gss_layer(z: ad.Node, w: dict, phi: int, residual: bool = False, return_tree: bool = False):
    """One graph-guided state space layer on N_v x D rows.

    Right branch: X = SiLU(DWConv(Z w_x)); left branch: SiLU(Z w_left);
    output (LN(GT-SSM(X)) * left) w_p, plus Z when ``residual`` is set.
    """
    z = ad._lift(z)
    w = {k: ad._lift(v) for k, v in w.items()}
    if z.value.ndim != 2 or z.value.shape[1] != w["w_x"].value.shape[0]:
        raise ShapeError(f"gss_layer: input {z.value.shape} vs width {w['w_x'].value.shape[0]}")
    x = ad.silu(ad.dwconv1d(ad.linear(z, w["w_x"], w["b_x"]), w["conv_w"], w["conv_b"]))
    left = ad.silu(ad.linear(z, w["w_left"], w["b_left"]))
    tree = spanning_tree_of(x.value, phi)
    y = gt_ssm_node(x, w, tree)
    out = ad.matmul(ad.mul(ad.layer_norm(y, w["ln_g"], w["ln_b"]), left), w["w_p"])
    if residual:
        out = ad.add(out, z)
    return (out, tree) if return_tree else out


def gss_params(w: dict) -> SSMParams:
    return SSMParams(**{k: np.asarray(ad._lift(w[k]).value) for k in SSM_KEYS})
