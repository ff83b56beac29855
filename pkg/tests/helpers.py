"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from waydest.annotate import AisMessage, PortRecord
from waydest.geo import GeoPoint, destination_point
from waydest.nn import Tensor, grad, no_grad
from waydest.nn import functional as F


def make_port(pid, name, lon, lat, radius_km=5.0, locode="", k=8):
    center = GeoPoint(lon, lat)
    poly = [destination_point(center, 360.0 * i / k, radius_km) for i in range(k)]
    return PortRecord.from_polygon(pid, name, locode, poly)


def msg(t, lon, lat, sog=10.0, text="", vessel="V1", **kw):
    return AisMessage(timestamp=float(t), lon=lon, lat=lat, sog=sog, vessel_id=vessel, destination_text=text, **kw)


def edit_graph_distances(alphabet: str, max_len: int, query_len: int):
    """Edit distances by breadth-first search over the graph of all strings.

    Nodes are every string over ``alphabet`` up to ``max_len``; edges are one
    insertion, deletion, substitution or adjacent swap. Returns the strings
    up to ``query_len`` and their pairwise distance matrix.
    """
    strings = ["".join(p) for n in range(max_len + 1) for p in itertools.product(alphabet, repeat=n)]
    index = {s: i for i, s in enumerate(strings)}
    rows, cols = [], []
    for s, i in index.items():
        nbrs = set()
        for j in range(len(s)):
            nbrs.add(s[:j] + s[j + 1 :])
            for c in alphabet:
                nbrs.add(s[:j] + c + s[j + 1 :])
        if len(s) < max_len:
            for j in range(len(s) + 1):
                for c in alphabet:
                    nbrs.add(s[:j] + c + s[j:])
        for j in range(len(s) - 1):
            nbrs.add(s[:j] + s[j + 1] + s[j] + s[j + 2 :])
        nbrs.discard(s)
        for t in nbrs:
            rows.append(i)
            cols.append(index[t])
    g = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(strings), len(strings)))
    queries = [s for s in strings if len(s) <= query_len]
    dist = shortest_path(g, method="D", unweighted=True, indices=[index[s] for s in queries])
    return queries, dist[:, : len(queries)].astype(int)


def brute_density_clusters(points: np.ndarray, eps: float, min_pts: int):
    """Textbook density clustering by explicit region queries.

    Returns (core mask, connected core components as a list of sets, and for
    every point the set of components it may legally join).
    """
    n = len(points)
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    nb = d <= eps
    core = nb.sum(1) >= min_pts
    comp = [-1] * n
    comps = []
    for i in range(n):
        if core[i] and comp[i] < 0:
            members = {i}
            frontier = [i]
            comp[i] = len(comps)
            while frontier:
                j = frontier.pop()
                for k in np.flatnonzero(nb[j] & core):
                    if comp[k] < 0:
                        comp[k] = len(comps)
                        members.add(int(k))
                        frontier.append(int(k))
            comps.append(members)
    reachable = []
    for i in range(n):
        if core[i]:
            reachable.append({comp[i]})
        else:
            reachable.append({comp[k] for k in np.flatnonzero(nb[i] & core)})
    return core, comps, reachable, d


def isclose_rel(a, b, tol):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-12)


def dense_gru(x, W, U, b):
    """Hand-unrolled GRU recurrence on one subsequence (lists of float arrays)."""
    d = U["u"].shape[0]
    h = np.zeros(d)
    for row in x:
        u = 1 / (1 + np.exp(-(row @ W["u"] + h @ U["u"] + b["u"])))
        r = 1 / (1 + np.exp(-(row @ W["r"] + h @ U["r"] + b["r"])))
        hh = np.tanh(row @ W["h"] + (r * h) @ U["h"] + b["h"])
        h = (1 - u) * h + u * hh
    return h


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def toy_sequences(n, n_ports=4, seed=0, steps=(3, 12)):
    """Straight-line voyages between ports on a ring, as nested sequences.

    The destination is a deterministic function of the departure and the
    initial heading, so a model can learn it from the first few steps.
    """
    from waydest.annotate import MOVING, Segment
    from waydest.represent import reorganize

    rng = np.random.default_rng(seed)
    ring = [(20.0 * math.cos(2 * math.pi * k / n_ports), 15.0 * math.sin(2 * math.pi * k / n_ports)) for k in range(n_ports)]
    out = []
    for i in range(n):
        a = int(rng.integers(n_ports))
        b = int((a + rng.choice([1, -1])) % n_ports)
        k = int(rng.integers(*steps))
        (x0, y0), (x1, y1) = ring[a], ring[b]
        t = 1.6e9 + i * 1e6
        msgs = []
        for j in range(k * 3):
            f = j / (k * 3 - 1)
            msgs.append(
                msg(t + j * 1800.0, x0 + f * (x1 - x0), y0 + f * (y1 - y0), sog=float(rng.uniform(8, 14)), cog=90.0, ship_type=str(rng.choice(["bulk", "tanker"])))
            )
        tags = [a] + [MOVING] * (len(msgs) - 2) + [b]
        seg = Segment("V", msgs, tags, [(a, b)] * len(msgs))
        out.append(reorganize(seg, traj_id=f"toy:{i}"))
    return out


# -- finite differences -------------------------------------------------------------


def fd_error(fn, shapes, seed=0, h=1e-5, positive=False) -> float:
    """Worst relative gap between autodiff and central-difference gradients of sum(w * fn(*xs))."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    params = [Tensor(x.copy(), requires_grad=True) for x in xs]
    out = fn(*params)
    w = rng.normal(size=out.shape)
    loss = F.sum(F.mul(out, w))
    analytic = grad(loss, params)

    def scalar(arrays):
        with no_grad():
            return float((fn(*[Tensor(a) for a in arrays]).data * w).sum())

    worst = 0.0
    for k, x in enumerate(xs):
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            plus = [a.copy() for a in xs]
            minus = [a.copy() for a in xs]
            plus[k][idx] += h
            minus[k][idx] -= h
            num[idx] = (scalar(plus) - scalar(minus)) / (2 * h)
        err = np.abs(analytic[k] - num).max() / max(np.abs(num).max(), np.abs(analytic[k]).max(), 1e-8)
        worst = max(worst, float(err))
    return worst



PRIMITIVES = {
    "add": (F.add, [(3, 4), (4,)], False),
    "sub": (F.sub, [(2, 3), (2, 1)], False),
    "mul": (F.mul, [(3, 4), (3, 4)], False),
    "matmul": (F.matmul, [(3, 4), (4, 2)], False),
    "matmul_batched": (F.matmul, [(2, 3, 4), (4, 5)], False),
    "linear": (lambda x, w, b: F.linear(x, w, b), [(3, 4), (4, 2), (2,)], False),
    "sigmoid": (F.sigmoid, [(3, 4)], False),
    "tanh": (F.tanh, [(3, 4)], False),
    "relu": (F.relu, [(3, 4)], False),
    "exp": (F.exp, [(3, 4)], False),
    "log": (F.log, [(3, 4)], True),
    "softmax": (lambda x: F.softmax(x, axis=-1), [(3, 5)], False),
    "softmax_axis0": (lambda x: F.softmax(x, axis=0), [(3, 5)], False),
    "log_softmax": (lambda x: F.log_softmax(x, axis=-1), [(3, 5)], False),
    "layer_norm": (F.layer_norm, [(3, 6)], False),
    "sum_axis": (lambda x: F.sum(x, axis=1), [(3, 4, 2)], False),
    "mean_pool": (lambda x: F.mean(x, axis=0), [(3, 4)], False),
    "max_pool": (lambda x: F.max(x, axis=-1), [(3, 4)], False),
    "concat": (lambda a, b: F.concat([a, b], axis=1), [(2, 3), (2, 2)], False),
    "stack": (lambda a, b: F.stack([a, b], axis=0), [(2, 3), (2, 3)], False),
    "reshape": (lambda x: F.reshape(x, (6, 2)), [(3, 4)], False),
    "transpose": (lambda x: F.transpose(x, (1, 0, 2)), [(2, 3, 4)], False),
    "getitem": (lambda x: F.getitem(x, (slice(None), [0, 2, 2])), [(3, 4)], False),
    "embedding": (lambda t: F.embedding(t, np.array([1, 0, 1, 3])), [(4, 3)], False),
    "causal_mask": (lambda x: F.causal_mask_fill(x, 0.0), [(3, 3)], False),
    "attention_scores": (F.attention_scores, [(2, 3, 4), (2, 5, 4)], False),
    "attend": (F.attend, [(2, 3, 5), (2, 5, 4)], False),
    "div_scalar": (lambda a: a / 2.5, [(3,)], False),
}


def casp_block_fd_errors(model, block=0, seed=14, shape=(1, 4, 3), h=1e-5) -> dict[str, float]:
    """Relative finite-difference error for the block input and every block parameter."""
    rng = np.random.default_rng(seed)
    d = model.config.d_model
    x0 = rng.normal(size=(*shape, d))
    wout = rng.normal(size=(*shape, d))
    names = [k for k in model.params if k.startswith(f"block.{block}.")]
    xt = Tensor(x0.copy(), requires_grad=True)
    params = [xt] + [model.params[k] for k in names]
    analytic = grad(F.sum(model.casp_block(xt, block) * wout), params)

    def f():
        with no_grad():
            return float((model.casp_block(Tensor(xt.data), block).data * wout).sum())

    errors = {}
    for name, p, g in zip(["input", *names], params, analytic):
        num = np.zeros_like(p.data)
        for idx in np.ndindex(p.shape):
            old = p.data[idx]
            p.data[idx] = old + h
            fp = f()
            p.data[idx] = old - h
            fm = f()
            p.data[idx] = old
            num[idx] = (fp - fm) / (2 * h)
        errors[name] = float(np.abs(g - num).max() / max(np.abs(num).max(), 1e-8))
    return errors
