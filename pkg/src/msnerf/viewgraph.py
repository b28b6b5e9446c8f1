"""Directed view graphs of relative-rotation measurements.

Vertices hold absolute rotations (optional ground truth plus a working
estimate); edges hold measured relative rotations q_meas ~ q_j * q_i^-1.
Vertex 0 is the gauge reference everywhere: solvers return estimates
with vertex 0 equal to the identity.

Randomness is counter-based: every perturbed item draws from its own
stream seeded by (seed, purpose-tag, item-index), so results do not
depend on iteration or thread order.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import so3

# Purpose tags for per-item RNG streams.
_TAG_GT = 0
_TAG_TREE = 1
_TAG_EXTRA = 2
_TAG_EDGE_NOISE = 3
_TAG_OUTLIER_PICK = 4
_TAG_OUTLIER_ROT = 5
_TAG_POSE_NOISE = 6


class GraphError(ValueError):
    """Malformed or disconnected view graph."""


def _stream(*key):
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass
class Edge:
    i: int
    j: int
    q_meas: np.ndarray
    outlier: bool | None = None


@dataclass
class Vertex:
    id: int
    q_gt: np.ndarray | None = None
    q_est: np.ndarray = field(default_factory=lambda: so3.IDENTITY_QUAT.copy())


@dataclass
class ViewGraph:
    vertices: list
    edges: list

    @property
    def n(self):
        return len(self.vertices)

    def validate(self):
        ids = [v.id for v in self.vertices]
        if ids != list(range(len(ids))):
            raise GraphError("vertex ids must be 0..n-1 in order")
        seen = set()
        for e in self.edges:
            if e.i == e.j:
                raise GraphError(f"self-edge at vertex {e.i}")
            if not (0 <= e.i < self.n and 0 <= e.j < self.n):
                raise GraphError(f"edge ({e.i},{e.j}) references unknown vertex")
            if (e.i, e.j) in seen:
                raise GraphError(f"duplicate edge ({e.i},{e.j})")
            seen.add((e.i, e.j))
        if not self.is_connected():
            raise GraphError("graph is not connected")
        return self

    def adjacency(self):
        """id -> sorted list of (neighbor, edge, forward flag)."""
        adj = {v.id: [] for v in self.vertices}
        for e in self.edges:
            adj[e.i].append((e.j, e, True))
            adj[e.j].append((e.i, e, False))
        for nbrs in adj.values():
            nbrs.sort(key=lambda item: item[0])
        return adj

    def is_connected(self):
        if self.n == 0:
            return False
        adj = self.adjacency()
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for u, _, _ in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == self.n

    def gt_quats(self):
        if any(v.q_gt is None for v in self.vertices):
            return None
        return [v.q_gt for v in self.vertices]

    def edge_index_arrays(self):
        idx_i = np.array([e.i for e in self.edges], dtype=int)
        idx_j = np.array([e.j for e in self.edges], dtype=int)
        return idx_i, idx_j


@dataclass(frozen=True)
class NoiseSpec:
    """Edge perturbation protocol: Gaussian axis-angle noise + outliers."""

    rotation_sigma: float = 0.0
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rotation_sigma < 0.0:
            raise ValueError("rotation_sigma must be >= 0")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must be in [0, 1]")


def generate_synthetic_graph(n, edge_probability, seed):
    """Random connected graph with exactly consistent edge measurements.

    Ground-truth absolute rotations are uniform on SO(3). A random
    spanning tree guarantees connectivity; each remaining (i < j) pair
    becomes an edge with the given probability. Measurements are the
    exact relatives q_j * q_i^-1.
    """
    if n < 3:
        raise GraphError("need at least 3 vertices")
    rng_gt = _stream(seed, _TAG_GT)
    gt = [so3.random_quat(rng_gt) for _ in range(n)]

    rng_tree = _stream(seed, _TAG_TREE)
    pairs = set()
    for v in range(1, n):
        parent = int(rng_tree.integers(0, v))
        pairs.add((parent, v))

    rng_extra = _stream(seed, _TAG_EXTRA)
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in pairs and rng_extra.random() < edge_probability:
                pairs.add((i, j))

    edges = [Edge(i, j, so3.quat_mul(gt[j], so3.quat_conj(gt[i])))
             for i, j in sorted(pairs)]
    vertices = [Vertex(v, q_gt=gt[v]) for v in range(n)]
    return ViewGraph(vertices, edges).validate()


def perturb_edges(g, spec):
    """Apply the noise protocol to edge measurements (new graph).

    Non-outlier edges are left-multiplied by exp_map(delta) with
    delta ~ N(0, sigma^2 I); a round(fraction * n_edges)-sized subset is
    replaced by uniform random rotations and flagged. sigma=0 leaves
    non-outlier measurements bit-exactly unchanged.
    """
    n_e = len(g.edges)
    n_out = int(round(spec.outlier_fraction * n_e))
    outlier_idx = set()
    if n_out > 0:
        pick = _stream(spec.seed, _TAG_OUTLIER_PICK)
        outlier_idx = set(int(k) for k in
                          pick.choice(n_e, size=n_out, replace=False))

    edges = []
    for e_idx, e in enumerate(g.edges):
        if e_idx in outlier_idx:
            q = so3.random_quat(_stream(spec.seed, _TAG_OUTLIER_ROT, e_idx))
            edges.append(Edge(e.i, e.j, q, outlier=True))
        elif spec.rotation_sigma > 0.0:
            delta = (_stream(spec.seed, _TAG_EDGE_NOISE, e_idx).normal(size=3)
                     * spec.rotation_sigma)
            q = so3.quat_mul(so3.exp_map(delta), e.q_meas)
            edges.append(Edge(e.i, e.j, q, outlier=e.outlier))
        else:
            edges.append(Edge(e.i, e.j, e.q_meas.copy(), outlier=e.outlier))
    vertices = [replace(v, q_est=v.q_est.copy()) for v in g.vertices]
    return ViewGraph(vertices, edges)


def perturb_absolute_poses(poses, sigma=0.1, seed=0):
    """Left-compose each pose rotation with exp_map of a N(0, sigma^2 I) draw.

    Translations and intrinsics are unchanged (orientation-only
    perturbation). sigma=0 returns the poses untouched.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return list(poses)
    out = []
    for k, pose in enumerate(poses):
        delta = _stream(seed, _TAG_POSE_NOISE, k).normal(size=3) * sigma
        R = so3.quat_to_matrix(so3.exp_map(delta)) @ pose.rotation
        out.append(so3.CameraPose(R, pose.translation, pose.fx, pose.fy,
                                  pose.cx, pose.cy))
    return out


def spanning_tree_init(g):
    """Absolute estimates by chaining measurements along a BFS tree from 0."""
    if not g.is_connected():
        raise GraphError("graph is not connected")
    adj = g.adjacency()
    est = [None] * g.n
    est[0] = so3.IDENTITY_QUAT.copy()
    queue = [0]
    while queue:
        v = queue.pop(0)
        for u, e, forward in adj[v]:
            if est[u] is not None:
                continue
            if forward:   # edge v -> u: q_u = q_meas * q_v
                est[u] = so3.quat_mul(e.q_meas, est[v])
            else:         # edge u -> v: q_u = q_meas^-1 * q_v
                est[u] = so3.quat_mul(so3.quat_conj(e.q_meas), est[v])
            queue.append(u)
    return est


def with_estimates(g, quats):
    """Copy of g with vertex estimates replaced."""
    assert len(quats) == g.n
    vertices = [replace(v, q_est=np.asarray(q, dtype=float).copy())
                for v, q in zip(g.vertices, quats)]
    edges = [Edge(e.i, e.j, e.q_meas.copy(), e.outlier) for e in g.edges]
    return ViewGraph(vertices, edges)


# ---------------------------------------------------------------------------
# JSON wire format (canonical order, bit-exact float round trip)
# ---------------------------------------------------------------------------

def graph_to_dict(g):
    vertices = []
    for v in sorted(g.vertices, key=lambda v: v.id):
        entry = {"id": v.id}
        if v.q_gt is not None:
            entry["q_gt"] = [float(c) for c in v.q_gt]
        entry["q_est"] = [float(c) for c in v.q_est]
        vertices.append(entry)
    edges = []
    for e in sorted(g.edges, key=lambda e: (e.i, e.j)):
        entry = {"i": e.i, "j": e.j,
                 "q_meas": [float(c) for c in e.q_meas]}
        if e.outlier is not None:
            entry["outlier"] = bool(e.outlier)
        edges.append(entry)
    return {"vertices": vertices, "edges": edges}


def graph_from_dict(d):
    vertices = []
    for entry in d["vertices"]:
        q_gt = entry.get("q_gt")
        vertices.append(Vertex(
            int(entry["id"]),
            q_gt=None if q_gt is None else np.asarray(q_gt, dtype=float),
            q_est=np.asarray(entry["q_est"], dtype=float)))
    edges = []
    for entry in d["edges"]:
        edges.append(Edge(int(entry["i"]), int(entry["j"]),
                          np.asarray(entry["q_meas"], dtype=float),
                          outlier=entry.get("outlier")))
    return ViewGraph(vertices, edges).validate()


def save_graph(g, path):
    with open(path, "w") as fh:
        json.dump(graph_to_dict(g), fh, indent=1)
        fh.write("\n")


def load_graph(path):
    with open(path) as fh:
        return graph_from_dict(json.load(fh))
