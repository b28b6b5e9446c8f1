"""View-graph construction, noise protocol, tree init, JSON round trip."""

import json

import numpy as np
import pytest

from msnerf import so3
from msnerf.viewgraph import (
    Edge, GraphError, NoiseSpec, Vertex, ViewGraph,
    generate_synthetic_graph, graph_from_dict, graph_to_dict,
    load_graph, perturb_absolute_poses, perturb_edges, save_graph,
    spanning_tree_init, with_estimates,
)


def test_generate_is_connected_and_consistent():
    for seed in range(5):
        g = generate_synthetic_graph(12, 0.3, seed=seed)
        assert g.is_connected()
        gt = g.gt_quats()
        for e in g.edges:
            # independent check through rotation matrices
            R_rel = so3.quat_to_matrix(gt[e.j]) @ so3.quat_to_matrix(gt[e.i]).T
            assert so3.d_q(e.q_meas, so3.matrix_to_quat(R_rel)) < 1e-12


def test_generate_deterministic_and_seed_sensitive():
    a = graph_to_dict(generate_synthetic_graph(10, 0.4, seed=7))
    b = graph_to_dict(generate_synthetic_graph(10, 0.4, seed=7))
    c = graph_to_dict(generate_synthetic_graph(10, 0.4, seed=8))
    assert json.dumps(a) == json.dumps(b)
    assert json.dumps(a) != json.dumps(c)


def test_generate_edge_count_extremes():
    n = 6
    g_tree = generate_synthetic_graph(n, 0.0, seed=1)
    assert len(g_tree.edges) == n - 1
    g_full = generate_synthetic_graph(n, 1.0, seed=1)
    assert len(g_full.edges) == n * (n - 1) // 2


def test_generate_edges_ordered_i_lt_j():
    g = generate_synthetic_graph(9, 0.5, seed=3)
    pairs = [(e.i, e.j) for e in g.edges]
    assert all(i < j for i, j in pairs)
    assert pairs == sorted(pairs)


def test_generate_rejects_tiny():
    with pytest.raises(GraphError):
        generate_synthetic_graph(2, 0.5, seed=0)


def test_perturb_noop_is_bit_exact():
    g = generate_synthetic_graph(8, 0.4, seed=2)
    h = perturb_edges(g, NoiseSpec(0.0, 0.0, seed=99))
    for e, f in zip(g.edges, h.edges):
        assert np.array_equal(e.q_meas, f.q_meas)
        assert f.outlier is e.outlier
    # and the original graph was not mutated by a noisy pass
    spec = NoiseSpec(0.05, 0.2, seed=1)
    before = json.dumps(graph_to_dict(g))
    perturb_edges(g, spec)
    assert json.dumps(graph_to_dict(g)) == before


def test_perturb_outlier_count_and_flags():
    g = generate_synthetic_graph(15, 0.4, seed=4)
    n_e = len(g.edges)
    for frac in (0.0, 0.1, 0.2, 0.5):
        h = perturb_edges(g, NoiseSpec(0.01, frac, seed=5))
        flagged = [e for e in h.edges if e.outlier]
        assert len(flagged) == int(round(frac * n_e))


def test_perturb_noise_matches_per_edge_stream():
    # edge k's perturbation must depend only on (seed, tag, k)
    g = generate_synthetic_graph(10, 0.5, seed=6)
    spec = NoiseSpec(rotation_sigma=0.05, outlier_fraction=0.0, seed=42)
    h = perturb_edges(g, spec)
    for k in (0, 3, len(g.edges) - 1):
        rng = np.random.default_rng(np.random.SeedSequence((42, 3, k)))
        delta = rng.normal(size=3) * 0.05
        expect = so3.quat_mul(so3.exp_map(delta), g.edges[k].q_meas)
        assert so3.d_q(h.edges[k].q_meas, expect) == 0.0
        # recovered perturbation angle equals |delta|
        rel = so3.quat_mul(h.edges[k].q_meas, so3.quat_conj(g.edges[k].q_meas))
        assert abs(np.linalg.norm(so3.log_map(rel)) - np.linalg.norm(delta)) < 1e-9


def test_perturb_outliers_are_uniform_and_deterministic():
    g = generate_synthetic_graph(12, 0.6, seed=9)
    spec = NoiseSpec(0.0, 0.25, seed=11)
    h1 = perturb_edges(g, spec)
    h2 = perturb_edges(g, spec)
    assert json.dumps(graph_to_dict(h1)) == json.dumps(graph_to_dict(h2))
    # an outlier edge should be far from its clean value almost surely
    fars = [so3.d_q(e.q_meas, f.q_meas)
            for e, f in zip(g.edges, h1.edges) if f.outlier]
    assert min(fars) > 1e-3


def test_perturb_absolute_poses():
    rng = np.random.default_rng(0)
    poses = []
    for _ in range(6):
        R = so3.quat_to_matrix(so3.random_quat(rng))
        poses.append(so3.CameraPose(R, rng.normal(size=3), 100.0, 100.0, 32.0, 32.0))
    noisy = perturb_absolute_poses(poses, sigma=0.1, seed=3)
    for k, (p, q) in enumerate(zip(poses, noisy)):
        assert np.array_equal(p.translation, q.translation)
        delta = np.random.default_rng(
            np.random.SeedSequence((3, 6, k))).normal(size=3) * 0.1
        R_expect = so3.quat_to_matrix(so3.exp_map(delta)) @ p.rotation
        assert np.max(np.abs(q.rotation - R_expect)) < 1e-15
    same = perturb_absolute_poses(poses, sigma=0.0, seed=3)
    assert all(s is p for s, p in zip(same, poses))


def test_spanning_tree_init_recovers_gauge_fixed_gt():
    for seed in (0, 1, 2):
        g = generate_synthetic_graph(14, 0.3, seed=seed)
        est = spanning_tree_init(g)
        gt = g.gt_quats()
        assert np.array_equal(est[0], np.array([1.0, 0.0, 0.0, 0.0]))
        for v in range(g.n):
            aligned = so3.quat_mul(gt[v], so3.quat_conj(gt[0]))
            assert so3.d_q(est[v], aligned) < 1e-12


def test_spanning_tree_init_with_noise_bounded_error():
    g = generate_synthetic_graph(10, 0.4, seed=5)
    h = perturb_edges(g, NoiseSpec(0.02, 0.0, seed=7))
    est = spanning_tree_init(h)
    gt = g.gt_quats()
    errs = [so3.geodesic_angle(q, so3.quat_mul(gt[v], so3.quat_conj(gt[0])))
            for v, q in enumerate(est)]
    # chaining at most n-1 edges of ~0.02*sqrt(3) rad each
    assert max(errs) < 9 * 0.02 * np.sqrt(3) * 2


def test_json_round_trip_bit_exact(tmp_path):
    g = perturb_edges(generate_synthetic_graph(11, 0.5, seed=8),
                      NoiseSpec(0.03, 0.2, seed=2))
    g = with_estimates(g, spanning_tree_init(g))
    path = tmp_path / "g.json"
    save_graph(g, path)
    h = load_graph(path)
    assert h.n == g.n
    for v, w in zip(g.vertices, h.vertices):
        assert np.array_equal(v.q_est, w.q_est)
        assert np.array_equal(v.q_gt, w.q_gt)
    for e, f in zip(g.edges, h.edges):
        assert (e.i, e.j, e.outlier) == (f.i, f.j, f.outlier)
        assert np.array_equal(e.q_meas, f.q_meas)
    # a second save is byte-identical
    path2 = tmp_path / "g2.json"
    save_graph(h, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_wire_format_keys():
    q = [1.0, 0.0, 0.0, 0.0]
    g = ViewGraph(
        [Vertex(0, q_gt=np.array(q)), Vertex(1), Vertex(2)],
        [Edge(0, 1, np.array(q)), Edge(1, 2, np.array(q), outlier=False)])
    d = graph_to_dict(g)
    assert d["vertices"][0] == {"id": 0, "q_gt": q, "q_est": q}
    assert d["vertices"][1] == {"id": 1, "q_est": q}
    assert d["edges"][0] == {"i": 0, "j": 1, "q_meas": q}
    assert d["edges"][1] == {"i": 1, "j": 2, "q_meas": q, "outlier": False}


def test_validation_rejects_bad_graphs():
    q = np.array([1.0, 0.0, 0.0, 0.0])
    with pytest.raises(GraphError):   # disconnected
        ViewGraph([Vertex(0), Vertex(1), Vertex(2), Vertex(3)],
                  [Edge(0, 1, q)]).validate()
    with pytest.raises(GraphError):   # self edge
        ViewGraph([Vertex(0), Vertex(1), Vertex(2)],
                  [Edge(0, 0, q), Edge(0, 1, q), Edge(1, 2, q)]).validate()
    with pytest.raises(GraphError):   # duplicate
        ViewGraph([Vertex(0), Vertex(1), Vertex(2)],
                  [Edge(0, 1, q), Edge(0, 1, q), Edge(1, 2, q)]).validate()
    with pytest.raises(GraphError):   # ids not 0..n-1
        ViewGraph([Vertex(0), Vertex(2)], [Edge(0, 1, q)]).validate()
    with pytest.raises(ValueError):
        NoiseSpec(rotation_sigma=-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(outlier_fraction=1.5)


def test_graph_from_dict_validates():
    d = {"vertices": [{"id": 0, "q_est": [1, 0, 0, 0]},
                      {"id": 1, "q_est": [1, 0, 0, 0]},
                      {"id": 2, "q_est": [1, 0, 0, 0]}],
         "edges": [{"i": 0, "j": 1, "q_meas": [1, 0, 0, 0]}]}
    with pytest.raises(GraphError):
        graph_from_dict(d)
