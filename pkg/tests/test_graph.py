import math

import numpy as np
import pytest

from msif.graph import block_diagonal, build_graph, kernel_adjacency, normalize_adjacency


def brute_kernel(pos, eps=1e-6):
    T, N, _ = pos.shape
    a = np.zeros((T, N, N))
    for t in range(T):
        for i in range(N):
            for j in range(N):
                if i != j:
                    # plain products: pow() is not guaranteed to round x**2 correctly
                    dx = float(pos[t, i, 0]) - float(pos[t, j, 0])
                    dy = float(pos[t, i, 1]) - float(pos[t, j, 1])
                    a[t, i, j] = 1.0 / (math.sqrt(dx * dx + dy * dy) + eps)
    return a


def brute_normalize(adj):
    T, N, _ = adj.shape
    out = np.zeros_like(adj)
    for t in range(T):
        a_hat = adj[t] + np.eye(N)
        deg = [0.0] * N
        for i in range(N):
            for j in range(N):
                deg[i] += a_hat[i, j]
        for i in range(N):
            for j in range(N):
                out[t, i, j] = (1.0 / np.sqrt(deg[i])) * a_hat[i, j] * (1.0 / np.sqrt(deg[j]))
    return out


def test_kernel_examples():
    a = kernel_adjacency(np.array([[[0.0, 0.0], [3.0, 4.0]]]))
    assert a[0, 0, 1] == pytest.approx(1.0 / (5.0 + 1e-6), rel=1e-15)
    assert a[0, 0, 0] == 0.0
    same = kernel_adjacency(np.array([[[2.0, 2.0], [2.0, 2.0]]]))
    assert same[0, 0, 1] == pytest.approx(1e6)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((1, 1, 1))), [[[1.0]]])
    out = normalize_adjacency(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    np.testing.assert_allclose(out, 0.5)
    np.testing.assert_allclose(np.linalg.eigvalsh(out[0]), [0.0, 1.0], atol=1e-15)
    np.testing.assert_array_equal(normalize_adjacency(np.zeros((2, 3, 3))), np.broadcast_to(np.eye(3), (2, 3, 3)))
    with pytest.raises(ValueError):
        normalize_adjacency(np.zeros((1, 0, 0)))


def test_matches_brute_force_and_spectrum(rng):
    for _ in range(50):
        n = rng.integers(1, 9)
        pos = rng.uniform(0, 100, (2, n, 2))
        adj = kernel_adjacency(pos)
        np.testing.assert_array_equal(adj, brute_kernel(pos))
        norm = normalize_adjacency(adj)
        np.testing.assert_array_equal(norm, brute_normalize(adj))
        assert np.abs(norm - norm.transpose(0, 2, 1)).max() <= 1e-12
        ev = np.linalg.eigvalsh(norm)
        assert ev.min() >= -1 - 1e-10 and ev.max() <= 1 + 1e-10
        rows = norm.sum(-1)
        assert (rows > 0).all() and (rows <= n + 1e-12).all()
        assert norm.min() >= 0 and norm.max() <= 1


def test_monotone_in_one_pair(rng):
    pos = rng.uniform(0, 50, (1, 4, 2))
    a0 = kernel_adjacency(pos)
    moved = pos.copy()
    moved[0, 3] += (moved[0, 3] - moved[0, 2]) * 0.5   # node 3 moves away from node 2 only along their line
    a1 = kernel_adjacency(moved)
    assert a1[0, 2, 3] < a0[0, 2, 3]
    np.testing.assert_array_equal(a1[0, :3, :3], a0[0, :3, :3])


def test_distance_bound(rng):
    pos = np.array([[[0.0, 0.0], [10.0, 0.0], [0.0, 12.0]]])
    assert kernel_adjacency(pos)[0].max() <= 1.0 / 10.0


def test_permutation_equivariance(rng):
    pos = rng.uniform(0, 100, (3, 4, 2))
    attrs = rng.standard_normal((3, 4, 2))
    perm = rng.permutation(4)
    g = build_graph(attrs, pos)
    gp = build_graph(attrs[:, perm], pos[:, perm])
    np.testing.assert_array_equal(gp.attrs, g.attrs[:, perm])
    np.testing.assert_array_equal(gp.adj, g.adj[:, perm][:, :, perm])
    np.testing.assert_allclose(gp.adj_norm, g.adj_norm[:, perm][:, :, perm], rtol=0, atol=1e-15)


def test_single_node_graph():
    g = build_graph(np.zeros((5, 1, 2)), np.ones((5, 1, 2)))
    np.testing.assert_array_equal(g.adj_norm, np.ones((5, 1, 1)))
    assert g.n_nodes == 1


def test_build_graph_shape_check():
    with pytest.raises(ValueError):
        build_graph(np.zeros((3, 2, 2)), np.zeros((3, 4, 2)))


def test_block_diagonal():
    a, b = np.ones((2, 1, 1)), np.full((2, 2, 2), 2.0)
    out = block_diagonal([a, b])
    assert out.shape == (2, 3, 3)
    assert out[:, 0, 1:].sum() == 0 and out[:, 1:, 0].sum() == 0
    np.testing.assert_array_equal(out[:, 1:, 1:], b)
