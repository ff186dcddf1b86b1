import numpy as np
import pytest
import scipy.sparse as sp

from socialdmf import (
    TrustTimeline,
    apply_laplacian,
    apply_social_block,
    build_laplacian,
    laplacian_quadratic,
    pack_state,
)

from oracles import edge_sum_quadratic


def _random_adjacency(rng, m, density=0.3, weighted=False):
    W = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            if rng.uniform() < density:
                W[i, j] = W[j, i] = rng.uniform(0.5, 2.0) if weighted else 1.0
    return W


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("weighted", [False, True])
def test_apply_matches_dense(seed, weighted):
    rng = np.random.default_rng(seed)
    m, k = 12, 3
    W = _random_adjacency(rng, m, weighted=weighted)
    op = build_laplacian(sp.csr_matrix(W))
    L = np.diag(W.sum(axis=1)) - W
    U = rng.standard_normal((m, k))
    np.testing.assert_allclose(apply_laplacian(op, U), L @ U, rtol=1e-12, atol=1e-12)


def test_quadratic_matches_edge_sum_and_apply():
    rng = np.random.default_rng(42)
    m, k = 10, 4
    W = _random_adjacency(rng, m, weighted=True)
    op = build_laplacian(W)
    U = rng.standard_normal((m, k))
    quad = laplacian_quadratic(op, U)
    assert quad >= 0.0
    np.testing.assert_allclose(quad, edge_sum_quadratic(W, U), rtol=1e-12)
    # Consistency with the operator form tr(U' L U).
    np.testing.assert_allclose(quad, float(np.sum(U * apply_laplacian(op, U))), rtol=1e-10)


def test_quadratic_zero_for_constant_rows():
    W = _random_adjacency(np.random.default_rng(3), 8)
    op = build_laplacian(W)
    U = np.ones((8, 3)) * 2.5
    assert laplacian_quadratic(op, U) == 0.0
    np.testing.assert_allclose(apply_laplacian(op, U), 0.0, atol=1e-14)


def test_empty_graph_is_zero_operator():
    op = build_laplacian(sp.csr_matrix((5, 5)))
    U = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_array_equal(apply_laplacian(op, U), np.zeros((5, 2)))
    assert laplacian_quadratic(op, U) == 0.0
    assert op.edge_count == 0


def test_build_rejects_bad_graphs():
    with pytest.raises(ValueError, match="symmetric"):
        build_laplacian(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="diagonal"):
        build_laplacian(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="negative"):
        build_laplacian(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError, match="square"):
        build_laplacian(np.zeros((2, 3)))


def test_apply_rejects_wrong_row_count():
    op = build_laplacian(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        apply_laplacian(op, np.zeros((5, 2)))


def test_social_block_zero_velocities_and_per_bin_positions():
    rng = np.random.default_rng(11)
    m, k, N = 6, 2, 3
    graphs = []
    cumulative = np.zeros((m, m))
    for _ in range(N):
        extra = _random_adjacency(rng, m, density=0.2)
        cumulative = np.maximum(cumulative, extra)
        graphs.append(sp.csr_matrix(cumulative))
    trust = TrustTimeline(m, graphs)
    blocks = [(rng.standard_normal((m, k)), rng.standard_normal((m, k))) for _ in range(N)]
    state = pack_state(blocks)
    out = apply_social_block(trust, state)
    shaped = type(state)(x=out, N=N, m=m, k=k)
    for t in range(N):
        W = graphs[t].toarray()
        L = np.diag(W.sum(axis=1)) - W
        np.testing.assert_array_equal(shaped.velocity(t), np.zeros((m, k)))
        np.testing.assert_allclose(shaped.position(t), L @ blocks[t][1], rtol=1e-12, atol=1e-12)


def test_social_block_rejects_mismatched_shapes():
    trust = TrustTimeline(3, [sp.csr_matrix((3, 3))])
    state = pack_state([(np.zeros((4, 2)), np.zeros((4, 2)))])
    with pytest.raises(ValueError):
        apply_social_block(trust, state)
