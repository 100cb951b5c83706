import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sparsgd.compressors import (
    CompressorConfig,
    Kind,
    block_indices,
    compress_blockrandomk,
    compress_identity,
    compress_randomk,
    compress_scoped,
    compress_topk,
    k_for,
)
from sparsgd.errors import ConfigError, ContractViolation
from sparsgd.params import LayeredParams, decompress, flatten
from sparsgd.rng import RngStream, stream_for


def brute_topk(v, k):
    # full sort by (-|v|, index)
    order = sorted(range(v.size), key=lambda i: (-abs(v[i]), i))
    return sorted(order[:k])


@pytest.mark.parametrize("dim, fraction, k", [(100, 0.01, 1), (250, 0.01, 3), (5, 1.0, 5), (1, 0.01, 1), (700, 0.07, 49)])
def test_k_for(dim, fraction, k):
    assert k_for(dim, fraction) == k


def test_k_for_never_exceeds_dim():
    for dim in range(1, 300):
        assert 1 <= k_for(dim, 0.37) <= dim


def test_config_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        CompressorConfig(fraction=0.0)
    with pytest.raises(ConfigError):
        CompressorConfig(fraction=1.5)


def test_topk_examples():
    pl = compress_topk(np.array([0.1, -3.0, 0.5, 2.0]), 2)
    assert pl.indices.tolist() == [1, 3]
    assert pl.values.tolist() == [-3.0, 2.0]
    pl = compress_topk(np.array([1.0, -1.0, 0.0]), 1)
    assert pl.indices.tolist() == [0] and pl.values.tolist() == [1.0]


@pytest.mark.parametrize("k", [0, 4])
def test_topk_k_out_of_range(k):
    with pytest.raises(ContractViolation):
        compress_topk(np.ones(3), k)


@settings(max_examples=300)
@given(
    arrays(np.float64, st.integers(1, 60), elements=st.sampled_from([0.0, 1.0, -1.0, 2.5, -2.5, 0.25, 7.0])),
    st.data(),
)
def test_topk_matches_full_sort_with_ties(v, data):
    k = data.draw(st.integers(1, v.size))
    pl = compress_topk(v, k)
    assert pl.indices.tolist() == brute_topk(v, k)
    unselected = np.setdiff1d(np.arange(v.size), pl.indices)
    if unselected.size:
        assert np.abs(pl.values).min() >= np.abs(v[unselected]).max()


def test_randomk_full_selection():
    v = np.arange(6.0)
    pl = compress_randomk(v, 6, RngStream(3))
    assert pl.indices.tolist() == list(range(6))
    assert np.array_equal(pl.values, v)


def test_randomk_deterministic_given_stream():
    v = np.random.default_rng(0).standard_normal(1000)
    a = compress_randomk(v, 17, RngStream(9, tag=2, step=5))
    b = compress_randomk(v, 17, RngStream(9, tag=2, step=5))
    c = compress_randomk(v, 17, RngStream(9, tag=2, step=6))
    assert a == b
    assert not a.same_coordinates(c)


@settings(max_examples=100)
@given(st.integers(1, 200), st.data(), st.integers(0, 2**64 - 1))
def test_randomk_payload_invariants(dim, data, seed):
    k = data.draw(st.integers(1, dim))
    pl = compress_randomk(np.ones(dim), k, RngStream(seed))
    assert pl.nnz == k
    assert np.all(np.diff(pl.indices.astype(np.int64)) > 0)
    assert pl.indices.max() < dim


def test_blockrandomk_wraps_around():
    assert block_indices(5, 3, 4).tolist() == [0, 1, 4]
    assert block_indices(5, 3, 1).tolist() == [1, 2, 3]


@settings(max_examples=100)
@given(st.integers(1, 200), st.data(), st.integers(0, 2**32))
def test_blockrandomk_is_one_cyclic_run(dim, data, seed):
    k = data.draw(st.integers(1, dim))
    v = np.arange(dim, dtype=np.float64)
    pl = compress_blockrandomk(v, k, RngStream(seed))
    assert pl.nnz == k
    idx = pl.indices.astype(np.int64)
    assert np.array_equal(pl.values, v[idx])
    # exactly one gap in the cyclic sequence unless k == dim
    gaps = np.count_nonzero(np.diff(np.append(idx, idx[0] + dim)) != 1)
    assert gaps == (0 if k == dim else 1)


def test_identity():
    v = np.array([1.0, 2.0])
    pl = compress_identity(v)
    assert pl.indices.tolist() == [0, 1] and pl.values.tolist() == [1.0, 2.0]
    assert np.array_equal(decompress(pl), v)
    assert pl.nnz == v.size


def test_scoped_layerwise_k_per_layer():
    p = LayeredParams([("a", np.arange(1.0, 101.0)), ("b", np.arange(1.0, 301.0))])
    out = compress_scoped(p, CompressorConfig(kind=Kind.TOPK, fraction=0.01, scope="layerwise"), None)
    assert [pl.nnz for pl in out] == [1, 3]
    assert [pl.scope for pl in out] == ["a", "b"]


def test_scoped_global_single_payload():
    p = LayeredParams([("a", np.arange(1.0, 101.0)), ("b", np.arange(1.0, 301.0))])
    out = compress_scoped(p, CompressorConfig(kind=Kind.TOPK, fraction=0.01, scope="global"), None)
    assert len(out) == 1
    assert out[0].dim == 400 and out[0].nnz == 4 and out[0].scope is None


def test_global_block_can_span_layer_boundary():
    p = LayeredParams([("a", np.ones(10)), ("b", np.ones(10))])
    cfg = CompressorConfig(kind=Kind.BLOCKRANDOMK, fraction=0.5, scope="global")
    spans = 0
    for step in range(50):
        idx = compress_scoped(p, cfg, RngStream(0, step=step))[0].indices
        spans += bool((idx < 10).any() and (idx >= 10).any())
    assert spans > 0


def test_scoped_stream_advances_per_layer():
    # identical layers must still get different random coordinates
    p = LayeredParams([("a", np.ones(100)), ("b", np.ones(100))])
    cfg = CompressorConfig(kind=Kind.RANDOMK, fraction=0.1)
    a, b = compress_scoped(p, cfg, RngStream(1))
    assert not np.array_equal(a.indices, b.indices)


@pytest.mark.parametrize("kind", [Kind.RANDOMK, Kind.BLOCKRANDOMK])
def test_shared_vs_perworker_seed(kind):
    p = LayeredParams([("a", np.ones(500))])
    cfg = CompressorConfig(kind=kind, fraction=0.02, base_seed=11)
    shared = [compress_scoped(p, cfg, stream_for(11, w, 4, shared=True))[0] for w in range(4)]
    assert all(s.same_coordinates(shared[0]) for s in shared)
    own = [compress_scoped(p, cfg, stream_for(11, w, 4, shared=False))[0] for w in range(4)]
    assert len({tuple(o.indices.tolist()) for o in own}) == 4


def test_scoped_identity_round_trip():
    p = LayeredParams([("a", [1.0, -2.0]), ("b", [3.0])])
    for scope in ("layerwise", "global"):
        out = compress_scoped(p, CompressorConfig(kind="identity", scope=scope), None)
        assert sum(pl.nnz for pl in out) == p.total_dim
        assert np.array_equal(np.concatenate([decompress(pl) for pl in out]), flatten(p))
