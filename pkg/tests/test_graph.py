import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvasr import functional as F
from pvasr.errors import DegeneratePositions, EmptyClip, MissingFile, ParseError, ShapeMismatch
from pvasr.gradcheck import grad_check
from pvasr.graph import (NUM_LANDMARKS, LandmarkClip, PASREncoder, STGCNBlock, build_lip_adjacency,
                         canonical_template, default_graph, load_template, normalize_adjacency,
                         parse_template, pasr_encode, stgcn_block, write_template)
from pvasr.tensor import Tensor, tsum


def spectral_radius(a, iters=500):
    """Power iteration; ``a`` is symmetric so the Rayleigh quotient converges to |lambda|max."""
    v = np.ones(a.shape[0]) / np.sqrt(a.shape[0])
    for _ in range(iters):
        w = a @ v
        v = w / np.linalg.norm(w)
    return abs(v @ a @ v)


def brute_knn_edges(pos, k):
    n = len(pos)
    edges = set()
    for i in range(n):
        cands = sorted((float(np.hypot(*(pos[i] - pos[j]))), j) for j in range(n) if j != i)
        edges.update((min(i, j), max(i, j)) for _, j in cands[:k])
    return edges


# -- template file --------------------------------------------------------------


def test_shipped_template_is_canonical_and_in_unit_square():
    t = load_template()
    assert t.shape == (NUM_LANDMARKS, 2)
    np.testing.assert_allclose(t, canonical_template(), atol=1e-6)
    assert t.min() >= 0 and t.max() <= 1


def test_template_round_trip(tmp_path):
    path = tmp_path / "t.txt"
    write_template(path)
    np.testing.assert_allclose(load_template(path), canonical_template(), atol=1e-6)


@pytest.mark.parametrize("text,line", [
    ("0 0.1 0.2\n1 0.3\n", 2),
    ("0 0.1 x\n", 1),
    ("# c\n0 0.1 1.5\n", 2),
    ("0 0.1 0.2\n0 0.3 0.3\n", 2),
])
def test_template_parse_errors_name_the_line(text, line):
    with pytest.raises(ParseError) as exc:
        parse_template(text, "t.txt")
    assert exc.value.line == line
    assert f"t.txt:{line}:" in str(exc.value)


def test_template_gap_and_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_template("0 0.1 0.1\n2 0.2 0.2\n")
    with pytest.raises(MissingFile):
        load_template(tmp_path / "absent.txt")


# -- graph construction -----------------------------------------------------------


def test_default_graph_invariants():
    g = default_graph()
    a = g.adjacency
    assert g.node_count == NUM_LANDMARKS and a.shape == (117, 117)
    assert np.array_equal(a, a.T) and np.all(a >= 0)
    assert np.all(np.diag(a) > 0)
    assert g.is_connected()
    assert spectral_radius(a) <= 1 + 1e-9


def test_full_neighbourhood_gives_complete_graph():
    g = build_lip_adjacency(load_template(), k=116)
    assert len(g.edges) == 117 * 116 // 2


def test_k1_on_collinear_points_is_chain():
    pos = np.stack([np.linspace(0, 1, 9), np.zeros(9)], axis=1)
    g = build_lip_adjacency(pos, k=1)
    assert set(g.edges) == {(i, i + 1) for i in range(8)}
    assert set(g.edges) == brute_knn_edges(pos, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.integers(3, 25))
def test_random_graphs_connected_superset_of_knn(seed, k, n):
    pos = np.random.default_rng(seed).random((n, 2))
    g = build_lip_adjacency(pos, k=k)
    assert g.is_connected()
    assert brute_knn_edges(pos, min(k, n - 1)) <= set(g.edges)
    assert spectral_radius(g.adjacency) <= 1 + 1e-9


def test_clusters_get_bridged():
    pos = np.array([[0, 0], [0.01, 0], [1, 1], [1.01, 1]], dtype=float)
    g = build_lip_adjacency(pos, k=1)
    assert g.is_connected() and len(g.edges) == 3


def test_graph_errors():
    with pytest.raises(DegeneratePositions):
        build_lip_adjacency(np.full((5, 2), 0.3), k=2)
    with pytest.raises(ValueError):
        build_lip_adjacency(load_template(), k=0)
    with pytest.raises(ShapeMismatch):
        build_lip_adjacency(np.array([[0.1, np.nan], [0.2, 0.2]]), k=1)


def test_normalize_adjacency_hand_cases():
    assert normalize_adjacency([], 1).tolist() == [[1.0]]
    np.testing.assert_allclose(normalize_adjacency([(0, 1)], 2), np.full((2, 2), 0.5), rtol=1e-15)
    # path 0-1-2: degrees (with self loops) 2, 3, 2
    a = normalize_adjacency([(0, 1), (1, 2)], 3)
    assert a[0, 1] == pytest.approx(1 / np.sqrt(6)) and a[1, 1] == pytest.approx(1 / 3)
    assert a[0, 2] == 0.0


# -- ST-GCN ------------------------------------------------------------------------


def test_block_degenerates_to_mish_with_identity_parts():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 5, 3))
    impulse = np.zeros((3, 3, 3))
    impulse[1] = np.eye(3)
    out = stgcn_block(Tensor(x), np.eye(5), Tensor(np.eye(3)), Tensor(impulse), residual=False).data
    np.testing.assert_allclose(out, F.mish(Tensor(x)).data, rtol=1e-15)
    out = stgcn_block(Tensor(x), np.eye(5), Tensor(np.eye(3)), Tensor(impulse)).data
    np.testing.assert_allclose(out, F.mish(Tensor(x)).data + x, rtol=1e-15)


def test_identity_adjacency_is_pointwise_linear():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(4, 5, 2)), rng.normal(size=(2, 3))
    np.testing.assert_allclose(F.linear(F.graph_conv(Tensor(x), np.eye(5)), Tensor(w)).data, x @ w,
                               rtol=1e-14)


def test_first_block_shape():
    blk = STGCNBlock(2, 64, np.random.default_rng(0))
    out = blk(Tensor(np.random.default_rng(1).random((10, 117, 2))), default_graph().adjacency)
    assert out.shape == (10, 117, 64) and not blk.residual


def test_block_errors():
    rng = np.random.default_rng(0)
    w, k = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(3, 4, 4)))
    with pytest.raises(ShapeMismatch):
        stgcn_block(Tensor(np.ones((3, 5, 2))), np.eye(4), w, k)
    with pytest.raises(ShapeMismatch):
        stgcn_block(Tensor(np.ones((3, 5, 2))), np.eye(5), w, Tensor(np.ones((2, 4, 4))))
    with pytest.raises(ShapeMismatch):
        STGCNBlock(2, 4, rng, temporal_kernel=4)


def test_block_gradient():
    adj = normalize_adjacency([(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], 5)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        blk = STGCNBlock(3, 3, rng, temporal_kernel=3)
        x = Tensor(rng.normal(size=(4, 5, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 5, 3)))
        params = [blk.weight, blk.temporal, blk.bias]
        fn = lambda a, wt, tk, b: tsum(stgcn_block(a, adj, wt, tk, b) * w)
        assert grad_check(fn, [x, *params]) <= 1e-5, seed


def toy_encoder(adj, center=None, seed=0):
    return PASREncoder(8, np.random.default_rng(seed), adj, channels=4, blocks=2, temporal_kernel=3,
                       layers=1, heads=2, conv_kernel=3, center=center, scale=0.1)


def test_relabeling_invariance_on_five_node_graph():
    rng = np.random.default_rng(3)
    adj = normalize_adjacency([(0, 1), (1, 2), (2, 3), (3, 4), (1, 4)], 5)
    center = rng.random((5, 2))
    x = rng.random((6, 5, 2))
    perm = rng.permutation(5)
    enc = toy_encoder(adj, center)
    out = enc(Tensor(x)).data
    enc_p = toy_encoder(adj[np.ix_(perm, perm)], center[perm])
    out_p = enc_p(Tensor(x[:, perm])).data
    np.testing.assert_allclose(out_p, out, rtol=1e-12, atol=1e-13)


def test_block_is_permutation_equivariant():
    rng = np.random.default_rng(4)
    adj = normalize_adjacency([(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)], 5)
    blk = STGCNBlock(2, 3, rng, 3)
    x = rng.normal(size=(5, 5, 2))
    perm = rng.permutation(5)
    out = stgcn_block(Tensor(x), adj, blk.weight, blk.temporal, blk.bias).data
    out_p = stgcn_block(Tensor(x[:, perm]), adj[np.ix_(perm, perm)], blk.weight, blk.temporal, blk.bias).data
    np.testing.assert_allclose(out_p, out[:, perm], rtol=1e-12, atol=1e-14)


# -- clips and the encoder -----------------------------------------------------------


def test_clip_invariants():
    frames = np.random.default_rng(0).random((4, 117, 2))
    frames[2] = 0
    clip = LandmarkClip.from_frames(frames)
    assert clip.valid.tolist() == [True, True, False, True] and len(clip) == 4
    dropped = clip.drop_frames([True, False, False, False])
    assert np.all(dropped.frames[0] == 0) and not dropped.valid[0]
    with pytest.raises(ValueError):
        LandmarkClip(frames, np.zeros(4, dtype=bool))
    with pytest.raises(EmptyClip):
        LandmarkClip.from_frames(np.zeros((0, 117, 2)))
    with pytest.raises(ShapeMismatch):
        LandmarkClip(np.zeros((2, 117, 3)), np.zeros(2, dtype=bool))


@pytest.fixture(scope="module")
def small_pasr():
    return PASREncoder(16, np.random.default_rng(0), default_graph().adjacency, channels=8, blocks=6,
                       layers=1, heads=2, center=load_template(), scale=0.05)


def test_all_invalid_clip_is_finite(small_pasr):
    out = pasr_encode(LandmarkClip(np.zeros((5, 117, 2)), np.zeros(5, dtype=bool)), small_pasr)
    assert out.shape == (5, 16) and np.all(np.isfinite(out.data))


def test_doubling_length_doubles_output(small_pasr):
    frames = load_template()[None] + 0.01 * np.random.default_rng(1).normal(size=(7, 117, 2))
    a = pasr_encode(LandmarkClip.from_frames(frames), small_pasr)
    b = pasr_encode(LandmarkClip.from_frames(np.concatenate([frames, frames])), small_pasr)
    assert b.shape[0] == 2 * a.shape[0]


def test_centering_keeps_padding_zero():
    adj = normalize_adjacency([(0, 1), (1, 2)], 3)
    enc = PASREncoder(4, np.random.default_rng(0), adj, channels=2, blocks=1, layers=0,
                      center=np.full((3, 2), 0.5), scale=0.1)
    x = np.zeros((2, 3, 2))
    x[1] = 0.6
    plain = PASREncoder(4, np.random.default_rng(0), adj, channels=2, blocks=1, layers=0)
    np.testing.assert_allclose(enc.features(Tensor(x)).data,
                               plain.features(Tensor(np.where(x > 0, 1.0, 0.0))).data, rtol=1e-13)
    with pytest.raises(ShapeMismatch):
        PASREncoder(4, np.random.default_rng(0), adj, channels=2, blocks=1, layers=0, center=np.zeros((4, 2)))
