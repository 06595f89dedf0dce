import math

import numpy as np
import pytest

from semid.domain.clustering import ortho_anchors
from semid.domain.diagnostics import (
    build_sid_corpus,
    intra_code_cosine,
    joint_entropy,
    marginal_entropy,
    prefix_conditional_entropy,
    sid_overlap,
)
from semid.domain.models import QuantizerConfig, SequenceStore, TreeNode
from semid.domain.quantizers import (
    gaoq_level,
    quantize,
    quantize_gaoq,
    quantize_hkmeans_local,
    quantize_rq_kmeans,
    reconstruct,
)
from semid.errors import QuantizationError
from semid.infra.repositories import CodeBookRepo

from tests.synthetic import aligned_layout, embedding_matrix, shared_direction_mixture


def _random_embeddings(n=120, dim=8, seed=0):
    return embedding_matrix(np.random.default_rng(seed).standard_normal((n, dim)))


def _node_sets(book, level):
    return {frozenset(n.members.tolist()) for n in book.nodes if n.level == level}


# ---------------------------
# structure
# ---------------------------

@pytest.mark.parametrize("method", ["gaoq", "hkmeans", "rqkmeans"])
def test_sids_are_unique(method):
    emb = _random_embeddings()
    _, sids = quantize(emb, QuantizerConfig([4, 3], method=method, iters=20))
    assert len(set(sids.tuples())) == emb.rows
    assert sids.num_levels == 3
    for l in range(3):
        assert sids.codes[:, l].max() < sids.alphabet_sizes[l]


def test_gaoq_first_level_is_balanced():
    emb = _random_embeddings(n=120)
    _, sids = quantize_gaoq(emb, QuantizerConfig([4, 3], iters=20))
    counts = np.bincount(sids.codes[:, 0])
    assert counts.tolist() == [30, 30, 30, 30]
    assert marginal_entropy(sids, 1) >= 0.95 * math.log(4)


def test_gaoq_children_get_distinct_codes():
    emb = _random_embeddings(n=100)
    book, sids = quantize_gaoq(emb, QuantizerConfig([4, 5], iters=20))
    for parent in (n for n in book.nodes if n.level == 1):
        children = [n for n in book.nodes if n.parent == parent.node_id]
        codes = [c.code for c in children]
        assert len(codes) == len(set(codes))
        assert all(0 <= c < 5 for c in codes)
    assert sids.alphabet_sizes[:2] == [4, 5]


def test_gaoq_and_hkmeans_share_the_partition():
    emb = _random_embeddings(n=96)
    cfg = QuantizerConfig([4, 3], iters=20, seed=11)
    g_book, _ = quantize_gaoq(emb, cfg)
    h_book, _ = quantize_hkmeans_local(emb, cfg)
    for level in (1, 2, 3):
        assert _node_sets(g_book, level) == _node_sets(h_book, level)


def test_gaoq_is_deterministic():
    emb = _random_embeddings()
    cfg = QuantizerConfig([4, 3], iters=20, seed=3)
    _, a = quantize_gaoq(emb, cfg)
    _, b = quantize_gaoq(emb, cfg)
    assert np.array_equal(a.codes, b.codes)


def test_threads_do_not_change_codes():
    emb = _random_embeddings(n=144)
    one = quantize_gaoq(emb, QuantizerConfig([4, 3], iters=20, threads=1))[1]
    four = quantize_gaoq(emb, QuantizerConfig([4, 3], iters=20, threads=4))[1]
    assert np.array_equal(one.codes, four.codes)


def test_more_anchors_than_children():
    emb = _random_embeddings(n=96)
    book, sids = quantize_gaoq(emb, QuantizerConfig([4, 3], anchors=[4, 6], iters=20))
    assert sids.alphabet_sizes[1] == 6
    assert book.anchors[2].count == 6
    assert sids.codes[:, 1].max() < 6


def test_capacity_error_names_the_shortfall():
    emb = _random_embeddings(n=10)
    with pytest.raises(QuantizationError, match="cannot fill"):
        quantize_gaoq(emb, QuantizerConfig([4, 3]))


def test_unknown_method():
    with pytest.raises(QuantizationError):
        quantize(_random_embeddings(), QuantizerConfig([4], method="pq"))


def test_identical_embeddings_get_increasing_codes():
    x, _, _ = aligned_layout(0)
    # items 0..4 form one tight child group under the first parent
    x[1] = x[0]
    x[3] = x[0]
    book, sids = quantize_gaoq(embedding_matrix(x), QuantizerConfig([8, 4], iters=30))
    assert len(set(sids.tuples())) == x.shape[0]
    assert [0, 1, 3] in book.duplicates
    assert len({tuple(sids.codes[i, :-1]) for i in (0, 1, 3)}) == 1
    last = [int(sids.codes[i, -1]) for i in (0, 1, 3)]
    assert last == sorted(last)


def test_rq_last_column_counts_collisions():
    emb = _random_embeddings(n=50)
    book, sids = quantize_rq_kmeans(emb, QuantizerConfig([3, 2], iters=20))
    seen = {}
    for row in sids.codes:
        key = tuple(row[:-1])
        assert row[-1] == seen.get(key, 0)
        seen[key] = row[-1] + 1
    assert len(book.level_centroids) == 2


def test_reconstruction_uses_prefix_centroids():
    emb = _random_embeddings(n=60)
    book, sids = quantize_gaoq(emb, QuantizerConfig([3, 2], iters=20))
    rec = reconstruct(book, sids, upto=1)
    for node in (n for n in book.nodes if n.level == 1):
        assert np.allclose(rec[node.members], emb.values[node.members].astype(np.float64).mean(axis=0))


def test_codebook_roundtrip(tmp_path):
    emb = _random_embeddings(n=48)
    book, sids = quantize_gaoq(emb, QuantizerConfig([3, 2], iters=20))
    path = str(tmp_path / "book.json")
    CodeBookRepo(path).save(book, sids)
    back, alphabet = CodeBookRepo(path).load()
    assert alphabet == sids.alphabet_sizes
    assert back.method == "gaoq"
    assert len(back.nodes) == len(book.nodes)
    assert np.allclose(back.anchors[2].vectors, book.anchors[2].vectors)
    assert np.allclose(reconstruct(back, sids), reconstruct(book, sids))


# ---------------------------
# alignment
# ---------------------------

@pytest.mark.parametrize("seed", range(20))
def test_shared_offsets_get_the_same_code_under_every_parent(seed):
    x, parents, offsets = aligned_layout(seed)
    _, sids = quantize_gaoq(embedding_matrix(x), QuantizerConfig([8, 4], iters=30, seed=seed))
    assert len(np.unique(sids.codes[:, 0])) == 8
    for o in range(4):
        assert len(np.unique(sids.codes[offsets == o, 1])) == 1


def test_local_indices_disagree_across_parents_for_some_seed():
    broken = 0
    for seed in range(20):
        x, _, offsets = aligned_layout(seed)
        _, sids = quantize_hkmeans_local(embedding_matrix(x), QuantizerConfig([8, 4], iters=30, seed=seed))
        if any(len(np.unique(sids.codes[offsets == o, 1])) > 1 for o in range(4)):
            broken += 1
    assert broken >= 1


def test_alignment_raises_level_two_overlap():
    x, parents, offsets = aligned_layout(0)
    n = x.shape[0]
    # each target follows an item with the same offset under another parent
    rng = np.random.default_rng(0)
    sequences = []
    for t in range(n):
        others = np.flatnonzero((offsets == offsets[t]) & (parents != parents[t]))
        sequences.append(np.array([int(rng.choice(others)), t]))
    store = SequenceStore([f"u{t}" for t in range(n)], sequences, max_len=8)
    cfg = QuantizerConfig([8, 4], iters=30)
    emb = embedding_matrix(x)
    gaoq = sid_overlap(build_sid_corpus(store, quantize_gaoq(emb, cfg)[1]))
    local = sid_overlap(build_sid_corpus(store, quantize_hkmeans_local(emb, cfg)[1]))
    assert gaoq.overlap[1] == 1.0
    assert gaoq.overlap[1] >= local.overlap[1]


def test_alignment_raises_intra_code_cosine():
    x, _, _ = shared_direction_mixture(0)
    emb = embedding_matrix(x)
    cfg = QuantizerConfig([16, 8], iters=30)
    _, g_sids = quantize_gaoq(emb, cfg)
    _, h_sids = quantize_hkmeans_local(emb, cfg)
    assert intra_code_cosine(g_sids, emb, 2) >= 1.5 * intra_code_cosine(h_sids, emb, 2)


def test_prefix_entropy_no_worse_than_residual_kmeans():
    emb = _random_embeddings(n=128)
    _, g_sids = quantize_gaoq(emb, QuantizerConfig([4, 4], iters=20))
    _, r_sids = quantize_rq_kmeans(emb, QuantizerConfig([4, 4], iters=20))
    g = sum(prefix_conditional_entropy(g_sids, l) for l in (1, 2, 3))
    r = sum(prefix_conditional_entropy(r_sids, l) for l in (1, 2, 3))
    assert g <= r + 1e-9
    assert g == pytest.approx(joint_entropy(g_sids))


def test_gaoq_level_gives_each_child_a_distinct_anchor():
    x = np.random.default_rng(4).standard_normal((24, 8))
    root = TreeNode(0, 0, None, x.mean(axis=0), np.arange(24))
    anchors = ortho_anchors(5, 8, np.random.default_rng(1), level=1)
    children = gaoq_level(root, x, 4, anchors, iters=20, rng=np.random.default_rng(2))
    codes = [c.code for c in children]
    assert len(children) == 4
    assert len(set(codes)) == 4
    assert all(0 <= c < 5 for c in codes)
    assert sorted(int(m) for c in children for m in c.members) == list(range(24))


def test_single_level_gaoq_gives_one_item_per_cluster():
    emb = _random_embeddings(n=4, dim=3)
    _, sids = quantize_gaoq(emb, QuantizerConfig([4], iters=10))
    assert sorted(sids.codes[:, 0].tolist()) == [0, 1, 2, 3]
    assert sids.codes[:, 1].tolist() == [0, 0, 0, 0]


def test_rq_error_does_not_grow_with_more_stages():
    emb = _random_embeddings(n=90)
    book, sids = quantize_rq_kmeans(emb, QuantizerConfig([3, 3, 3], iters=30))
    x = emb.values.astype(np.float64)
    errors = [float(((x - reconstruct(book, sids, upto=l)) ** 2).sum()) for l in (1, 2, 3)]
    assert errors[0] >= errors[1] - 1e-9
    assert errors[1] >= errors[2] - 1e-9


@pytest.mark.slow
def test_alignment_raises_intra_code_cosine_at_scale():
    # 4096 items in 32 dimensions: 16 parents, 16 shared directions
    x, _, _ = shared_direction_mixture(1, parents=16, directions=16, points=16, parent_norm=2.0)
    emb = embedding_matrix(x)
    cfg = QuantizerConfig([16, 16], iters=30)
    _, g_sids = quantize_gaoq(emb, cfg)
    _, h_sids = quantize_hkmeans_local(emb, cfg)
    assert x.shape == (4096, 32)
    assert intra_code_cosine(g_sids, emb, 2) >= 2.0 * intra_code_cosine(h_sids, emb, 2)
