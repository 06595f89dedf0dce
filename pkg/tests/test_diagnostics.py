import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semid.domain.diagnostics import (
    ToyJoint,
    ambiguity_decomposition,
    check_sufficiency_bound,
    code_usage,
    entropy_report,
    exact_conditionals,
    intra_code_cosine,
    joint_entropy,
    marginal_entropy,
    mask_weights,
    nats_to_bits,
    prefix_conditional_entropy,
    random_predictors,
    random_toy,
    sid_overlap,
)
from semid.domain.models import EmbeddingMatrix, SidCorpus, SidTable


def _table(codes):
    codes = np.asarray(codes, dtype=np.int64)
    return SidTable(codes, [int(c) + 1 for c in codes.max(axis=0)], [f"i{i}" for i in range(len(codes))])


def _random_table(seed, n=200, sizes=(4, 3, 5)):
    rng = np.random.default_rng(seed)
    return _table(np.stack([rng.integers(0, s, size=n) for s in sizes], axis=1))


# ---------------------------
# entropies
# ---------------------------

def test_uniform_level_has_log_alphabet_entropy():
    sids = _table([[c, 0] for c in range(8)])
    assert marginal_entropy(sids, 1) == pytest.approx(math.log(8))
    assert marginal_entropy(sids, 2) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_chain_rule(seed):
    sids = _random_table(seed)
    total = sum(prefix_conditional_entropy(sids, l) for l in (1, 2, 3))
    assert total == pytest.approx(joint_entropy(sids), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_conditioning_reduces_entropy(seed):
    sids = _random_table(seed, n=60)
    for l in (1, 2, 3):
        assert prefix_conditional_entropy(sids, l) <= marginal_entropy(sids, l) + 1e-12


def test_level_out_of_range():
    with pytest.raises(ValueError):
        marginal_entropy(_table([[0, 1]]), 3)


def test_entropy_report_and_bits():
    sids = _table([[0, 0], [0, 1], [1, 0], [1, 1]])
    rep = entropy_report(sids)
    assert rep.prefixes_observed == [1, 2]
    assert rep.joint == pytest.approx(math.log(4))
    assert nats_to_bits(rep.joint) == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), level=st.integers(1, 3))
def test_ambiguity_decomposition_is_exact(seed, level):
    out = ambiguity_decomposition(_random_table(seed), level)
    assert abs(out["residual"]) <= 1e-9
    assert out["mi_z_prefix_given_c"] >= -1e-12


def test_first_level_has_no_prefix_information():
    out = ambiguity_decomposition(_random_table(1), 1)
    assert out["mi_z_prefix_given_c"] == pytest.approx(0.0, abs=1e-12)


# ---------------------------
# ambiguity
# ---------------------------

def test_intra_code_cosine_hand_example():
    sids = _table([[0, 0], [0, 1], [1, 0], [1, 1]])
    x = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    emb = EmbeddingMatrix(x.astype(np.float32), sids.row_tokens)
    # code 0: cos 1, code 1: cos 0
    assert intra_code_cosine(sids, emb, 1) == pytest.approx(0.5)


def test_intra_code_cosine_identical_members():
    sids = _table([[0], [0], [1], [1]])
    x = np.array([[2.0, 1.0], [2.0, 1.0], [0.0, 3.0], [0.0, 3.0]], dtype=np.float32)
    assert intra_code_cosine(sids, EmbeddingMatrix(x, sids.row_tokens), 1) == pytest.approx(1.0)


def test_intra_code_cosine_undefined_for_singletons():
    sids = _table([[0], [1], [2]])
    x = np.eye(3, dtype=np.float32)
    assert math.isnan(intra_code_cosine(sids, EmbeddingMatrix(x, sids.row_tokens), 1))


def _corpus():
    return SidCorpus(
        histories=[np.array([[0, 1], [2, 3]]), np.array([[4, 3]]), np.zeros((0, 2), dtype=np.int64)],
        targets=[np.array([0, 3]), np.array([1, 1]), np.array([0, 0])],
    )


def test_sid_overlap_hand_example():
    rep = sid_overlap(_corpus())
    assert rep.overlap == [0.5, 0.5]
    assert rep.pairs_used == 2
    assert rep.pairs_skipped == 1
    assert rep.overall_overlap == 0.5



def test_sid_overlap_carries_intra_code_cosine_per_level():
    sids = _table([[0, 0], [0, 1], [1, 0], [1, 1]])
    x = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    rep = sid_overlap(_corpus(), sids, EmbeddingMatrix(x, sids.row_tokens))
    assert rep.intra_code_cosine == pytest.approx([0.5, 0.5])
    assert sid_overlap(_corpus()).intra_code_cosine == []


def test_sid_overlap_invariant_to_relabeling():
    corpus = _corpus()
    perm = np.array([3, 0, 4, 1, 2])
    relabeled = SidCorpus([perm[h] if len(h) else h for h in corpus.histories], [perm[t] for t in corpus.targets])
    assert sid_overlap(relabeled).overlap == sid_overlap(corpus).overlap


def test_sid_overlap_needs_a_history():
    with pytest.raises(ValueError):
        sid_overlap(SidCorpus([np.zeros((0, 2), dtype=np.int64)], [np.array([0, 0])]))


def test_code_usage():
    sids = _table([[0, 0], [0, 1], [1, 0], [1, 1], [1, 2]])
    usage = code_usage(sids)
    assert usage["used_codes"] == [2, 3]
    assert usage["prefixes"] == 2
    assert usage["max_prefix_population"] == 3
    assert usage["collision_rate"] == pytest.approx(1 - 2 / 5)


# ---------------------------
# sufficiency bound
# ---------------------------

def test_mask_weights():
    assert mask_weights([1.0, 1.0, 1.0]).tolist() == pytest.approx([2 / 3] * 3)
    assert mask_weights([1.0]).tolist() == [1.0]
    assert mask_weights([2.0, 0.0]).tolist() == pytest.approx([1.5, 0.0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_bound_holds_on_random_toys(seed):
    rng = np.random.default_rng(seed)
    toy, hidden = random_toy(rng)
    res = check_sufficiency_bound(toy, hidden, random_predictors(rng, toy, hidden), mask_weights(np.ones(3)))
    assert res.holds
    assert res.lhs >= res.rhs - 1e-9
    assert res.gap == pytest.approx(res.expected_kl, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_bound_is_tight_for_exact_predictors(seed):
    rng = np.random.default_rng(seed)
    toy, hidden = random_toy(rng)
    res = check_sufficiency_bound(toy, hidden, exact_conditionals(toy, hidden), mask_weights(np.ones(3)))
    assert abs(res.gap) <= 1e-9
    assert res.expected_kl == pytest.approx(0.0, abs=1e-12)


def test_bound_with_constant_encoder_has_no_information():
    toy = ToyJoint(
        probs=np.array([0.25, 0.25, 0.25, 0.25]),
        fields=np.array([[0, 0], [0, 1], [1, 0], [1, 1]]),
        vocab_sizes=[2, 2],
    )
    hidden = np.zeros(4, dtype=np.int64)
    uniform = [np.full((1, 2), 0.5), np.full((1, 2), 0.5)]
    res = check_sufficiency_bound(toy, hidden, uniform, [1.0, 1.0])
    assert res.lhs == pytest.approx(0.0, abs=1e-12)
    assert res.rhs == pytest.approx(0.0, abs=1e-12)


def test_bound_rejects_bad_predictor():
    toy = ToyJoint(np.array([0.5, 0.5]), np.array([[0], [1]]), [2])
    with pytest.raises(ValueError):
        check_sufficiency_bound(toy, np.array([0, 1]), [np.array([[0.9, 0.3], [0.5, 0.5]])], [1.0])


def test_toy_must_be_normalized():
    toy = ToyJoint(np.array([0.5, 0.6]), np.array([[0], [1]]), [2])
    with pytest.raises(ValueError):
        check_sufficiency_bound(toy, np.array([0, 0]), [np.full((1, 2), 0.5)], [1.0])
