"""
Information-theoretic diagnostics of Semantic-ID corpora.

All entropies are plug-in estimates in nats (empirical frequencies, no bias
correction). Levels are 1-based.

- marginal_entropy / prefix_conditional_entropy / joint_entropy
- intra_code_cosine: directional coherence of items sharing a level code
- sid_overlap: how often a target's level code already appears in its history
- ambiguity_decomposition: H(z|c_l) = H(z|c_l,C_<l) + I(z;C_<l|c_l) with z
  discretised to its full SID
- check_sufficiency_bound: exact verification, by enumeration, that
  sum_k w_k I(h; f_k) >= sum_k w_k H(f_k) - E[loss]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.stats import entropy as _plugin

from semid.domain.quantizers import reconstruct
from semid.domain.models import (
    AmbiguityReport,
    BoundCheck,
    CodeBook,
    EmbeddingMatrix,
    EntropyReport,
    SequenceStore,
    SidCorpus,
    SidTable,
)

log = logging.getLogger(__name__)

MAX_ATOMS = 10_000


def _check_level(sids: SidTable, level: int) -> None:
    if not (1 <= level <= sids.num_levels):
        raise ValueError(f"level must be in [1, {sids.num_levels}], got {level}")


def _row_ids(block: np.ndarray) -> np.ndarray:
    """Dense ids of the distinct rows of a 2-D integer block."""
    if block.shape[1] == 0:
        return np.zeros(block.shape[0], dtype=np.int64)
    _, inverse = np.unique(block, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def entropy_of_rows(block: np.ndarray) -> float:
    """Plug-in entropy of the joint distribution of the rows of ``block``."""
    block = np.asarray(block)
    if block.ndim == 1:
        block = block[:, None]
    if block.shape[0] == 0:
        raise ValueError("empty corpus")
    counts = np.bincount(_row_ids(block))
    return float(_plugin(counts))


# -------------------------
# entropies
# -------------------------

def marginal_entropy(sids: SidTable, level: int) -> float:
    """Plug-in entropy of the level-``level`` codes."""
    _check_level(sids, level)
    return entropy_of_rows(sids.codes[:, level - 1])


def joint_entropy(sids: SidTable, upto: Optional[int] = None) -> float:
    """Plug-in entropy of the prefix (c_1..c_upto); default is the full SID."""
    upto = sids.num_levels if upto is None else int(upto)
    if upto == 0:
        return 0.0
    _check_level(sids, upto)
    return entropy_of_rows(sids.codes[:, :upto])


def prefix_conditional_entropy(sids: SidTable, level: int) -> float:
    """Sum over observed prefixes of p(prefix) * H(c_l | prefix)."""
    _check_level(sids, level)
    codes = sids.codes
    if codes.shape[0] == 0:
        raise ValueError("empty corpus")
    if level == 1:
        return marginal_entropy(sids, 1)
    prefix = _row_ids(codes[:, : level - 1])
    pair = _row_ids(np.stack([prefix, codes[:, level - 1]], axis=1))
    n_pair = np.bincount(pair)
    n_prefix = np.bincount(prefix)
    # prefix of each distinct pair
    pair_prefix = np.zeros(len(n_pair), dtype=np.int64)
    pair_prefix[pair] = prefix
    n = float(codes.shape[0])
    ratio = n_pair / n_prefix[pair_prefix]
    return float(-np.sum((n_pair / n) * np.log(ratio)))


def prefixes_observed(sids: SidTable, level: int) -> int:
    """Number of distinct prefixes C_<l conditioning the level-l code."""
    _check_level(sids, level)
    if level == 1:
        return 1
    return int(len(np.unique(sids.codes[:, : level - 1], axis=0)))


def entropy_report(sids: SidTable) -> EntropyReport:
    levels = range(1, sids.num_levels + 1)
    return EntropyReport(
        marginal=[marginal_entropy(sids, l) for l in levels],
        prefix_conditional=[prefix_conditional_entropy(sids, l) for l in levels],
        alphabet_sizes=list(sids.alphabet_sizes),
        prefixes_observed=[prefixes_observed(sids, l) for l in levels],
        joint=joint_entropy(sids),
    )


def ambiguity_decomposition(sids: SidTable, level: int) -> Dict[str, float]:
    """Splits H(z|c_l) into H(z|c_l, C_<l) and I(z; C_<l | c_l).

    ``z`` is discretised to the item's full SID. Each term is computed from
    its own entropy expression, so ``residual`` measures how exactly the
    identity holds.
    """
    _check_level(sids, level)
    codes = sids.codes
    z = _row_ids(codes)[:, None]
    c = codes[:, level - 1 : level]
    prefix = codes[:, : level - 1]
    h_c = entropy_of_rows(c)
    h_zc = entropy_of_rows(np.hstack([z, c]))
    h_z_given_c = h_zc - h_c
    h_cp = entropy_of_rows(np.hstack([prefix, c]))
    h_zcp = entropy_of_rows(np.hstack([z, prefix, c]))
    h_z_given_cp = h_zcp - h_cp
    # I(X;Y|Z) = H(X,Z) + H(Y,Z) - H(X,Y,Z) - H(Z)
    cond_mi = h_zc + h_cp - h_zcp - h_c
    return {
        "h_z_given_c": h_z_given_c,
        "h_z_given_c_prefix": h_z_given_cp,
        "mi_z_prefix_given_c": cond_mi,
        "residual": h_z_given_c - (h_z_given_cp + cond_mi),
    }


# -------------------------
# ambiguity
# -------------------------

def intra_code_cosine(sids: SidTable, embeddings: EmbeddingMatrix, level: int) -> float:
    """Unweighted mean, over level codes with >= 2 members, of the mean pairwise cosine.

    Returns NaN (with a warning) when no code has two members.
    """
    _check_level(sids, level)
    x = np.asarray(embeddings.values, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    codes = sids.codes[:, level - 1]
    values = []
    for code in np.unique(codes):
        members = unit[codes == code]
        m = members.shape[0]
        if m < 2:
            continue
        total = members.sum(axis=0)
        self_terms = float(np.einsum("ij,ij->", members, members))
        values.append((float(total @ total) - self_terms) / (m * (m - 1)))
    if not values:
        log.warning("level %d: no code has two members, intra-code cosine undefined", level)
        return float("nan")
    return float(np.mean(values))


def build_sid_corpus(store: SequenceStore, sids: SidTable) -> SidCorpus:
    """(history SIDs, target SID) pairs for every prediction target of every sequence."""
    histories, targets = [], []
    width = sids.num_levels
    for ex in store.iter_examples():
        hist = np.asarray(ex.history, dtype=np.int64)
        histories.append(sids.codes[hist] if len(hist) else np.zeros((0, width), dtype=np.int64))
        targets.append(sids.codes[ex.target])
    return SidCorpus(histories, targets)


def sid_overlap(corpus: SidCorpus, sids: Optional[SidTable] = None,
                embeddings: Optional[EmbeddingMatrix] = None) -> AmbiguityReport:
    """Per-level hit rate: does the target's level code appear in any history SID at that level.

    Pairs with an empty history are skipped and counted. Given the SID table
    and its embeddings, the report also carries the per-level intra-code
    cosine (NaN where no code has two members).
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    levels = len(corpus.targets[0])
    hits = np.zeros(levels)
    used = skipped = 0
    for hist, target in zip(corpus.histories, corpus.targets):
        if len(hist) == 0:
            skipped += 1
            continue
        hits += np.any(np.asarray(hist) == np.asarray(target)[None, :], axis=0)
        used += 1
    if skipped:
        log.warning("sid overlap: skipped %d pair(s) with empty history", skipped)
    if used == 0:
        raise ValueError("no pair with a non-empty history")
    per_level = (hits / used).tolist()
    intra: List[float] = []
    if sids is not None and embeddings is not None:
        intra = [intra_code_cosine(sids, embeddings, l) for l in range(1, sids.num_levels + 1)]
    return AmbiguityReport(
        intra_code_cosine=intra,
        overlap=per_level,
        overall_overlap=float(np.mean(per_level)),
        pairs_used=used,
        pairs_skipped=skipped,
    )


# -------------------------
# distortion and usage
# -------------------------

def reconstruction_error(book: CodeBook, sids: SidTable, embeddings: EmbeddingMatrix,
                         upto: Optional[int] = None) -> float:
    """Mean squared distance between each item and its reconstruction."""
    x = np.asarray(embeddings.values, dtype=np.float64)
    diff = x - reconstruct(book, sids, upto)
    return float(np.einsum("ij,ij->", diff, diff) / x.shape[0])


def code_usage(sids: SidTable) -> Dict[str, object]:
    """Used codes per level, prefix populations and collision rate before the last level."""
    codes = sids.codes
    n = codes.shape[0]
    used = [int(len(np.unique(codes[:, l]))) for l in range(sids.num_levels)]
    prefix = _row_ids(codes[:, :-1]) if sids.num_levels > 1 else np.zeros(n, dtype=np.int64)
    pop = np.bincount(prefix)
    return {
        "used_codes": used,
        "alphabet_sizes": list(sids.alphabet_sizes),
        "prefixes": int(len(pop)),
        "max_prefix_population": int(pop.max()),
        "mean_prefix_population": float(pop.mean()),
        "collision_rate": float(1.0 - len(pop) / n),
    }


# -------------------------
# sufficiency bound
# -------------------------

@dataclass
class ToyJoint:
    """Enumerable joint over atoms; each atom carries a context id and J field values."""
    probs: np.ndarray       # (A,)
    fields: np.ndarray      # (A, J) int
    vocab_sizes: List[int]
    contexts: Optional[np.ndarray] = None  # (A,) context id, free for the encoder

    def check(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] > MAX_ATOMS:
            raise ValueError(f"joint is not enumerable (needs 1-D probs with <= {MAX_ATOMS} atoms)")
        if np.any(p < 0) or not math.isclose(float(p.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("atom probabilities must be >= 0 and sum to 1")
        if self.fields.shape != (p.shape[0], len(self.vocab_sizes)):
            raise ValueError("fields must be (atoms, J)")


def mask_weights(alpha: Sequence[float], num_fields: Optional[int] = None) -> np.ndarray:
    """w_k = alpha_k * P(k masked) under the two-level policy, P = (J+1)/(2J)."""
    a = np.asarray(alpha, dtype=np.float64)
    j = len(a) if num_fields is None else int(num_fields)
    if j < 1 or len(a) != j:
        raise ValueError("one weight per field is required")
    return a * (j + 1) / (2.0 * j)


def _hidden_ids(toy: ToyJoint, encoder: Union[Sequence[int], np.ndarray, Callable[[int], int]]) -> np.ndarray:
    atoms = toy.probs.shape[0]
    if callable(encoder):
        hidden = np.array([int(encoder(a)) for a in range(atoms)], dtype=np.int64)
    else:
        hidden = np.asarray(encoder, dtype=np.int64)
    if hidden.shape != (atoms,) or hidden.min() < 0:
        raise ValueError("encoder must map every atom to a hidden state id >= 0")
    return hidden


def _joint_table(toy: ToyJoint, hidden: np.ndarray, k: int) -> np.ndarray:
    table = np.zeros((int(hidden.max()) + 1, toy.vocab_sizes[k]))
    np.add.at(table, (hidden, toy.fields[:, k]), toy.probs)
    return table


def exact_conditionals(toy: ToyJoint, encoder) -> List[np.ndarray]:
    """The true p_k(v | h) for every field (uniform rows for unreachable h)."""
    hidden = _hidden_ids(toy, encoder)
    out = []
    for k in range(len(toy.vocab_sizes)):
        table = _joint_table(toy, hidden, k)
        ph = table.sum(axis=1, keepdims=True)
        uniform = np.full_like(table, 1.0 / table.shape[1])
        out.append(np.divide(table, ph, out=uniform, where=ph > 0))
    return out


def _xlogy_ratio(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def check_sufficiency_bound(
    toy: ToyJoint,
    encoder,
    predictors: Sequence[np.ndarray],
    weights: Sequence[float],
    tol: float = 1e-9,
) -> BoundCheck:
    """Verifies the mask-weighted mutual-information bound by enumeration.

    lhs = sum_k w_k I(h; f_k); rhs = sum_k w_k H(f_k) - E[loss] with
    E[loss] = sum_k w_k E[-log q_k(f_k | h)]. The gap lhs - rhs must equal
    sum_k w_k E_h[KL(p_k(.|h) || q_k(.|h))], computed here separately.

    Args:
        toy: Enumerable joint (<= 10^4 atoms).
        encoder: Hidden state id per atom (array) or callable atom -> id.
        predictors: q_k as (num_hidden, |V_k|) row-stochastic arrays.
        weights: w_k >= 0.
    """
    toy.check()
    hidden = _hidden_ids(toy, encoder)
    w = np.asarray(weights, dtype=np.float64)
    j = len(toy.vocab_sizes)
    if w.shape != (j,) or np.any(w < 0):
        raise ValueError("one non-negative weight per field is required")
    if len(predictors) != j:
        raise ValueError("one predictor per field is required")

    lhs = h_sum = loss = kl = 0.0
    for k in range(j):
        q = np.asarray(predictors[k], dtype=np.float64)
        table = _joint_table(toy, hidden, k)
        if q.shape[1] != table.shape[1] or q.shape[0] < table.shape[0]:
            raise ValueError(f"predictor {k} has shape {q.shape}, needs (>= {table.shape[0]}, {table.shape[1]})")
        q = q[: table.shape[0]]
        if np.any(q < 0) or not np.allclose(q.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError(f"predictor {k} rows must be probability vectors")
        ph = table.sum(axis=1, keepdims=True)
        pv = table.sum(axis=0, keepdims=True)
        mi = _xlogy_ratio(table, ph * pv)
        hk = float(_plugin(pv.ravel()))
        mask = table > 0
        with np.errstate(divide="ignore"):
            ce = float(-np.sum(table[mask] * np.log(q[mask])))
        kl_k = _xlogy_ratio(table, ph * q)  # sum_h p(h) sum_v p(v|h) log(p(v|h)/q(v|h))
        lhs += w[k] * mi
        h_sum += w[k] * hk
        loss += w[k] * ce
        kl += w[k] * kl_k
    rhs = h_sum - loss
    gap = lhs - rhs
    holds = bool(lhs >= rhs - tol) and (math.isinf(kl) or abs(gap - kl) <= tol * max(1.0, abs(kl)))
    return BoundCheck(lhs=float(lhs), rhs=float(rhs), gap=float(gap), expected_kl=float(kl), holds=holds)


def random_toy(rng: np.random.Generator, num_fields: int = 3, max_vocab: int = 4,
               contexts: int = 4, hidden_states: int = 3) -> tuple[ToyJoint, np.ndarray]:
    """Random enumerable joint over (context, fields) and a random deterministic encoder.

    The encoder sees the context and field 1 onward (field 0 is the masked
    target), so hidden states carry partial information about every field.
    """
    sizes = [int(rng.integers(2, max_vocab + 1)) for _ in range(num_fields)]
    grids = np.meshgrid(np.arange(contexts), *[np.arange(s) for s in sizes], indexing="ij")
    atoms = np.stack([g.ravel() for g in grids], axis=1)
    probs = rng.dirichlet(np.full(len(atoms), 0.5))
    visible = atoms[:, [0] + list(range(2, num_fields + 1))]
    keys = _row_ids(visible)
    lookup = rng.integers(0, hidden_states, size=int(keys.max()) + 1)
    toy = ToyJoint(probs=probs, fields=atoms[:, 1:], vocab_sizes=sizes, contexts=atoms[:, 0])
    return toy, lookup[keys]


def random_predictors(rng: np.random.Generator, toy: ToyJoint, hidden: np.ndarray) -> List[np.ndarray]:
    """Strictly positive random row-stochastic q_k."""
    states = int(hidden.max()) + 1
    return [rng.dirichlet(np.ones(v), size=states) for v in toy.vocab_sizes]


def nats_to_bits(value: float) -> float:
    return value / math.log(2.0)

