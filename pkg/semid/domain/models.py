# semid/domain/models.py
"""
Domain models (dataclasses).

Arrays are numpy; item indices are row positions of the ItemTable, so the
item-ID field value of row i is i. Field indices are 0-based (field 0 is the
item-ID field).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np


# -------------------------
# data
# -------------------------

@dataclass
class FieldSchema:
    """Ordered fields and their frozen vocabularies (tokens in first-seen order)."""
    field_names: List[str]
    vocabularies: List[List[str]] = field(default_factory=list)

    @property
    def num_fields(self) -> int:
        return len(self.field_names)

    @property
    def vocab_sizes(self) -> List[int]:
        return [len(v) for v in self.vocabularies]

    def check(self, num_items: Optional[int] = None) -> None:
        if self.num_fields < 1:
            raise ValueError("schema needs at least one field (the item-ID field)")
        if len(self.vocabularies) != self.num_fields:
            raise ValueError("one vocabulary per field is required")
        if any(s < 1 for s in self.vocab_sizes):
            raise ValueError(f"every vocabulary needs >= 1 token, got {self.vocab_sizes}")
        if num_items is not None and self.vocab_sizes[0] != num_items:
            raise ValueError(
                f"item-ID vocabulary size {self.vocab_sizes[0]} != item count {num_items}"
            )


@dataclass
class ItemTable:
    """N items x J field values (indices into the per-field vocabularies)."""
    schema: FieldSchema
    values: np.ndarray  # (N, J) int64

    @property
    def num_items(self) -> int:
        return int(self.values.shape[0])

    @property
    def item_tokens(self) -> List[str]:
        return self.schema.vocabularies[0]

    def index_of(self) -> Dict[str, int]:
        return {tok: i for i, tok in enumerate(self.item_tokens)}


@dataclass(frozen=True)
class Example:
    """One prediction target with its (possibly empty) history, item indices."""
    user: int
    history: Tuple[int, ...]
    target: int


@dataclass
class SequenceStore:
    """Chronological interaction sequences, one per user."""
    users: List[str]
    sequences: List[np.ndarray]
    max_len: int = 32
    stride: int = 1

    def windows(self, seq_idx: int) -> List[Tuple[int, int]]:
        """Sliding windows of one sequence as (start, end) slices.

        Windows have length ``max_len`` (or the whole sequence when shorter),
        move by ``stride`` and the last window is aligned to the sequence end.
        """
        n = len(self.sequences[seq_idx])
        w = self.max_len
        if n <= w:
            return [(0, n)]
        starts = list(range(0, n - w + 1, self.stride))
        if starts[-1] != n - w:
            starts.append(n - w)
        return [(s, s + w) for s in starts]

    def examples(self, seq_idx: int) -> List[Example]:
        """Prediction targets of one sequence, each position covered once.

        The first window contributes every position from its second item on;
        later windows contribute the positions not covered before. A
        single-item sequence yields one target with an empty history.
        """
        seq = self.sequences[seq_idx]
        if len(seq) == 1:
            return [Example(seq_idx, (), int(seq[0]))]
        out: List[Example] = []
        covered = 0  # positions < covered already produced
        for start, end in self.windows(seq_idx):
            first = max(covered, start + 1)
            for pos in range(first, end):
                out.append(Example(seq_idx, tuple(int(x) for x in seq[start:pos]), int(seq[pos])))
            covered = max(covered, end)
        return out

    def iter_examples(self) -> Iterator[Example]:
        for i in range(len(self.sequences)):
            yield from self.examples(i)


@dataclass
class EmbeddingMatrix:
    """N x D float32 item representations; row i belongs to row_tokens[i]."""
    values: np.ndarray
    row_tokens: List[str]

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])


# -------------------------
# famae
# -------------------------

@dataclass
class ModelConfig:
    """Encoder hyper-parameters; ``negatives == 0`` means full softmax."""
    dim: int = 128
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 512
    dropout: float = 0.1
    field_weights: Optional[List[float]] = None  # alpha_k, None = all 1.0
    negatives: int = 128
    full_softmax_max_vocab: int = 1024
    max_len: int = 32
    seed: int = 0

    def check(self, num_fields: int) -> None:
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        weights = self.weights(num_fields)
        if len(weights) != num_fields:
            raise ValueError(f"field_weights has {len(weights)} entries for {num_fields} fields")
        if any(w < 0 for w in weights):
            raise ValueError("field weights must be >= 0")

    def weights(self, num_fields: int) -> List[float]:
        if self.field_weights is None:
            return [1.0] * num_fields
        return [float(w) for w in self.field_weights]


@dataclass(frozen=True)
class MaskSample:
    """Masked target fields (sorted, 0-based)."""
    fields: Tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.fields)


# -------------------------
# gaoq
# -------------------------

@dataclass
class QuantizerConfig:
    """Prefix-level branching b_1..b_{L-1}; the last level is sized per prefix."""
    branching: List[int]
    anchors: Optional[List[int]] = None  # g_l per prefix level (entry 0 unused); None = g_l = b_l
    iters: int = 50
    seed: int = 0
    method: str = "gaoq"
    threads: int = 1

    def anchors_at(self, level: int) -> int:
        """g_l for a 1-based prefix level >= 2."""
        if self.anchors is None:
            return int(self.branching[level - 1])
        return int(self.anchors[level - 1])


@dataclass
class TreeNode:
    node_id: int
    level: int            # 0 = root, 1..L
    parent: Optional[int]
    centroid: np.ndarray
    members: np.ndarray   # item indices, ascending
    code: int = 0         # index at this level (cluster index at level 1, anchor index above)


@dataclass
class AnchorSet:
    """g unit vectors in dimension D (rows)."""
    level: int
    vectors: np.ndarray   # (g, D)
    max_abs_cos: float = 0.0

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])


@dataclass
class SidTable:
    """Per-item code tuples (row i = item i)."""
    codes: np.ndarray            # (N, L) int64
    alphabet_sizes: List[int]
    row_tokens: List[str]

    @property
    def num_levels(self) -> int:
        return int(self.codes.shape[1])

    def tuples(self) -> List[Tuple[int, ...]]:
        return [tuple(int(c) for c in row) for row in self.codes]


@dataclass
class CodeBook:
    """Hierarchical tree (gaoq/hkmeans) or per-level centroid tables (rqkmeans)."""
    method: str
    branching: List[int]
    nodes: List[TreeNode] = field(default_factory=list)
    anchors: Dict[int, AnchorSet] = field(default_factory=dict)
    level_centroids: List[np.ndarray] = field(default_factory=list)
    duplicates: List[List[int]] = field(default_factory=list)

    def leaves(self) -> List[TreeNode]:
        depth = max((n.level for n in self.nodes), default=0)
        return [n for n in self.nodes if n.level == depth]


# -------------------------
# diagnostics
# -------------------------

@dataclass
class SidCorpus:
    """(history SIDs, target SID) pairs; codes are (h, L) and (L,) int arrays."""
    histories: List[np.ndarray]
    targets: List[np.ndarray]

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class EntropyReport:
    marginal: List[float]
    prefix_conditional: List[float]
    alphabet_sizes: List[int]
    prefixes_observed: List[int]
    joint: float
    units: str = "nats"


@dataclass
class AmbiguityReport:
    intra_code_cosine: List[float]
    overlap: List[float]
    overall_overlap: float
    pairs_used: int
    pairs_skipped: int


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    gap: float
    expected_kl: float
    holds: bool


@dataclass
class FlopShapes:
    """Dimensions for the dominant-FLOPs cost model (all counts >= 1)."""
    # FAMAE
    t_e: int = 32
    num_fields: int = 5
    d_e: int = 128
    l_e: int = 2
    # GAOQ
    num_items: int = 1
    d_q: int = 640
    branching: Sequence[int] = (32, 40)
    iters: Sequence[int] = (50, 50)
    anchors: Sequence[int] = (32, 40)  # g_l, entry 0 unused
    # T5
    t_enc: int = 96
    t_dec: int = 3
    d_g: int = 128
    l_enc: int = 4
    l_dec: int = 4
