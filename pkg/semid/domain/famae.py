"""
Field-aware masked encoder.

Every window position is one item; its input token is the sum of its J
field embeddings plus a learnable positional encoding. For the target (last)
position a random subset of fields is replaced by field-specific mask
tokens, and the bidirectional encoder must recover the masked fields from
the history and the visible fields. Field predictions use a softmax over
scaled cosine similarity ``sqrt(D) * cos(h, E_k[v])``.

Item representations for quantization are the concatenated field
embeddings of each item: no history or positional content enters them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from semid.domain.models import (
    EmbeddingMatrix,
    Example,
    ItemTable,
    MaskSample,
    ModelConfig,
)
from semid.errors import TrainingDiverged

ITEM_FIELD = 0


# -------------------------
# masking
# -------------------------

def sample_mask(num_fields: int, rng: np.random.Generator) -> MaskSample:
    """Two-level policy: K ~ U{1..J}, then a uniform K-subset of the fields."""
    if num_fields < 1:
        raise ValueError("need at least one field to mask")
    k = int(rng.integers(1, num_fields + 1))
    chosen = rng.choice(num_fields, size=k, replace=False)
    return MaskSample(tuple(sorted(int(c) for c in chosen)))


def full_mask(num_fields: int) -> MaskSample:
    return MaskSample(tuple(range(num_fields)))


def item_id_mask() -> MaskSample:
    return MaskSample((ITEM_FIELD,))


# -------------------------
# encoder
# -------------------------

class FieldAwareEncoder(nn.Module):
    """Per-field embeddings, field mask tokens, positions and a pre-norm Transformer."""

    def __init__(self, vocab_sizes: Sequence[int], config: ModelConfig):
        super().__init__()
        config.check(len(vocab_sizes))
        self.vocab_sizes = [int(v) for v in vocab_sizes]
        self.config = config
        dim = config.dim
        self.field_embeddings = nn.ModuleList([nn.Embedding(v, dim) for v in self.vocab_sizes])
        self.mask_tokens = nn.Parameter(torch.randn(len(self.vocab_sizes), dim))
        self.positions = nn.Parameter(0.02 * torch.randn(config.max_len, dim))
        if config.layers > 0:
            layer = nn.TransformerEncoderLayer(
                d_model=dim,
                nhead=config.heads,
                dim_feedforward=config.ffn_dim,
                dropout=config.dropout,
                activation="relu",
                batch_first=True,
                norm_first=True,
            )
            self.encoder: Optional[nn.TransformerEncoder] = nn.TransformerEncoder(
                layer, num_layers=config.layers, enable_nested_tensor=False
            )
        else:
            self.encoder = None
        self.final_norm = nn.LayerNorm(dim)

    @property
    def num_fields(self) -> int:
        return len(self.vocab_sizes)

    def embed(self, fields: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
        """(B, T, J) field values and mask flags -> (B, T, D) input tokens."""
        tokens = torch.stack(
            [emb(fields[..., j]) for j, emb in enumerate(self.field_embeddings)], dim=2
        )
        tokens = torch.where(masked.unsqueeze(-1), self.mask_tokens.expand_as(tokens), tokens)
        steps = fields.shape[1]
        return tokens.sum(dim=2) + self.positions[:steps]

    def forward(self, fields: torch.Tensor, masked: torch.Tensor,
                padding: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = self.embed(fields, masked)
        if self.encoder is not None:
            x = self.encoder(x, src_key_padding_mask=padding)
        return self.final_norm(x)


def build_encoder(vocab_sizes: Sequence[int], config: ModelConfig) -> FieldAwareEncoder:
    """Deterministic initialisation from ``config.seed``."""
    torch.manual_seed(config.seed)
    return FieldAwareEncoder(vocab_sizes, config)


def build_target_input(item_fields: Sequence[int], mask: MaskSample,
                       encoder: FieldAwareEncoder, position: int) -> torch.Tensor:
    """p_t + sum_j e_j with e_j = m_j for masked fields, else E_j[f_j]."""
    if not (0 <= position < encoder.positions.shape[0]):
        raise ValueError(f"position {position} outside window of {encoder.positions.shape[0]}")
    out = encoder.positions[position].clone()
    for j, value in enumerate(item_fields):
        if j in mask.fields:
            out = out + encoder.mask_tokens[j]
            continue
        if not (0 <= int(value) < encoder.vocab_sizes[j]):
            raise ValueError(f"field {j} value {value} outside vocabulary of {encoder.vocab_sizes[j]}")
        out = out + encoder.field_embeddings[j].weight[int(value)]
    return out


# -------------------------
# predictive distribution
# -------------------------

def _unit(x: torch.Tensor, what: str) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError(f"zero-norm {what}: cosine similarity undefined")
    return x / norms


def field_logits(h: torch.Tensor, field: int, encoder: FieldAwareEncoder,
                 candidates: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Scaled cosine logits of hidden states against a field's vocabulary.

    ``h`` is (B, D). Without candidates the result is (B, |V_k|); with a
    (B, C) candidate index tensor it is (B, C).
    """
    table = encoder.field_embeddings[field].weight
    scale = math.sqrt(encoder.config.dim)
    hu = _unit(h, "hidden state")
    if candidates is None:
        return scale * hu @ _unit(table, f"field {field} embedding").T
    rows = _unit(table[candidates], f"field {field} embedding")
    return scale * torch.einsum("bd,bcd->bc", hu, rows)


def predictive_distribution(h: torch.Tensor, field: int, encoder: FieldAwareEncoder,
                            candidates: Optional[torch.Tensor] = None) -> torch.Tensor:
    """q_k(. | h): softmax of scaled cosine logits (over candidates when given)."""
    squeeze = h.dim() == 1
    if squeeze:
        h = h.unsqueeze(0)
        if candidates is not None:
            candidates = candidates.unsqueeze(0)
    probs = torch.softmax(field_logits(h, field, encoder, candidates), dim=-1)
    return probs[0] if squeeze else probs


def sample_negatives(target: int, vocab_size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw without replacement from the vocabulary minus the target."""
    count = min(int(count), vocab_size - 1)
    picks = rng.choice(vocab_size - 1, size=count, replace=False)
    return picks + (picks >= target)


# -------------------------
# batches and loss
# -------------------------

@dataclass
class Batch:
    fields: torch.Tensor    # (B, T, J) long
    padding: torch.Tensor   # (B, T) bool, True = pad
    lengths: torch.Tensor   # (B,) long
    targets: torch.Tensor   # (B, J) long, field values of the target item


def collate(examples: Sequence[Example], item_values: np.ndarray, max_len: int) -> Batch:
    """Right-padded windows: up to ``max_len - 1`` history items, then the target."""
    windows = [list(ex.history[-(max_len - 1):]) + [ex.target] if max_len > 1 else [ex.target]
               for ex in examples]
    steps = max(len(w) for w in windows)
    j = item_values.shape[1]
    fields = np.zeros((len(windows), steps, j), dtype=np.int64)
    padding = np.ones((len(windows), steps), dtype=bool)
    for b, w in enumerate(windows):
        fields[b, : len(w)] = item_values[w]
        padding[b, : len(w)] = False
    lengths = np.array([len(w) for w in windows], dtype=np.int64)
    targets = item_values[[ex.target for ex in examples]]
    return Batch(
        torch.from_numpy(fields),
        torch.from_numpy(padding),
        torch.from_numpy(lengths),
        torch.from_numpy(np.ascontiguousarray(targets, dtype=np.int64)),
    )


def target_hidden(encoder: FieldAwareEncoder, batch: Batch, masks: Sequence[MaskSample]) -> torch.Tensor:
    """Hidden state at each window's target position, target fields masked per sample."""
    masked = torch.zeros_like(batch.fields, dtype=torch.bool)
    last = batch.lengths - 1
    for b, m in enumerate(masks):
        if m.fields:
            masked[b, last[b], list(m.fields)] = True
    hidden = encoder(batch.fields, masked, batch.padding)
    return hidden[torch.arange(hidden.shape[0]), last]


@dataclass
class LossOutput:
    loss: torch.Tensor          # scalar, batch mean
    per_window: torch.Tensor    # (B,)
    masks: List[MaskSample]


def famae_loss(
    examples: Sequence[Example],
    items: ItemTable,
    encoder: FieldAwareEncoder,
    rng: np.random.Generator,
    masks: Optional[Sequence[MaskSample]] = None,
) -> LossOutput:
    """Masked-field loss of a batch of windows.

    For each window: sample M (unless given), mask those target fields, take
    the hidden state at the target and add ``alpha_k * -log q_k(f_k | h)``
    for every k in M. The loss is the batch mean; call ``backward()`` on it
    for gradients.

    Raises:
        TrainingDiverged: if any window's loss is not finite (names the window).
    """
    if not examples:
        raise ValueError("empty batch")
    cfg = encoder.config
    j = encoder.num_fields
    alpha = cfg.weights(j)
    if masks is None:
        masks = [sample_mask(j, rng) for _ in examples]
    batch = collate(examples, items.values, cfg.max_len)
    h = target_hidden(encoder, batch, masks)

    # stays on the graph when every masked field has alpha_k = 0
    per_window = h.new_zeros(len(examples)) + 0.0 * h.sum()
    for k in range(j):
        rows = [b for b, m in enumerate(masks) if k in m.fields]
        if not rows or alpha[k] == 0.0:
            continue
        idx = torch.tensor(rows, dtype=torch.long)
        targets = batch.targets[idx, k]
        vocab = encoder.vocab_sizes[k]
        sampled = cfg.negatives > 0 and vocab > cfg.full_softmax_max_vocab
        if sampled:
            cands = np.stack([
                np.concatenate([[int(t)], sample_negatives(int(t), vocab, cfg.negatives, rng)])
                for t in targets.tolist()
            ])
            logits = field_logits(h[idx], k, encoder, torch.from_numpy(cands))
            ce = F.cross_entropy(logits, torch.zeros(len(rows), dtype=torch.long), reduction="none")
        else:
            ce = F.cross_entropy(field_logits(h[idx], k, encoder), targets, reduction="none")
        per_window = per_window.index_add(0, idx, alpha[k] * ce)

    finite = torch.isfinite(per_window)
    if not bool(finite.all()):
        bad = int(torch.nonzero(~finite)[0, 0])
        raise TrainingDiverged(f"non-finite loss at window {bad} of the batch", window=bad)
    return LossOutput(per_window.mean(), per_window, list(masks))


# -------------------------
# task-aware metrics
# -------------------------

@torch.no_grad()
def item_id_ranks(encoder: FieldAwareEncoder, examples: Sequence[Example], items: ItemTable,
                  mask: MaskSample, batch_size: int = 256) -> np.ndarray:
    """0-based rank of the true item ID among all item IDs (ties: lower index first)."""
    if not examples:
        raise ValueError("empty evaluation split")
    was_training = encoder.training
    encoder.eval()
    try:
        ranks = []
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batch = collate(chunk, items.values, encoder.config.max_len)
            h = target_hidden(encoder, batch, [mask] * len(chunk))
            scores = field_logits(h, ITEM_FIELD, encoder)
            truth = batch.targets[:, ITEM_FIELD]
            true_score = scores.gather(1, truth[:, None])
            ids = torch.arange(scores.shape[1])[None, :]
            ahead = (scores > true_score) | ((scores == true_score) & (ids < truth[:, None]))
            ranks.append(ahead.sum(dim=1).numpy())
        return np.concatenate(ranks)
    finally:
        encoder.train(was_training)


def recall_at(ranks: np.ndarray, k: int) -> float:
    return float(np.mean(ranks < k))


def ndcg_at(ranks: np.ndarray, k: int) -> float:
    gains = np.where(ranks < k, 1.0 / np.log2(ranks + 2.0), 0.0)
    return float(np.mean(gains))


def metric_collaborative(encoder: FieldAwareEncoder, examples: Sequence[Example],
                         items: ItemTable, k: int) -> float:
    """Recall@K of the item ID with every target field masked."""
    return recall_at(item_id_ranks(encoder, examples, items, full_mask(encoder.num_fields)), k)


def metric_discriminative(encoder: FieldAwareEncoder, examples: Sequence[Example],
                          items: ItemTable, k: int) -> float:
    """Recall@K of the item ID with only the item-ID field masked."""
    return recall_at(item_id_ranks(encoder, examples, items, item_id_mask()), k)


def evaluate_metrics(encoder: FieldAwareEncoder, examples: Sequence[Example], items: ItemTable,
                     ks: Sequence[int] = (1, 10)) -> Dict[str, float]:
    """Recall@K and NDCG@K of both metrics, keyed like ``m1_recall@10``."""
    out: Dict[str, float] = {}
    for name, mask in (("m1", full_mask(encoder.num_fields)), ("m2", item_id_mask())):
        ranks = item_id_ranks(encoder, examples, items, mask)
        for k in ks:
            out[f"{name}_recall@{k}"] = recall_at(ranks, k)
            out[f"{name}_ndcg@{k}"] = ndcg_at(ranks, k)
    return out


# -------------------------
# representation extraction
# -------------------------

@torch.no_grad()
def extract_item_representations(encoder: FieldAwareEncoder, items: ItemTable) -> EmbeddingMatrix:
    """Row i = concat_k E_k[f_i^(k)]; dimension J * D."""
    values = torch.from_numpy(np.ascontiguousarray(items.values, dtype=np.int64))
    if values.shape[1] != encoder.num_fields:
        raise ValueError(f"items have {values.shape[1]} fields, encoder {encoder.num_fields}")
    parts = []
    for k, emb in enumerate(encoder.field_embeddings):
        col = values[:, k]
        if bool((col < 0).any()) or bool((col >= emb.num_embeddings).any()):
            raise ValueError(f"field {k} value outside vocabulary")
        parts.append(emb.weight[col])
    matrix = torch.cat(parts, dim=1).to(torch.float32).cpu().numpy()
    return EmbeddingMatrix(np.ascontiguousarray(matrix), list(items.item_tokens))


def parameter_snapshot(encoder: FieldAwareEncoder) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in encoder.state_dict().items()}


def split_examples(examples: Sequence[Example]) -> Tuple[List[Example], List[Example]]:
    """Leave-last-out: each user's last target is held out when the user has two or more."""
    by_user: Dict[int, List[Example]] = {}
    for ex in examples:
        by_user.setdefault(ex.user, []).append(ex)
    train: List[Example] = []
    valid: List[Example] = []
    for user in sorted(by_user):
        exs = by_user[user]
        if len(exs) >= 2:
            train.extend(exs[:-1])
            valid.append(exs[-1])
        else:
            train.extend(exs)
    return train, valid
