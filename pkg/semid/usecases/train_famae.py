"""
Use case: train the FAMAE encoder and persist it.

Flow:
1) Enumerate (history, target) examples from the sequence windows.
2) Leave-last-out split: each user's last target is the validation example.
3) Epoch loop: shuffled mini-batches, AdamW step, cosine learning rate.
4) After every epoch: Metric 1 / Metric 2 on the validation split, one
   JSON line in the metrics log.
5) Early stopping on Metric 1 Recall@K (patience in epochs); the best
   parameters are restored before the checkpoint is written.

Notes:
- A non-finite loss raises TrainingDiverged carrying the last parameter
  snapshot taken at an epoch boundary.
- Sequential mode (threads=1) is bit-stable for a fixed seed.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import CosineAnnealingLR

from semid.config import FamaeDefaults
from semid.domain.famae import (
    FieldAwareEncoder,
    build_encoder,
    evaluate_metrics,
    famae_loss,
    parameter_snapshot,
    split_examples,
)
from semid.domain.models import Example, FieldSchema, ItemTable, ModelConfig, SequenceStore
from semid.errors import FormatError, TrainingDiverged
from semid.infra.repositories import CheckpointRepo, MetricsLogRepo

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    epochs_run: int = 0
    best_epoch: Optional[int] = None
    best_metric: float = float("-inf")
    history: List[Dict[str, Any]] = field(default_factory=list)


def model_config_from(defaults: FamaeDefaults) -> ModelConfig:
    return ModelConfig(
        dim=defaults.dim,
        layers=defaults.layers,
        heads=defaults.heads,
        ffn_dim=defaults.ffn,
        dropout=defaults.dropout,
        field_weights=list(defaults.field_weights) if defaults.field_weights is not None else None,
        negatives=defaults.negatives,
        full_softmax_max_vocab=defaults.full_softmax_max_vocab,
        max_len=defaults.max_len,
        seed=defaults.seed,
    )


def configure_torch(threads: int) -> None:
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(max(1, int(threads)))


def _all_finite(encoder: FieldAwareEncoder) -> bool:
    return all(bool(torch.isfinite(p).all()) for p in encoder.parameters())


def _epoch(
    encoder: FieldAwareEncoder,
    opt: AdamW,
    train: Sequence[Example],
    items: ItemTable,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    encoder.train()
    order = rng.permutation(len(train))
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        batch = [train[i] for i in idx]
        try:
            out = famae_loss(batch, items, encoder, rng)
        except TrainingDiverged as exc:
            window = int(idx[exc.window]) if exc.window is not None else None
            raise TrainingDiverged(f"non-finite loss at training window {window}", window=window) from exc
        opt.zero_grad(set_to_none=True)
        out.loss.backward()
        opt.step()
        if not _all_finite(encoder):
            raise TrainingDiverged(f"non-finite parameters after batch starting at {start}",
                                   window=int(idx[0]))
        total += float(out.loss.detach()) * len(batch)
    return total / max(1, len(train))


def train_famae(
    items: ItemTable,
    store: SequenceStore,
    defaults: FamaeDefaults,
    metrics_log: Optional[MetricsLogRepo] = None,
    threads: int = 1,
) -> Tuple[FieldAwareEncoder, TrainResult]:
    """Trains an encoder; ``defaults.epochs == 0`` returns the initial parameters."""
    configure_torch(threads)
    cfg = model_config_from(defaults)
    encoder = build_encoder(items.schema.vocab_sizes, cfg)
    result = TrainResult()
    if metrics_log is not None:
        metrics_log.extend([])

    examples = list(store.iter_examples())
    train, valid = split_examples(examples)
    if not valid:
        log.warning("no user has two targets; validating on the training examples")
        valid = train
    log.info("famae data", extra={"data": {"train": len(train), "valid": len(valid),
                                           "items": items.num_items, "fields": items.schema.num_fields}})
    if defaults.epochs == 0 or not train:
        return encoder, result

    opt = AdamW(encoder.parameters(), lr=defaults.lr, weight_decay=defaults.weight_decay)
    sched = CosineAnnealingLR(opt, T_max=defaults.epochs)
    rng = np.random.default_rng([int(defaults.seed), 1])
    best_state = parameter_snapshot(encoder)
    last_good = best_state
    stale = 0
    ks = sorted({1, int(defaults.eval_k)})

    for epoch in range(1, defaults.epochs + 1):
        lr = float(opt.param_groups[0]["lr"])
        try:
            loss = _epoch(encoder, opt, train, items, defaults.batch, rng)
        except TrainingDiverged as exc:
            exc.last_good_state = last_good
            exc.epoch = epoch
            log.error("training diverged", extra={"data": {"epoch": epoch, "window": exc.window}})
            raise
        sched.step()
        last_good = parameter_snapshot(encoder)
        metrics = evaluate_metrics(encoder, valid, items, ks)
        record = {"epoch": epoch, "loss": loss, "lr": lr, **metrics}
        result.history.append(record)
        result.epochs_run = epoch
        if metrics_log is not None:
            metrics_log.append(record)
        log.info("epoch", extra={"data": record})

        score = metrics[f"m1_recall@{defaults.eval_k}"]
        if score > result.best_metric:
            result.best_metric, result.best_epoch = score, epoch
            best_state = last_good
            stale = 0
        else:
            stale += 1
            if stale >= defaults.patience:
                log.info("early stop", extra={"data": {"epoch": epoch, "best_epoch": result.best_epoch}})
                break

    encoder.load_state_dict(best_state)
    return encoder, result


# -------------------------
# checkpoints
# -------------------------

def save_checkpoint(path: str, encoder: FieldAwareEncoder, schema: FieldSchema,
                    result: Optional[TrainResult] = None, diverged_at_epoch: Optional[int] = None) -> None:
    meta: Dict[str, Any] = {
        "config": asdict(encoder.config),
        "schema": {"field_names": list(schema.field_names), "vocabularies": schema.vocabularies},
    }
    if result is not None:
        meta["training"] = {"epochs_run": result.epochs_run, "best_epoch": result.best_epoch}
    if diverged_at_epoch is not None:
        meta["diverged_at_epoch"] = diverged_at_epoch
    CheckpointRepo(path).save(encoder.state_dict(), meta)


def save_last_good(path: str, exc: TrainingDiverged, defaults: FamaeDefaults, schema: FieldSchema) -> None:
    """Writes the snapshot carried by a divergence as a regular, loadable checkpoint."""
    encoder = build_encoder(schema.vocab_sizes, model_config_from(defaults))
    encoder.load_state_dict(exc.last_good_state)
    save_checkpoint(path, encoder, schema, diverged_at_epoch=exc.epoch)


def load_checkpoint(path: str) -> Tuple[FieldAwareEncoder, FieldSchema]:
    state, meta = CheckpointRepo(path).load()
    try:
        cfg = ModelConfig(**meta["config"])
        schema = FieldSchema(list(meta["schema"]["field_names"]),
                             [list(v) for v in meta["schema"]["vocabularies"]])
    except (KeyError, TypeError) as exc:
        raise FormatError(path, f"checkpoint manifest lacks {exc}") from exc
    encoder = FieldAwareEncoder(schema.vocab_sizes, cfg)
    encoder.load_state_dict(state)
    encoder.eval()
    return encoder, schema


def evaluate_checkpoint(encoder: FieldAwareEncoder, items: ItemTable, store: SequenceStore,
                        ks: Sequence[int] = (1, 10), split: str = "valid") -> Dict[str, Any]:
    """Metric 1 / Metric 2 of a trained encoder on the validation split (or all examples)."""
    examples = list(store.iter_examples())
    train, valid = split_examples(examples)
    if split == "all":
        chosen = examples
    elif split == "valid":
        chosen = valid or train
    else:
        raise ValueError(f"unknown split {split!r} (valid|all)")
    return {"split": split, "examples": len(chosen), **evaluate_metrics(encoder, chosen, items, ks)}
