"""
Use cases: representation extraction and quantization.

- run_extract: checkpoint + items -> "RSID" embedding file
- run_quantize: embedding file -> SID table (TSV) + codebook (JSON)
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional

from semid.config import QuantizeDefaults
from semid.adapters.tsv_loader import load_items
from semid.domain.diagnostics import code_usage, reconstruction_error
from semid.domain.famae import extract_item_representations
from semid.domain.models import CodeBook, EmbeddingMatrix, QuantizerConfig, SidTable
from semid.domain.policies import default_branching
from semid.domain.quantizers import quantize
from semid.errors import QuantizationError
from semid.infra.repositories import CodeBookRepo, EmbeddingRepo, SidTableRepo
from semid.usecases.train_famae import load_checkpoint

log = logging.getLogger(__name__)


def run_extract(checkpoint_path: str, items_path: str, out_path: str) -> Dict[str, Any]:
    """Writes the concatenated field embeddings of every item."""
    encoder, schema = load_checkpoint(checkpoint_path)
    items = load_items(items_path, schema)
    emb = extract_item_representations(encoder, items)
    EmbeddingRepo(out_path).save(emb)
    return {"rows": emb.rows, "dim": emb.dim, "out": out_path}


def quantizer_config(defaults: QuantizeDefaults, num_items: int, threads: int = 1) -> QuantizerConfig:
    """Fills in the branching heuristic when no branching was given."""
    branching: List[int] = (
        list(defaults.branching)
        if defaults.branching is not None
        else default_branching(num_items, defaults.target_prefix_population)
    )
    anchors = list(defaults.anchors) if defaults.anchors is not None else None
    if anchors is not None and len(anchors) != len(branching):
        raise QuantizationError(f"anchors {anchors} must have one entry per level of {branching}")
    return QuantizerConfig(
        branching=branching,
        anchors=anchors,
        iters=defaults.iters,
        seed=defaults.seed,
        method=defaults.method,
        threads=threads,
    )


def summarize(book: CodeBook, sids: SidTable, emb: EmbeddingMatrix) -> Dict[str, Any]:
    return {
        "method": book.method,
        "branching": list(book.branching),
        "alphabet_sizes": list(sids.alphabet_sizes),
        "anchor_max_abs_cos": {str(l): a.max_abs_cos for l, a in sorted(book.anchors.items())},
        "duplicates": len(book.duplicates),
        "usage": code_usage(sids),
        "reconstruction_error": reconstruction_error(book, sids, emb),
    }


def quantize_embeddings(emb: EmbeddingMatrix, defaults: QuantizeDefaults, threads: int = 1):
    cfg = quantizer_config(defaults, emb.rows, threads)
    log.info("quantize", extra={"data": {"method": cfg.method, "branching": cfg.branching,
                                         "anchors": cfg.anchors, "items": emb.rows}})
    return quantize(emb, cfg)


def run_quantize(emb_path: str, defaults: QuantizeDefaults, out_path: str,
                 codebook_path: Optional[str] = None, threads: int = 1) -> Dict[str, Any]:
    emb = EmbeddingRepo(emb_path).load()
    book, sids = quantize_embeddings(emb, defaults, threads)
    SidTableRepo(out_path).save(sids)
    if codebook_path:
        CodeBookRepo(codebook_path).save(book, sids)
    return summarize(book, sids, emb)
