"""
Reports over the pipeline artifacts:
- data summary and (history, target) SID pairs (prep)
- code diagnostics of a SID table (diagnose)
- numeric check of the mask-weighted sufficiency bound (bound-check)
- dominant FLOPs of the pipeline (cost)
- branching sensitivity of the quantizers (sweep)
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from tabulate import tabulate

from semid.adapters.tsv_loader import load_items, load_sequences
from semid.config import QuantizeDefaults
from semid.domain.diagnostics import (
    ambiguity_decomposition,
    build_sid_corpus,
    check_sufficiency_bound,
    entropy_report,
    exact_conditionals,
    intra_code_cosine,
    mask_weights,
    nats_to_bits,
    random_predictors,
    random_toy,
    reconstruction_error,
    sid_overlap,
)
from semid.domain.formulas import estimate_flops
from semid.domain.models import EmbeddingMatrix, FlopShapes, SidCorpus, SidTable
from semid.infra.repositories import EmbeddingRepo, PairsRepo, ReportRepo, SidTableRepo
from semid.usecases.quantize import quantize_embeddings

log = logging.getLogger(__name__)

OVERLAP_DEFINITION = (
    "per level l: fraction of (history, target) pairs with a non-empty history "
    "whose target code at level l equals the level-l code of at least one history item"
)


def _nan_to_none(x: float) -> Optional[float]:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


# ----------------------
# prep
# ----------------------

def run_prep(items_path: str, sequences_path: str, max_len: int = 32, stride: int = 1,
             sids_path: Optional[str] = None, pairs_out: Optional[str] = None) -> Dict[str, Any]:
    """Validates the inputs and summarises schema and windows; optionally writes SID pairs."""
    items = load_items(items_path)
    store = load_sequences(sequences_path, items, max_len=max_len, stride=stride)
    lengths = np.array([len(s) for s in store.sequences])
    windows = sum(len(store.windows(i)) for i in range(len(store.sequences)))
    targets = sum(len(store.examples(i)) for i in range(len(store.sequences)))
    out: Dict[str, Any] = {
        "items": items.num_items,
        "fields": list(items.schema.field_names),
        "vocab_sizes": items.schema.vocab_sizes,
        "users": len(store.users),
        "interactions": int(lengths.sum()),
        "mean_length": float(lengths.mean()),
        "max_length": int(lengths.max()),
        "windows": int(windows),
        "targets": int(targets),
    }
    if pairs_out:
        if not sids_path:
            raise ValueError("--pairs needs --sids")
        sids = SidTableRepo(sids_path).load()
        if list(sids.row_tokens) != list(items.item_tokens):
            raise ValueError(f"{sids_path}: item order differs from {items_path}")
        corpus = build_sid_corpus(store, sids)
        PairsRepo(pairs_out).save(corpus)
        out["pairs"] = len(corpus)
    return out


# ----------------------
# diagnose
# ----------------------

def diagnose(sids: SidTable, embeddings: Optional[EmbeddingMatrix] = None,
             corpus: Optional[SidCorpus] = None, bits: bool = False) -> Dict[str, Any]:
    """Per-level entropies and ambiguity measures of a SID table.

    Embeddings add the intra-code cosine, a pair corpus adds SID overlap.
    """
    if embeddings is not None:
        if embeddings.rows != sids.codes.shape[0] or list(embeddings.row_tokens) != list(sids.row_tokens):
            raise ValueError("embedding rows do not match the SID table items")
    unit = nats_to_bits if bits else (lambda v: v)
    ent = entropy_report(sids)
    overlap = sid_overlap(corpus, sids, embeddings) if corpus is not None else None
    if overlap is not None and len(overlap.overlap) != sids.num_levels:
        raise ValueError(f"pair corpus has {len(overlap.overlap)} levels, SID table {sids.num_levels}")

    levels: List[Dict[str, Any]] = []
    for l in range(1, sids.num_levels + 1):
        amb = ambiguity_decomposition(sids, l)
        row: Dict[str, Any] = {
            "level": l,
            "alphabet_size": int(sids.alphabet_sizes[l - 1]),
            "H_marginal": unit(ent.marginal[l - 1]),
            "H_prefix_cond": unit(ent.prefix_conditional[l - 1]),
            "prefixes_observed": ent.prefixes_observed[l - 1],
            "H_z_given_code": unit(amb["h_z_given_c"]),
            "I_z_prefix_given_code": unit(amb["mi_z_prefix_given_c"]),
            "intra_cosine": None,
            "overlap": None,
        }
        if overlap is not None and overlap.intra_code_cosine:
            row["intra_cosine"] = _nan_to_none(overlap.intra_code_cosine[l - 1])
        elif embeddings is not None:
            row["intra_cosine"] = _nan_to_none(intra_code_cosine(sids, embeddings, l))
        if overlap is not None:
            row["overlap"] = overlap.overlap[l - 1]
        levels.append(row)

    return {
        "units": "bits" if bits else "nats",
        "items": int(sids.codes.shape[0]),
        "levels": levels,
        "joint_entropy": unit(ent.joint),
        "prefixes_observed": ent.prefixes_observed,
        "pairs_used": overlap.pairs_used if overlap is not None else 0,
        "pairs_skipped": overlap.pairs_skipped if overlap is not None else 0,
        "overall_overlap": overlap.overall_overlap if overlap is not None else None,
        "overlap_definition": OVERLAP_DEFINITION,
    }


def run_diagnose(sids_path: str, emb_path: Optional[str] = None, corpus_path: Optional[str] = None,
                 report_path: Optional[str] = None, bits: bool = False) -> Dict[str, Any]:
    sids = SidTableRepo(sids_path).load()
    emb = EmbeddingRepo(emb_path).load() if emb_path else None
    corpus = PairsRepo(corpus_path).load() if corpus_path else None
    report = diagnose(sids, emb, corpus, bits)
    if report_path:
        ReportRepo(report_path).save(report)
    return report


# ----------------------
# bound check
# ----------------------

def run_bound_check(trials: int = 100, seed: int = 0, num_fields: int = 3, max_vocab: int = 4,
                    contexts: int = 4, hidden_states: int = 3, tol: float = 1e-9) -> Dict[str, Any]:
    """Random enumerable joints, random predictors and the exact predictors (tight case)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    weights = mask_weights(np.ones(num_fields))
    failures: List[int] = []
    worst_gap_error = 0.0
    worst_tight_gap = 0.0
    for t in range(trials):
        toy, hidden = random_toy(rng, num_fields, max_vocab, contexts, hidden_states)
        res = check_sufficiency_bound(toy, hidden, random_predictors(rng, toy, hidden), weights, tol)
        tight = check_sufficiency_bound(toy, hidden, exact_conditionals(toy, hidden), weights, tol)
        worst_gap_error = max(worst_gap_error, abs(res.gap - res.expected_kl))
        worst_tight_gap = max(worst_tight_gap, abs(tight.gap))
        if not (res.holds and tight.holds and abs(tight.gap) <= tol):
            failures.append(t)
    if failures:
        log.warning("bound check failed", extra={"data": {"trials": failures}})
    return {
        "trials": trials,
        "seed": seed,
        "weights": weights.tolist(),
        "failures": failures,
        "holds": not failures,
        "max_abs_gap_minus_kl": worst_gap_error,
        "max_abs_gap_exact_predictor": worst_tight_gap,
    }


# ----------------------
# cost
# ----------------------

def run_cost(shapes: FlopShapes) -> Dict[str, Any]:
    flops = estimate_flops(shapes)
    return {"shapes": {k: (list(v) if isinstance(v, (tuple, list)) else v) for k, v in vars(shapes).items()},
            "flops": flops}


# ----------------------
# sweep
# ----------------------

def run_sweep(emb_path: str, branchings: Sequence[Sequence[int]], methods: Iterable[str],
              defaults: QuantizeDefaults, threads: int = 1,
              sequences_path: Optional[str] = None, items_path: Optional[str] = None) -> List[Dict[str, Any]]:
    """Quantizes with every (method, branching) pair and reports the code statistics."""
    emb = EmbeddingRepo(emb_path).load()
    store = None
    if sequences_path:
        if not items_path:
            raise ValueError("--sequences needs --items")
        items = load_items(items_path)
        if list(items.item_tokens) != list(emb.row_tokens):
            raise ValueError(f"{items_path}: item order differs from {emb_path}")
        store = load_sequences(sequences_path, items)
    rows: List[Dict[str, Any]] = []
    for method in methods:
        for branching in branchings:
            cfg = replace(defaults, method=method, branching=list(branching), anchors=None)
            book, sids = quantize_embeddings(emb, cfg, threads)
            ent = entropy_report(sids)
            level = min(2, sids.num_levels)
            row = {
                "method": method,
                "branching": ",".join(str(b) for b in branching),
                "joint_prefix_entropy": float(sum(ent.prefix_conditional[:-1])),
                "joint_entropy": ent.joint,
                f"intra_cosine_l{level}": _nan_to_none(intra_code_cosine(sids, emb, level)),
                "reconstruction_error": reconstruction_error(book, sids, emb),
            }
            if store is not None:
                row[f"overlap_l{level}"] = sid_overlap(build_sid_corpus(store, sids)).overlap[level - 1]
            rows.append(row)
    return rows


# ----------------------
# rendering
# ----------------------

def as_table(report: Any) -> str:
    """Plain-text table of a report: level rows, sweep rows or a flat mapping."""
    if isinstance(report, list):
        return tabulate(report, headers="keys", floatfmt=".4f")
    if isinstance(report, dict) and isinstance(report.get("levels"), list):
        return tabulate(report["levels"], headers="keys", floatfmt=".4f")
    if isinstance(report, dict):
        flat = [(k, v) for k, v in report.items() if not isinstance(v, (dict, list))]
        nested = [(f"{k}.{kk}", vv) for k, v in report.items() if isinstance(v, dict)
                  for kk, vv in v.items() if not isinstance(vv, (dict, list))]
        return tabulate(flat + nested, headers=["key", "value"], floatfmt=".4f")
    return str(report)
