"""
Semantic-ID pipeline CLI (Typer).

Main commands:
- prep          -> validate items/sequences, window statistics, optional SID pairs
- famae-train   -> train the masked-field encoder, write checkpoint + metrics log
- famae-eval    -> Metric 1 / Metric 2 of a checkpoint
- extract       -> item representations of a checkpoint ("RSID" file)
- quantize      -> SID table + codebook (gaoq | hkmeans | rqkmeans)
- diagnose      -> entropy / ambiguity report of a SID table
- bound-check   -> numeric check of the sufficiency bound on random toys
- cost          -> dominant FLOPs of the pipeline
- sweep         -> quantize with several branchings and compare

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Callable, Dict, List, Mapping, Optional

import typer

from semid.adapters.parsers import parse_anchors, parse_branching, parse_float_list, parse_int_list
from semid.adapters.tsv_loader import load_items, load_sequences
from semid.config import THREADS_ENV, RunConfig, build_run_config
from semid.domain.models import FlopShapes
from semid.errors import ConfigError, SemidError, TrainingDiverged
from semid.infra.logs import setup_logging
from semid.infra.repositories import MetricsLogRepo
from semid.usecases.quantize import run_extract, run_quantize
from semid.usecases.reports import (
    as_table,
    run_bound_check,
    run_cost,
    run_diagnose,
    run_prep,
    run_sweep,
)
from semid.usecases.train_famae import (
    configure_torch,
    evaluate_checkpoint,
    load_checkpoint,
    save_checkpoint,
    save_last_good,
    train_famae,
)

log = logging.getLogger("semid.cli")

app = typer.Typer(help="Semantic-ID tokenizer: FAMAE, GAOQ and code diagnostics.", add_completion=False)


# -----------------------
# util
# -----------------------

def _print_json(obj) -> None:
    typer.echo(json.dumps(obj, ensure_ascii=False, indent=2))


def _emit(obj: Any, table: bool) -> None:
    if table:
        typer.echo(as_table(obj))
    else:
        _print_json(obj)


def _run(
    subcommand: str,
    config_path: Optional[str],
    overrides: Callable[[], Mapping[str, Mapping[str, Any]]],
    work: Callable[[RunConfig], Any],
    log_level: Optional[str] = None,
) -> Any:
    """Builds the effective config, logs it and maps errors to exit codes.

    ``overrides`` is called inside the error mapping, so flag parsing errors
    exit with code 2 like config file errors.
    """
    try:
        cfg = build_run_config(subcommand, config_path, overrides())
        setup_logging(log_level or cfg.run.log_level, cfg.run.log_file)
        log.info("effective config", extra={"data": {"config": cfg.as_dict()}})
        return work(cfg)
    except ConfigError as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=2)
    except (SemidError, ValueError, FloatingPointError, OSError) as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=1)


def _seed_threads(seed: Optional[int], threads: Optional[int]):
    return lambda: {"famae": {"seed": seed}, "run": {"threads": threads}}


ConfigOpt = typer.Option(None, "--config", help="TOML file with [famae] [quantize] [diagnose] [run] sections")
ThreadsOpt = typer.Option(None, "--threads", envvar=THREADS_ENV, help="Worker threads (default: $RSID_THREADS or 1)")
LogLevelOpt = typer.Option(None, "--log-level", help="DEBUG | INFO | WARNING | ERROR (default: [run] log_level)")
TableOpt = typer.Option(False, "--table", help="Plain-text table instead of JSON")


# -----------------------
# data
# -----------------------

@app.command("prep")
def cmd_prep(
    items: str = typer.Option(..., "--items", help="Items TSV"),
    sequences: str = typer.Option(..., "--sequences", help="Sequences TSV"),
    max_len: Optional[int] = typer.Option(None, "--max-len", help="Window length (default 32)"),
    stride: Optional[int] = typer.Option(None, "--stride", help="Window stride (default 1)"),
    sids: Optional[str] = typer.Option(None, "--sids", help="SID table, needed for --pairs"),
    pairs: Optional[str] = typer.Option(None, "--pairs", help="Write (history, target) SID pairs TSV"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
    table: bool = TableOpt,
):
    """Validates the inputs and prints schema and window statistics."""
    def overrides():
        return {"famae": {"max_len": max_len, "stride": stride, "seed": seed}, "run": {"threads": threads}}

    def work(cfg: RunConfig):
        return run_prep(items, sequences, cfg.famae.max_len, cfg.famae.stride, sids, pairs)

    _emit(_run("prep", config, overrides, work, log_level), table)


# -----------------------
# famae
# -----------------------

@app.command("famae-train")
def cmd_famae_train(
    items: str = typer.Option(..., "--items", help="Items TSV"),
    sequences: str = typer.Option(..., "--sequences", help="Sequences TSV"),
    out: str = typer.Option(..., "--out", help="Checkpoint path"),
    metrics_log: Optional[str] = typer.Option(None, "--metrics-log", help="Per-epoch JSON lines (default: <out>.metrics.jsonl)"),
    dim: Optional[int] = typer.Option(None, "--dim"),
    layers: Optional[int] = typer.Option(None, "--layers"),
    heads: Optional[int] = typer.Option(None, "--heads"),
    ffn: Optional[int] = typer.Option(None, "--ffn"),
    dropout: Optional[float] = typer.Option(None, "--dropout"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    weight_decay: Optional[float] = typer.Option(None, "--weight-decay"),
    batch: Optional[int] = typer.Option(None, "--batch"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    patience: Optional[int] = typer.Option(None, "--patience"),
    negatives: Optional[int] = typer.Option(None, "--negatives", help="0 = always full softmax"),
    max_len: Optional[int] = typer.Option(None, "--max-len"),
    stride: Optional[int] = typer.Option(None, "--stride"),
    eval_k: Optional[int] = typer.Option(None, "--eval-k", help="K of the early-stopping Recall@K"),
    field_weights: Optional[str] = typer.Option(None, "--field-weights", help="alpha_k per field, e.g. 1,1,0.5"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
):
    """Trains the encoder and writes a checkpoint plus a metrics log."""
    def overrides():
        return {
            "famae": {
                "dim": dim, "layers": layers, "heads": heads, "ffn": ffn, "dropout": dropout,
                "lr": lr, "weight_decay": weight_decay, "batch": batch, "epochs": epochs,
                "patience": patience, "negatives": negatives, "max_len": max_len, "stride": stride,
                "eval_k": eval_k, "field_weights": parse_float_list(field_weights, "--field-weights"),
                "seed": seed,
            },
            "run": {"threads": threads},
        }

    def work(cfg: RunConfig):
        f = cfg.famae
        item_table = load_items(items)
        if f.field_weights is not None and len(f.field_weights) != item_table.schema.num_fields:
            raise ConfigError(f"field_weights has {len(f.field_weights)} entries, items have "
                              f"{item_table.schema.num_fields} fields")
        store = load_sequences(sequences, item_table, max_len=f.max_len, stride=f.stride)
        repo = MetricsLogRepo(metrics_log or f"{out}.metrics.jsonl")
        try:
            encoder, result = train_famae(item_table, store, f, repo, threads=cfg.run.threads)
        except TrainingDiverged as exc:
            if exc.last_good_state is not None:
                save_last_good(f"{out}.last-good", exc, f, item_table.schema)
            raise
        save_checkpoint(out, encoder, item_table.schema, result)
        return {"checkpoint": out, "metrics_log": repo.path, "epochs_run": result.epochs_run,
                "best_epoch": result.best_epoch, "best_metric": (result.best_metric if result.best_epoch else None)}

    _print_json(_run("famae-train", config, overrides, work, log_level))


@app.command("famae-eval")
def cmd_famae_eval(
    checkpoint: str = typer.Option(..., "--checkpoint"),
    items: str = typer.Option(..., "--items"),
    sequences: str = typer.Option(..., "--sequences"),
    k: str = typer.Option("1,10", "--k", help="Cut-offs, e.g. 1,5,10"),
    split: str = typer.Option("valid", "--split", help="valid | all"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
    table: bool = TableOpt,
):
    """Metric 1 (all target fields masked) and Metric 2 (item ID masked) of a checkpoint."""
    def work(cfg: RunConfig):
        ks = parse_int_list(k, "--k")
        if not ks or any(v < 1 for v in ks):
            raise ConfigError("--k needs positive cut-offs")
        configure_torch(cfg.run.threads)
        encoder, schema = load_checkpoint(checkpoint)
        item_table = load_items(items, schema)
        store = load_sequences(sequences, item_table, max_len=encoder.config.max_len, stride=cfg.famae.stride)
        return evaluate_checkpoint(encoder, item_table, store, ks, split)

    _emit(_run("famae-eval", config, _seed_threads(seed, threads), work, log_level), table)


@app.command("extract")
def cmd_extract(
    checkpoint: str = typer.Option(..., "--checkpoint"),
    items: str = typer.Option(..., "--items"),
    out: str = typer.Option(..., "--out", help="Embedding file (RSID)"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
):
    """Writes the concatenated field embeddings of every item."""

    def work(cfg: RunConfig):
        configure_torch(cfg.run.threads)
        return run_extract(checkpoint, items, out)

    _print_json(_run("extract", config, _seed_threads(seed, threads), work, log_level))


# -----------------------
# quantization
# -----------------------

def _quantize_overrides(method, branching, anchors, iters, seed, target_population, threads) -> Dict[str, Dict[str, Any]]:
    return {
        "quantize": {
            "method": method,
            "branching": parse_branching(branching),
            "anchors": parse_anchors(anchors),
            "iters": iters,
            "seed": seed,
            "target_prefix_population": target_population,
        },
        "run": {"threads": threads},
    }


@app.command("quantize")
def cmd_quantize(
    in_path: str = typer.Option(..., "--in", help="Embedding file (RSID)"),
    out: str = typer.Option(..., "--out", help="SID table TSV"),
    codebook: Optional[str] = typer.Option(None, "--codebook", help="CodeBook JSON"),
    method: Optional[str] = typer.Option(None, "--method", help="gaoq | hkmeans | rqkmeans"),
    branching: Optional[str] = typer.Option(None, "--branching", help="Prefix branching, e.g. 32,40 (default: heuristic)"),
    anchors: Optional[str] = typer.Option(None, "--anchors", help="auto or anchor counts per level"),
    iters: Optional[int] = typer.Option(None, "--iters"),
    target_population: Optional[int] = typer.Option(None, "--target-population", help="Items per last-level prefix for the branching heuristic"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
):
    """Quantizes embeddings into Semantic IDs."""

    def work(cfg: RunConfig):
        return run_quantize(in_path, cfg.quantize, out, codebook, threads=cfg.run.threads)

    def overrides():
        return _quantize_overrides(method, branching, anchors, iters, seed, target_population, threads)

    _print_json(_run("quantize", config, overrides, work, log_level))


@app.command("sweep")
def cmd_sweep(
    in_path: str = typer.Option(..., "--in", help="Embedding file (RSID)"),
    branching: List[str] = typer.Option(..., "--branching", help="Repeatable, e.g. --branching 8,8 --branching 16,16"),
    method: List[str] = typer.Option(["gaoq"], "--method", help="Repeatable: gaoq | hkmeans | rqkmeans"),
    sequences: Optional[str] = typer.Option(None, "--sequences", help="Adds SID overlap (needs --items)"),
    items: Optional[str] = typer.Option(None, "--items"),
    iters: Optional[int] = typer.Option(None, "--iters"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
    table: bool = TableOpt,
):
    """Compares quantizers over several branching configurations."""

    def work(cfg: RunConfig):
        branchings = [parse_branching(b) for b in branching]
        if any(b is None for b in branchings):
            raise ConfigError("--branching values must not be empty")
        for m in method:
            if m not in {"gaoq", "hkmeans", "rqkmeans"}:
                raise ConfigError(f"unknown method {m!r}")
        return run_sweep(in_path, branchings, method, cfg.quantize, cfg.run.threads, sequences, items)

    def overrides():
        return {"quantize": {"iters": iters, "seed": seed}, "run": {"threads": threads}}

    _emit(_run("sweep", config, overrides, work, log_level), table)


# -----------------------
# diagnostics
# -----------------------

@app.command("diagnose")
def cmd_diagnose(
    sids: str = typer.Option(..., "--sids", help="SID table TSV"),
    emb: Optional[str] = typer.Option(None, "--emb", help="Embedding file, adds intra-code cosine"),
    corpus: Optional[str] = typer.Option(None, "--corpus", help="Pairs TSV, adds SID overlap"),
    report: Optional[str] = typer.Option(None, "--report", help="Write the report JSON here"),
    bits: Optional[bool] = typer.Option(None, "--bits/--nats", help="Entropy units (default nats)"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
    table: bool = TableOpt,
):
    """Entropy, ambiguity and overlap of a SID table."""

    def work(cfg: RunConfig):
        return run_diagnose(sids, emb, corpus, report, cfg.diagnose.bits)

    def overrides():
        return {"diagnose": {"bits": bits}, "quantize": {"seed": seed}, "run": {"threads": threads}}

    _emit(_run("diagnose", config, overrides, work, log_level), table)


@app.command("bound-check")
def cmd_bound_check(
    trials: int = typer.Option(100, "--trials"),
    fields: int = typer.Option(3, "--fields"),
    max_vocab: int = typer.Option(4, "--max-vocab"),
    contexts: int = typer.Option(4, "--contexts"),
    hidden_states: int = typer.Option(3, "--hidden-states"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
):
    """Checks the mask-weighted sufficiency bound on random enumerable joints."""

    def work(cfg: RunConfig):
        if min(fields, max_vocab - 1, contexts, hidden_states) < 1:
            raise ConfigError("--fields, --contexts, --hidden-states >= 1 and --max-vocab >= 2 are required")
        return run_bound_check(trials, cfg.famae.seed, fields, max_vocab, contexts, hidden_states)

    res = _run("bound-check", config, _seed_threads(seed, threads), work, log_level)
    _print_json(res)
    if not res["holds"]:
        raise typer.Exit(code=1)


@app.command("cost")
def cmd_cost(
    t_e: int = typer.Option(32, "--t-e", help="FAMAE window length"),
    fields: int = typer.Option(5, "--fields", help="Number of fields J"),
    d_e: int = typer.Option(128, "--d-e"),
    l_e: int = typer.Option(2, "--l-e"),
    items: int = typer.Option(1, "--items", help="Number of items N"),
    d_q: int = typer.Option(640, "--d-q", help="Quantized dimension"),
    branching: str = typer.Option("32,40", "--branching"),
    iters: str = typer.Option("50,50", "--iters"),
    anchors: str = typer.Option("32,40", "--anchors"),
    t_enc: int = typer.Option(96, "--t-enc"),
    t_dec: int = typer.Option(3, "--t-dec"),
    d_g: int = typer.Option(128, "--d-g"),
    l_enc: int = typer.Option(4, "--l-enc"),
    l_dec: int = typer.Option(4, "--l-dec"),
    config: Optional[str] = ConfigOpt,
    threads: Optional[int] = ThreadsOpt,
    seed: Optional[int] = typer.Option(None, "--seed"),
    log_level: Optional[str] = LogLevelOpt,
    table: bool = TableOpt,
):
    """Dominant FLOPs of FAMAE, GAOQ and the T5 generator."""

    def work(cfg: RunConfig):
        shapes = FlopShapes(
            t_e=t_e, num_fields=fields, d_e=d_e, l_e=l_e, num_items=items, d_q=d_q,
            branching=tuple(parse_int_list(branching, "--branching") or ()),
            iters=tuple(parse_int_list(iters, "--iters") or ()),
            anchors=tuple(parse_int_list(anchors, "--anchors") or ()),
            t_enc=t_enc, t_dec=t_dec, d_g=d_g, l_enc=l_enc, l_dec=l_dec,
        )
        return run_cost(shapes)

    _emit(_run("cost", config, _seed_threads(seed, threads), work, log_level), table)


def main():
    app(prog_name="semid")


if __name__ == "__main__":
    main()
