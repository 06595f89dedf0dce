"""
File repositories for every artifact of the pipeline.

Classes:
- EmbeddingRepo   ("RSID" container, N x D)
- CheckpointRepo  ("RSID" container, parameters + manifest)
- SidTableRepo    (TSV: item token, comma-separated codes)
- PairsRepo       (TSV: history SIDs, target SID)
- CodeBookRepo    (JSON)
- MetricsLogRepo  (JSON lines)
- ReportRepo      (JSON)
"""

from __future__ import annotations

import csv
import io
import json
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch

from semid.adapters.parsers import format_code_tuple, parse_code_tuple
from semid.domain.models import (
    AnchorSet,
    CodeBook,
    EmbeddingMatrix,
    SidCorpus,
    SidTable,
    TreeNode,
)
from semid.errors import ConfigError, FormatError
from semid.infra.container import atomic_write, read_container, write_container


# -------------------------
# Helpers
# -------------------------

def _write_text(path: str, text: str) -> None:
    with atomic_write(path) as fh:
        fh.write(text.encode("utf-8"))


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError(path, "file not found") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"bad JSON at line {exc.lineno}: {exc.msg}", offset=exc.pos) from exc


def _read_tsv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep="\t", header=None, dtype="string",
                           keep_default_na=False, quoting=csv.QUOTE_NONE)
    except FileNotFoundError as exc:
        raise FormatError(path, "file not found") from exc
    except pd.errors.EmptyDataError as exc:
        raise FormatError(path, "empty file") from exc
    except pd.errors.ParserError as exc:
        raise FormatError(path, str(exc)) from exc


def _codes_cell(path: str, line: int, raw: Any) -> Tuple[int, ...]:
    try:
        return parse_code_tuple(str(raw))
    except (ValueError, ConfigError) as exc:
        raise FormatError(path, f"line {line}: bad code tuple {raw!r}") from exc


# -------------------------
# Embeddings
# -------------------------

class EmbeddingRepo:
    def __init__(self, path: str):
        self.path = path

    def save(self, m: EmbeddingMatrix) -> None:
        if len(m.row_tokens) != m.rows:
            raise ValueError(f"{m.rows} rows but {len(m.row_tokens)} row tokens")
        write_container(self.path, m.values, {"kind": "embeddings", "rows": list(m.row_tokens)})

    def load(self) -> EmbeddingMatrix:
        values, trailer = read_container(self.path)
        if trailer.get("kind") != "embeddings":
            raise FormatError(self.path, f"not an embedding file (kind={trailer.get('kind')!r})")
        rows = trailer.get("rows")
        if not isinstance(rows, list) or len(rows) != values.shape[0]:
            raise FormatError(self.path, f"trailer lists {len(rows or [])} row tokens for {values.shape[0]} rows")
        return EmbeddingMatrix(values, [str(r) for r in rows])


# -------------------------
# Checkpoints
# -------------------------

class CheckpointRepo:
    """Parameter tensors flattened in state-dict order; the manifest restores them."""

    def __init__(self, path: str):
        self.path = path

    def save(self, state: Dict[str, torch.Tensor], meta: Dict[str, Any]) -> None:
        manifest = []
        chunks = []
        offset = 0
        for name, tensor in state.items():
            flat = tensor.detach().cpu().reshape(-1).to(torch.float32).numpy()
            manifest.append({
                "name": name,
                "shape": list(tensor.shape),
                "dtype": str(tensor.dtype).replace("torch.", ""),
                "offset": offset,
            })
            chunks.append(flat)
            offset += flat.size
        values = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)
        trailer = {"kind": "checkpoint", "tensors": manifest, **meta}
        write_container(self.path, values.reshape(-1, 1), trailer)

    def load(self) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
        values, trailer = read_container(self.path)
        if trailer.get("kind") != "checkpoint":
            raise FormatError(self.path, f"not a checkpoint (kind={trailer.get('kind')!r})")
        flat = values.reshape(-1)
        state: Dict[str, torch.Tensor] = {}
        for entry in trailer.get("tensors", []):
            shape = tuple(int(s) for s in entry["shape"])
            start = int(entry["offset"])
            count = int(np.prod(shape)) if shape else 1
            if start + count > flat.size:
                raise FormatError(self.path, f"tensor {entry['name']!r} runs past the payload",
                                  offset=16 + 4 * flat.size)
            arr = flat[start : start + count].reshape(shape).copy()
            state[entry["name"]] = torch.from_numpy(arr).to(getattr(torch, entry.get("dtype", "float32")))
        meta = {k: v for k, v in trailer.items() if k not in {"kind", "tensors"}}
        return state, meta


# -------------------------
# SID tables and pair corpora
# -------------------------

class SidTableRepo:
    """``token<TAB>c1,c2,...,cL`` per item; alphabet sizes are re-derived on load."""

    def __init__(self, path: str):
        self.path = path

    def save(self, sids: SidTable) -> None:
        df = pd.DataFrame({
            "token": sids.row_tokens,
            "codes": [format_code_tuple(row) for row in sids.codes],
        })
        _write_text(self.path, df.to_csv(sep="\t", header=False, index=False, lineterminator="\n"))

    def load(self, alphabet_sizes: Optional[List[int]] = None) -> SidTable:
        df = _read_tsv(self.path)
        if df.shape[1] != 2:
            raise FormatError(self.path, f"expected 2 columns, found {df.shape[1]}")
        tuples = [_codes_cell(self.path, i + 1, raw) for i, raw in enumerate(df.iloc[:, 1])]
        width = len(tuples[0])
        for i, t in enumerate(tuples):
            if len(t) != width:
                raise FormatError(self.path, f"line {i + 1}: {len(t)} codes, expected {width}")
        codes = np.array(tuples, dtype=np.int64)
        if alphabet_sizes is None:
            alphabet_sizes = [int(c) + 1 for c in codes.max(axis=0)]
        return SidTable(codes, list(alphabet_sizes), [str(t) for t in df.iloc[:, 0]])


class PairsRepo:
    """``c,c,c c,c,c<TAB>c,c,c``: space-separated history SIDs, then the target SID."""

    def __init__(self, path: str):
        self.path = path

    def save(self, corpus: SidCorpus) -> None:
        buf = io.StringIO()
        for hist, target in zip(corpus.histories, corpus.targets):
            left = " ".join(format_code_tuple(row) for row in hist)
            buf.write(f"{left}\t{format_code_tuple(target)}\n")
        _write_text(self.path, buf.getvalue())

    def load(self) -> SidCorpus:
        df = _read_tsv(self.path)
        if df.shape[1] != 2:
            raise FormatError(self.path, f"expected 2 columns, found {df.shape[1]}")
        histories: List[np.ndarray] = []
        targets: List[np.ndarray] = []
        for i in range(len(df)):
            raw_hist, raw_target = df.iat[i, 0], df.iat[i, 1]
            target = np.array(_codes_cell(self.path, i + 1, raw_target), dtype=np.int64)
            cells = [] if pd.isna(raw_hist) else str(raw_hist).split()
            rows = [_codes_cell(self.path, i + 1, c) for c in cells]
            if any(len(r) != len(target) for r in rows):
                raise FormatError(self.path, f"line {i + 1}: history and target SID lengths differ")
            hist = np.array(rows, dtype=np.int64).reshape(len(rows), len(target))
            histories.append(hist)
            targets.append(target)
        return SidCorpus(histories, targets)


# -------------------------
# CodeBook
# -------------------------

class CodeBookRepo:
    def __init__(self, path: str):
        self.path = path

    def save(self, book: CodeBook, sids: SidTable) -> None:
        doc = {
            "method": book.method,
            "branching": [int(b) for b in book.branching],
            "levels": sids.num_levels,
            "alphabet_sizes": [int(a) for a in sids.alphabet_sizes],
            "anchors": {
                str(level): {"vectors": a.vectors.tolist(), "max_abs_cos": a.max_abs_cos}
                for level, a in sorted(book.anchors.items())
            },
            "tree": [
                {
                    "id": n.node_id,
                    "level": n.level,
                    "parent": n.parent,
                    "code": int(n.code),
                    "centroid": np.asarray(n.centroid, dtype=np.float64).tolist(),
                    "members": [int(m) for m in n.members],
                }
                for n in book.nodes
            ],
            "level_centroids": [np.asarray(c).tolist() for c in book.level_centroids],
            "duplicates": book.duplicates,
        }
        _write_text(self.path, _dump_json(doc))

    def load(self) -> Tuple[CodeBook, List[int]]:
        doc = _read_json(self.path)
        try:
            nodes = [
                TreeNode(int(n["id"]), int(n["level"]), n["parent"], np.array(n["centroid"], dtype=np.float64),
                         np.array(n["members"], dtype=np.int64), int(n["code"]))
                for n in doc["tree"]
            ]
            anchors = {
                int(level): AnchorSet(int(level), np.array(a["vectors"], dtype=np.float64), float(a["max_abs_cos"]))
                for level, a in doc["anchors"].items()
            }
            book = CodeBook(
                doc["method"],
                [int(b) for b in doc["branching"]],
                nodes,
                anchors,
                [np.array(c, dtype=np.float64) for c in doc["level_centroids"]],
                [list(g) for g in doc.get("duplicates", [])],
            )
            return book, [int(a) for a in doc["alphabet_sizes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(self.path, f"malformed codebook: {exc}") from exc


# -------------------------
# Logs and reports
# -------------------------

class MetricsLogRepo:
    """Per-epoch JSON lines, no timestamps, fixed key order."""

    def __init__(self, path: str):
        self.path = path
        self._lines: List[str] = []

    def append(self, record: Dict[str, Any]) -> None:
        self._lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
        self.flush()

    def extend(self, records: Iterable[Dict[str, Any]]) -> None:
        for r in records:
            self._lines.append(json.dumps(r, sort_keys=True, separators=(",", ":")))
        self.flush()

    def flush(self) -> None:
        _write_text(self.path, "".join(line + "\n" for line in self._lines))

    def read(self) -> List[Dict[str, Any]]:
        with open(self.path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


class ReportRepo:
    def __init__(self, path: str):
        self.path = path

    def save(self, report: Dict[str, Any]) -> None:
        _write_text(self.path, _dump_json(report))

    def load(self) -> Dict[str, Any]:
        return _read_json(self.path)
