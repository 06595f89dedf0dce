"""
Loaders for the tab-separated item and sequence files.

These functions:
- read TSV files with pandas, every column as string;
- intern field tokens into dense indices in first-seen order;
- reject malformed rows, naming the 1-based line number.

Item file: one item per line, J columns (item-ID token first), no header.
Sequence file: user token, tab, space-separated item-ID tokens in
chronological order.
"""

from __future__ import annotations

import csv
from typing import List, Optional

import numpy as np
import pandas as pd

from semid.domain.models import FieldSchema, ItemTable, SequenceStore
from semid.errors import DataError


# ---------------------------
# helpers
# ---------------------------

def _read_tsv(path: str, what: str) -> pd.DataFrame:
    """Reads a headerless TSV as strings; missing cells stay NA."""
    try:
        df = pd.read_csv(
            path,
            sep="\t",
            header=None,
            dtype="string",
            keep_default_na=False,
            quoting=csv.QUOTE_NONE,
            skip_blank_lines=True,
        )
    except FileNotFoundError as exc:
        raise DataError(f"{what} file not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path}: no {what}") from exc
    except pd.errors.ParserError as exc:
        # pandas names the line: "Expected 2 fields in line 3, saw 3"
        raise DataError(f"{path}: malformed line (wrong column count): {exc}") from exc
    if df.empty:
        raise DataError(f"{path}: no {what}")
    df.attrs["lines"] = _physical_lines(path)
    return df


def _physical_lines(path: str) -> List[int]:
    """1-based file line of every row pandas kept (blank lines are skipped)."""
    with open(path, encoding="utf-8") as fh:
        return [i for i, line in enumerate(fh, start=1) if line.rstrip("\r\n")]


def _line_of(df: pd.DataFrame, row: int) -> int:
    lines = df.attrs.get("lines")
    if lines is not None and row < len(lines):
        return lines[row]
    return int(df.index[row]) + 1


def _default_field_names(num_fields: int) -> List[str]:
    return ["item_id"] + [f"field_{k}" for k in range(1, num_fields)]


# ---------------------------
# public loaders
# ---------------------------

def load_items(path: str, schema: Optional[FieldSchema] = None) -> ItemTable:
    """Reads the item table and interns every field.

    When ``schema`` carries vocabularies (for example from a checkpoint) they
    are used frozen and unknown tokens are rejected; otherwise vocabularies
    are built in first-seen order. Rows with an empty field are rejected.

    Raises:
        DataError: empty file, wrong column count, missing field,
            duplicate item-ID token or (frozen schema) unknown token.
    """
    names = list(schema.field_names) if schema is not None else None
    df = _read_tsv(path, "items")
    num_fields = df.shape[1]
    if schema is not None and num_fields != schema.num_fields:
        raise DataError(f"{path}: {num_fields} columns, schema has {schema.num_fields} fields")

    for k in range(num_fields):
        col = df.iloc[:, k]
        bad = np.flatnonzero((col.fillna("").str.strip() == "").to_numpy(dtype=bool))
        if len(bad):
            raise DataError(f"{path}: line {_line_of(df, int(bad[0]))}: missing field {k}")

    ids = df.iloc[:, 0]
    dup = np.flatnonzero(ids.duplicated().to_numpy(dtype=bool))
    if len(dup):
        row = int(dup[0])
        first = int(np.flatnonzero((ids == ids.iloc[row]).to_numpy(dtype=bool))[0])
        raise DataError(
            f"{path}: line {_line_of(df, row)}: duplicate item-ID {ids.iloc[row]!r} "
            f"(first seen on line {_line_of(df, first)})"
        )

    frozen = schema is not None and len(schema.vocabularies) == num_fields
    values = np.empty((len(df), num_fields), dtype=np.int64)
    vocabularies: List[List[str]] = []
    for k in range(num_fields):
        col = df.iloc[:, k].astype(str)
        if frozen:
            vocab = list(schema.vocabularies[k])
            index = {tok: i for i, tok in enumerate(vocab)}
            missing = [i for i, tok in enumerate(col) if tok not in index]
            if missing:
                row = missing[0]
                raise DataError(f"{path}: line {_line_of(df, row)}: unknown token {col.iloc[row]!r} in field {k}")
            values[:, k] = [index[tok] for tok in col]
        else:
            codes, uniques = pd.factorize(col, sort=False)
            values[:, k] = codes
            vocab = [str(u) for u in uniques]
        vocabularies.append(vocab)

    field_names = names if names is not None else _default_field_names(num_fields)
    out_schema = FieldSchema(field_names, vocabularies)
    out_schema.check(len(df))
    if not np.array_equal(values[:, 0], np.arange(len(df))):
        raise DataError(f"{path}: item order differs from the item-ID vocabulary order")
    return ItemTable(out_schema, values)


def load_sequences(path: str, items: ItemTable, max_len: int = 32, stride: int = 1) -> SequenceStore:
    """Reads user sequences and resolves item tokens to item indices.

    Raises:
        DataError: empty file, empty sequence line or unknown item token.
    """
    df = _read_tsv(path, "sequences")
    if df.shape[1] == 1:
        raise DataError(f"{path}: line {_line_of(df, 0)}: empty sequence for user {df.iat[0, 0]!r}")
    if df.shape[1] != 2:
        raise DataError(f"{path}: malformed line (wrong column count): expected 2 columns, saw {df.shape[1]}")
    index = items.index_of()
    users: List[str] = []
    sequences: List[np.ndarray] = []
    for row in range(len(df)):
        user = df.iat[row, 0]
        raw = df.iat[row, 1]
        line = _line_of(df, row)
        tokens = [] if pd.isna(raw) else str(raw).split()
        if pd.isna(user) or not str(user).strip():
            raise DataError(f"{path}: line {line}: missing user token")
        if not tokens:
            raise DataError(f"{path}: line {line}: empty sequence for user {user!r}")
        unknown = [t for t in tokens if t not in index]
        if unknown:
            raise DataError(f"{path}: line {line}: unknown item {unknown[0]!r}")
        users.append(str(user))
        sequences.append(np.array([index[t] for t in tokens], dtype=np.int64))
    return SequenceStore(users, sequences, max_len=max_len, stride=stride)
