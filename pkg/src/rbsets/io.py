"""TSV ingestion and output for object tables, links, categories and rankings."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .relational import (
    CategoryAnnotation,
    DataError,
    LinkMatrix,
    ObjectTable,
    Pair,
    RelationalDatabase,
)

MISSING_TOKEN = "NA"


class InputError(DataError):
    """Malformed input file; carries the offending path and line number."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def _rows(path) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if row[0].startswith("#"):
                continue
            yield lineno, [cell.strip() for cell in row]


def read_object_table(path, space_tag: str = "A") -> ObjectTable:
    """Header row, then ``id<TAB>v1<TAB>...``; ``NA`` marks a missing value."""
    rows = list(_rows(path))
    if not rows:
        raise InputError(path, None, "empty feature file")
    _, header = rows[0]
    columns = header[1:]
    ids, values, mask = [], [], []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise InputError(path, lineno, f"expected {len(header)} fields, found {len(row)}")
        vals, miss = [], []
        for col, cell in zip(columns, row[1:]):
            if cell == MISSING_TOKEN:
                vals.append(0.0)
                miss.append(True)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise InputError(path, lineno, f"column {col!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(path, lineno, f"column {col!r}: non-finite value {cell!r}")
            vals.append(v)
            miss.append(False)
        ids.append(row[0])
        values.append(vals)
        mask.append(miss)
    try:
        return ObjectTable(
            tuple(ids),
            np.array(values, dtype=float).reshape(len(ids), len(columns)),
            np.array(mask, dtype=bool).reshape(len(ids), len(columns)),
            tuple(columns),
            space_tag,
        )
    except DataError as exc:
        raise InputError(path, None, str(exc)) from None


def read_pairs(path, known_a=None, known_b=None) -> list[tuple[int, Pair]]:
    """Two-column TSV of id pairs with an optional header; returns (line, pair) tuples.

    A first row reading ``id_a``/``id_b``-style text (and naming no known
    object) is skipped as a header.
    """
    out = []
    for i, (lineno, row) in enumerate(_rows(path)):
        if len(row) < 2:
            raise InputError(path, lineno, f"expected 2 fields, found {len(row)}")
        a, b = row[0], row[1]
        if i == 0 and _looks_like_header(a, b, known_a, known_b):
            continue
        if known_a is not None and a not in known_a:
            raise InputError(path, lineno, f"unknown object id {a!r}")
        if known_b is not None and b not in known_b:
            raise InputError(path, lineno, f"unknown object id {b!r}")
        out.append((lineno, (a, b)))
    return out


_HEADER_A = {"id_a", "a", "source", "src", "from", "object_a", "object_id", "id"}
_HEADER_B = {"id_b", "b", "target", "dst", "to", "object_b", "category", "category_label", "label"}


def _looks_like_header(a, b, known_a, known_b) -> bool:
    if known_a is not None and (a in known_a or b in (known_b or ())):
        return False
    return a.lower() in _HEADER_A and b.lower() in _HEADER_B


def read_links(path, table_a: ObjectTable, table_b: ObjectTable, directed: bool) -> LinkMatrix:
    pairs = read_pairs(path, table_a, table_b)
    return LinkMatrix(tuple(p for _, p in pairs), directed=directed, same_space=table_a is table_b)


def read_categories(path, known=None) -> CategoryAnnotation:
    rows = []
    for i, (lineno, row) in enumerate(_rows(path)):
        if len(row) < 2:
            raise InputError(path, lineno, f"expected 2 fields, found {len(row)}")
        if i == 0 and _looks_like_header(row[0], row[1], None, None):
            continue
        if known is not None and row[0] not in known:
            raise InputError(path, lineno, f"unknown object id {row[0]!r}")
        rows.append((row[0], row[1]))
    return CategoryAnnotation.from_rows(rows)


def load_database(
    features_a,
    links,
    directed: bool,
    features_b=None,
    categories=None,
) -> RelationalDatabase:
    table_a = read_object_table(features_a, "A")
    table_b = read_object_table(features_b, "B") if features_b else table_a
    link_matrix = read_links(links, table_a, table_b, directed)
    known = set(table_a.object_ids) | set(table_b.object_ids)
    cats = read_categories(categories, known) if categories else None
    return RelationalDatabase(table_a, table_b, link_matrix, cats)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_object_table(path, table: ObjectTable) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(("id",) + table.columns) + "\n")
        for oid, row in zip(table.object_ids, table.features):
            fh.write("\t".join([oid] + [_fmt(v) for v in row]) + "\n")


def write_pairs(path, pairs: Sequence[Pair], header: Sequence[str] = ("id_a", "id_b")) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for a, b in pairs:
            fh.write(f"{a}\t{b}\n")


def write_categories(path, annotations: CategoryAnnotation) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("object_id\tcategory_label\n")
        for oid in sorted(annotations.assignments):
            for label in sorted(annotations.assignments[oid]):
                fh.write(f"{oid}\t{label}\n")


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
