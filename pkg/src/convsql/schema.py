"""Database schema loading, intra-schema relations, and cell-content indexing.

Schema documents are JSON files, one per database:

    {"db_id": "...",
     "tables": [{"name": "...", "columns": [{"name": "...", "type": "..."}]}],
     "primary_keys": [["table", "column"], ...],
     "foreign_keys": [[["table", "column"], ["ref_table", "ref_column"]], ...]}

Key lists also accept global column indices in place of name pairs. Content
dumps are tab-delimited rows of (table, column, value).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import SchemaError
from .relations import Edge, EdgeMap, EdgeType, node_col, node_tab
from .tokenize import name_words, normalize_value

STAR = "*"


@dataclass(frozen=True)
class Column:
    name: str
    col_type: str
    table: int | None  # None only for "*"
    words: tuple[str, ...]

    @property
    def is_star(self) -> bool:
        return self.table is None


@dataclass(frozen=True)
class Table:
    name: str
    words: tuple[str, ...]
    columns: tuple[int, ...]  # global column indices


@dataclass(frozen=True)
class Schema:
    db_id: str
    tables: tuple[Table, ...]
    columns: tuple[Column, ...]  # index 0 is always "*"
    foreign_keys: tuple[tuple[int, int], ...]  # (column, referenced column)
    primary_keys: frozenset[int]

    def column_table(self, col_idx: int) -> int | None:
        return self.columns[col_idx].table

    def resolve_column(self, table_name: str | None, col_name: str,
                       scope: Iterable[int] | None = None) -> int:
        """Global index of a column by (optional) table name, searching `scope`
        tables first when given. Raises SchemaError when nothing matches."""
        if col_name == STAR:
            return 0
        want = col_name.lower()
        table_idx: int | None = None
        if table_name is not None:
            table_idx = self.resolve_table(table_name)
        candidates: list[int] = []
        order = list(scope) if scope is not None else list(range(len(self.tables)))
        for t in order:
            if table_idx is not None and t != table_idx:
                continue
            for c in self.tables[t].columns:
                if self.columns[c].name.lower() == want:
                    candidates.append(c)
        if not candidates:
            raise SchemaError(
                f"unknown column {table_name + '.' if table_name else ''}{col_name} "
                f"in db {self.db_id}")
        return candidates[0]

    def resolve_table(self, name: str) -> int:
        want = name.lower()
        for i, t in enumerate(self.tables):
            if t.name.lower() == want:
                return i
        raise SchemaError(f"unknown table {name} in db {self.db_id}")


def load_schema(doc: dict) -> Schema:
    """Validate a schema document and build the indexed Schema."""
    db_id = doc.get("db_id")
    if not db_id:
        raise SchemaError("schema document missing db_id")
    raw_tables = doc.get("tables")
    if not isinstance(raw_tables, list) or not raw_tables:
        raise SchemaError(f"db {db_id}: schema document has no tables")

    columns: list[Column] = [Column(STAR, "text", None, ())]
    tables: list[Table] = []
    seen_tables: set[str] = set()
    by_name: dict[tuple[str, str], int] = {}
    for t_i, t_doc in enumerate(raw_tables):
        t_name = t_doc.get("name", "")
        if not t_name:
            raise SchemaError(f"db {db_id}: table #{t_i} has an empty name")
        if t_name.lower() in seen_tables:
            raise SchemaError(f"db {db_id}: duplicate table name {t_name}")
        seen_tables.add(t_name.lower())
        col_indices: list[int] = []
        for c_doc in t_doc.get("columns", []):
            c_name = c_doc.get("name", "")
            if not c_name:
                raise SchemaError(f"db {db_id}: table {t_name} has a column with an empty name")
            if (t_name.lower(), c_name.lower()) in by_name:
                raise SchemaError(f"db {db_id}: duplicate column {t_name}.{c_name}")
            idx = len(columns)
            columns.append(Column(c_name, c_doc.get("type", "text"), t_i, name_words(c_name)))
            col_indices.append(idx)
            by_name[(t_name.lower(), c_name.lower())] = idx
        tables.append(Table(t_name, name_words(t_name), tuple(col_indices)))

    def column_ref(ref, what: str) -> int:
        if isinstance(ref, int):
            if not 0 < ref < len(columns):
                raise SchemaError(f"db {db_id}: unknown {what} column index {ref}")
            return ref
        try:
            t_name, c_name = ref
        except (TypeError, ValueError):
            raise SchemaError(f"db {db_id}: malformed {what} reference {ref!r}") from None
        key = (str(t_name).lower(), str(c_name).lower())
        if key not in by_name:
            raise SchemaError(f"db {db_id}: unknown {what} target {t_name}.{c_name}")
        return by_name[key]

    fks: list[tuple[int, int]] = []
    for fk in doc.get("foreign_keys", []):
        try:
            src_ref, dst_ref = fk
        except (TypeError, ValueError):
            raise SchemaError(f"db {db_id}: malformed foreign key entry {fk!r}") from None
        src = column_ref(src_ref, "FK")
        dst = column_ref(dst_ref, "FK")
        if columns[src].table == columns[dst].table:
            raise SchemaError(
                f"db {db_id}: foreign key {columns[src].name} -> {columns[dst].name} "
                "stays inside one table")
        fks.append((src, dst))

    pks = frozenset(column_ref(pk, "PK") for pk in doc.get("primary_keys", []))
    return Schema(db_id, tuple(tables), tuple(columns), tuple(fks), pks)


def load_schema_file(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return load_schema(json.load(fh))


def base_relations(schema: Schema) -> list[Edge]:
    """Pre-existing intra-schema relations seeding the linking graph.

    Deterministic for a given Schema; emits identity self-loops, membership
    and primary-key edges between columns and their tables, same-table edges,
    and foreign-key edges at both column and table level (with inverses).
    """
    edges = EdgeMap()
    for t_i in range(len(schema.tables)):
        edges.add_pair(node_tab(t_i), node_tab(t_i), EdgeType.IDENTITY)
    for c_i in range(len(schema.columns)):
        edges.add_pair(node_col(c_i), node_col(c_i), EdgeType.IDENTITY)

    for t_i, table in enumerate(schema.tables):
        for c_i in table.columns:
            kind = EdgeType.CT_PK if c_i in schema.primary_keys else EdgeType.CT_MEMBER
            edges.add_pair(node_col(c_i), node_tab(t_i), kind)
        for a in table.columns:
            for b in table.columns:
                if a < b:
                    edges.add_pair(node_col(a), node_col(b), EdgeType.CC_SAME_TABLE)

    table_fk_dirs: set[tuple[int, int]] = set()
    for src, dst in schema.foreign_keys:
        edges.add_pair(node_col(src), node_col(dst), EdgeType.CC_FK)
        t_src, t_dst = schema.columns[src].table, schema.columns[dst].table
        assert t_src is not None and t_dst is not None
        table_fk_dirs.add((t_src, t_dst))
    for t_src, t_dst in sorted(table_fk_dirs):
        # reciprocal FKs collapse to one forward direction, lower index first
        if (t_dst, t_src) in table_fk_dirs and t_dst < t_src:
            continue
        edges.add_pair(node_tab(t_src), node_tab(t_dst), EdgeType.TT_FK)
    return edges.items()


@dataclass(frozen=True)
class ContentIndex:
    """Per-column normalized distinct cell values, capped in first-seen order."""

    per_column: dict[int, tuple[str, ...]]
    skipped_cells: int = 0
    _sets: dict[int, frozenset[str]] = field(default_factory=dict, repr=False)

    def values(self, col_idx: int) -> frozenset[str]:
        if col_idx not in self._sets:
            self._sets[col_idx] = frozenset(self.per_column.get(col_idx, ()))
        return self._sets[col_idx]

    def __contains__(self, item: tuple[int, str]) -> bool:
        col_idx, text = item
        return text in self.values(col_idx)


def index_contents(rows: Iterable[tuple[str, str, str]], schema: Schema,
                   cap: int = 5000) -> ContentIndex:
    """Build the value index from (table, column, value) rows.

    Rows naming unknown columns are skipped and counted, never fatal.
    """
    by_name = {
        (schema.tables[c.table].name.lower(), c.name.lower()): i
        for i, c in enumerate(schema.columns) if c.table is not None
    }
    ordered: dict[int, dict[str, None]] = {}
    skipped = 0
    for t_name, c_name, value in rows:
        idx = by_name.get((t_name.lower(), c_name.lower()))
        if idx is None:
            skipped += 1
            continue
        bucket = ordered.setdefault(idx, {})
        if len(bucket) >= cap:
            continue
        norm = normalize_value(value)
        if norm:
            bucket.setdefault(norm, None)
    return ContentIndex({i: tuple(vals) for i, vals in ordered.items()}, skipped)


def read_content_dump(path: str | Path) -> Iterator[tuple[str, str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or len(row) < 3:
                continue
            yield row[0], row[1], row[2]
