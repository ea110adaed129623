"""Multimodal encoder input assembly.

The downstream encoder sees one flat sequence: a leading [CLS], history
utterances and the current utterance joined by [CLS], a [CLS]-prefixed block
of SQL slots (one per SQL-encoder output vector), then [SEP]-separated table
and column name words. Every non-separator position maps to exactly one
linking-graph node. When the sequence exceeds the budget, whole history
utterances are dropped oldest-first; the current utterance, SQL slots, and
schema are never truncated.

The bimodal SQL encoder's own input format lives here too:
([CLS], sql words, [SEP], question words, [SEP], table : columns blocks).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .errors import LayoutError
from .relations import Node, node_col, node_cur, node_hist, node_sql, node_tab
from .schema import Schema
from .sql_lang.ast import SqlAst
from .sql_lang.render import render_words
from .tokenize import TokenSeq

CLS, SEP, SQL_SLOT = "[CLS]", "[SEP]", "[SQL]"
MAX_INPUT_LEN = 512


class PosInfo(NamedTuple):
    node: Node | None  # None for separators
    label: str         # display token ([CLS], word, ...)
    segment: str       # "sep" | "hist" | "cur" | "sql" | "tab" | "col"


@dataclass(frozen=True)
class SequenceLayout:
    positions: tuple[PosInfo, ...]
    node_positions: dict[Node, tuple[int, ...]]
    history_start: int  # utterances before this index were truncated away
    n_history: int      # kept history utterances
    sql_slots: int
    schema_start: int   # first position of the schema region (its leading [SEP])

    @property
    def length(self) -> int:
        return len(self.positions)

    def segment_positions(self, segment: str) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.positions) if p.segment == segment)


def _schema_positions(schema: Schema) -> list[PosInfo]:
    out: list[PosInfo] = []
    for t, table in enumerate(schema.tables):
        out.append(PosInfo(None, SEP, "sep"))
        for word in table.words:
            out.append(PosInfo(node_tab(t), word, "tab"))
    for c, col in enumerate(schema.columns):
        out.append(PosInfo(None, SEP, "sep"))
        words = col.words if col.words else ("*",)
        for word in words:
            out.append(PosInfo(node_col(c), word, "col"))
    return out


def assemble_input(history: list[TokenSeq], current: TokenSeq, sql_slots: int,
                   schema: Schema, max_len: int = MAX_INPUT_LEN) -> SequenceLayout:
    """Lay out ([CLS], utterances, [CLS], SQL slots, schema) with node identities."""
    if not current:
        raise LayoutError("current utterance is empty")
    schema_part = _schema_positions(schema)
    if 1 + len(schema_part) > max_len:
        raise LayoutError(
            f"schema too large: {len(schema_part)} positions exceed budget {max_len}")

    def total(start: int) -> int:
        hist_len = sum(1 + len(u) for u in history[start:])
        return 1 + hist_len + len(current) + 1 + sql_slots + len(schema_part)

    start = 0
    while start < len(history) and total(start) > max_len:
        start += 1
    if total(start) > max_len:
        raise LayoutError(
            f"input of length {total(start)} exceeds budget {max_len} "
            "even with all history dropped")

    positions: list[PosInfo] = [PosInfo(None, CLS, "sep")]
    for u in range(start, len(history)):
        if u > start:
            positions.append(PosInfo(None, CLS, "sep"))
        for i, tok in enumerate(history[u]):
            positions.append(PosInfo(node_hist(u - start, i), tok.text, "hist"))
        if u == len(history) - 1:
            positions.append(PosInfo(None, CLS, "sep"))
    for i, tok in enumerate(current):
        positions.append(PosInfo(node_cur(i), tok.text, "cur"))
    positions.append(PosInfo(None, CLS, "sep"))
    for s in range(sql_slots):
        positions.append(PosInfo(node_sql(s), SQL_SLOT, "sql"))
    schema_start = len(positions)
    positions.extend(schema_part)

    node_positions: dict[Node, tuple[int, ...]] = {}
    for i, info in enumerate(positions):
        if info.node is not None:
            node_positions[info.node] = node_positions.get(info.node, ()) + (i,)
    return SequenceLayout(tuple(positions), node_positions, start,
                          len(history) - start, sql_slots, schema_start)


@dataclass(frozen=True)
class SqlEncoderInput:
    """Input to the bimodal SQL encoder; schema keeps its block structure so
    pretraining can shuffle tables and intra-table columns."""

    sql_words: tuple[str, ...]
    question_words: tuple[str, ...]
    schema_blocks: tuple[tuple[tuple[str, ...], tuple[tuple[str, ...], ...]], ...]

    def tokens(self) -> tuple[str, ...]:
        out: list[str] = [CLS]
        out.extend(self.sql_words)
        out.append(SEP)
        out.extend(self.question_words)
        for table_words, column_word_lists in self.schema_blocks:
            out.append(SEP)
            out.extend(table_words)
            out.append(":")
            for words in column_word_lists:
                out.extend(words)
        return tuple(out)

    @property
    def sql_span(self) -> tuple[int, int]:
        """[start, end) of the SQL segment including its [CLS]."""
        return 0, 1 + len(self.sql_words)


def build_sql_encoder_input(sql: SqlAst, question_words: tuple[str, ...],
                            schema: Schema) -> SqlEncoderInput:
    """SQL/question/schema segments in the bimodal encoder's order.

    For context-dependent data the question is the concatenation of history
    and current utterance words, which callers prepare.
    """
    words, _ = render_words(sql, schema)
    blocks = tuple(
        (table.words, tuple(schema.columns[c].words for c in table.columns))
        for table in schema.tables
    )
    return SqlEncoderInput(words, tuple(question_words), blocks)
