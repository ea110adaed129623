"""Canonical SQL serialization: text form and word-level stream.

One walker emits a typed lexeme stream; the text renderer and the word-stream
builder (used by the bimodal SQL encoder and identifier matching) both consume
it, so they can never drift apart. Keywords are uppercased in text and
canonical spacing is applied; nested and/or operands are parenthesized so the
condition tree shape survives a parse round-trip.
"""

from __future__ import annotations

import re
from typing import NamedTuple

from ..schema import Schema
from ..tokenize import normalize_tokens
from .ast import (
    AggCol, And, Cond, GroupBy, Literal, Or, OrderBy, Predicate, SelectStmt,
    SetOp, SqlAst, Subquery, Value,
)

_NUMERIC = re.compile(r"^\d+(\.\d+)?$")


class Lexeme(NamedTuple):
    kind: str  # "kw" | "tab" | "col" | "num" | "str" | "sym" | "star"
    text: str
    ref: int = -1  # schema index for tab/col


class Occurrence(NamedTuple):
    """An identifier occurrence in the word stream."""

    kind: str  # "tab" | "col"
    index: int
    start: int  # word position
    length: int


def _kw(*words: str) -> list[Lexeme]:
    return [Lexeme("kw", w) for w in words]


class _Walker:
    def __init__(self, schema: Schema):
        self.schema = schema
        self.out: list[Lexeme] = []
        self.scopes: list[tuple[int, ...]] = []

    def query(self, ast: SqlAst) -> None:
        if isinstance(ast, SetOp):
            self.select(ast.left)
            self.out += _kw(ast.op.upper())
            self.select(ast.right)
        else:
            self.select(ast)

    def select(self, sel: SelectStmt) -> None:
        self.scopes.append(sel.from_tables)
        self.out += _kw("SELECT")
        if sel.distinct:
            self.out += _kw("DISTINCT")
        for i, item in enumerate(sel.select):
            if i:
                self.out.append(Lexeme("sym", ","))
            self.agg_col(item)
        self.out += _kw("FROM")
        self.from_clause(sel.from_tables)
        if sel.where is not None:
            self.out += _kw("WHERE")
            self.cond(sel.where)
        if sel.group is not None:
            self.group(sel.group)
        if sel.order is not None:
            self.order(sel.order)
        self.scopes.pop()

    def from_clause(self, tables: tuple[int, ...]) -> None:
        self.table(tables[0])
        for pos in range(1, len(tables)):
            t = tables[pos]
            self.out += _kw("JOIN")
            self.table(t)
            join = self._join_condition(t, tables[:pos])
            if join is not None:
                self.out += _kw("ON")
                self.column(join[0], qualify=True)
                self.out.append(Lexeme("sym", "="))
                self.column(join[1], qualify=True)

    def _join_condition(self, t: int, earlier: tuple[int, ...]) -> tuple[int, int] | None:
        for src, dst in self.schema.foreign_keys:
            ts, td = self.schema.columns[src].table, self.schema.columns[dst].table
            if ts == t and td in earlier:
                return src, dst
            if td == t and ts in earlier:
                return dst, src
        return None

    def table(self, t: int) -> None:
        self.out.append(Lexeme("tab", self.schema.tables[t].name, t))

    def column(self, c: int, qualify: bool = False) -> None:
        col = self.schema.columns[c]
        if col.is_star:
            self.out.append(Lexeme("star", "*"))
            return
        if qualify or self._ambiguous(c):
            self.table(col.table)
            self.out.append(Lexeme("sym", "."))
        self.out.append(Lexeme("col", col.name, c))

    def _ambiguous(self, c: int) -> bool:
        """True when the bare name would resolve to a different in-scope column."""
        scope = self.scopes[-1] if self.scopes else ()
        want = self.schema.columns[c].name.lower()
        hits = [
            ci for t in scope for ci in self.schema.tables[t].columns
            if self.schema.columns[ci].name.lower() == want
        ]
        return bool(hits) and hits[0] != c

    def agg_col(self, item: AggCol) -> None:
        if item.agg == "none":
            self.column(item.column)
            return
        self.out += _kw(item.agg.upper())
        self.out.append(Lexeme("sym", "("))
        if item.distinct:
            self.out += _kw("DISTINCT")
        self.column(item.column)
        self.out.append(Lexeme("sym", ")"))

    def cond(self, cond: Cond, wrap: bool = False) -> None:
        if isinstance(cond, Predicate):
            self.predicate(cond)
            return
        if wrap:
            self.out.append(Lexeme("sym", "("))
        word = "AND" if isinstance(cond, And) else "OR"
        self.cond(cond.left, wrap=True)
        self.out += _kw(word)
        self.cond(cond.right, wrap=True)
        if wrap:
            self.out.append(Lexeme("sym", ")"))

    def predicate(self, pred: Predicate) -> None:
        self.agg_col(pred.operand)
        if pred.op == "between":
            self.out += _kw("BETWEEN")
            self.value(pred.values[0])
            self.out += _kw("AND")
            self.value(pred.values[1])
        elif pred.op in ("in", "not in"):
            if pred.op == "not in":
                self.out += _kw("NOT")
            self.out += _kw("IN")
            self.out.append(Lexeme("sym", "("))
            self.value(pred.values[0], bare_subquery=True)
            self.out.append(Lexeme("sym", ")"))
        elif pred.op == "like":
            self.out += _kw("LIKE")
            self.value(pred.values[0])
        else:
            self.out.append(Lexeme("sym", pred.op))
            self.value(pred.values[0])

    def value(self, v: Value, bare_subquery: bool = False) -> None:
        if isinstance(v, Subquery):
            if not bare_subquery:
                self.out.append(Lexeme("sym", "("))
            self.query(v.query)
            if not bare_subquery:
                self.out.append(Lexeme("sym", ")"))
        elif _NUMERIC.match(v.text):
            self.out.append(Lexeme("num", v.text))
        else:
            self.out.append(Lexeme("str", v.text))

    def group(self, g: GroupBy) -> None:
        self.out += _kw("GROUP", "BY")
        for i, c in enumerate(g.columns):
            if i:
                self.out.append(Lexeme("sym", ","))
            self.column(c)
        if g.having is not None:
            self.out += _kw("HAVING")
            self.cond(g.having)

    def order(self, o: OrderBy) -> None:
        self.out += _kw("ORDER", "BY")
        for i, key in enumerate(o.keys):
            if i:
                self.out.append(Lexeme("sym", ","))
            self.agg_col(key.expr)
            self.out += _kw("DESC" if key.desc else "ASC")
        if o.limit is not None:
            self.out += _kw("LIMIT")
            self.value(o.limit)


def lexemes(ast: SqlAst, schema: Schema) -> list[Lexeme]:
    walker = _Walker(schema)
    walker.query(ast)
    return walker.out


_NO_SPACE_BEFORE = {",", ")", "."}
_NO_SPACE_AFTER = {"(", "."}
_AGG_KW = {"COUNT", "SUM", "AVG", "MIN", "MAX"}


def render_sql(ast: SqlAst, schema: Schema) -> str:
    """Canonical SQL text: uppercase keywords, stable spacing, columns
    qualified only when the bare name would be ambiguous in scope."""
    parts: list[str] = []
    prev: Lexeme | None = None
    for lx in lexemes(ast, schema):
        text = lx.text
        if lx.kind == "str":
            text = "'" + text.replace("'", "''") + "'"
        glue = (
            (lx.kind == "sym" and lx.text in _NO_SPACE_BEFORE)
            or (lx.kind == "sym" and lx.text == "("
                and prev is not None and prev.kind == "kw" and prev.text in _AGG_KW)
            or (prev is not None and prev.kind == "sym" and prev.text in _NO_SPACE_AFTER)
        )
        if parts and not glue:
            parts.append(" ")
        parts.append(text)
        prev = lx
    return "".join(parts)


def render_words(ast: SqlAst, schema: Schema) -> tuple[tuple[str, ...], tuple[Occurrence, ...]]:
    """Word-level stream of the canonical form plus identifier occurrences.

    Identifiers split into their name words ("original_air_date" -> original,
    air, date); keywords and symbols are single lowercase words. Occurrence
    spans index into the returned word tuple.
    """
    words: list[str] = []
    occurrences: list[Occurrence] = []
    for lx in lexemes(ast, schema):
        if lx.kind == "kw":
            words.append(lx.text.lower())
        elif lx.kind in ("tab", "col"):
            ws = [t.text for t in normalize_tokens(lx.text)]
            occurrences.append(Occurrence(lx.kind, lx.ref, len(words), len(ws)))
            words.extend(ws)
        elif lx.kind == "num":
            words.append(lx.text)
        elif lx.kind == "str":
            words.extend(t.text for t in normalize_tokens(lx.text))
        elif lx.kind == "star":
            words.append("*")
        else:
            words.append(lx.text)
    return tuple(words), tuple(occurrences)
