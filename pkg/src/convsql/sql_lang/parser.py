"""Recursive-descent parser for the supported SQL subset.

Accepts both the canonical serializer output and reasonably formatted
hand-written queries: bare or table-qualified columns, JOIN with or without ON
(join conditions are derived data and discarded), `<>` for `!=`, and arbitrary
keyword case. Select-list columns are resolved after FROM is known; bare names
resolve against FROM tables in order, first match wins.
"""

from __future__ import annotations

from ..errors import SqlParseError
from ..schema import Schema, SchemaError
from .ast import (
    AggCol, And, Cond, GroupBy, Literal, Or, OrderBy, OrderKey, Predicate,
    SelectStmt, SetOp, SqlAst, Subquery, Value, validate_ast,
)
from .lexer import Tok, lex_sql

_AGG_KWS = {"COUNT": "count", "SUM": "sum", "AVG": "avg", "MIN": "min", "MAX": "max"}
_CMP_SYMS = {"=", "!=", "<", "<=", ">", ">="}


class _RawCol:
    """Column reference before FROM-scope resolution."""

    __slots__ = ("table", "name")

    def __init__(self, table: str | None, name: str):
        self.table = table
        self.name = name


class _RawAggCol:
    __slots__ = ("agg", "distinct", "col")

    def __init__(self, agg: str, distinct: bool, col: _RawCol | None):
        self.agg = agg
        self.distinct = distinct
        self.col = col  # None means "*"


class _Parser:
    def __init__(self, tokens: list[Tok], schema: Schema):
        self.toks = tokens
        self.pos = 0
        self.schema = schema

    def peek(self, ahead: int = 0) -> Tok | None:
        i = self.pos + ahead
        return self.toks[i] if i < len(self.toks) else None

    def take(self) -> Tok:
        tok = self.peek()
        if tok is None:
            raise SqlParseError("unexpected end of SQL")
        self.pos += 1
        return tok

    def at_kw(self, *words: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "kw" and tok.text in words

    def at_sym(self, sym: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "sym" and tok.text == sym

    def expect_kw(self, word: str) -> None:
        tok = self.take()
        if tok.kind != "kw" or tok.text != word:
            raise SqlParseError(f"expected {word}, got {tok.text!r}")

    def expect_sym(self, sym: str) -> None:
        tok = self.take()
        if tok.kind != "sym" or tok.text != sym:
            raise SqlParseError(f"expected {sym!r}, got {tok.text!r}")

    # grammar entry points ------------------------------------------------

    def query(self) -> SqlAst:
        left = self.select_stmt()
        if self.at_kw("INTERSECT", "UNION", "EXCEPT"):
            op = self.take().text.lower()
            right = self.select_stmt()
            return SetOp(op, left, right)
        return left

    def select_stmt(self) -> SelectStmt:
        self.expect_kw("SELECT")
        distinct = False
        if self.at_kw("DISTINCT"):
            self.take()
            distinct = True
        raw_items = [self.raw_agg_col()]
        while self.at_sym(","):
            self.take()
            raw_items.append(self.raw_agg_col())
        self.expect_kw("FROM")
        scope = self.from_tables()
        select = tuple(self.resolve_agg(item, scope) for item in raw_items)
        where = None
        if self.at_kw("WHERE"):
            self.take()
            where = self.cond(scope)
        group = None
        if self.at_kw("GROUP"):
            self.take()
            self.expect_kw("BY")
            cols = [self.resolve(self.raw_col(), scope)]
            while self.at_sym(","):
                self.take()
                cols.append(self.resolve(self.raw_col(), scope))
            having = None
            if self.at_kw("HAVING"):
                self.take()
                having = self.cond(scope)
            group = GroupBy(tuple(cols), having)
        order = None
        if self.at_kw("ORDER"):
            self.take()
            self.expect_kw("BY")
            keys = [self.order_key(scope)]
            while self.at_sym(","):
                self.take()
                keys.append(self.order_key(scope))
            limit = None
            if self.at_kw("LIMIT"):
                self.take()
                tok = self.take()
                if tok.kind != "num":
                    raise SqlParseError(f"LIMIT expects a number, got {tok.text!r}")
                limit = Literal(tok.text)
            order = OrderBy(tuple(keys), limit)
        return SelectStmt(distinct, select, scope, where, group, order)

    def from_tables(self) -> tuple[int, ...]:
        tables = [self.table_ref()]
        while True:
            if self.at_kw("JOIN"):
                self.take()
                tables.append(self.table_ref())
                if self.at_kw("ON"):
                    self.take()
                    self.raw_col()
                    self.expect_sym("=")
                    self.raw_col()
            elif self.at_sym(","):
                # comma only continues FROM if a table name follows
                nxt = self.peek(1)
                if nxt is not None and nxt.kind == "ident":
                    try:
                        self.schema.resolve_table(nxt.text)
                    except SchemaError:
                        break
                    self.take()
                    tables.append(self.table_ref())
                else:
                    break
            else:
                break
        return tuple(tables)

    def table_ref(self) -> int:
        tok = self.take()
        if tok.kind != "ident":
            raise SqlParseError(f"expected table name, got {tok.text!r}")
        idx = self.schema.resolve_table(tok.text)
        if self.at_kw("AS"):
            raise SqlParseError("table aliases are not supported")
        return idx

    def raw_col(self) -> _RawCol | None:
        """None means '*'."""
        if self.at_sym("*"):
            self.take()
            return None
        tok = self.take()
        if tok.kind != "ident":
            raise SqlParseError(f"expected column reference, got {tok.text!r}")
        if self.at_sym("."):
            self.take()
            col = self.take()
            if col.kind == "sym" and col.text == "*":
                return None
            if col.kind != "ident":
                raise SqlParseError(f"expected column after '.', got {col.text!r}")
            return _RawCol(tok.text, col.text)
        return _RawCol(None, tok.text)

    def raw_agg_col(self) -> _RawAggCol:
        if self.at_kw(*_AGG_KWS):
            agg = _AGG_KWS[self.take().text]
            self.expect_sym("(")
            distinct = False
            if self.at_kw("DISTINCT"):
                self.take()
                distinct = True
            col = self.raw_col()
            self.expect_sym(")")
            return _RawAggCol(agg, distinct, col)
        return _RawAggCol("none", False, self.raw_col())

    def resolve(self, raw: _RawCol | None, scope: tuple[int, ...]) -> int:
        if raw is None:
            return 0
        try:
            return self.schema.resolve_column(raw.table, raw.name, scope=scope)
        except SchemaError:
            # fall back to a whole-schema search for hand-written queries
            return self.schema.resolve_column(raw.table, raw.name)

    def resolve_agg(self, raw: _RawAggCol, scope: tuple[int, ...]) -> AggCol:
        return AggCol(raw.agg, raw.distinct, self.resolve(raw.col, scope))

    def order_key(self, scope: tuple[int, ...]) -> OrderKey:
        expr = self.resolve_agg(self.raw_agg_col(), scope)
        desc = False
        if self.at_kw("ASC"):
            self.take()
        elif self.at_kw("DESC"):
            self.take()
            desc = True
        return OrderKey(expr, desc)

    # conditions ----------------------------------------------------------

    def cond(self, scope: tuple[int, ...]) -> Cond:
        left = self.cond_and(scope)
        while self.at_kw("OR"):
            self.take()
            left = Or(left, self.cond_and(scope))
        return left

    def cond_and(self, scope: tuple[int, ...]) -> Cond:
        left = self.cond_unit(scope)
        while self.at_kw("AND"):
            self.take()
            left = And(left, self.cond_unit(scope))
        return left

    def cond_unit(self, scope: tuple[int, ...]) -> Cond:
        if self.at_sym("("):
            self.take()
            inner = self.cond(scope)
            self.expect_sym(")")
            return inner
        return self.predicate(scope)

    def predicate(self, scope: tuple[int, ...]) -> Predicate:
        operand = self.resolve_agg(self.raw_agg_col(), scope)
        negated = False
        if self.at_kw("NOT"):
            self.take()
            negated = True
        if self.at_kw("BETWEEN"):
            self.take()
            low = self.value()
            self.expect_kw("AND")
            high = self.value()
            return Predicate(operand, "between", (low, high))
        if self.at_kw("IN"):
            self.take()
            self.expect_sym("(")
            if self.at_kw("SELECT"):
                inner: Value = Subquery(self.query())
            else:
                inner = self.value()
            self.expect_sym(")")
            return Predicate(operand, "not in" if negated else "in", (inner,))
        if self.at_kw("LIKE"):
            self.take()
            return Predicate(operand, "like", (self.value(),))
        if negated:
            raise SqlParseError("NOT is only supported as NOT IN / NOT LIKE")
        tok = self.take()
        if tok.kind != "sym" or tok.text not in _CMP_SYMS:
            raise SqlParseError(f"expected comparison operator, got {tok.text!r}")
        return Predicate(operand, tok.text, (self.value(),))

    def value(self) -> Value:
        if self.at_sym("("):
            self.take()
            sub = Subquery(self.query())
            self.expect_sym(")")
            return sub
        tok = self.take()
        if tok.kind in ("num", "str"):
            return Literal(tok.text)
        if tok.kind == "ident":
            # unquoted literal in hand-written gold
            return Literal(tok.text)
        raise SqlParseError(f"expected a value, got {tok.text!r}")


def parse_sql(text: str, schema: Schema) -> SqlAst:
    """Parse SQL text into a validated AST against the schema."""
    parser = _Parser(lex_sql(text), schema)
    ast = parser.query()
    if parser.pos != len(parser.toks):
        leftover = parser.toks[parser.pos]
        raise SqlParseError(f"trailing tokens after query: {leftover.text!r}")
    validate_ast(ast, parser.schema)
    return ast
