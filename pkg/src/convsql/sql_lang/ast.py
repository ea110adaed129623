"""Typed AST for the supported SQL subset.

Column references are global schema indices (0 is "*"); FROM is an ordered
tuple of table indices compared as a set by the evaluator. Nesting is capped
at one subquery level and limits must be positive integers; `validate_ast`
enforces both plus column scoping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from ..errors import GrammarError
from ..schema import Schema

AGGS = ("none", "count", "sum", "avg", "min", "max")
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=", "like", "in", "not in")
SET_OPS = ("intersect", "union", "except")
MAX_QUERY_DEPTH = 2


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Subquery:
    query: "SqlAst"


Value = Union[Literal, Subquery]


@dataclass(frozen=True)
class AggCol:
    agg: str
    distinct: bool
    column: int


@dataclass(frozen=True)
class Predicate:
    operand: AggCol
    op: str  # one of CMP_OPS or "between"
    values: tuple[Value, ...]  # two for between, one otherwise


@dataclass(frozen=True)
class And:
    left: "Cond"
    right: "Cond"


@dataclass(frozen=True)
class Or:
    left: "Cond"
    right: "Cond"


Cond = Union[And, Or, Predicate]


@dataclass(frozen=True)
class GroupBy:
    columns: tuple[int, ...]
    having: Cond | None


@dataclass(frozen=True)
class OrderKey:
    expr: AggCol
    desc: bool


@dataclass(frozen=True)
class OrderBy:
    keys: tuple[OrderKey, ...]
    limit: Literal | None


@dataclass(frozen=True)
class SelectStmt:
    distinct: bool
    select: tuple[AggCol, ...]
    from_tables: tuple[int, ...]
    where: Cond | None
    group: GroupBy | None
    order: OrderBy | None


@dataclass(frozen=True)
class SetOp:
    op: str  # one of SET_OPS
    left: SelectStmt
    right: SelectStmt


SqlAst = Union[SelectStmt, SetOp]


def iter_conds(cond: Cond):
    """Predicates of an and/or tree, left to right."""
    if isinstance(cond, Predicate):
        yield cond
    else:
        yield from iter_conds(cond.left)
        yield from iter_conds(cond.right)


def validate_ast(ast: SqlAst, schema: Schema, depth: int = 1) -> None:
    """Reject ASTs violating scoping, nesting depth, or structural invariants."""
    if depth > MAX_QUERY_DEPTH:
        raise GrammarError(f"query nesting exceeds depth {MAX_QUERY_DEPTH}")
    if isinstance(ast, SetOp):
        if ast.op not in SET_OPS:
            raise GrammarError(f"unknown set operator {ast.op!r}")
        validate_ast(ast.left, schema, depth)
        validate_ast(ast.right, schema, depth)
        return
    if not isinstance(ast, SelectStmt):
        raise GrammarError(f"not a query node: {type(ast).__name__}")

    if not ast.select:
        raise GrammarError("empty select list")
    if not ast.from_tables:
        raise GrammarError("empty FROM clause")
    if len(set(ast.from_tables)) != len(ast.from_tables):
        raise GrammarError("duplicate table in FROM clause")
    for t in ast.from_tables:
        if not 0 <= t < len(schema.tables):
            raise GrammarError(f"out-of-schema table index {t}")
    scope = set(ast.from_tables)

    def check_col(c: int, allow_star: bool = True) -> None:
        if not 0 <= c < len(schema.columns):
            raise GrammarError(f"out-of-schema column index {c}")
        if c == 0:
            if not allow_star:
                raise GrammarError('"*" not allowed here')
            return
        if schema.columns[c].table not in scope:
            raise GrammarError(
                f"column {schema.columns[c].name} not in scope of FROM tables")

    def check_agg_col(a: AggCol) -> None:
        if a.agg not in AGGS:
            raise GrammarError(f"unknown aggregate {a.agg!r}")
        if a.distinct and a.agg == "none":
            raise GrammarError("DISTINCT on a bare column term")
        check_col(a.column)

    def check_value(v: Value) -> None:
        if isinstance(v, Subquery):
            validate_ast(v.query, schema, depth + 1)
        elif not isinstance(v, Literal):
            raise GrammarError(f"not a value node: {type(v).__name__}")

    def check_cond(cond: Cond) -> None:
        if isinstance(cond, (And, Or)):
            check_cond(cond.left)
            check_cond(cond.right)
            return
        if not isinstance(cond, Predicate):
            raise GrammarError(f"not a condition node: {type(cond).__name__}")
        check_agg_col(cond.operand)
        if cond.op == "between":
            if len(cond.values) != 2:
                raise GrammarError("BETWEEN needs exactly two values")
        elif cond.op in CMP_OPS:
            if len(cond.values) != 1:
                raise GrammarError(f"operator {cond.op} needs exactly one value")
        else:
            raise GrammarError(f"unknown comparison operator {cond.op!r}")
        for v in cond.values:
            check_value(v)

    for item in ast.select:
        check_agg_col(item)
    if ast.where is not None:
        check_cond(ast.where)
    if ast.group is not None:
        if not ast.group.columns:
            raise GrammarError("empty GROUP BY column list")
        for c in ast.group.columns:
            check_col(c, allow_star=False)
        if ast.group.having is not None:
            check_cond(ast.group.having)
    if ast.order is not None:
        if not ast.order.keys:
            raise GrammarError("empty ORDER BY key list")
        for key in ast.order.keys:
            check_agg_col(key.expr)
        if ast.order.limit is not None:
            text = ast.order.limit.text
            if not text.isdigit() or int(text) <= 0:
                raise GrammarError(f"LIMIT must be a positive integer, got {text!r}")
