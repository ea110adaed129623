"""Grammar actions: depth-first AST serialization and constrained derivation.

The production table is frozen in data/grammar.json (rule ids are stable
across releases); this module verifies the shipped table matches the one
compiled here and refuses to run on drift. Derivations are tracked by an
immutable `DerivationState` so beam hypotheses can branch cheaply, and
`legal_actions` returns exactly the actions that keep the derivation valid:
column scoping, FROM coverage of referenced tables, subquery depth, and
positive integer limits are all enforced during decoding rather than after.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, NamedTuple, Union

from ..errors import GrammarError
from ..schema import Schema
from .ast import (
    AggCol, And, Cond, GroupBy, Literal, Or, OrderBy, OrderKey, Predicate,
    SelectStmt, SetOp, SqlAst, Subquery, Value, validate_ast, MAX_QUERY_DEPTH,
)

GRAMMAR_VERSION = 1

COLUMN, TABLE, VALUE = "COLUMN", "TABLE", "VALUE"
_TERMINALS = {COLUMN, TABLE, VALUE}


class Production(NamedTuple):
    rule_id: int
    name: str
    lhs: str
    rhs: tuple[str, ...]


_DEFS: list[tuple[str, str, tuple[str, ...]]] = [
    ("q_select", "query", ("select",)),
    ("q_intersect", "query", ("select", "select")),
    ("q_union", "query", ("select", "select")),
    ("q_except", "query", ("select", "select")),
    ("sel", "select", ("distinct_opt", "agg_list", "from_clause",
                       "where_opt", "group_opt", "order_opt")),
    ("d_none", "distinct_opt", ()),
    ("d_distinct", "distinct_opt", ()),
    ("al_last", "agg_list", ("agg_col",)),
    ("al_cons", "agg_list", ("agg_col", "agg_list")),
    ("ac", "agg_col", ("agg_op", COLUMN)),
    ("agg_none", "agg_op", ()),
    ("agg_count", "agg_op", ()),
    ("agg_sum", "agg_op", ()),
    ("agg_avg", "agg_op", ()),
    ("agg_min", "agg_op", ()),
    ("agg_max", "agg_op", ()),
    ("agg_count_distinct", "agg_op", ()),
    ("agg_sum_distinct", "agg_op", ()),
    ("agg_avg_distinct", "agg_op", ()),
    ("agg_min_distinct", "agg_op", ()),
    ("agg_max_distinct", "agg_op", ()),
    ("f_last", "from_clause", (TABLE,)),
    ("f_cons", "from_clause", (TABLE, "from_clause")),
    ("w_none", "where_opt", ()),
    ("w_some", "where_opt", ("cond",)),
    ("c_and", "cond", ("cond", "cond")),
    ("c_or", "cond", ("cond", "cond")),
    ("c_pred", "cond", ("pred",)),
    ("p_cmp", "pred", ("agg_col", "cmp_op", "value")),
    ("p_between", "pred", ("agg_col", "value", "value")),
    ("op_eq", "cmp_op", ()),
    ("op_ne", "cmp_op", ()),
    ("op_lt", "cmp_op", ()),
    ("op_le", "cmp_op", ()),
    ("op_gt", "cmp_op", ()),
    ("op_ge", "cmp_op", ()),
    ("op_like", "cmp_op", ()),
    ("op_in", "cmp_op", ()),
    ("op_nin", "cmp_op", ()),
    ("v_lit", "value", (VALUE,)),
    ("v_sub", "value", ("query",)),
    ("g_none", "group_opt", ()),
    ("g_some", "group_opt", ("col_list", "having_opt")),
    ("cl_last", "col_list", (COLUMN,)),
    ("cl_cons", "col_list", (COLUMN, "col_list")),
    ("h_none", "having_opt", ()),
    ("h_some", "having_opt", ("cond",)),
    ("o_none", "order_opt", ()),
    ("o_some", "order_opt", ("ord_list", "limit_opt")),
    ("ol_last", "ord_list", ("ordering",)),
    ("ol_cons", "ord_list", ("ordering", "ord_list")),
    ("ord_asc", "ordering", ("agg_col",)),
    ("ord_desc", "ordering", ("agg_col",)),
    ("l_none", "limit_opt", ()),
    ("l_some", "limit_opt", (VALUE,)),
]

PRODUCTIONS: dict[str, Production] = {
    name: Production(i, name, lhs, rhs) for i, (name, lhs, rhs) in enumerate(_DEFS)
}
NUM_RULES = len(PRODUCTIONS)
RULE_NAMES = tuple(p.name for p in sorted(PRODUCTIONS.values()))

# every symbol a frontier frame can hold, in a stable order
SYMBOLS: tuple[str, ...] = tuple(
    dict.fromkeys([lhs for _, lhs, _ in _DEFS])) + (COLUMN, TABLE, VALUE)
SYMBOL_IDS = {s: i for i, s in enumerate(SYMBOLS)}
_BY_LHS: dict[str, tuple[str, ...]] = {}
for _p in PRODUCTIONS.values():
    _BY_LHS.setdefault(_p.lhs, ())
    _BY_LHS[_p.lhs] += (_p.name,)

_AGG_RULES = {
    "agg_none": ("none", False), "agg_count": ("count", False),
    "agg_sum": ("sum", False), "agg_avg": ("avg", False),
    "agg_min": ("min", False), "agg_max": ("max", False),
    "agg_count_distinct": ("count", True), "agg_sum_distinct": ("sum", True),
    "agg_avg_distinct": ("avg", True), "agg_min_distinct": ("min", True),
    "agg_max_distinct": ("max", True),
}
_AGG_RULE_OF = {v: k for k, v in _AGG_RULES.items()}
_OP_RULES = {
    "op_eq": "=", "op_ne": "!=", "op_lt": "<", "op_le": "<=", "op_gt": ">",
    "op_ge": ">=", "op_like": "like", "op_in": "in", "op_nin": "not in",
}
_OP_RULE_OF = {v: k for k, v in _OP_RULES.items()}
_SETOP_RULES = {"q_intersect": "intersect", "q_union": "union", "q_except": "except"}
_SETOP_RULE_OF = {v: k for k, v in _SETOP_RULES.items()}

# clause carried by each child frame; positions not listed inherit the parent's
_CLAUSE_OVERRIDES: dict[str, tuple[str | None, ...]] = {
    "sel": ("sel", "sel", "from", "where", "group", "order"),
    "g_some": ("group", "having"),
    "o_some": ("order", "limit"),
}


def rule_id(name: str) -> int:
    return PRODUCTIONS[name].rule_id


def verify_frozen_grammar() -> None:
    """Compare the compiled production table against the shipped data file."""
    with resources.files("convsql").joinpath("data/grammar.json").open() as fh:
        doc = json.load(fh)
    if doc.get("version") != GRAMMAR_VERSION:
        raise GrammarError(f"grammar table version {doc.get('version')} != {GRAMMAR_VERSION}")
    shipped = {
        p["name"]: Production(p["id"], p["name"], p["lhs"], tuple(p["rhs"]))
        for p in doc["productions"]
    }
    if shipped != PRODUCTIONS:
        raise GrammarError("grammar table drift: data/grammar.json does not match code")


def grammar_table() -> dict:
    return {
        "version": GRAMMAR_VERSION,
        "start": "query",
        "productions": [
            {"id": p.rule_id, "name": p.name, "lhs": p.lhs, "rhs": list(p.rhs)}
            for p in sorted(PRODUCTIONS.values())
        ],
    }


# actions ------------------------------------------------------------------


@dataclass(frozen=True)
class ApplyRule:
    rule: str


@dataclass(frozen=True)
class SelectColumn:
    column: int


@dataclass(frozen=True)
class SelectTable:
    table: int


@dataclass(frozen=True)
class EmitValue:
    text: str


Action = Union[ApplyRule, SelectColumn, SelectTable, EmitValue]


def action_str(action: Action) -> str:
    if isinstance(action, ApplyRule):
        return f"rule:{action.rule}"
    if isinstance(action, SelectColumn):
        return f"col:{action.column}"
    if isinstance(action, SelectTable):
        return f"tab:{action.table}"
    return f"val:{action.text}"


# writer: AST -> actions ------------------------------------------------------


def sql_to_actions(ast: SqlAst, schema: Schema) -> tuple[Action, ...]:
    """Depth-first pre-order action serialization; exact inverse of actions_to_sql."""
    validate_ast(ast, schema)
    out: list[Action] = []
    _write_query(ast, out)
    return tuple(out)


def _write_query(ast: SqlAst, out: list[Action]) -> None:
    if isinstance(ast, SetOp):
        out.append(ApplyRule(_SETOP_RULE_OF[ast.op]))
        _write_select(ast.left, out)
        _write_select(ast.right, out)
    else:
        out.append(ApplyRule("q_select"))
        _write_select(ast, out)


def _write_select(sel: SelectStmt, out: list[Action]) -> None:
    out.append(ApplyRule("sel"))
    out.append(ApplyRule("d_distinct" if sel.distinct else "d_none"))
    for i, item in enumerate(sel.select):
        out.append(ApplyRule("al_last" if i == len(sel.select) - 1 else "al_cons"))
        _write_agg_col(item, out)
    for i, t in enumerate(sel.from_tables):
        out.append(ApplyRule("f_last" if i == len(sel.from_tables) - 1 else "f_cons"))
        out.append(SelectTable(t))
    if sel.where is None:
        out.append(ApplyRule("w_none"))
    else:
        out.append(ApplyRule("w_some"))
        _write_cond(sel.where, out)
    if sel.group is None:
        out.append(ApplyRule("g_none"))
    else:
        out.append(ApplyRule("g_some"))
        for i, c in enumerate(sel.group.columns):
            out.append(ApplyRule("cl_last" if i == len(sel.group.columns) - 1 else "cl_cons"))
            out.append(SelectColumn(c))
        if sel.group.having is None:
            out.append(ApplyRule("h_none"))
        else:
            out.append(ApplyRule("h_some"))
            _write_cond(sel.group.having, out)
    if sel.order is None:
        out.append(ApplyRule("o_none"))
    else:
        out.append(ApplyRule("o_some"))
        for i, key in enumerate(sel.order.keys):
            out.append(ApplyRule("ol_last" if i == len(sel.order.keys) - 1 else "ol_cons"))
            out.append(ApplyRule("ord_desc" if key.desc else "ord_asc"))
            _write_agg_col(key.expr, out)
        if sel.order.limit is None:
            out.append(ApplyRule("l_none"))
        else:
            out.append(ApplyRule("l_some"))
            out.append(EmitValue(sel.order.limit.text))


def _write_agg_col(item: AggCol, out: list[Action]) -> None:
    out.append(ApplyRule("ac"))
    out.append(ApplyRule(_AGG_RULE_OF[(item.agg, item.distinct)]))
    out.append(SelectColumn(item.column))


def _write_cond(cond: Cond, out: list[Action]) -> None:
    if isinstance(cond, (And, Or)):
        out.append(ApplyRule("c_and" if isinstance(cond, And) else "c_or"))
        _write_cond(cond.left, out)
        _write_cond(cond.right, out)
        return
    out.append(ApplyRule("c_pred"))
    if cond.op == "between":
        out.append(ApplyRule("p_between"))
        _write_agg_col(cond.operand, out)
        _write_value(cond.values[0], out)
        _write_value(cond.values[1], out)
    else:
        out.append(ApplyRule("p_cmp"))
        _write_agg_col(cond.operand, out)
        out.append(ApplyRule(_OP_RULE_OF[cond.op]))
        _write_value(cond.values[0], out)


def _write_value(v: Value, out: list[Action]) -> None:
    if isinstance(v, Subquery):
        out.append(ApplyRule("v_sub"))
        _write_query(v.query, out)
    else:
        out.append(ApplyRule("v_lit"))
        out.append(EmitValue(v.text))


# reader: actions -> AST ------------------------------------------------------


class _Reader:
    def __init__(self, actions: Iterable[Action]):
        self.actions = tuple(actions)
        self.pos = 0

    def take(self, expected: str) -> Action:
        if self.pos >= len(self.actions):
            raise GrammarError(f"incomplete derivation: expected {expected}")
        action = self.actions[self.pos]
        self.pos += 1
        return action

    def rule(self, lhs: str) -> str:
        action = self.take(lhs)
        if not isinstance(action, ApplyRule):
            raise GrammarError(
                f"expected a {lhs} rule, got {action_str(action)}")
        if PRODUCTIONS[action.rule].lhs != lhs:
            raise GrammarError(
                f"rule {action.rule} does not derive {lhs}")
        return action.rule

    def column(self) -> int:
        action = self.take("column")
        if not isinstance(action, SelectColumn):
            raise GrammarError(f"expected a column, got {action_str(action)}")
        return action.column

    def table(self) -> int:
        action = self.take("table")
        if not isinstance(action, SelectTable):
            raise GrammarError(f"expected a table, got {action_str(action)}")
        return action.table

    def value_text(self) -> str:
        action = self.take("value")
        if not isinstance(action, EmitValue):
            raise GrammarError(f"expected a value, got {action_str(action)}")
        return action.text


def actions_to_sql(actions: Iterable[Action], schema: Schema) -> SqlAst:
    """Rebuild the unique AST of a complete derivation; errors on illegal input."""
    reader = _Reader(actions)
    ast = _read_query(reader)
    if reader.pos != len(reader.actions):
        raise GrammarError(
            f"trailing actions after complete derivation at index {reader.pos}")
    validate_ast(ast, schema)
    return ast


def _read_query(r: _Reader) -> SqlAst:
    rule = r.rule("query")
    if rule == "q_select":
        return _read_select(r)
    return SetOp(_SETOP_RULES[rule], _read_select(r), _read_select(r))


def _read_select(r: _Reader) -> SelectStmt:
    r.rule("select")
    distinct = r.rule("distinct_opt") == "d_distinct"
    items: list[AggCol] = []
    while True:
        rule = r.rule("agg_list")
        items.append(_read_agg_col(r))
        if rule == "al_last":
            break
    tables: list[int] = []
    while True:
        rule = r.rule("from_clause")
        tables.append(r.table())
        if rule == "f_last":
            break
    where = _read_cond(r) if r.rule("where_opt") == "w_some" else None
    group = None
    if r.rule("group_opt") == "g_some":
        cols: list[int] = []
        while True:
            rule = r.rule("col_list")
            cols.append(r.column())
            if rule == "cl_last":
                break
        having = _read_cond(r) if r.rule("having_opt") == "h_some" else None
        group = GroupBy(tuple(cols), having)
    order = None
    if r.rule("order_opt") == "o_some":
        keys: list[OrderKey] = []
        while True:
            rule = r.rule("ord_list")
            desc = r.rule("ordering") == "ord_desc"
            keys.append(OrderKey(_read_agg_col(r), desc))
            if rule == "ol_last":
                break
        limit = Literal(r.value_text()) if r.rule("limit_opt") == "l_some" else None
        order = OrderBy(tuple(keys), limit)
    return SelectStmt(distinct, tuple(items), tuple(tables), where, group, order)


def _read_agg_col(r: _Reader) -> AggCol:
    r.rule("agg_col")
    agg, distinct = _AGG_RULES[r.rule("agg_op")]
    return AggCol(agg, distinct, r.column())


def _read_cond(r: _Reader) -> Cond:
    rule = r.rule("cond")
    if rule == "c_and":
        return And(_read_cond(r), _read_cond(r))
    if rule == "c_or":
        return Or(_read_cond(r), _read_cond(r))
    prule = r.rule("pred")
    operand = _read_agg_col(r)
    if prule == "p_between":
        return Predicate(operand, "between", (_read_value(r), _read_value(r)))
    op = _OP_RULES[r.rule("cmp_op")]
    return Predicate(operand, op, (_read_value(r),))


def _read_value(r: _Reader) -> Value:
    if r.rule("value") == "v_sub":
        return Subquery(_read_query(r))
    return Literal(r.value_text())


# incremental derivation state ------------------------------------------------


@dataclass(frozen=True)
class Frame:
    symbol: str      # nonterminal name or terminal kind
    select_id: int   # -1 outside any select
    depth: int
    clause: str      # "top" | "sel" | "from" | "where" | "group" | "having" | "order" | "limit"
    last_slot: bool = False  # TABLE slot of f_last


@dataclass(frozen=True)
class Scope:
    chosen: frozenset[int]
    required: frozenset[int]


@dataclass(frozen=True)
class DerivationState:
    frontier: tuple[Frame, ...]  # last element is the top
    scopes: tuple[Scope, ...]
    n_actions: int = 0

    @property
    def top(self) -> Frame | None:
        return self.frontier[-1] if self.frontier else None


def initial_state() -> DerivationState:
    return DerivationState((Frame("query", -1, 1, "top"),), ())


def is_complete(state: DerivationState) -> bool:
    return not state.frontier


class LegalActions(NamedTuple):
    rules: tuple[str, ...]
    columns: tuple[int, ...]
    tables: tuple[int, ...]
    value_slot: str | None  # None | "pred" | "limit"

    def count(self) -> int:
        return len(self.rules) + len(self.columns) + len(self.tables)


_EMPTY_LEGAL = LegalActions((), (), (), None)


def legal_actions(state: DerivationState, schema: Schema) -> LegalActions:
    """Actions applicable at the frontier; empty only when derivation is complete."""
    top = state.top
    if top is None:
        return _EMPTY_LEGAL
    if top.symbol == COLUMN:
        return LegalActions((), _legal_columns(top, state, schema), (), None)
    if top.symbol == TABLE:
        return LegalActions((), (), _legal_tables(top, state, schema), None)
    if top.symbol == VALUE:
        return LegalActions((), (), (), "limit" if top.clause == "limit" else "pred")
    rules = []
    for name in _BY_LHS[top.symbol]:
        if _rule_allowed(name, top, state, schema):
            rules.append(name)
    return LegalActions(tuple(rules), (), (), None)


def _scope_columns(state: DerivationState, sid: int, schema: Schema) -> tuple[int, ...]:
    out: list[int] = []
    chosen = state.scopes[sid].chosen
    for t in sorted(chosen):
        out.extend(schema.tables[t].columns)
    return tuple(out)


def _legal_columns(top: Frame, state: DerivationState, schema: Schema) -> tuple[int, ...]:
    if top.clause == "sel":
        return tuple(range(len(schema.columns)))
    in_scope = _scope_columns(state, top.select_id, schema)
    if top.clause == "group":
        return in_scope
    return (0,) + in_scope


def _legal_tables(top: Frame, state: DerivationState, schema: Schema) -> tuple[int, ...]:
    scope = state.scopes[top.select_id]
    remaining = scope.required - scope.chosen
    if top.last_slot and len(remaining) == 1:
        return (next(iter(remaining)),)
    return tuple(t for t in range(len(schema.tables)) if t not in scope.chosen)


def _rule_allowed(name: str, top: Frame, state: DerivationState, schema: Schema) -> bool:
    if name == "v_sub":
        return top.depth < MAX_QUERY_DEPTH
    if name in ("f_last", "f_cons"):
        scope = state.scopes[top.select_id]
        remaining = len(scope.required - scope.chosen)
        if name == "f_last":
            return remaining <= 1
        return len(scope.chosen) + 2 <= len(schema.tables)
    if name == "g_some":
        return len(_scope_columns(state, top.select_id, schema)) > 0
    return True


def apply_action(state: DerivationState, action: Action, schema: Schema) -> DerivationState:
    """Advance the derivation by one action, rejecting illegal ones."""
    top = state.top
    if top is None:
        raise GrammarError(f"derivation already complete, got {action_str(action)}")
    legal = legal_actions(state, schema)
    rest = state.frontier[:-1]
    scopes = state.scopes

    if isinstance(action, ApplyRule):
        if action.rule not in legal.rules:
            raise GrammarError(
                f"illegal rule {action.rule} at frontier {top.symbol} "
                f"(clause {top.clause})")
        prod = PRODUCTIONS[action.rule]
        sid = top.select_id
        depth = top.depth
        if action.rule == "sel":
            sid = len(scopes)
            scopes = scopes + (Scope(frozenset(), frozenset()),)
        overrides = _CLAUSE_OVERRIDES.get(action.rule)
        children: list[Frame] = []
        for i, sym in enumerate(prod.rhs):
            clause = overrides[i] if overrides else top.clause
            depth_i = depth + 1 if action.rule == "v_sub" else depth
            children.append(Frame(
                sym, sid, depth_i, clause or top.clause,
                last_slot=(action.rule == "f_last" and sym == TABLE)))
        return DerivationState(rest + tuple(reversed(children)), scopes,
                               state.n_actions + 1)

    if isinstance(action, SelectColumn):
        if action.column not in legal.columns:
            raise GrammarError(
                f"illegal column {action.column} at frontier {top.symbol} "
                f"(clause {top.clause})")
        if top.clause == "sel" and action.column != 0:
            sid = top.select_id
            table = schema.columns[action.column].table
            scope = scopes[sid]
            scopes = scopes[:sid] + (replace(
                scope, required=scope.required | {table}),) + scopes[sid + 1:]
        return DerivationState(rest, scopes, state.n_actions + 1)

    if isinstance(action, SelectTable):
        if action.table not in legal.tables:
            raise GrammarError(
                f"illegal table {action.table} at frontier {top.symbol}")
        sid = top.select_id
        scope = scopes[sid]
        scopes = scopes[:sid] + (replace(
            scope, chosen=scope.chosen | {action.table}),) + scopes[sid + 1:]
        return DerivationState(rest, scopes, state.n_actions + 1)

    if isinstance(action, EmitValue):
        if legal.value_slot is None:
            raise GrammarError(
                f"illegal value {action.text!r} at frontier {top.symbol}")
        if legal.value_slot == "limit" and not (
                action.text.isdigit() and int(action.text) > 0):
            raise GrammarError(f"LIMIT value must be a positive integer, got {action.text!r}")
        return DerivationState(rest, scopes, state.n_actions + 1)

    raise GrammarError(f"unknown action type {type(action).__name__}")


def legal_action_set(state: DerivationState, schema: Schema,
                     values: Iterable[str] = ()) -> frozenset[Action]:
    """Materialized action set; value candidates come from the caller."""
    legal = legal_actions(state, schema)
    out: set[Action] = set()
    out.update(ApplyRule(r) for r in legal.rules)
    out.update(SelectColumn(c) for c in legal.columns)
    out.update(SelectTable(t) for t in legal.tables)
    if legal.value_slot == "pred":
        out.update(EmitValue(v) for v in values)
    elif legal.value_slot == "limit":
        out.update(EmitValue(v) for v in values if v.isdigit() and int(v) > 0)
    return frozenset(out)
