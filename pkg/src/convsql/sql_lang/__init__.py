"""Typed SQL subset: AST, text round-trip, and grammar action serialization."""

from .ast import (
    AggCol,
    And,
    GroupBy,
    Literal,
    Or,
    OrderBy,
    OrderKey,
    Predicate,
    SelectStmt,
    SetOp,
    SqlAst,
    Subquery,
    Value,
    validate_ast,
)
from .grammar import (
    Action,
    ApplyRule,
    DerivationState,
    EmitValue,
    GRAMMAR_VERSION,
    LegalActions,
    PRODUCTIONS,
    SelectColumn,
    SelectTable,
    actions_to_sql,
    apply_action,
    initial_state,
    is_complete,
    legal_action_set,
    legal_actions,
    rule_id,
    sql_to_actions,
)
from .lexer import lex_sql
from .parser import parse_sql
from .render import render_sql, render_words

__all__ = [
    "AggCol", "And", "GroupBy", "Literal", "Or", "OrderBy", "OrderKey",
    "Predicate", "SelectStmt", "SetOp", "SqlAst", "Subquery", "Value",
    "validate_ast", "Action", "ApplyRule", "DerivationState", "EmitValue",
    "GRAMMAR_VERSION", "LegalActions", "PRODUCTIONS", "SelectColumn",
    "SelectTable", "actions_to_sql", "apply_action", "initial_state",
    "is_complete", "legal_action_set", "legal_actions", "rule_id",
    "sql_to_actions", "lex_sql", "parse_sql", "render_sql", "render_words",
]
