"""Edge-type vocabulary for the schema-linking graph and relation matrix.

The enumeration is closed: every directed type has an inverse member (symmetric
types are their own inverse), ids are stable, and id 0 is the default
"no relation" cell value.
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple


class EdgeType(IntEnum):
    DEFAULT = 0
    IDENTITY = 1
    # pre-existing schema relations
    CC_FK = 2          # column is a foreign key referencing column
    CC_FK_R = 3
    CC_SAME_TABLE = 4  # symmetric
    CT_MEMBER = 5      # column belongs to table
    TC_MEMBER = 6
    CT_PK = 7          # column is the primary key of table
    TC_PK = 8
    TT_FK = 9          # some column of table references the other table
    TT_FK_R = 10
    # current utterance <-> schema
    U_C_EM = 11
    C_U_EM = 12
    U_C_PM = 13
    C_U_PM = 14
    U_C_VM = 15
    C_U_VM = 16
    U_T_EM = 17
    T_U_EM = 18
    U_T_PM = 19
    T_U_PM = 20
    # history utterances <-> schema
    H_C_EM = 21
    C_H_EM = 22
    H_C_PM = 23
    C_H_PM = 24
    H_C_VM = 25
    C_H_VM = 26
    H_T_EM = 27
    T_H_EM = 28
    H_T_PM = 29
    T_H_PM = 30
    # last SQL query <-> schema
    S_C_EC = 31
    C_S_EC = 32
    S_C_UC = 33
    C_S_UC = 34
    S_T_ET = 35
    T_S_ET = 36
    S_T_UT = 37
    T_S_UT = 38


NUM_EDGE_TYPES = len(EdgeType)

_SYMMETRIC = {EdgeType.DEFAULT, EdgeType.IDENTITY, EdgeType.CC_SAME_TABLE}

_FORWARD_PAIRS = [
    (EdgeType.CC_FK, EdgeType.CC_FK_R),
    (EdgeType.CT_MEMBER, EdgeType.TC_MEMBER),
    (EdgeType.CT_PK, EdgeType.TC_PK),
    (EdgeType.TT_FK, EdgeType.TT_FK_R),
    (EdgeType.U_C_EM, EdgeType.C_U_EM),
    (EdgeType.U_C_PM, EdgeType.C_U_PM),
    (EdgeType.U_C_VM, EdgeType.C_U_VM),
    (EdgeType.U_T_EM, EdgeType.T_U_EM),
    (EdgeType.U_T_PM, EdgeType.T_U_PM),
    (EdgeType.H_C_EM, EdgeType.C_H_EM),
    (EdgeType.H_C_PM, EdgeType.C_H_PM),
    (EdgeType.H_C_VM, EdgeType.C_H_VM),
    (EdgeType.H_T_EM, EdgeType.T_H_EM),
    (EdgeType.H_T_PM, EdgeType.T_H_PM),
    (EdgeType.S_C_EC, EdgeType.C_S_EC),
    (EdgeType.S_C_UC, EdgeType.C_S_UC),
    (EdgeType.S_T_ET, EdgeType.T_S_ET),
    (EdgeType.S_T_UT, EdgeType.T_S_UT),
]

INVERSE: dict[EdgeType, EdgeType] = {t: t for t in _SYMMETRIC}
for _f, _r in _FORWARD_PAIRS:
    INVERSE[_f] = _r
    INVERSE[_r] = _f

assert len(INVERSE) == NUM_EDGE_TYPES


def inverse(edge_type: EdgeType) -> EdgeType:
    return INVERSE[edge_type]


# When two relations hold for the same directed node pair the higher rank wins;
# ranks are equal for a type and its inverse so pairwise resolution stays
# symmetric. Token-schema families follow EM > VM > PM; equal beats unequal.
_RANKS = {
    EdgeType.DEFAULT: 0,
    EdgeType.IDENTITY: 100,
    EdgeType.CT_PK: 90,
    EdgeType.CT_MEMBER: 80,
    EdgeType.CC_FK: 70,
    EdgeType.TT_FK: 65,
    EdgeType.CC_SAME_TABLE: 60,
    EdgeType.U_C_EM: 50,
    EdgeType.U_T_EM: 50,
    EdgeType.H_C_EM: 50,
    EdgeType.H_T_EM: 50,
    EdgeType.S_C_EC: 50,
    EdgeType.S_T_ET: 50,
    EdgeType.U_C_VM: 40,
    EdgeType.H_C_VM: 40,
    EdgeType.S_C_UC: 35,
    EdgeType.S_T_UT: 35,
    EdgeType.U_C_PM: 30,
    EdgeType.U_T_PM: 30,
    EdgeType.H_C_PM: 30,
    EdgeType.H_T_PM: 30,
}

PRECEDENCE: dict[EdgeType, int] = {}
for _t in EdgeType:
    PRECEDENCE[_t] = _RANKS.get(_t, _RANKS.get(INVERSE[_t], 0))


class Node(NamedTuple):
    """Graph node identity; `a`/`b` meaning depends on kind."""

    kind: str  # "cur" | "hist" | "sql" | "tab" | "col"
    a: int     # token index (cur), utterance index (hist), slot (sql), schema index (tab/col)
    b: int = 0  # token index within utterance (hist only)


def node_cur(token_idx: int) -> Node:
    return Node("cur", token_idx)


def node_hist(utt_idx: int, token_idx: int) -> Node:
    return Node("hist", utt_idx, token_idx)


def node_sql(slot_idx: int) -> Node:
    return Node("sql", slot_idx)


def node_tab(table_idx: int) -> Node:
    return Node("tab", table_idx)


def node_col(col_idx: int) -> Node:
    return Node("col", col_idx)


Edge = tuple[Node, Node, EdgeType]


class EdgeMap:
    """Accumulates at most one edge per directed pair, resolving by precedence.

    Insertions are symmetric: adding (a, b, t) also adds (b, a, inverse(t)), so
    the type-level symmetry invariant holds by construction.
    """

    def __init__(self) -> None:
        self._edges: dict[tuple[Node, Node], EdgeType] = {}

    def add_pair(self, a: Node, b: Node, edge_type: EdgeType) -> None:
        self._put(a, b, edge_type)
        if a != b:
            self._put(b, a, inverse(edge_type))

    def _put(self, src: Node, dst: Node, edge_type: EdgeType) -> None:
        old = self._edges.get((src, dst))
        if old is None or PRECEDENCE[edge_type] > PRECEDENCE[old]:
            self._edges[(src, dst)] = edge_type

    def get(self, src: Node, dst: Node) -> EdgeType | None:
        return self._edges.get((src, dst))

    def items(self) -> list[Edge]:
        return [(s, d, t) for (s, d), t in sorted(self._edges.items())]

    def __len__(self) -> int:
        return len(self._edges)
