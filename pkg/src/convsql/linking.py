"""Context-dependent schema-linking graph and its relation-type matrix.

Nodes cover schema columns/tables, current-utterance tokens, history-utterance
tokens, and the slot positions of the previous SQL query's encoding. Edges are
the pre-existing schema relations plus token-schema matches (exact / partial /
value) and SQL-identifier matches (equal / unequal), with a distinct inverse
type per direction. Matching is word-level: n-grams up to length 5, longest
first, EM > VM > PM per token-node pair, and tokens consumed by an exact match
are excluded from shorter partial matches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LinkingError
from .relations import (
    Edge, EdgeMap, EdgeType, Node, PRECEDENCE, node_col, node_cur, node_hist,
    node_sql, node_tab,
)
from .schema import ContentIndex, Schema, base_relations
from .sql_lang.ast import SqlAst
from .sql_lang.render import Occurrence, render_words
from .tokenize import TokenSeq, token_texts

MAX_NGRAM = 5

_TOKEN_SCHEMA_TYPES = {
    ("current", "col", "em"): EdgeType.U_C_EM,
    ("current", "col", "pm"): EdgeType.U_C_PM,
    ("current", "col", "vm"): EdgeType.U_C_VM,
    ("current", "tab", "em"): EdgeType.U_T_EM,
    ("current", "tab", "pm"): EdgeType.U_T_PM,
    ("history", "col", "em"): EdgeType.H_C_EM,
    ("history", "col", "pm"): EdgeType.H_C_PM,
    ("history", "col", "vm"): EdgeType.H_C_VM,
    ("history", "tab", "em"): EdgeType.H_T_EM,
    ("history", "tab", "pm"): EdgeType.H_T_PM,
}

_KIND_RANK = {"em": 3, "vm": 2, "pm": 1}


@dataclass(frozen=True)
class LinkGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]  # one edge per directed pair, inverses included


def _strict_subspan(short: tuple[str, ...], long: tuple[str, ...]) -> bool:
    if len(short) >= len(long) or not short:
        return False
    return any(long[i:i + len(short)] == short for i in range(len(long) - len(short) + 1))


def _match_positions(texts: tuple[str, ...], schema: Schema,
                     contents: ContentIndex | None,
                     use_values: bool) -> dict[tuple[int, Node], str]:
    """Per (token position, schema node) match kind after precedence/consumption."""
    n_tok = len(texts)
    col_words = [(node_col(c), schema.columns[c].words)
                 for c in range(1, len(schema.columns))]
    tab_words = [(node_tab(t), schema.tables[t].words)
                 for t in range(len(schema.tables))]
    named = [(n, w) for n, w in col_words + tab_words if w]

    matches: dict[tuple[int, Node], str] = {}

    def record(pos: int, node: Node, kind: str) -> None:
        key = (pos, node)
        old = matches.get(key)
        if old is None or _KIND_RANK[kind] > _KIND_RANK[old]:
            matches[key] = kind

    em_positions: set[int] = set()
    for n in range(min(MAX_NGRAM, n_tok), 0, -1):
        for i in range(n_tok - n + 1):
            gram = texts[i:i + n]
            for node, words in named:
                if gram == words:
                    for pos in range(i, i + n):
                        record(pos, node, "em")
                        em_positions.add(pos)

    if use_values and contents is not None:
        for n in range(min(MAX_NGRAM, n_tok), 0, -1):
            for i in range(n_tok - n + 1):
                gram_text = " ".join(texts[i:i + n])
                for c in range(1, len(schema.columns)):
                    if gram_text in contents.values(c):
                        for pos in range(i, i + n):
                            record(pos, node_col(c), "vm")

    for n in range(min(MAX_NGRAM, n_tok), 0, -1):
        for i in range(n_tok - n + 1):
            gram = texts[i:i + n]
            for node, words in named:
                if _strict_subspan(gram, words) or _strict_subspan(words, gram):
                    for pos in range(i, i + n):
                        if pos not in em_positions:
                            record(pos, node, "pm")
    return matches


def match_utterance_schema(tokens: TokenSeq, schema: Schema,
                           contents: ContentIndex | None,
                           role: str, utt_index: int = 0,
                           use_values: bool = True) -> list[Edge]:
    """EM/PM/VM edges between one utterance and the schema, inverses included.

    `role` is "current" or "history"; history nodes carry `utt_index`.
    """
    if role not in ("current", "history"):
        raise ValueError(f"bad role {role!r}")
    texts = token_texts(tokens)
    edges = EdgeMap()
    for (pos, node), kind in _match_positions(texts, schema, contents, use_values).items():
        etype = _TOKEN_SCHEMA_TYPES[(role, node.kind, kind)]
        src = node_cur(pos) if role == "current" else node_hist(utt_index, pos)
        edges.add_pair(src, node, etype)
    return edges.items()


def match_sql_schema(occurrences: tuple[Occurrence, ...], schema: Schema,
                     slot_offset: int = 1) -> list[Edge]:
    """Equal/unequal edges between SQL identifier occurrences and the schema.

    Occurrence word positions are shifted by `slot_offset` to account for the
    SQL encoder's leading [CLS] slot. Every column occurrence fans out to all
    non-star columns (one EC, rest UC); tables likewise with ET/UT.
    """
    edges = EdgeMap()
    for occ in occurrences:
        slots = [node_sql(slot_offset + w) for w in range(occ.start, occ.start + occ.length)]
        if occ.kind == "col":
            if occ.index == 0:
                continue  # "*" carries no match edges
            if not 0 < occ.index < len(schema.columns):
                raise LinkingError(f"unresolvable SQL identifier: column {occ.index}")
            for c in range(1, len(schema.columns)):
                etype = EdgeType.S_C_EC if c == occ.index else EdgeType.S_C_UC
                for s in slots:
                    edges.add_pair(s, node_col(c), etype)
        elif occ.kind == "tab":
            if not 0 <= occ.index < len(schema.tables):
                raise LinkingError(f"unresolvable SQL identifier: table {occ.index}")
            for t in range(len(schema.tables)):
                etype = EdgeType.S_T_ET if t == occ.index else EdgeType.S_T_UT
                for s in slots:
                    edges.add_pair(s, node_tab(t), etype)
        else:
            raise LinkingError(f"unknown occurrence kind {occ.kind!r}")
    return edges.items()


def build_graph(current: TokenSeq, history: list[TokenSeq],
                last_sql: SqlAst | None, schema: Schema,
                contents: ContentIndex | None,
                use_values: bool = True) -> LinkGraph:
    """Union of base relations, utterance-schema, and SQL-schema edges.

    The node set always covers every token/slot/schema element even when
    isolated; a missing last SQL (turn one) contributes no S nodes or edges.
    """
    nodes: list[Node] = [node_cur(i) for i in range(len(current))]
    for u, utt in enumerate(history):
        nodes.extend(node_hist(u, i) for i in range(len(utt)))

    merged: dict[tuple[Node, Node], EdgeType] = {}

    def absorb(edges: list[Edge]) -> None:
        for src, dst, etype in edges:
            old = merged.get((src, dst))
            if old is None or PRECEDENCE[etype] > PRECEDENCE[old]:
                merged[(src, dst)] = etype

    absorb(base_relations(schema))
    absorb(match_utterance_schema(current, schema, contents, "current",
                                  use_values=use_values))
    for u, utt in enumerate(history):
        absorb(match_utterance_schema(utt, schema, contents, "history",
                                      utt_index=u, use_values=use_values))
    if last_sql is not None:
        words, occurrences = render_words(last_sql, schema)
        nodes.extend(node_sql(s) for s in range(1 + len(words)))
        absorb(match_sql_schema(occurrences, schema))

    nodes.extend(node_tab(t) for t in range(len(schema.tables)))
    nodes.extend(node_col(c) for c in range(len(schema.columns)))
    edges = tuple((s, d, t) for (s, d), t in sorted(merged.items()))
    return LinkGraph(tuple(nodes), edges)


def relation_matrix(graph: LinkGraph, layout) -> np.ndarray:
    """L x L grid of edge-type ids aligned to the layout's positions.

    Every graph node must map to at least one layout position; separator
    positions stay default off-diagonal and the whole diagonal is identity.
    """
    pos_of = layout.node_positions
    for node in graph.nodes:
        if node not in pos_of:
            raise LinkingError(f"unmapped node {node}")
    grid = np.zeros((layout.length, layout.length), dtype=np.int64)
    for src, dst, etype in graph.edges:
        for p in pos_of[src]:
            for q in pos_of[dst]:
                grid[p, q] = int(etype)
    np.fill_diagonal(grid, int(EdgeType.IDENTITY))
    return grid


def dump_linking(graph: LinkGraph, matrix: np.ndarray, layout) -> str:
    """Stable text serialization of nodes, typed edges, and the dense matrix."""
    lines = ["nodes:"]
    for i, info in enumerate(layout.positions):
        node = "-" if info.node is None else _node_str(info.node)
        lines.append(f"  {i:4d} {info.segment:<5} {node:<14} {info.label}")
    lines.append("edges:")
    for src, dst, etype in graph.edges:
        if etype is EdgeType.IDENTITY:
            continue
        lines.append(f"  {_node_str(src)} -> {_node_str(dst)} {etype.name}")
    lines.append("matrix:")
    for row in matrix:
        lines.append("  " + " ".join(f"{v:2d}" for v in row))
    return "\n".join(lines) + "\n"


def _node_str(node: Node) -> str:
    if node.kind == "hist":
        return f"hist[{node.a},{node.b}]"
    return f"{node.kind}[{node.a}]"
