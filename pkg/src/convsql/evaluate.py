"""Interaction-level inference and QM/IM metric computation.

At inference each turn's encoder input embeds the previous turn's *prediction*
(never gold); turn one runs with an empty SQL slot, and a failed decode records
a mismatch but the interaction continues with the next slot empty. Matching is
canonical exact-set comparison: SELECT items as a set, FROM as a table set,
and/or condition trees as multisets, ORDER BY as an ordered list, values
literal. Reports break QM down by turn index (1, 2, 3, >=4) and by a
difficulty heuristic whose thresholds ship as data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .config import Config
from .errors import DataError, SqlParseError
from .model import Database, ParserModel, SqlEncoderBundle, TurnFeatures, featurize_turn
from .sql_lang.ast import (
    AggCol, And, Cond, Or, Predicate, SelectStmt, SetOp, SqlAst, Subquery,
)
from .sql_lang.parser import parse_sql
from .vocab import Vocab

TURN_BUCKETS = ("1", "2", "3", ">=4")
DIFFICULTIES = ("easy", "medium", "hard", "extra")


@dataclass(frozen=True)
class Turn:
    utterance: str
    sql: str


@dataclass(frozen=True)
class InteractionRecord:
    db_id: str
    turns: tuple[Turn, ...]


def load_interactions(path: str | Path) -> list[InteractionRecord]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise DataError(f"{path}: expected a JSON list of interactions")
    records = []
    for i, rec in enumerate(doc):
        turns = tuple(Turn(t["utterance"], t["sql"]) for t in rec.get("turns", ()))
        if not turns:
            raise DataError(f"{path}: interaction #{i} has no turns")
        records.append(InteractionRecord(rec["db_id"], turns))
    return records


def save_interactions(records: list[InteractionRecord], path: str | Path) -> None:
    doc = [
        {"db_id": r.db_id,
         "turns": [{"utterance": t.utterance, "sql": t.sql} for t in r.turns]}
        for r in records
    ]
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


# canonical matching ---------------------------------------------------------


def canonical_equal(pred: SqlAst, gold: SqlAst) -> bool:
    """Component-wise exact-set equality of two parsed queries."""
    return _canon_query(pred) == _canon_query(gold)


def _canon_query(q: SqlAst):
    if isinstance(q, SetOp):
        return ("setop", q.op, _canon_select(q.left), _canon_select(q.right))
    return _canon_select(q)


def _canon_select(s: SelectStmt):
    return (
        "select",
        s.distinct,
        frozenset(_canon_agg(a) for a in s.select),
        frozenset(s.from_tables),
        _canon_cond(s.where) if s.where is not None else None,
        (frozenset(s.group.columns),
         _canon_cond(s.group.having) if s.group.having is not None else None)
        if s.group is not None else None,
        (tuple((_canon_agg(k.expr), k.desc) for k in s.order.keys),
         s.order.limit.text if s.order.limit is not None else None)
        if s.order is not None else None,
    )


def _canon_agg(a: AggCol):
    return (a.agg, a.distinct, a.column)


def _canon_value(v):
    if isinstance(v, Subquery):
        return ("sub", _canon_query(v.query))
    return ("lit", v.text)


def _canon_cond(c: Cond):
    if isinstance(c, (And, Or)):
        op = "and" if isinstance(c, And) else "or"
        parts = []
        stack = [c.left, c.right]
        while stack:
            node = stack.pop()
            if type(node) is type(c):
                stack.extend([node.left, node.right])
            else:
                parts.append(_canon_cond(node))
        return (op, tuple(sorted(parts, key=repr)))
    return ("pred", _canon_agg(c.operand), c.op,
            tuple(_canon_value(v) for v in c.values))


# difficulty ------------------------------------------------------------------


def _difficulty_table() -> dict:
    with resources.files("convsql").joinpath("data/difficulty.json").open() as fh:
        return json.load(fh)


_DIFFICULTY = None


def _count_features(ast: SqlAst) -> dict[str, int]:
    if isinstance(ast, SetOp):
        left = _count_features(ast.left)
        right = _count_features(ast.right)
        return {
            "comp1": left["comp1"] + right["comp1"],
            "comp2": left["comp2"] + right["comp2"] + 1,
            "others": left["others"] + right["others"],
        }
    sel = ast
    comp1 = 0
    comp1 += 1 if sel.where is not None else 0
    comp1 += 1 if sel.group is not None else 0
    comp1 += 1 if sel.order is not None else 0
    comp1 += 1 if sel.order is not None and sel.order.limit is not None else 0
    comp1 += len(sel.from_tables) - 1

    conds: list[Predicate] = []
    or_count = 0
    subqueries = 0

    def scan_cond(c: Cond):
        nonlocal or_count, subqueries
        if isinstance(c, Or):
            or_count += 1
            scan_cond(c.left)
            scan_cond(c.right)
        elif isinstance(c, And):
            scan_cond(c.left)
            scan_cond(c.right)
        else:
            conds.append(c)
            for v in c.values:
                if isinstance(v, Subquery):
                    subqueries += 1

    where_preds = 0
    if sel.where is not None:
        scan_cond(sel.where)
        where_preds = len(conds)
    if sel.group is not None and sel.group.having is not None:
        scan_cond(sel.group.having)
    comp1 += or_count
    comp1 += sum(1 for p in conds if p.op == "like")

    aggs = sum(1 for a in sel.select if a.agg != "none")
    aggs += sum(1 for p in conds if p.operand.agg != "none")
    if sel.order is not None:
        aggs += sum(1 for k in sel.order.keys if k.expr.agg != "none")
    others = 0
    others += 1 if aggs > 1 else 0
    others += 1 if len(sel.select) > 1 else 0
    others += 1 if where_preds > 1 else 0
    others += 1 if sel.group is not None and len(sel.group.columns) > 1 else 0
    return {"comp1": comp1, "comp2": subqueries, "others": others}


def difficulty_of(gold: SqlAst) -> str:
    """Bucket a query by component counts using the shipped threshold table."""
    global _DIFFICULTY
    if _DIFFICULTY is None:
        _DIFFICULTY = _difficulty_table()
    feats = _count_features(gold)
    for bucket in _DIFFICULTY["buckets"]:
        for clause in bucket["any"]:
            if all(lo <= feats[key] <= hi for key, (lo, hi) in clause.items()):
                return bucket["name"]
    return _DIFFICULTY["fallback"]


# inference -------------------------------------------------------------------


@dataclass
class EvalRuntime:
    model: ParserModel
    vocab: Vocab
    sql_bundle: SqlEncoderBundle | None
    databases: dict[str, Database]
    cfg: Config
    beam: int | None = None
    ablate_relations: bool = False
    ablate_sql: bool = False


def run_interaction(record: InteractionRecord,
                    runtime: EvalRuntime) -> list[SqlAst | None]:
    """Predict every turn, feeding back the previous *predicted* SQL."""
    if record.db_id not in runtime.databases:
        raise DataError(f"interaction references unknown db_id {record.db_id!r}")
    db = runtime.databases[record.db_id]
    runtime.model.eval()
    history: list[str] = []
    last_pred: SqlAst | None = None
    out: list[SqlAst | None] = []
    for turn in record.turns:
        last_sql = None if runtime.ablate_sql else last_pred
        try:
            feats = featurize_turn(db, history, turn.utterance, last_sql,
                                   runtime.sql_bundle, runtime.vocab, runtime.cfg)
            memory = runtime.model.encode_batch(
                [feats], zero_relations=runtime.ablate_relations)[0]
            pred = runtime.model.decode_turn(feats, memory, runtime.beam)
        except Exception:
            pred = None
        out.append(pred)
        history.append(turn.utterance)
        last_pred = pred
    return out


# scoring ---------------------------------------------------------------------


@dataclass
class EvalReport:
    qm: float
    im: float
    n_questions: int
    n_interactions: int
    per_turn: dict[str, tuple[int, int]]        # bucket -> (matched, total)
    per_difficulty: dict[str, tuple[int, int]]
    switches: dict[str, int]                    # T-F / F-T / T-T
    unparseable_gold: int
    interaction_matched: list[bool] = field(default_factory=list)
    turn_matched: list[list[bool]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "qm": self.qm, "im": self.im,
            "n_questions": self.n_questions,
            "n_interactions": self.n_interactions,
            "per_turn": {k: list(v) for k, v in self.per_turn.items()},
            "per_difficulty": {k: list(v) for k, v in self.per_difficulty.items()},
            "switches": dict(self.switches),
            "unparseable_gold": self.unparseable_gold,
            "interaction_matched": self.interaction_matched,
        }

    def to_text(self) -> str:
        lines = [
            f"question match (QM): {self.qm:6.2f}%  ({self.n_questions} questions)",
            f"interaction match (IM): {self.im:6.2f}%  ({self.n_interactions} interactions)",
            "per turn:",
        ]
        for bucket in TURN_BUCKETS:
            m, t = self.per_turn.get(bucket, (0, 0))
            pct = 100.0 * m / t if t else 0.0
            lines.append(f"  turn {bucket:>3}: {pct:6.2f}%  ({m}/{t})")
        lines.append("per difficulty:")
        for bucket in DIFFICULTIES:
            m, t = self.per_difficulty.get(bucket, (0, 0))
            pct = 100.0 * m / t if t else 0.0
            lines.append(f"  {bucket:>6}: {pct:6.2f}%  ({m}/{t})")
        lines.append(
            "switches: "
            + "  ".join(f"{k}={self.switches[k]}" for k in ("T-F", "F-T", "T-T")))
        if self.unparseable_gold:
            lines.append(f"gold queries outside the grammar: {self.unparseable_gold}")
        return "\n".join(lines) + "\n"


def score(records: list[InteractionRecord],
          predictions: list[list[SqlAst | None]],
          databases: dict[str, Database]) -> EvalReport:
    """QM/IM plus per-turn, per-difficulty, and adjacent-switch breakdowns."""
    if len(records) != len(predictions):
        raise DataError(
            f"{len(records)} interactions but {len(predictions)} prediction lists")
    per_turn = {b: [0, 0] for b in TURN_BUCKETS}
    per_diff = {b: [0, 0] for b in DIFFICULTIES}
    switches = {"T-F": 0, "F-T": 0, "T-T": 0}
    unparseable = 0
    matched_flags: list[list[bool]] = []
    for record, preds in zip(records, predictions):
        if len(record.turns) != len(preds):
            raise DataError(
                f"interaction on {record.db_id}: {len(record.turns)} turns but "
                f"{len(preds)} predictions")
        schema = databases[record.db_id].schema
        flags: list[bool] = []
        for i, (turn, pred) in enumerate(zip(record.turns, preds)):
            try:
                gold = parse_sql(turn.sql, schema)
            except SqlParseError:
                gold = None
                unparseable += 1
            ok = gold is not None and pred is not None and canonical_equal(pred, gold)
            flags.append(ok)
            bucket = TURN_BUCKETS[min(i, 3)]
            per_turn[bucket][1] += 1
            per_turn[bucket][0] += int(ok)
            diff = difficulty_of(gold) if gold is not None else "extra"
            per_diff[diff][1] += 1
            per_diff[diff][0] += int(ok)
        for a, b in zip(flags, flags[1:]):
            if a and not b:
                switches["T-F"] += 1
            elif not a and b:
                switches["F-T"] += 1
            elif a and b:
                switches["T-T"] += 1
        matched_flags.append(flags)

    n_questions = sum(len(f) for f in matched_flags)
    n_matched = sum(sum(f) for f in matched_flags)
    interaction_matched = [all(f) for f in matched_flags]
    qm = 100.0 * n_matched / n_questions if n_questions else 0.0
    im = (100.0 * sum(interaction_matched) / len(matched_flags)
          if matched_flags else 0.0)
    report = EvalReport(
        qm, im, n_questions, len(matched_flags),
        {k: tuple(v) for k, v in per_turn.items()},
        {k: tuple(v) for k, v in per_diff.items()},
        switches, unparseable, interaction_matched, matched_flags)
    assert report.im <= report.qm + 1e-9, "impossible state: IM > QM"
    return report
