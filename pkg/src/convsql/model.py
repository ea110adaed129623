"""Per-turn featurization and the full parser model.

`featurize_turn` runs the deterministic pipeline for one interaction turn:
tokenize, encode the previous SQL with the frozen bimodal encoder, assemble
the layout, build the linking graph and relation matrix, derive per-position
feature ids, and collect value candidates. Features for training turns are
fully cacheable because the gold previous SQL and the frozen encoder never
change during a run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import Config
from .decoder import AstDecoder, PreparedMemory, ValueOption, build_value_options
from .encoder import MAX_NAME_WORDS, RelationalEncoder, SEGMENT_IDS
from .layout import SequenceLayout, assemble_input, build_sql_encoder_input
from .linking import build_graph, relation_matrix
from .schema import ContentIndex, Schema
from .sqlenc import SqlEncoder, encode_sql
from .sql_lang.ast import SqlAst
from .sql_lang.grammar import Action, actions_to_sql, sql_to_actions
from .tokenize import normalize_tokens, token_texts
from .vocab import Vocab


@dataclass
class Database:
    schema: Schema
    contents: ContentIndex | None = None


@dataclass
class SqlEncoderBundle:
    model: SqlEncoder
    vocab: Vocab
    digest: str


@dataclass
class TurnFeatures:
    db_id: str
    schema: Schema
    layout: SequenceLayout
    rel: np.ndarray
    token_ids: list[int]
    seg_ids: list[int]
    abs_pos: list[int]
    name_pos: list[int]
    schema_mask: list[bool]
    sql_hidden: torch.Tensor | None
    sql_positions: tuple[int, ...]
    options: tuple[ValueOption, ...]
    gold_actions: tuple[Action, ...] | None
    unk_count: int


def featurize_turn(db: Database, history_raw: list[str], current_raw: str,
                   last_sql: SqlAst | None, sql_bundle: SqlEncoderBundle | None,
                   vocab: Vocab, cfg: Config,
                   gold_sql: SqlAst | None = None) -> TurnFeatures:
    schema = db.schema
    current = normalize_tokens(current_raw)
    history = [normalize_tokens(h) for h in history_raw]

    sql_hidden = None
    slots = 0
    unk = 0
    if last_sql is not None and sql_bundle is not None:
        question = tuple(
            w for utt in history + [current] for w in token_texts(utt))
        sql_inp = build_sql_encoder_input(last_sql, question, schema)
        sql_hidden, unk = encode_sql(sql_inp, sql_bundle.model, sql_bundle.vocab)
        slots = sql_hidden.shape[0]

    layout = assemble_input(history, current, slots, schema, cfg.max_input_len)
    kept_history = history[layout.history_start:]
    graph = build_graph(current, kept_history, last_sql, schema, db.contents,
                        use_values=cfg.use_values)
    rel = relation_matrix(graph, layout)

    token_ids, seg_ids, abs_ids, name_ids, schema_mask = [], [], [], [], []
    first_pos: dict = {}
    for i, info in enumerate(layout.positions):
        token_ids.append(vocab.id_of(info.label))
        seg_ids.append(SEGMENT_IDS[info.segment])
        in_schema = i >= layout.schema_start
        schema_mask.append(in_schema)
        abs_ids.append(0 if in_schema else i)
        if in_schema and info.node is not None:
            off = i - first_pos.setdefault(info.node, i)
            name_ids.append(min(off, MAX_NAME_WORDS - 1))
        else:
            name_ids.append(0)

    utterances = [(raw, normalize_tokens(raw))
                  for raw in history_raw[layout.history_start:]] + [(current_raw, current)]
    options = build_value_options(layout, utterances)
    gold_actions = sql_to_actions(gold_sql, schema) if gold_sql is not None else None
    sql_positions = layout.segment_positions("sql")
    return TurnFeatures(schema.db_id, schema, layout, rel, token_ids, seg_ids,
                        abs_ids, name_ids, schema_mask, sql_hidden,
                        sql_positions, options, gold_actions, unk)


class ParserModel(nn.Module):
    def __init__(self, vocab_size: int, cfg: Config):
        super().__init__()
        self.cfg = cfg
        self.encoder = RelationalEncoder(vocab_size, cfg)
        self.decoder = AstDecoder(cfg)

    def encode_batch(self, feats: list[TurnFeatures],
                     zero_relations: bool = False) -> list[torch.Tensor]:
        """Encode a batch of turns; returns per-example unpadded memories."""
        max_len = max(f.layout.length for f in feats)
        bsz = len(feats)
        ids = torch.zeros((bsz, max_len), dtype=torch.long)
        seg = torch.zeros_like(ids)
        pos = torch.zeros_like(ids)
        name = torch.zeros_like(ids)
        smask = torch.zeros((bsz, max_len), dtype=torch.bool)
        pad = torch.zeros((bsz, max_len), dtype=torch.bool)
        rel = torch.zeros((bsz, max_len, max_len), dtype=torch.long)
        for i, f in enumerate(feats):
            L = f.layout.length
            ids[i, :L] = torch.tensor(f.token_ids)
            seg[i, :L] = torch.tensor(f.seg_ids)
            pos[i, :L] = torch.tensor(f.abs_pos)
            name[i, :L] = torch.tensor(f.name_pos)
            smask[i, :L] = torch.tensor(f.schema_mask)
            pad[i, :L] = True
            rel[i, :L, :L] = torch.from_numpy(f.rel)
        hidden = self.encoder(
            ids, rel, seg, pos, name, smask,
            sql_embeddings=[f.sql_hidden for f in feats],
            sql_positions=[f.sql_positions for f in feats],
            pad_mask=pad, zero_relations=zero_relations)
        return [hidden[i, :f.layout.length] for i, f in enumerate(feats)]

    def prepare_turn(self, feats: TurnFeatures, memory: torch.Tensor) -> PreparedMemory:
        return self.decoder.prepare(memory, feats.layout, feats.schema, feats.options)

    def decode_turn(self, feats: TurnFeatures, memory: torch.Tensor,
                    beam: int | None = None) -> SqlAst:
        prepared = self.prepare_turn(feats, memory)
        actions, _ = self.decoder.beam_decode(
            prepared, beam or self.cfg.beam, self.cfg.max_actions)
        return actions_to_sql(actions, feats.schema)


def build_parser_vocab(interactions, databases: dict[str, Database]) -> Vocab:
    """Word vocabulary over utterance tokens and schema name words."""
    words: list[str] = ["*"]
    for db in databases.values():
        for table in db.schema.tables:
            words.extend(table.words)
        for col in db.schema.columns:
            words.extend(col.words)
    for rec in interactions:
        for turn in rec.turns:
            words.extend(t.text for t in normalize_tokens(turn.utterance))
    return Vocab(words)
