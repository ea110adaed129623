"""Grammar-constrained AST decoder.

An LSTM cell conditioned on encoder memory emits one grammar action per step:
rule applications scored by a linear head, schema selections by pointer-style
bilinear matches against the memory positions of the schema nodes, values by
bilinear matches against a per-example candidate catalog (closed set plus
utterance spans). Illegal actions are masked to -inf before the softmax, so
probability mass on them is exactly zero and every complete decode parses.
Beam search is length-normalized; beam 1 is exactly greedy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from .config import Config
from .errors import DecodeError, GrammarError
from .schema import Schema
from .sql_lang.grammar import (
    Action, ApplyRule, DerivationState, EmitValue, NUM_RULES, PRODUCTIONS,
    RULE_NAMES, SelectColumn, SelectTable, SYMBOL_IDS, SYMBOLS, apply_action,
    initial_state, is_complete, legal_actions,
)

CLOSED_VALUES: tuple[str, ...] = tuple(str(i) for i in range(11)) + ("", "value")
_RULE_IDS = {name: i for i, name in enumerate(RULE_NAMES)}


class ValueOption(NamedTuple):
    text: str
    positions: tuple[int, ...]  # memory positions of a copied span; () for closed
    closed_idx: int = -1


@dataclass
class PreparedMemory:
    """Per-example decoding context derived from one encoder forward."""

    memory: torch.Tensor        # [L, M]
    col_reps: torch.Tensor      # [n_columns, M]
    tab_reps: torch.Tensor      # [n_tables, M]
    value_reps: torch.Tensor    # [n_options, M]
    options: tuple[ValueOption, ...]
    posint_mask: torch.Tensor   # [n_options] bool, options usable as LIMIT
    schema: Schema


@dataclass(frozen=True)
class _DecState:
    deriv: DerivationState
    h: torch.Tensor
    c: torch.Tensor
    hiddens: tuple[torch.Tensor, ...]
    parent_steps: tuple[int, ...]
    prev_emb: torch.Tensor
    prev_ctx: torch.Tensor
    logp: float
    actions: tuple[Action, ...]


class AstDecoder(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        emb, hid, mem = cfg.dec_emb, cfg.dec_hidden, cfg.enc_width
        self.rule_emb = nn.Embedding(NUM_RULES, emb)
        self.symbol_emb = nn.Embedding(len(SYMBOLS), emb)
        self.closed_emb = nn.Embedding(len(CLOSED_VALUES), mem)
        self.col_in = nn.Linear(mem, emb)
        self.tab_in = nn.Linear(mem, emb)
        self.val_in = nn.Linear(mem, emb)
        self.lstm = nn.LSTMCell(2 * emb + hid + mem, hid)
        self.att = nn.Linear(hid, mem, bias=False)
        self.state_proj = nn.Linear(hid + mem, hid)
        self.rule_head = nn.Linear(hid, NUM_RULES)
        self.col_head = nn.Linear(hid, mem, bias=False)
        self.tab_head = nn.Linear(hid, mem, bias=False)
        self.val_head = nn.Linear(hid, mem, bias=False)
        self.h0 = nn.Parameter(torch.zeros(hid))
        self.c0 = nn.Parameter(torch.zeros(hid))
        self.a0 = nn.Parameter(torch.zeros(emb))
        self.drop = nn.Dropout(cfg.dropout_decoder)
        self.hidden_size = hid

    # memory preparation ----------------------------------------------------

    def prepare(self, memory: torch.Tensor, layout, schema: Schema,
                options: tuple[ValueOption, ...]) -> PreparedMemory:
        from .relations import node_col, node_tab

        def node_rep(node) -> torch.Tensor:
            positions = layout.node_positions[node]
            return memory[list(positions)].mean(dim=0)

        col_reps = torch.stack([node_rep(node_col(c)) for c in range(len(schema.columns))])
        tab_reps = torch.stack([node_rep(node_tab(t)) for t in range(len(schema.tables))])
        reps = []
        for opt in options:
            if opt.closed_idx >= 0:
                reps.append(self.closed_emb.weight[opt.closed_idx])
            else:
                reps.append(memory[list(opt.positions)].mean(dim=0))
        value_reps = torch.stack(reps) if reps else memory.new_zeros((0, memory.shape[1]))
        posint = torch.tensor(
            [opt.text.isdigit() and int(opt.text) > 0 for opt in options],
            dtype=torch.bool)
        return PreparedMemory(memory, col_reps, tab_reps, value_reps,
                              options, posint, schema)

    # single step -----------------------------------------------------------

    def initial(self, prepared: PreparedMemory) -> _DecState:
        zero_ctx = prepared.memory.new_zeros(prepared.memory.shape[1])
        return _DecState(initial_state(), self.h0, self.c0, (self.h0,), (0,),
                         self.a0, zero_ctx, 0.0, ())

    def step_logits(self, ds: _DecState, prepared: PreparedMemory
                    ) -> tuple[torch.Tensor, list[Action], tuple]:
        """Logits over the legal actions at this state plus the recurrent update."""
        frame = ds.deriv.top
        sym = self.symbol_emb.weight[SYMBOL_IDS[frame.symbol]]
        parent_h = ds.hiddens[ds.parent_steps[-1]]
        inp = torch.cat([ds.prev_emb, sym, parent_h, ds.prev_ctx])
        inp = self.drop(inp)
        h, c = self.lstm(inp[None], (ds.h[None], ds.c[None]))
        h, c = h[0], c[0]
        scores = prepared.memory @ self.att(h)
        ctx = torch.softmax(scores, dim=0) @ prepared.memory
        s = self.drop(torch.tanh(self.state_proj(torch.cat([h, ctx]))))

        legal = legal_actions(ds.deriv, prepared.schema)
        pieces: list[torch.Tensor] = []
        candidates: list[Action] = []
        if legal.rules:
            rule_logits = self.rule_head(s)
            ids = [_RULE_IDS[r] for r in legal.rules]
            pieces.append(rule_logits[ids])
            candidates.extend(ApplyRule(r) for r in legal.rules)
        if legal.columns:
            col_logits = prepared.col_reps @ self.col_head(s)
            pieces.append(col_logits[list(legal.columns)])
            candidates.extend(SelectColumn(cid) for cid in legal.columns)
        if legal.tables:
            tab_logits = prepared.tab_reps @ self.tab_head(s)
            pieces.append(tab_logits[list(legal.tables)])
            candidates.extend(SelectTable(t) for t in legal.tables)
        if legal.value_slot is not None:
            val_logits = prepared.value_reps @ self.val_head(s)
            if legal.value_slot == "limit":
                keep = [i for i in range(len(prepared.options)) if prepared.posint_mask[i]]
            else:
                keep = list(range(len(prepared.options)))
            pieces.append(val_logits[keep])
            candidates.extend(EmitValue(prepared.options[i].text) for i in keep)
        if not candidates:
            raise DecodeError("no legal actions before completion")
        return torch.cat(pieces), candidates, (h, c, ctx)

    def advance(self, ds: _DecState, action: Action, logp: float,
                update: tuple, prepared: PreparedMemory) -> _DecState:
        h, c, ctx = update
        deriv = apply_action(ds.deriv, action, prepared.schema)
        parents = ds.parent_steps[:-1]
        if isinstance(action, ApplyRule):
            n_children = len(PRODUCTIONS[action.rule].rhs)
            parents = parents + (len(ds.hiddens),) * n_children
            prev_emb = self.rule_emb.weight[_RULE_IDS[action.rule]]
        elif isinstance(action, SelectColumn):
            prev_emb = self.col_in(prepared.col_reps[action.column])
        elif isinstance(action, SelectTable):
            prev_emb = self.tab_in(prepared.tab_reps[action.table])
        else:
            idx = next(i for i, o in enumerate(prepared.options) if o.text == action.text)
            prev_emb = self.val_in(prepared.value_reps[idx])
        return _DecState(deriv, h, c, ds.hiddens + (h,), parents, prev_emb,
                         ctx, ds.logp + logp, ds.actions + (action,))

    # teacher forcing ---------------------------------------------------------

    def teacher_forced(self, prepared: PreparedMemory,
                       gold: tuple[Action, ...]) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """NLL of the gold sequence plus the per-step legal-action distributions."""
        ds = self.initial(prepared)
        nll = prepared.memory.new_zeros(())
        dists: list[torch.Tensor] = []
        for t, action in enumerate(gold):
            if is_complete(ds.deriv):
                raise GrammarError(f"gold continues past completion at step {t}")
            logits, candidates, update = self.step_logits(ds, prepared)
            logp = torch.log_softmax(logits, dim=0)
            try:
                idx = candidates.index(action)
            except ValueError:
                raise GrammarError(
                    f"gold action illegal at step {t}: "
                    f"{action} not among {len(candidates)} legal actions") from None
            nll = nll - logp[idx]
            dists.append(logp)
            ds = self.advance(ds, action, float(logp[idx].detach()), update, prepared)
        if not is_complete(ds.deriv):
            raise GrammarError("gold sequence is an incomplete derivation")
        return nll, dists

    # search ------------------------------------------------------------------

    def beam_decode(self, prepared: PreparedMemory, beam: int,
                    max_actions: int = 200) -> tuple[tuple[Action, ...], float]:
        """Length-normalized beam search; returns the best complete derivation."""
        if beam < 1:
            raise DecodeError("beam width must be >= 1")
        live = [self.initial(prepared)]
        finished: list[_DecState] = []
        with torch.no_grad():
            while live:
                expansions: list[tuple[float, int, _DecState, Action, float, tuple]] = []
                order = 0
                for ds in live:
                    if len(ds.actions) >= max_actions:
                        continue
                    logits, candidates, update = self.step_logits(ds, prepared)
                    logp = torch.log_softmax(logits, dim=0)
                    k = min(beam, len(candidates))
                    top = torch.topk(logp, k)
                    for val, idx in zip(top.values.tolist(), top.indices.tolist()):
                        expansions.append(
                            (ds.logp + val, order, ds, candidates[idx], val, update))
                        order += 1
                expansions.sort(key=lambda e: (-e[0], e[1]))
                live = []
                for score, _, ds, action, val, update in expansions[:beam]:
                    nxt = self.advance(ds, action, val, update, prepared)
                    if is_complete(nxt.deriv):
                        finished.append(nxt)
                    else:
                        live.append(nxt)
        if not finished:
            raise DecodeError(
                f"runaway derivation: no complete parse within {max_actions} actions")
        best = max(enumerate(finished),
                   key=lambda e: (e[1].logp / len(e[1].actions), -e[0]))[1]
        return best.actions, best.logp / len(best.actions)


def build_value_options(layout, utterances: list[tuple[str, tuple]],
                        max_span: int = 4) -> tuple[ValueOption, ...]:
    """Candidate values: the closed set, then spans copied from the utterances.

    `utterances` pairs each raw string with its token sequence, history oldest
    first and the current utterance last; copied text is the original substring
    so casing survives into values. First occurrence of a text wins.
    """
    from .relations import node_cur, node_hist

    options: list[ValueOption] = [
        ValueOption(text, (), i) for i, text in enumerate(CLOSED_VALUES)]
    seen = {opt.text for opt in options}
    n_utts = len(utterances)
    for u, (raw, tokens) in enumerate(utterances):
        is_current = u == n_utts - 1
        for start in range(len(tokens)):
            for n in range(1, max_span + 1):
                if start + n > len(tokens):
                    break
                text = raw[tokens[start].start:tokens[start + n - 1].end]
                if text in seen:
                    continue
                positions = []
                ok = True
                for i in range(start, start + n):
                    node = node_cur(i) if is_current else node_hist(u, i)
                    pos = layout.node_positions.get(node)
                    if pos is None:
                        ok = False
                        break
                    positions.extend(pos)
                if not ok:
                    continue
                seen.add(text)
                options.append(ValueOption(text, tuple(positions)))
    return tuple(options)
