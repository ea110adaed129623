"""Bimodal SQL encoder: pretrained with a reserved-word-aware masked-span
objective over (SQL, question, schema) triples, then frozen for downstream use.

Only SQL-segment tokens are ever masked, reserved words (keywords, operators,
punctuation) never are. The per-query budget is max(1, floor(0.15 * maskable))
tokens, filled by contiguous spans with geometric(0.5) lengths capped at 5;
spans are replaced by [MASK] 80% of the time, a random vocabulary token 10%,
and kept 10%. Schema blocks are dynamically shuffled during pretraining only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .blocks import TransformerLayer
from .errors import DataError
from .layout import SqlEncoderInput
from .sql_lang.lexer import RESERVED_WORDS
from .vocab import SPECIALS, Vocab

MASK_FRACTION = 0.15
MAX_SPAN = 5
SPAN_CONTINUE_P = 0.5


class MaskSpan(NamedTuple):
    start: int   # absolute position in the flattened token stream
    length: int
    mode: str    # "mask" | "random" | "keep"


@dataclass(frozen=True)
class MaskPlan:
    spans: tuple[MaskSpan, ...]
    positions: tuple[int, ...]   # flattened, ordered union of span positions
    targets: tuple[int, ...]     # original token ids at those positions
    budget: int                  # masked-token budget consumed

    def __len__(self) -> int:
        return len(self.positions)


def maskable_positions(inp: SqlEncoderInput) -> list[int]:
    """SQL-segment positions eligible for masking (reserved words excluded)."""
    start, end = inp.sql_span
    tokens = inp.tokens()
    return [
        p for p in range(start + 1, end)
        if tokens[p] not in RESERVED_WORDS and tokens[p] not in SPECIALS
    ]


def plan_masks(inp: SqlEncoderInput, rng: np.random.Generator, vocab: Vocab) -> MaskPlan:
    """Sample disjoint masked spans inside the SQL segment."""
    maskable = maskable_positions(inp)
    if not maskable:
        return MaskPlan((), (), (), 0)
    budget = max(1, int(MASK_FRACTION * len(maskable)))
    remaining = set(maskable)
    tokens = inp.tokens()
    spans: list[MaskSpan] = []
    consumed = 0
    while consumed < budget:
        start = int(rng.choice(sorted(remaining)))
        length = 1
        while length < MAX_SPAN and rng.random() < SPAN_CONTINUE_P:
            length += 1
        length = min(length, budget - consumed)
        run = 0
        while run < length and (start + run) in remaining:
            run += 1
        mode_draw = rng.random()
        mode = "mask" if mode_draw < 0.8 else ("random" if mode_draw < 0.9 else "keep")
        spans.append(MaskSpan(start, run, mode))
        for p in range(start, start + run):
            remaining.discard(p)
        consumed += run
    positions = tuple(sorted(p for s in spans for p in range(s.start, s.start + s.length)))
    targets = tuple(vocab.id_of(tokens[p]) for p in positions)
    return MaskPlan(tuple(sorted(spans)), positions, targets, budget)


def apply_mask(token_ids: list[int], plan: MaskPlan, vocab: Vocab,
               rng: np.random.Generator) -> list[int]:
    out = list(token_ids)
    n_special = len(SPECIALS)
    for span in plan.spans:
        for p in range(span.start, span.start + span.length):
            if span.mode == "mask":
                out[p] = vocab.mask_id
            elif span.mode == "random":
                out[p] = int(rng.integers(n_special, len(vocab)))
    return out


def shuffle_schema(inp: SqlEncoderInput, rng: np.random.Generator) -> SqlEncoderInput:
    """Permute table blocks and columns within each block; SQL and question
    segments (and therefore mask positions) are untouched."""
    order = rng.permutation(len(inp.schema_blocks))
    blocks = []
    for b in order:
        table_words, column_lists = inp.schema_blocks[int(b)]
        col_order = rng.permutation(len(column_lists))
        blocks.append((table_words, tuple(column_lists[int(c)] for c in col_order)))
    return SqlEncoderInput(inp.sql_words, inp.question_words, tuple(blocks))


def mlm_loss(logits: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
    """Sum of negative log-probabilities of the original tokens.

    `logits` has one row per masked position, in plan order.
    """
    if logits.shape[0] != len(plan.positions):
        raise DataError(
            f"mask plan has {len(plan.positions)} positions but got "
            f"{logits.shape[0]} logit rows")
    if len(plan.positions) == 0:
        return logits.sum() * 0.0
    logp = torch.log_softmax(logits, dim=-1)
    targets = torch.tensor(plan.targets, dtype=torch.long)
    return -logp[torch.arange(len(targets)), targets].sum()


class SqlEncoder(nn.Module):
    """Small transformer encoder over the bimodal input; frozen after pretraining."""

    def __init__(self, vocab_size: int, width: int = 128, layers: int = 4,
                 heads: int = 4, max_len: int = 256, dropout: float = 0.1):
        super().__init__()
        self.width = width
        self.max_len = max_len
        self.tok_emb = nn.Embedding(vocab_size, width)
        self.pos_emb = nn.Embedding(max_len, width)
        self.drop = nn.Dropout(dropout)
        self.layers = nn.ModuleList(
            TransformerLayer(width, heads, dropout) for _ in range(layers))
        self.mlm_head = nn.Linear(width, vocab_size)

    def forward(self, token_ids: torch.Tensor,
                pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        # token_ids: [B, L] -> hidden [B, L, width]
        length = token_ids.shape[1]
        if length > self.max_len:
            raise DataError(f"SQL encoder input of length {length} exceeds {self.max_len}")
        pos = torch.arange(length, device=token_ids.device)
        x = self.drop(self.tok_emb(token_ids) + self.pos_emb(pos)[None])
        for layer in self.layers:
            x = layer(x, pad_mask)
        return x


def encode_sql(inp: SqlEncoderInput, model: SqlEncoder,
               vocab: Vocab) -> tuple[torch.Tensor, int]:
    """Per-token hidden states of the SQL segment (its [CLS] included).

    Deterministic: runs in eval mode with gradients disabled. Returns the
    [1 + n_sql_words, N] tensor and the out-of-vocabulary token count.
    """
    was_training = model.training
    model.eval()
    try:
        ids, unk = vocab.encode(inp.tokens())
        with torch.no_grad():
            hidden = model(torch.tensor([ids], dtype=torch.long))[0]
    finally:
        model.train(was_training)
    start, end = inp.sql_span
    return hidden[start:end].detach(), unk


# pretraining ----------------------------------------------------------------


@dataclass(frozen=True)
class PretrainRecord:
    inp: SqlEncoderInput
    db_id: str


def build_sql_vocab(records: Iterable[PretrainRecord]) -> Vocab:
    words: list[str] = [":"]
    for rec in records:
        words.extend(rec.inp.tokens())
    return Vocab(words)


def pretrain(records: Sequence[PretrainRecord], vocab: Vocab, model: SqlEncoder,
             steps: int, batch_size: int, lr: float, seed: int,
             log: list[tuple[int, float]] | None = None) -> list[float]:
    """Masked-span pretraining; returns the per-step loss curve."""
    if not records:
        raise DataError("empty pretraining corpus")
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses: list[float] = []
    model.train()
    for step in range(steps):
        idx = rng.integers(0, len(records), size=batch_size)
        total = None
        n_masked = 0
        for i in idx:
            rec = records[int(i)]
            inp = shuffle_schema(rec.inp, rng)
            plan = plan_masks(inp, rng, vocab)
            if len(plan) == 0:
                continue
            ids, _ = vocab.encode(inp.tokens())
            masked = apply_mask(ids, plan, vocab, rng)
            hidden = model(torch.tensor([masked], dtype=torch.long))[0]
            logits = model.mlm_head(hidden[list(plan.positions)])
            loss = mlm_loss(logits, plan)
            total = loss if total is None else total + loss
            n_masked += len(plan)
        if total is None:
            continue
        batch_loss = total / max(n_masked, 1)
        opt.zero_grad()
        batch_loss.backward()
        opt.step()
        losses.append(float(batch_loss.detach()))
        if log is not None:
            log.append((step, losses[-1]))
    model.eval()
    return losses
