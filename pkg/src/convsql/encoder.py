"""Relation-aware downstream encoder.

Embeds the assembled input (word, segment, and position features), splices the
projected frozen SQL-encoder vectors into the SQL slot positions, runs a small
vanilla transformer standing in for the pretrained language model, then a
stack of relation-aware layers whose self-attention adds a learned per-pair
relation embedding to both keys and values:

    e_ij = x_i Wq (x_j Wk + r_ij)^T / sqrt(d_head)
    z_i  = sum_j softmax_j(e_ij) (x_j Wv + r_ij)

One relation table is shared by keys and values and across layers, sliced per
head. Utterance/SQL positions carry absolute position embeddings; schema name
words carry word-offset embeddings instead, so reordering schema items
(together with their relation rows/columns) permutes the output and nothing
else.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .blocks import FeedForward, TransformerLayer
from .config import Config
from .errors import DataError
from .relations import NUM_EDGE_TYPES

SEGMENTS = ("sep", "hist", "cur", "sql", "tab", "col")
SEGMENT_IDS = {name: i for i, name in enumerate(SEGMENTS)}
MAX_NAME_WORDS = 16


class RelativeSelfAttention(nn.Module):
    """Multi-head self-attention with additive relation embeddings (shared
    between keys and values, one slice per head)."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = width // heads
        self.wq = nn.Linear(width, width, bias=False)
        self.wk = nn.Linear(width, width, bias=False)
        self.wv = nn.Linear(width, width, bias=False)
        self.out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, rel: torch.Tensor,
                pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: [B, L, D]; rel: [B, L, L, D] looked-up relation embeddings
        bsz, length, width = x.shape
        shape = (bsz, length, self.heads, self.d_head)
        q = self.wq(x).view(shape).transpose(1, 2)   # [B, H, L, dz]
        k = self.wk(x).view(shape).transpose(1, 2)
        v = self.wv(x).view(shape).transpose(1, 2)
        r = rel.view(bsz, length, length, self.heads, self.d_head).permute(0, 3, 1, 2, 4)
        scores = q @ k.transpose(-1, -2) + torch.einsum("bhid,bhijd->bhij", q, r)
        scores = scores / math.sqrt(self.d_head)
        if not torch.isfinite(scores).all():
            raise DataError("non-finite attention logits before softmax")
        if pad_mask is not None:
            bias = torch.where(pad_mask, 0.0, float("-inf")).to(x.dtype)
            scores = scores + bias[:, None, None, :]
        attn = torch.softmax(scores, dim=-1)
        z = attn @ v + torch.einsum("bhij,bhijd->bhid", attn, r)
        return self.out(z.transpose(1, 2).reshape(bsz, length, width))


class RelationalTransformerLayer(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.attn = RelativeSelfAttention(width, heads)
        self.ffn = FeedForward(width)
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, rel: torch.Tensor,
                pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.attn(x, rel, pad_mask)))
        return self.norm2(x + self.drop(self.ffn(x)))


class RelationalEncoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: Config):
        super().__init__()
        width = cfg.enc_width
        self.width = width
        self.tok_emb = nn.Embedding(vocab_size, width)
        self.abs_pos_emb = nn.Embedding(cfg.max_input_len, width)
        self.name_pos_emb = nn.Embedding(MAX_NAME_WORDS, width)
        self.seg_emb = nn.Embedding(len(SEGMENTS), width)
        self.sql_proj = nn.Linear(cfg.sql_width, width, bias=False)
        self.drop = nn.Dropout(cfg.dropout_encoder)
        self.base_layers = nn.ModuleList(
            TransformerLayer(width, cfg.enc_heads, cfg.dropout_encoder)
            for _ in range(cfg.base_layers))
        self.rel_table = nn.Embedding(NUM_EDGE_TYPES, width)
        self.rel_layers = nn.ModuleList(
            RelationalTransformerLayer(width, cfg.enc_heads, cfg.dropout_encoder)
            for _ in range(cfg.relation_layers))

    def project_sql(self, sql_hidden: torch.Tensor) -> torch.Tensor:
        """Map frozen N-wide SQL vectors into the token embedding space.

        Gradients flow into the projection weights only; the SQL encoder
        output is detached (freeze contract).
        """
        if sql_hidden.shape[-1] != self.sql_proj.in_features:
            raise DataError(
                f"SQL hidden width {sql_hidden.shape[-1]} != "
                f"projection input {self.sql_proj.in_features}")
        return self.sql_proj(sql_hidden.detach().to(self.sql_proj.weight.dtype))

    def forward(self, token_ids: torch.Tensor, rel_ids: torch.Tensor,
                seg_ids: torch.Tensor, abs_pos: torch.Tensor,
                name_pos: torch.Tensor, schema_mask: torch.Tensor,
                sql_embeddings: list[torch.Tensor | None] | None = None,
                sql_positions: list[tuple[int, ...]] | None = None,
                pad_mask: torch.Tensor | None = None,
                zero_relations: bool = False) -> torch.Tensor:
        # token_ids/seg_ids/abs_pos/name_pos/schema_mask: [B, L]; rel_ids: [B, L, L]
        x = self.tok_emb(token_ids).clone()
        if sql_embeddings is not None:
            for i, hidden in enumerate(sql_embeddings):
                if hidden is None:
                    continue
                positions = sql_positions[i]
                if len(positions) != hidden.shape[0]:
                    raise DataError(
                        f"{len(positions)} SQL slots but {hidden.shape[0]} SQL vectors")
                x[i, list(positions)] = self.project_sql(hidden)
        pos = torch.where(schema_mask[..., None],
                          self.name_pos_emb(name_pos),
                          self.abs_pos_emb(abs_pos))
        x = self.drop(x + pos + self.seg_emb(seg_ids))
        for layer in self.base_layers:
            x = layer(x, pad_mask)
        if zero_relations:
            rel = x.new_zeros(rel_ids.shape + (self.width,))
        else:
            rel = self.rel_table(rel_ids)
        for layer in self.rel_layers:
            x = layer(x, rel, pad_mask)
        return x
