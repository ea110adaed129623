"""Transformer building blocks shared by the SQL encoder and the base layers
of the downstream encoder. Post-layer-norm residual blocks, ReLU feed-forward
at 4x width, explicit multi-head attention (no fused kernels, so the math
stays auditable against the scalar oracles)."""

from __future__ import annotations

import math

import torch
from torch import nn


class MultiHeadSelfAttention(nn.Module):
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

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        # x: [B, L, D]; pad_mask: [B, L] True at valid positions
        bsz, length, width = x.shape
        shape = (bsz, length, self.heads, self.d_head)
        q = self.wq(x).view(shape).transpose(1, 2)
        k = self.wk(x).view(shape).transpose(1, 2)
        v = self.wv(x).view(shape).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if pad_mask is not None:
            bias = torch.where(pad_mask, 0.0, float("-inf")).to(x.dtype)
            scores = scores + bias[:, None, None, :]
        attn = torch.softmax(scores, dim=-1)
        z = (attn @ v).transpose(1, 2).reshape(bsz, length, width)
        return self.out(z)


class FeedForward(nn.Module):
    def __init__(self, width: int, mult: int = 4):
        super().__init__()
        self.lin1 = nn.Linear(width, width * mult)
        self.lin2 = nn.Linear(width * mult, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(torch.relu(self.lin1(x)))


class TransformerLayer(nn.Module):
    """Vanilla encoder layer: attention and feed-forward sublayers with
    post-norm residuals."""

    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(width, heads)
        self.ffn = FeedForward(width)
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.attn(x, pad_mask)))
        return self.norm2(x + self.drop(self.ffn(x)))
