"""Small transformer pair encoder, trainable in torch.

This mirrors the serving-side numpy forward pass exactly: learned token,
position, and segment embeddings with a layer norm; post-norm
self-attention blocks with exact (erf) GELU; an additive -1e9 key mask;
masked mean pooling; a two-class head. Keeping the op set identical is
what makes the exported artifact reproduce training-side probabilities
at serving time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

_MASK_ADD = -1e9
_LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    max_tokens: int = 512
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    vocab_cap: int = 8192

    def __post_init__(self) -> None:
        for name in ("max_tokens", "d_model", "n_heads", "n_layers", "d_ff", "vocab_cap"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.max_tokens < 8:
            raise ValueError(f"max_tokens must be at least 8, got {self.max_tokens}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}"
            )


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.d_head = cfg.d_model // cfg.n_heads
        self.wq = nn.Linear(cfg.d_model, cfg.d_model)
        self.wk = nn.Linear(cfg.d_model, cfg.d_model)
        self.wv = nn.Linear(cfg.d_model, cfg.d_model)
        self.wo = nn.Linear(cfg.d_model, cfg.d_model)
        self.ln1 = nn.LayerNorm(cfg.d_model, eps=_LN_EPS)
        self.ff1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.ff2 = nn.Linear(cfg.d_ff, cfg.d_model)
        self.ln2 = nn.LayerNorm(cfg.d_model, eps=_LN_EPS)

    def forward(self, x: torch.Tensor, key_add: torch.Tensor) -> torch.Tensor:
        batch, length, d_model = x.shape
        q = self.wq(x).view(batch, length, self.n_heads, self.d_head).transpose(1, 2)
        k = self.wk(x).view(batch, length, self.n_heads, self.d_head).transpose(1, 2)
        v = self.wv(x).view(batch, length, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores + key_add[:, None, None, :]
        attn = (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(batch, length, d_model)
        x = self.ln1(x + self.wo(attn))
        ff = self.ff2(F.gelu(self.ff1(x)))
        return self.ln2(x + ff)


class PairEncoder(nn.Module):
    """Sequence-pair classifier matching the portable inference graph."""

    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.tok_emb = nn.Embedding(vocab_size, cfg.d_model)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.max_tokens, cfg.d_model))
        self.type_emb = nn.Embedding(2, cfg.d_model)
        self.emb_ln = nn.LayerNorm(cfg.d_model, eps=_LN_EPS)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.n_layers))
        self.head = nn.Linear(cfg.d_model, 2)
        nn.init.normal_(self.pos_emb, std=0.02)

    def forward(
        self, ids: torch.Tensor, segs: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        length = ids.shape[1]
        x = self.tok_emb(ids) + self.pos_emb[:length].unsqueeze(0) + self.type_emb(segs)
        x = self.emb_ln(x)
        key_add = (1.0 - mask) * _MASK_ADD
        for block in self.blocks:
            x = block(x, key_add)
        pooled = (x * mask.unsqueeze(-1)).sum(dim=1) / mask.sum(dim=1, keepdim=True)
        return self.head(pooled)

    def keep_probability(
        self, ids: torch.Tensor, segs: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        return self.forward(ids, segs, mask).softmax(dim=-1)[:, 1]


def export_weights(model: PairEncoder) -> dict[str, np.ndarray]:
    """Flatten trained parameters into the portable artifact's key layout."""
    out: dict[str, np.ndarray] = {
        "tok_emb": _np(model.tok_emb.weight),
        "pos_emb": _np(model.pos_emb),
        "type_emb": _np(model.type_emb.weight),
        "emb_ln_g": _np(model.emb_ln.weight),
        "emb_ln_b": _np(model.emb_ln.bias),
        "head.w": _np(model.head.weight),
        "head.b": _np(model.head.bias),
    }
    for i, block in enumerate(model.blocks):
        p = f"layers.{i}."
        out.update(
            {
                p + "attn.wq": _np(block.wq.weight), p + "attn.bq": _np(block.wq.bias),
                p + "attn.wk": _np(block.wk.weight), p + "attn.bk": _np(block.wk.bias),
                p + "attn.wv": _np(block.wv.weight), p + "attn.bv": _np(block.wv.bias),
                p + "attn.wo": _np(block.wo.weight), p + "attn.bo": _np(block.wo.bias),
                p + "ln1.g": _np(block.ln1.weight), p + "ln1.b": _np(block.ln1.bias),
                p + "ff.w1": _np(block.ff1.weight), p + "ff.b1": _np(block.ff1.bias),
                p + "ff.w2": _np(block.ff2.weight), p + "ff.b2": _np(block.ff2.bias),
                p + "ln2.g": _np(block.ln2.weight), p + "ln2.b": _np(block.ln2.bias),
            }
        )
    return out


def _np(tensor: torch.Tensor) -> np.ndarray:
    return tensor.detach().cpu().numpy().astype(np.float32)
