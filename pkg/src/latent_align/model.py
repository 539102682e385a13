"""Bidirectional self-attention scorer with source upsampling, and a causal teacher.

Both networks are plain ``torch.nn.Module`` stacks of pre-LN residual blocks
with sinusoidal positions.  The alignment scorer never uses cross-attention:
its input is the upsampled source, optionally superposed with the embedding
of a partial alignment.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModelConfig:
    n_tokens: int
    depth: int = 2
    d_model: int = 64
    d_ff: int = 256
    heads: int = 4
    scale: int = 2
    dropout: float = 0.1
    positional_encoding: bool = True
    max_len: int = 1024

    def __post_init__(self):
        if self.n_tokens < 1:
            raise ValueError("n_tokens must be positive")
        if self.depth < 1 or self.d_model < 1 or self.d_ff < 1 or self.heads < 1:
            raise ValueError("layer sizes must be positive")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.scale < 1:
            raise ValueError("canvas scale must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def n_outputs(self) -> int:
        return self.n_tokens + 1

    @property
    def mask_id(self) -> int:
        return self.n_tokens + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def sinusoid_table(n_positions: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(n_positions, dtype=torch.float64)[:, None]
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d_model)
    table = torch.zeros(n_positions, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return table


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.dropout = dropout

    def forward(self, x, key_padding=None, causal=False):
        b, n, d = x.shape
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // self.heads)
        blocked = torch.zeros(n, n, dtype=torch.bool, device=x.device)
        if causal:
            blocked = torch.ones(n, n, dtype=torch.bool, device=x.device).triu(1)
        blocked = blocked[None, None]
        if key_padding is not None:
            blocked = blocked | key_padding[:, None, None, :]
        scores = scores.masked_fill(blocked, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        weights = F.dropout(weights, self.dropout, self.training)
        out = (weights @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, d_model: int, d_ff: int, heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(), nn.Linear(d_ff, d_model))
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_padding=None, causal=False):
        x = x + self.drop(self.attn(self.norm1(x), key_padding, causal))
        return x + self.drop(self.ff(self.norm2(x)))


class AlignmentScorer(nn.Module):
    """Maps a source (and optionally a partial alignment) to a lattice.

    Embedding rows: 0 is BLANK, ``1..n`` user tokens, ``n + 1`` MASK.  The
    MASK row is held at zero, so an all-MASK partial alignment contributes
    nothing and the Imputer forward collapses onto the CTC forward.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.embed = nn.Embedding(config.n_tokens + 2, d)
        self.upsample = nn.Linear(d, config.scale * d)
        self.blocks = nn.ModuleList(
            Block(d, config.d_ff, config.heads, config.dropout) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, config.n_outputs)
        keep = torch.ones(config.n_tokens + 2)
        keep[config.mask_id] = 0.0
        self.register_buffer("row_keep", keep, persistent=False)
        self.register_buffer("positions", sinusoid_table(config.max_len, d).float(), persistent=False)
        with torch.no_grad():
            self.embed.weight[config.mask_id].zero_()

    def embedding_table(self) -> torch.Tensor:
        return self.embed.weight * self.row_keep[:, None].to(self.embed.weight.dtype)

    def forward(self, src, src_lengths=None, partial=None):
        """``src`` (B, N) ids, ``partial`` (B, s*N) ids or None -> (B, s*N, K) scores."""
        cfg = self.config
        b, n = src.shape
        table = self.embedding_table()
        h = self.upsample(F.embedding(src, table)).view(b, n * cfg.scale, cfg.d_model)
        if partial is not None:
            h = h + F.embedding(partial, table)
        canvas = n * cfg.scale
        if canvas > cfg.max_len:
            raise ValueError(f"canvas length {canvas} exceeds max_len={cfg.max_len}")
        if cfg.positional_encoding:
            h = h + self.positions[:canvas].to(h.dtype)
        key_padding = None
        if src_lengths is not None:
            lengths = torch.as_tensor(src_lengths) * cfg.scale
            key_padding = torch.arange(canvas)[None, :] >= lengths[:, None]
        for block in self.blocks:
            h = block(h, key_padding)
        return self.out(self.norm(h))


class CausalTeacher(nn.Module):
    """Decoder-only autoregressive teacher over ``[x, SEP, y]``.

    Inputs use ids ``1..n`` for tokens and ``n + 1`` for SEP.  Outputs are
    ``n + 1`` classes where class 0 means END.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.embed = nn.Embedding(config.n_tokens + 2, d)
        self.blocks = nn.ModuleList(
            Block(d, config.d_ff, config.heads, config.dropout) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, config.n_tokens + 1)
        self.register_buffer("positions", sinusoid_table(config.max_len, d).float(), persistent=False)

    @property
    def sep_id(self) -> int:
        return self.config.n_tokens + 1

    def forward(self, ids, lengths=None):
        b, n = ids.shape
        if n > self.config.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len={self.config.max_len}")
        h = self.embed(ids)
        if self.config.positional_encoding:
            h = h + self.positions[:n].to(h.dtype)
        key_padding = None
        if lengths is not None:
            key_padding = torch.arange(n)[None, :] >= torch.as_tensor(lengths)[:, None]
        for block in self.blocks:
            h = block(h, key_padding, causal=True)
        return self.out(self.norm(h))


def _check_ids(x, n_tokens: int, what: str = "source") -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a non-empty 1-D id sequence")
    if arr.min() < 1 or arr.max() > n_tokens:
        raise ValueError(f"{what} contains ids outside 1..{n_tokens}")
    return arr


def _dtype(net: nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def forward_ctc(net: AlignmentScorer, x) -> np.ndarray:
    """Lattice of shape ``(s * |x|, K)`` for one source, inference mode."""
    x = _check_ids(x, net.config.n_tokens)
    net.eval()
    with torch.no_grad():
        scores = net(torch.as_tensor(x)[None])
    return scores[0].double().numpy()


def forward_imputer(net: AlignmentScorer, x, partial) -> np.ndarray:
    x = _check_ids(x, net.config.n_tokens)
    partial = np.asarray(partial, dtype=np.int64)
    if partial.shape != (net.config.scale * len(x),):
        raise ValueError(
            f"partial alignment has {partial.size} frames, expected {net.config.scale * len(x)}"
        )
    if partial.min() < 0 or partial.max() > net.config.mask_id:
        raise ValueError("partial alignment contains out-of-range ids")
    net.eval()
    with torch.no_grad():
        scores = net(torch.as_tensor(x)[None], partial=torch.as_tensor(partial)[None])
    return scores[0].double().numpy()


def forward_teacher(net: CausalTeacher, x, y_prefix) -> np.ndarray:
    """Log-probabilities of the next target symbol; index 0 is END."""
    x = _check_ids(x, net.config.n_tokens)
    prefix = np.asarray(y_prefix, dtype=np.int64)
    if prefix.size:
        _check_ids(prefix, net.config.n_tokens, "prefix")
    ids = np.concatenate([x, [net.sep_id], prefix])
    net.eval()
    with torch.no_grad():
        logits = net(torch.as_tensor(ids)[None])
    return torch.log_softmax(logits[0, -1].double(), dim=-1).numpy()


def backward(net: AlignmentScorer, x, lattice_grad, partial=None) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum(scores * lattice_grad)``.

    Runs the forward pass in inference mode (dropout off), so the result is
    the exact chain-rule product with a gradient taken from ``ctc_loss`` or
    ``imputer_loss`` on the matching :func:`forward_ctc` /
    :func:`forward_imputer` output.
    """
    x = _check_ids(x, net.config.n_tokens)
    canvas = net.config.scale * len(x)
    lattice_grad = np.asarray(lattice_grad, dtype=np.float64)
    if lattice_grad.shape != (canvas, net.config.n_outputs):
        raise ValueError(f"lattice gradient shape {lattice_grad.shape} != {(canvas, net.config.n_outputs)}")
    dtype = _dtype(net)
    net.eval()
    net.zero_grad(set_to_none=False)
    part = None if partial is None else torch.as_tensor(np.asarray(partial, dtype=np.int64))[None]
    scores = net(torch.as_tensor(x)[None], partial=part)
    scores[0].backward(torch.as_tensor(lattice_grad, dtype=dtype))
    return {name: p.grad.detach().double().numpy().copy() for name, p in net.named_parameters()}
