"""Transformer building blocks, smoothed cross-entropy, gradient checking and
the named-tensor checkpoint format shared by the generator and classifier."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class TransformerConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 128
    ff_dim: int = 256
    max_len: int = 32
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if min(self.layers, self.heads, self.model_dim, self.ff_dim, self.max_len) < 1:
            raise ValueError("transformer sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def sinusoidal_positions(max_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    rate = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * rate)
    table[:, 1::2] = torch.cos(pos * rate)[:, : dim // 2]
    return table


def init_parameters(module: nn.Module, seed: int) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.

    LayerNorm starts at identity; embeddings use the model dimension as fan-in.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.LayerNorm):
                sub.weight.fill_(1.0)
                sub.bias.zero_()
            elif isinstance(sub, nn.Linear):
                bound = 1.0 / math.sqrt(sub.in_features)
                sub.weight.copy_(torch.rand(sub.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                if sub.bias is not None:
                    sub.bias.copy_(torch.rand(sub.bias.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
            elif isinstance(sub, nn.Embedding):
                bound = 1.0 / math.sqrt(sub.embedding_dim)
                sub.weight.copy_(torch.rand(sub.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        return x.view(b, l, self.heads, self.head_dim).transpose(1, 2)

    def project_kv(self, key: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Keys and values of shape (B, H, Lk, head_dim), for caching."""
        return self._split(self.k(key)), self._split(self.v(key))

    def forward(self, query, key, key_pad: torch.Tensor | None = None, causal: bool = False, kv=None):
        """Returns (output, attention weights of shape (B, H, Lq, Lk)).

        ``kv`` supplies precomputed (keys, values) in place of projecting ``key``.
        """
        b, lq, _ = query.shape
        q = self._split(self.q(query))
        k, v = self.project_kv(key) if kv is None else kv
        lk = k.shape[2]
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(lq, lk, dtype=torch.bool, device=query.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (self.drop(attn) @ v).transpose(1, 2).reshape(b, lq, -1)
        return self.o(out), attn


class FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int, dropout: float = 0.0):
        super().__init__()
        self.up = nn.Linear(dim, ff_dim)
        self.down = nn.Linear(ff_dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.down(self.drop(F.gelu(self.up(x))))


class EncoderLayer(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.attn = MultiHeadAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, pad):
        n = self.norm1(x)
        h, attn = self.attn(n, n, pad)
        x = x + self.drop(h)
        x = x + self.drop(self.ff(self.norm2(x)))
        return x, attn


class DecoderLayer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.model_dim)
        self.self_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.model_dim)
        self.cross_attn = MultiHeadAttention(cfg.model_dim, cfg.heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.model_dim)
        self.ff = FeedForward(cfg.model_dim, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, y, memory, memory_pad, y_pad=None):
        n = self.norm1(y)
        h, _ = self.self_attn(n, n, y_pad, causal=True)
        y = y + self.drop(h)
        h, _ = self.cross_attn(self.norm2(y), memory, memory_pad)
        y = y + self.drop(h)
        return y + self.drop(self.ff(self.norm3(y)))

    def step(self, y_t, memory_pad, cache: dict):
        """One incremental position; ``cache`` holds this layer's self and cross keys/values."""
        n = self.norm1(y_t)
        k, v = self.self_attn.project_kv(n)
        if "self" in cache:
            k = torch.cat([cache["self"][0], k], dim=2)
            v = torch.cat([cache["self"][1], v], dim=2)
        cache["self"] = (k, v)
        h, _ = self.self_attn(n, None, kv=(k, v))
        y_t = y_t + self.drop(h)
        h, _ = self.cross_attn(self.norm2(y_t), None, memory_pad, kv=cache["cross"])
        y_t = y_t + self.drop(h)
        return y_t + self.drop(self.ff(self.norm3(y_t)))


class TokenEmbedding(nn.Module):
    """Scaled token embedding plus fixed sinusoidal positions."""

    def __init__(self, vocab_size: int, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.tokens = nn.Embedding(vocab_size, cfg.model_dim)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_len, cfg.model_dim).float(), persistent=False)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        end = offset + ids.shape[1]
        if end > self.cfg.max_len:
            raise ValueError(f"input length {end} exceeds max_len {self.cfg.max_len}")
        x = self.tokens(ids) * math.sqrt(self.cfg.model_dim)
        return self.drop(x + self.positions[offset:end].to(x.dtype))


class Encoder(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.model_dim)

    def forward(self, x, pad):
        attns = []
        for layer in self.layers:
            x, a = layer(x, pad)
            attns.append(a)
        return self.norm(x), attns


class Decoder(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.model_dim)

    def forward(self, y, memory, memory_pad, y_pad=None):
        for layer in self.layers:
            y = layer(y, memory, memory_pad, y_pad)
        return self.norm(y)

    def start_cache(self, memory) -> list[dict]:
        return [{"cross": layer.cross_attn.project_kv(memory)} for layer in self.layers]

    def step(self, y_t, memory_pad, cache: list[dict]):
        """Hidden state for one new position given cached earlier positions."""
        for layer, c in zip(self.layers, cache):
            y_t = layer.step(y_t, memory_pad, c)
        return self.norm(y_t)


def reorder_cache(cache: list[dict], index: torch.Tensor) -> list[dict]:
    """Select batch rows of a decoder cache (beam reordering)."""
    return [{k: (a.index_select(0, index), b.index_select(0, index)) for k, (a, b) in c.items()} for c in cache]


@dataclass
class AttentionStack:
    """First-position attention rows, shape (layers, heads, length)."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 3:
            raise ValueError("attention stack must be (layers, heads, length)")

    @property
    def layers(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def from_attentions(cls, attns: Sequence[torch.Tensor], index: int = 0, length: int | None = None):
        rows = np.stack([a[index, :, 0, :].detach().double().cpu().numpy() for a in attns])
        return cls(rows if length is None else rows[:, :, :length])


def transformer_encode(embedding: TokenEmbedding, encoder: Encoder, ids, mask=None):
    """Encode one sequence of ids; ``mask`` is True at PAD positions.

    Returns (hidden states (L, D), AttentionStack).
    """
    ids = torch.as_tensor(ids, dtype=torch.long)[None]
    pad = torch.zeros_like(ids, dtype=torch.bool) if mask is None else torch.as_tensor(mask, dtype=torch.bool)[None]
    hidden, attns = encoder(embedding(ids), pad)
    return hidden[0], AttentionStack.from_attentions(attns)


def smoothed_xent(logits, target_id: int, smoothing: float) -> tuple[float, np.ndarray]:
    """Label-smoothed cross-entropy of one logit vector and its logit gradient.

    The target distribution mixes the one-hot target with uniform at weight
    ``smoothing``; the gradient is ``softmax(logits) - q``.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must be in [0, 1)")
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= target_id < z.size:
        raise ValueError("target id out of range")
    shifted = z - z.max()
    logp = shifted - np.log(np.exp(shifted).sum())
    q = np.full(z.size, smoothing / z.size)
    q[target_id] += 1.0 - smoothing
    return float(-(q * logp).sum()), np.exp(logp) - q


def smoothed_xent_torch(logits: torch.Tensor, targets: torch.Tensor, smoothing: float, ignore: torch.Tensor | None = None):
    """Batched version: logits (..., V), targets (...); ``ignore`` masks positions out.

    Returns the mean loss over kept positions.
    """
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    loss = (1.0 - smoothing) * nll - smoothing * logp.mean(dim=-1)
    if ignore is not None:
        keep = (~ignore).to(loss.dtype)
        return (loss * keep).sum() / keep.sum().clamp_min(1.0)
    return loss.mean()


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    epsilon: float = 1e-4,
    max_per_tensor: int | None = None,
    seed: int = 0,
    floor: float = 1e-12,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``fn`` recomputes a scalar from the current values of ``params``.
    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``. Raise
    the floor to keep exactly-zero gradients (e.g. attention key biases,
    cancelled by softmax shift-invariance) from scoring rounding noise.
    With ``max_per_tensor`` only that many seeded-random coordinates of each
    tensor are perturbed.
    """
    gen = torch.Generator().manual_seed(seed)
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            flat = p.view(-1)
            a_flat = a.view(-1)
            coords = range(flat.numel())
            if max_per_tensor is not None and flat.numel() > max_per_tensor:
                coords = torch.randperm(flat.numel(), generator=gen)[:max_per_tensor].tolist()
            for i in coords:
                old = flat[i].item()
                flat[i] = old + epsilon
                up = fn().item()
                flat[i] = old - epsilon
                down = fn().item()
                flat[i] = old
                num = (up - down) / (2 * epsilon)
                ana = a_flat[i].item()
                err = abs(ana - num) / max(abs(ana), abs(num), floor)
                worst = max(worst, err)
    return worst


def numeric_derivative(f: Callable[[float], float], x: float, epsilon: float) -> float:
    return (f(x + epsilon) - f(x - epsilon)) / (2 * epsilon)


MAGIC = b"SEMISTYLE-TENSORS"
FORMAT_VERSION = 1


def save_tensors(path: str | Path, tensors: Mapping[str, torch.Tensor], meta: Mapping | None = None) -> None:
    """Write named tensors as: magic+version line, JSON header line, raw bytes."""
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().contiguous().numpy()
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        entries.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": dict(meta or {})}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(header + b"\n")
        for raw in blobs:
            fh.write(raw)


def load_tensors(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    with open(path, "rb") as fh:
        first = fh.readline().rstrip(b"\n").split(b" ")
        if first[0] != MAGIC:
            raise ValueError(f"{path}: not a tensor checkpoint")
        if int(first[1]) != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {first[1].decode()}")
        header = json.loads(fh.readline())
        data = fh.read()
    tensors = {}
    for e in header["tensors"]:
        arr = np.frombuffer(data, dtype=np.dtype("<" + e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        tensors[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    return tensors, header["meta"]


def config_dict(cfg) -> dict:
    return asdict(cfg)
