"""Style-conditioned transformer encoder-decoder.

The target style is given to the model as a control token (STYLE_S or
STYLE_T) prepended to the encoder input, so one parameter set serves both
transfer directions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .neuralcore import (
    Decoder,
    Encoder,
    TokenEmbedding,
    TransformerConfig,
    init_parameters,
    load_tensors,
    reorder_cache,
    save_tensors,
    smoothed_xent_torch,
)
from .textcore import Sentence, StyleLabel, Vocab, sentence_from_ids

DEFAULT_SMOOTHING = 0.15


class DecodeMode(str, enum.Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    SAMPLE = "sample"


@dataclass
class DecodeConfig:
    mode: DecodeMode = DecodeMode.BEAM
    beam_size: int = 6
    temperature: float = 1.0
    extra_len: int = 8  # max_decode_len = input length + extra_len

    def __post_init__(self):
        self.mode = DecodeMode(self.mode)
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class Example:
    """One directional training instance: transfer ``x`` to style ``c`` giving ``y``."""

    x: Sentence
    c: StyleLabel
    y: Sentence


def pairs_to_examples(pairs, bidirectional: bool = True) -> list[Example]:
    out = []
    for p in pairs:
        out.append(Example(p.source, p.target.style, p.target))
        if bidirectional:
            out.append(Example(p.target, p.source.style, p.source))
    return out


class Generator(nn.Module):
    def __init__(self, vocab: Vocab, cfg: TransformerConfig, seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg
        self.seed = seed
        self.embed = TokenEmbedding(len(vocab), cfg)
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.out = nn.Linear(cfg.model_dim, len(vocab))
        init_parameters(self, seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.out.weight.dtype

    # -- batching -----------------------------------------------------------
    def source_ids(self, x: Sentence, c: StyleLabel) -> list[int]:
        ids = [self.vocab.style_id(c), *x.ids]
        if len(ids) > self.cfg.max_len:
            raise ValueError(f"source of length {len(x)} exceeds max_len {self.cfg.max_len}")
        return ids

    def pad_batch(self, rows: Sequence[Sequence[int]], width: int | None = None) -> torch.Tensor:
        width = max(len(r) for r in rows) if width is None else width
        out = torch.full((len(rows), width), self.vocab.pad_id, dtype=torch.long)
        for i, r in enumerate(rows):
            out[i, : len(r)] = torch.as_tensor(list(r), dtype=torch.long)
        return out

    def encode(self, xs: Sequence[Sentence], cs: Sequence[StyleLabel]):
        src = self.pad_batch([self.source_ids(x, c) for x, c in zip(xs, cs)])
        pad = src == self.vocab.pad_id
        memory, _ = self.encoder(self.embed(src), pad)
        return memory, pad

    def logits(self, memory, memory_pad, tgt_in: torch.Tensor) -> torch.Tensor:
        return self.out(self.decoder(self.embed(tgt_in), memory, memory_pad))

    def start_decoding(self, xs: Sequence[Sentence], cs: Sequence[StyleLabel]):
        """Encoder output and an empty decoder cache for incremental decoding."""
        memory, pad = self.encode(xs, cs)
        return pad, self.decoder.start_cache(memory)

    def step_logits(self, tokens: torch.Tensor, position: int, memory_pad, cache) -> torch.Tensor:
        """Next-token logits (B, V) after feeding ``tokens`` (B,) at ``position``; updates ``cache``."""
        h = self.decoder.step(self.embed(tokens[:, None], offset=position), memory_pad, cache)
        return self.out(h[:, 0])

    def teacher_forcing(self, xs, cs, ys: Sequence[Sequence[int]], eos: Sequence[bool] | None = None):
        """Logits for ``[BOS] + y`` and the matching targets ``y (+ EOS)``.

        Returns (logits (B, L, V), targets (B, L), target pad mask (B, L)).
        """
        eos = [True] * len(ys) if eos is None else eos
        tgt_in = self.pad_batch([[self.vocab.bos_id, *y] for y in ys])
        tgt_out = self.pad_batch([[*y, self.vocab.eos_id] if e else list(y) for y, e in zip(ys, eos)], tgt_in.shape[1])
        lengths = torch.tensor([len(y) + int(e) for y, e in zip(ys, eos)])
        tgt_pad = torch.arange(tgt_in.shape[1])[None, :] >= lengths[:, None]
        memory, pad = self.encode(xs, cs)
        return self.logits(memory, pad, tgt_in), tgt_out, tgt_pad

    # -- checkpoints ---------------------------------------------------------
    def tensors(self) -> dict[str, torch.Tensor]:
        return dict(self.state_dict())

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_tensors(path, self.tensors(), {"kind": "generator", "config": vars(self.cfg), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path, vocab: Vocab) -> "Generator":
        tensors, meta = load_tensors(path)
        model = cls(vocab, TransformerConfig(**meta["config"]))
        model.load_state_dict(tensors)
        return model


def gen_forward(model: Generator, x: Sentence, c: StyleLabel, y_prefix: Sequence[int] = ()) -> torch.Tensor:
    """Next-token distribution after ``[BOS] + y_prefix``."""
    memory, pad = model.encode([x], [c])
    tgt = model.pad_batch([[model.vocab.bos_id, *y_prefix]])
    return torch.softmax(model.logits(memory, pad, tgt)[0, -1], dim=-1)


def mle_loss(model: Generator, batch: Sequence[Example], smoothing: float = DEFAULT_SMOOTHING) -> torch.Tensor:
    """Mean label-smoothed token cross-entropy under teacher forcing."""
    if not batch:
        raise ValueError("empty batch")
    logits, targets, tgt_pad = model.teacher_forcing([e.x for e in batch], [e.c for e in batch], [e.y.ids for e in batch])
    return smoothed_xent_torch(logits, targets, smoothing, tgt_pad)


def _emittable(logits: torch.Tensor, vocab: Vocab) -> torch.Tensor:
    """Logits with ids that can never be generated (PAD, BOS, style tokens) masked out."""
    banned = [vocab.pad_id, vocab.bos_id, vocab.style_s_id, vocab.style_t_id]
    out = logits.clone()
    out[..., banned] = float("-inf")
    return out


def score_tokens(model: Generator, xs, cs, ys: Sequence[Sequence[int]], eos: Sequence[bool]) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forced per-step log-probabilities of given outputs.

    Returns (log-probs (B, L), pad mask (B, L)); differentiable.
    """
    logits, targets, tgt_pad = model.teacher_forcing(xs, cs, ys, eos)
    logp = torch.log_softmax(_emittable(logits, model.vocab), dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return logp.masked_fill(tgt_pad, 0.0), tgt_pad


@dataclass
class Generation:
    sentence: Sentence
    log_probs: np.ndarray  # one per emitted step, EOS included when emitted
    ended: bool  # True when EOS was emitted

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.sentence.ids


def _collect(model, step_tokens, step_logps, b, c) -> list[Generation]:
    out = []
    eos = model.vocab.eos_id
    for i in range(b):
        toks, lps = [], []
        ended = False
        for t, lp in zip(step_tokens[i], step_logps[i]):
            lps.append(lp)
            if t == eos:
                ended = True
                break
            toks.append(t)
        out.append(Generation(sentence_from_ids(toks, model.vocab, c[i]), np.array(lps), ended))
    return out


@torch.no_grad()
def decode_batch(
    model: Generator,
    xs: Sequence[Sentence],
    cs: Sequence[StyleLabel] | StyleLabel,
    cfg: DecodeConfig,
    rng: torch.Generator | None = None,
) -> list[Generation]:
    """Greedy or sampled decoding of a batch; beam mode is delegated to :func:`beam_search`."""
    if isinstance(cs, StyleLabel):
        cs = [cs] * len(xs)
    if not xs:
        return []
    if cfg.mode is DecodeMode.BEAM:
        return beam_search(model, xs, cs, cfg.beam_size, cfg.extra_len)
    was_training = model.training
    model.eval()
    vocab = model.vocab
    b = len(xs)
    limits = torch.tensor([min(len(x) + cfg.extra_len, model.cfg.max_len - 1) for x in xs])
    memory_pad, cache = model.start_decoding(xs, cs)
    last = torch.full((b,), vocab.bos_id, dtype=torch.long)
    done = torch.zeros(b, dtype=torch.bool)
    tokens: list[list[int]] = [[] for _ in range(b)]
    logps: list[list[float]] = [[] for _ in range(b)]
    for step in range(int(limits.max())):
        active = (~done) & (limits > step)
        if not active.any():
            break
        # finished rows keep stepping (their output is ignored) so the cache stays aligned
        logits = _emittable(model.step_logits(last, step, memory_pad, cache), vocab)
        log_probs = torch.log_softmax(logits, dim=-1)
        if cfg.mode is DecodeMode.GREEDY:
            nxt = log_probs.argmax(dim=-1)
        else:
            probs = torch.softmax(logits[active] / cfg.temperature, dim=-1)
            nxt = torch.full((b,), vocab.eos_id, dtype=torch.long)
            nxt[active] = torch.multinomial(probs, 1, generator=rng).squeeze(1)
        chosen = log_probs.gather(1, nxt[:, None]).squeeze(1)
        for i in active.nonzero().squeeze(1).tolist():
            tokens[i].append(int(nxt[i]))
            logps[i].append(float(chosen[i]))
        done |= active & (nxt == vocab.eos_id)
        last = nxt
    model.train(was_training)
    return _collect(model, tokens, logps, b, cs)


@torch.no_grad()
def beam_search(model: Generator, xs, cs, beam_size: int, extra_len: int = 8) -> list[Generation]:
    """Length-normalized beam search (cumulative log-prob / emitted steps)."""
    was_training = model.training
    model.eval()
    vocab = model.vocab
    eos = vocab.eos_id
    memory_pad, full_cache = model.start_decoding(xs, cs)
    results = []
    for i, x in enumerate(xs):
        limit = min(len(x) + extra_len, model.cfg.max_len - 1)
        cache = reorder_cache(full_cache, torch.tensor([i]))
        mpad = memory_pad[i : i + 1]
        live = [([], [], 0.0)]  # (tokens, logps, cumulative)
        last = torch.tensor([vocab.bos_id])
        finished = []
        for step in range(limit):
            logits = model.step_logits(last, step, mpad.expand(len(live), -1), cache)
            log_probs = torch.log_softmax(_emittable(logits, vocab), dim=-1)
            total = torch.tensor([h[2] for h in live], dtype=log_probs.dtype)[:, None] + log_probs
            flat = total.view(-1)
            top = torch.topk(flat, min(beam_size, flat.numel()))
            new_live, parents = [], []
            for score, pos in zip(top.values.tolist(), top.indices.tolist()):
                h, tok = divmod(pos, log_probs.shape[1])
                toks, lps, _ = live[h]
                lps = lps + [float(log_probs[h, tok])]
                if tok == eos:
                    finished.append((toks, lps, score, True))
                else:
                    new_live.append((toks + [tok], lps, score))
                    parents.append(h)
            live = new_live
            if len(finished) >= beam_size or not live:
                break
            index = torch.tensor(parents)
            cache = reorder_cache(cache, index)
            last = torch.tensor([h[0][-1] for h in live])
        pool = finished or [(t, l, s, False) for t, l, s in live]
        best = max(pool, key=lambda h: h[2] / max(len(h[1]), 1))
        results.append(Generation(sentence_from_ids(best[0], vocab, cs[i]), np.array(best[1]), best[3]))
    model.train(was_training)
    return results


def decode(model: Generator, x: Sentence, c: StyleLabel, cfg: DecodeConfig, rng: torch.Generator | None = None) -> tuple[Sentence, np.ndarray]:
    g = decode_batch(model, [x], [c], cfg, rng)[0]
    return g.sentence, g.log_probs


def transfer(model: Generator, xs: Sequence[Sentence], cs, cfg: DecodeConfig, batch_size: int = 64, rng=None) -> list[Sentence]:
    if isinstance(cs, StyleLabel):
        cs = [cs] * len(xs)
    out = []
    for start in range(0, len(xs), batch_size):
        out.extend(g.sentence for g in decode_batch(model, xs[start : start + batch_size], cs[start : start + batch_size], cfg, rng))
    return out
