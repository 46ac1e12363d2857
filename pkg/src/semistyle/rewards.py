"""BLEU scoring, RL rewards and the policy-gradient surrogate."""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .textcore import Sentence, StyleLabel

log = logging.getLogger(__name__)


class RewardMode(str, enum.Enum):
    SEQUENCE = "sequence"
    STEPWISE = "stepwise"


@dataclass
class RewardConfig:
    lambda_cyclic: float = 1.0
    lambda_style: float = 0.8
    gamma: float = 0.2
    mode: RewardMode = RewardMode.STEPWISE
    score_fn: str = "bleu"
    # True: w_t * (r_style - gamma); False: w_t * r_style - gamma
    penalty_before_weighting: bool = True
    # stepwise weight of the EOS step, which has no salience: "mean" of the token weights or "one"
    eos_weight: str = "mean"

    def __post_init__(self):
        self.mode = RewardMode(self.mode)
        if self.eos_weight not in ("mean", "one"):
            raise ValueError(f"eos_weight must be 'mean' or 'one', got {self.eos_weight!r}")
        if self.lambda_cyclic < 0 or self.lambda_style < 0:
            raise ValueError("reward weights must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.score_fn != "bleu":
            raise ValueError(f"unsupported score_fn {self.score_fn!r}")


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped(candidate: Sequence, reference: Sequence, n: int) -> tuple[int, int]:
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    return sum(min(c, ref[g]) for g, c in cand.items()), max(len(candidate) - n + 1, 0)


def _combine(matches: Sequence[int], totals: Sequence[int], cand_len: int, ref_len: int) -> float:
    log_p = 0.0
    for n, (m, t) in enumerate(zip(matches, totals), 1):
        if n == 1:
            if m == 0:
                return 0.0
            log_p += math.log(m / t)
        else:
            log_p += math.log((m + 1) / (t + 1))
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_p / len(matches))


def sentence_bleu(candidate: Sequence, reference: Sequence, n_max: int = 4) -> float:
    """Smoothed sentence BLEU in [0, 1].

    Uses n-gram orders up to ``min(n_max, len(candidate))``; orders n >= 2
    get add-one smoothing. An empty candidate scores 0.
    """
    if not len(reference):
        raise ValueError("reference must be non-empty")
    if not len(candidate):
        return 0.0
    order = min(n_max, len(candidate))
    stats = [_clipped(candidate, reference, n) for n in range(1, order + 1)]
    return _combine([m for m, _ in stats], [t for _, t in stats], len(candidate), len(reference))


def corpus_bleu(candidates: Sequence[Sequence], references: Sequence[Sequence], n_max: int = 4) -> float:
    """Aggregate-count BLEU over aligned candidate/reference lists, in [0, 1]."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    matches = [0] * n_max
    totals = [0] * n_max
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, n_max + 1):
            m, t = _clipped(cand, ref, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if c_len == 0 or totals[0] == 0:
        return 0.0
    return _combine(matches, totals, c_len, r_len)


def cyclic_from_back(x: Sentence, back_sample: Sentence, back_greedy: Sentence) -> float:
    """Self-critical reconstruction reward from two back-translations of x."""
    return sentence_bleu(back_sample.ids, x.ids) - sentence_bleu(back_greedy.ids, x.ids)


def cyclic_reward(
    x: Sentence,
    y_sample: Sentence,
    y_greedy: Sentence,
    back_translate: Callable[[Sequence[Sentence], StyleLabel], Sequence[Sentence]],
    c_back: StyleLabel,
) -> float:
    """``bleu(G(y_sample), x) - bleu(G(y_greedy), x)`` with greedy back-translation to ``c_back``."""
    if y_sample.degenerate or y_greedy.degenerate or not len(y_sample) or not len(y_greedy):
        log.warning("degenerate generation for %r; cyclic reward set to 0", x.surface)
        return 0.0
    back_s, back_g = back_translate([y_sample, y_greedy], c_back)
    return cyclic_from_back(x, back_s, back_g)


def combine_rewards(
    r_cyclic: float,
    r_style: float,
    w: Sequence[float] | None,
    cfg: RewardConfig,
    n: int,
) -> np.ndarray:
    """Per-step rewards R'_t for a generation of ``n`` steps.

    sequence: every step gets ``lc * r_cyclic + ls * (r_style - gamma)``.
    stepwise: the style term is scaled by the step weight ``w_t``; the cyclic
    term stays uniform.
    """
    cyc = cfg.lambda_cyclic * r_cyclic
    if cfg.mode is RewardMode.SEQUENCE:
        return np.full(n, cyc + cfg.lambda_style * (r_style - cfg.gamma))
    if w is None:
        raise ValueError("stepwise mode requires step weights")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"got {w.size} step weights for {n} steps")
    if cfg.penalty_before_weighting:
        style = w * (r_style - cfg.gamma)
    else:
        style = w * r_style - cfg.gamma
    return cyc + cfg.lambda_style * style


def policy_gradient_loss(step_log_probs: torch.Tensor, rewards) -> torch.Tensor:
    """Surrogate ``-(1/n) sum_t R'_t log P_t``; rewards are constants."""
    rewards = torch.as_tensor(np.asarray(rewards, dtype=np.float64), dtype=step_log_probs.dtype)
    if rewards.shape != step_log_probs.shape:
        raise ValueError(f"{tuple(rewards.shape)} rewards for {tuple(step_log_probs.shape)} log-probs")
    if step_log_probs.numel() == 0:
        return step_log_probs.sum() * 0.0
    return -(rewards.detach() * step_log_probs).mean()


def batch_policy_loss(log_probs: torch.Tensor, pad: torch.Tensor, rewards: Sequence[np.ndarray]) -> torch.Tensor:
    """Mean over sequences of :func:`policy_gradient_loss` for padded (B, L) log-probs."""
    r = torch.zeros_like(log_probs)
    for i, row in enumerate(rewards):
        r[i, : len(row)] = torch.as_tensor(row, dtype=log_probs.dtype)
    keep = (~pad).to(log_probs.dtype)
    n = keep.sum(dim=1).clamp_min(1.0)
    per_seq = -(r.detach() * log_probs * keep).sum(dim=1) / n
    return per_seq.mean()
