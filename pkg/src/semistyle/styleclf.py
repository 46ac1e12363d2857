"""Binary style classifier and attention-based token salience.

The classifier reads ``[<bos>] + y`` and classifies from the hidden state of
the leading ``<bos>`` token. Salience for token ``t`` of ``y`` is the
attention that leading token pays to ``t``, max-pooled over heads and then
over the selected layers.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .neuralcore import (
    AttentionStack,
    Encoder,
    TokenEmbedding,
    TransformerConfig,
    init_parameters,
    load_tensors,
    save_tensors,
)
from .textcore import Sentence, StyleLabel, Vocab

log = logging.getLogger(__name__)

SALIENCE_FLOOR = 1e-6
NORMALIZATIONS = ("none", "sum-to-length")


class StyleClassifier(nn.Module):
    def __init__(self, vocab: Vocab, cfg: TransformerConfig, seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg
        self.seed = seed
        self.embed = TokenEmbedding(len(vocab), cfg)
        self.encoder = Encoder(cfg)
        # single logit z, class logits (-z, z): label swaps mirror training exactly
        self.head = nn.Linear(cfg.model_dim, 1)
        init_parameters(self, seed)
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
        self.frozen = False

    def batch(self, sentences: Sequence[Sentence]) -> tuple[torch.Tensor, torch.Tensor]:
        width = max(len(s) for s in sentences) + 1
        if width > self.cfg.max_len:
            raise ValueError(f"sentence length {width - 1} exceeds classifier max_len")
        ids = torch.full((len(sentences), width), self.vocab.pad_id, dtype=torch.long)
        for i, s in enumerate(sentences):
            ids[i, 0] = self.vocab.bos_id
            ids[i, 1 : len(s) + 1] = torch.as_tensor(s.ids, dtype=torch.long)
        return ids, ids == self.vocab.pad_id

    def forward(self, ids: torch.Tensor, pad: torch.Tensor):
        hidden, attns = self.encoder(self.embed(ids), pad)
        z = self.head(hidden[:, 0]).squeeze(-1)
        return torch.stack([-z, z], dim=-1), attns

    def freeze(self) -> "StyleClassifier":
        self.requires_grad_(False)
        self.eval()
        self.frozen = True
        return self

    @torch.no_grad()
    def score(self, sentences: Sequence[Sentence]) -> tuple[np.ndarray, list[AttentionStack]]:
        """Class probabilities (n, 2) ordered (S, T) plus each sentence's AttentionStack."""
        if not sentences:
            return np.zeros((0, 2)), []
        was_training = self.training
        self.eval()
        ids, pad = self.batch(sentences)
        logits, attns = self(ids, pad)
        self.train(was_training)
        proba = torch.softmax(logits.double(), dim=-1).numpy()
        stacks = [AttentionStack.from_attentions(attns, i, len(s) + 1) for i, s in enumerate(sentences)]
        return proba, stacks

    def predict_proba(self, sentences: Sequence[Sentence], batch_size: int = 256) -> np.ndarray:
        parts = [self.score(sentences[i : i + batch_size])[0] for i in range(0, len(sentences), batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, 2))

    def predict(self, sentences: Sequence[Sentence]) -> list[StyleLabel]:
        return [StyleLabel.T if p[1] > p[0] else StyleLabel.S for p in self.predict_proba(sentences)]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        save_tensors(path, dict(self.state_dict()), {"kind": "classifier", "config": vars(self.cfg), "seed": self.seed, **(meta or {})})

    @classmethod
    def load(cls, path: str | Path, vocab: Vocab) -> "StyleClassifier":
        tensors, meta = load_tensors(path)
        model = cls(vocab, TransformerConfig(**meta["config"]), meta.get("seed", 0))
        model.load_state_dict(tensors)
        return model


@dataclass
class ClassifierReport:
    train_accuracy: float
    valid_accuracy: float | None
    losses: list[float] = field(default_factory=list)


def accuracy(clf: StyleClassifier, sentences: Sequence[Sentence]) -> float:
    if not sentences:
        return float("nan")
    pred = clf.predict(sentences)
    return float(np.mean([p is s.style for p, s in zip(pred, sentences)]))


def train_classifier(
    corpus_S: Sequence[Sentence],
    corpus_T: Sequence[Sentence],
    epochs: int = 3,
    seed: int = 0,
    cfg: TransformerConfig | None = None,
    vocab: Vocab | None = None,
    lr: float = 1e-3,
    batch_size: int = 32,
    valid: Sequence[Sentence] = (),
) -> tuple[StyleClassifier, ClassifierReport]:
    """Train with cross-entropy on ``corpus_S`` (label S) vs ``corpus_T`` (label T).

    Examples are put in a canonical order (by surface form) before the seeded
    shuffle, so swapping the corpora yields exactly mirrored training.
    """
    if not corpus_S or not corpus_T:
        raise ValueError("classifier needs sentences of both styles")
    if vocab is None:
        raise ValueError("vocab is required")
    cfg = cfg or TransformerConfig()
    data = [(s, 0) for s in corpus_S] + [(t, 1) for t in corpus_T]
    data.sort(key=lambda d: d[0].surface)
    clf = StyleClassifier(vocab, cfg, seed)
    optim = torch.optim.AdamW(clf.parameters(), lr=lr, weight_decay=0.01)
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    losses = []
    clf.train()
    for _ in range(epochs):
        order = torch.randperm(len(data), generator=gen).tolist()
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = [data[i] for i in order[start : start + batch_size]]
            ids, pad = clf.batch([s for s, _ in chunk])
            labels = torch.tensor([y for _, y in chunk])
            logits, _ = clf(ids, pad)
            loss = nn.functional.cross_entropy(logits, labels)
            optim.zero_grad()
            loss.backward()
            optim.step()
            total += loss.item() * len(chunk)
            count += len(chunk)
        losses.append(total / count)
    clf.eval()
    train_acc = accuracy(clf, [s for s, _ in data])
    valid_acc = accuracy(clf, list(valid)) if valid else None
    log.info("classifier seed=%d train_acc=%.4f valid_acc=%s", seed, train_acc, valid_acc)
    return clf, ClassifierReport(train_acc, valid_acc, losses)


def classify(clf: StyleClassifier, y: Sentence, target: StyleLabel = StyleLabel.T) -> float:
    """Probability that ``y`` carries style ``target``."""
    return float(clf.predict_proba([y])[0, target.index])


def top_layers(n_layers: int, k: int = 2) -> tuple[int, ...]:
    return tuple(range(max(n_layers - k, 0), n_layers))


def salience_from_stack(
    stack: AttentionStack,
    layer_set: Iterable[int] | None = None,
    normalization: str = "none",
) -> np.ndarray:
    """Pool first-token attention: max over heads, then max over ``layer_set``.

    The leading classification position is dropped; the result covers the
    sentence tokens only. Values are kept inside the open interval (0, 1).
    """
    layers = top_layers(stack.layers) if layer_set is None else tuple(sorted(set(layer_set)))
    if not layers:
        raise ValueError("layer_set must be non-empty")
    bad = [l for l in layers if not 0 <= l < stack.layers]
    if bad:
        raise ValueError(f"invalid layer index {bad} for a {stack.layers}-layer stack")
    pooled = stack.rows[list(layers)].max(axis=1).max(axis=0)[1:]
    w = np.clip(pooled, SALIENCE_FLOOR, 1.0 - SALIENCE_FLOOR)
    if normalization == "sum-to-length":
        w = w * (len(w) / w.sum())
    elif normalization != "none":
        raise ValueError(f"unknown salience normalization {normalization!r}; expected one of {NORMALIZATIONS}")
    return w


def salience(clf: StyleClassifier, y: Sentence, layer_set: Iterable[int] | None = None, normalization: str = "none") -> np.ndarray:
    if not len(y):
        return np.zeros(0)
    _, stacks = clf.score([y])
    return salience_from_stack(stacks[0], layer_set, normalization)


def score_with_salience(
    clf: StyleClassifier,
    sentences: Sequence[Sentence],
    targets: Sequence[StyleLabel],
    layer_set: Iterable[int] | None = None,
    normalization: str = "none",
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Target-style probability and salience weights for each non-empty sentence.

    Empty sentences get probability 0 and an empty weight vector.
    """
    probs = np.zeros(len(sentences))
    weights: list[np.ndarray] = [np.zeros(0) for _ in sentences]
    keep = [i for i, s in enumerate(sentences) if len(s)]
    if keep:
        proba, stacks = clf.score([sentences[i] for i in keep])
        for j, i in enumerate(keep):
            probs[i] = proba[j, targets[i].index]
            weights[i] = salience_from_stack(stacks[j], layer_set, normalization)
    return probs, weights
