"""Synthetic styled corpora for smoke runs and acceptance experiments."""

from __future__ import annotations

import random
from pathlib import Path

from .textcore import StyleLabel

NOUNS = ("food", "service", "staff", "place", "pizza", "coffee", "room", "price", "menu", "waiter")
VERBS = ("ordered", "tried", "had", "got", "found")
ADVERBS = ("today", "again", "here", "tonight", "there")
MARKERS = {
    StyleLabel.S: ("awful", "terrible", "rude", "bland", "horrible", "dirty", "slow", "worst"),
    StyleLabel.T: ("great", "amazing", "friendly", "tasty", "wonderful", "clean", "fast", "best"),
}

# N noun, V verb, A adverb, M style marker
TEMPLATES = (
    "the N was M A",
    "the N was M and the N was M",
    "i V the N A and it was M",
    "we V the N and the N was M A",
    "the N at this place is M",
    "they were M with the N A",
    "our N was M and our N was M A",
    "i think the N here is so M",
    "it was M , the N and the N were M A",
    "this N is M A",
    "we V the N A , so M",
    "the N and the N were M",
)


def polarity_sentence(rng: random.Random, style: StyleLabel) -> str:
    slots = {"N": NOUNS, "V": VERBS, "A": ADVERBS, "M": MARKERS[style]}
    return " ".join(rng.choice(slots[w]) if w in slots else w for w in rng.choice(TEMPLATES).split())


def polarity_corpus(seed: int = 0, n_train: int = 2000, n_valid: int = 100, n_test: int = 200) -> dict[str, dict[StyleLabel, list[str]]]:
    """Template sentences (5-12 tokens) with style-disjoint marker words."""
    rng = random.Random(seed)
    sizes = {"train": n_train, "valid": n_valid, "test": n_test}
    return {split: {st: [polarity_sentence(rng, st) for _ in range(n)] for st in StyleLabel} for split, n in sizes.items()}


def marker_injection_corpus(
    n: int = 500,
    seed: int = 0,
    n_content: int = 60,
    n_markers: int = 10,
    min_len: int = 5,
    max_len: int = 10,
) -> tuple[list[str], list[str], list[int]]:
    """Negative/positive sentences sharing content, differing only in injected markers.

    Returns (negatives, shuffled positives, truth) where ``positives[truth[i]]``
    is the counterpart of ``negatives[i]``.
    """
    rng = random.Random(seed)
    content = [f"w{i}" for i in range(n_content)]
    neg_m = [f"neg{i}" for i in range(n_markers)]
    pos_m = [f"pos{i}" for i in range(n_markers)]

    def inject(words, markers):
        out = list(words)
        for _ in range(rng.randint(1, 2)):
            out.insert(rng.randint(0, len(out)), rng.choice(markers))
        return " ".join(out)

    negatives, positives = [], []
    for _ in range(n):
        words = [rng.choice(content) for _ in range(rng.randint(min_len, max_len))]
        negatives.append(inject(words, neg_m))
        positives.append(inject(words, pos_m))
    perm = list(range(n))
    rng.shuffle(perm)
    shuffled = [None] * n
    truth = [0] * n
    for i, j in enumerate(perm):
        shuffled[j] = positives[i]
        truth[i] = j
    return negatives, shuffled, truth


def write_corpus(corpus: dict[str, dict[StyleLabel, list[str]]], directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, per_style in corpus.items():
        for st, lines in per_style.items():
            (directory / f"{split}.{st.value.lower()}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory
