"""Pseudo-parallel pair construction from two non-parallel styled corpora.

Two strategies are provided:

* lexical: mine attribute-marker n-grams by smoothed frequency ratio, strip
  them from every sentence, and match the remaining content spans by
  token-level Levenshtein distance;
* semantic: embed whole sentences (TF-IDF by default) and match by cosine,
  optionally dropping targets a style classifier confidently places in the
  wrong style.
"""

from __future__ import annotations

import csv
import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from .textcore import Sentence, StyleLabel, Vocab, encode_sentence

log = logging.getLogger(__name__)

NGram = tuple[int, ...]


class Method(str, enum.Enum):
    LEXICAL = "lexical"
    SEMANTIC = "semantic"


@dataclass
class MarkerTable:
    markers: dict[StyleLabel, dict[NGram, float]]
    n_max: int
    ratio_threshold: float

    def for_style(self, style: StyleLabel) -> dict[NGram, float]:
        return self.markers.get(style, {})

    def __len__(self) -> int:
        return sum(len(v) for v in self.markers.values())

    def to_rows(self, vocab: Vocab) -> list[tuple[str, str, float]]:
        rows = []
        for style in StyleLabel:
            items = sorted(self.for_style(style).items(), key=lambda kv: (-kv[1], kv[0]))
            rows.extend((style.value, " ".join(vocab.id_to_token[i] for i in ng), r) for ng, r in items)
        return rows

    def write_tsv(self, path: str | Path, vocab: Vocab) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(("style", "ngram", "ratio"))
            for style, ngram, ratio in self.to_rows(vocab):
                w.writerow((style, ngram, f"{ratio:.6g}"))


@dataclass(frozen=True)
class ContentSpan:
    owner: Sentence
    kept_ids: tuple[int, ...]
    removed_spans: tuple[tuple[int, int], ...] = ()

    @property
    def degenerate(self) -> bool:
        return not self.kept_ids


@dataclass(frozen=True)
class PseudoPair:
    source: Sentence
    target: Sentence
    similarity: float
    method: Method = Method.LEXICAL

    def __post_init__(self):
        if self.source.style is self.target.style:
            raise ValueError("pseudo pair must join opposite styles")

    def swapped(self) -> "PseudoPair":
        return PseudoPair(self.target, self.source, self.similarity, self.method)


def _count_ngrams(sentences: Sequence[Sentence], n_max: int) -> Counter[NGram]:
    counts: Counter[NGram] = Counter()
    for s in sentences:
        ids = s.ids
        for n in range(1, n_max + 1):
            counts.update(tuple(ids[i : i + n]) for i in range(len(ids) - n + 1))
    return counts


def mine_markers(
    corpus_S: Sequence[Sentence],
    corpus_T: Sequence[Sentence],
    n_max: int = 4,
    ratio_threshold: float = 5.0,
    smoothing: float = 1.0,
) -> MarkerTable:
    """Find n-grams far more frequent in one style than the other.

    An n-gram ``u`` is a marker for style ``v`` when
    ``(count(u, D_v) + smoothing) / (count(u, D_other) + smoothing)``
    reaches ``ratio_threshold``. Equal ratios never produce a marker.
    """
    if not corpus_S or not corpus_T:
        raise ValueError("both corpora must be non-empty")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    counts = {StyleLabel.S: _count_ngrams(corpus_S, n_max), StyleLabel.T: _count_ngrams(corpus_T, n_max)}
    table: dict[StyleLabel, dict[NGram, float]] = {StyleLabel.S: {}, StyleLabel.T: {}}
    for u in counts[StyleLabel.S].keys() | counts[StyleLabel.T].keys():
        cs = counts[StyleLabel.S][u] + smoothing
        ct = counts[StyleLabel.T][u] + smoothing
        if cs > ct and cs / ct >= ratio_threshold:
            table[StyleLabel.S][u] = cs / ct
        elif ct > cs and ct / cs >= ratio_threshold:
            table[StyleLabel.T][u] = ct / cs
    return MarkerTable(table, n_max, ratio_threshold)


def extract_content(sentence: Sentence, markers: MarkerTable) -> ContentSpan:
    """Delete the sentence's own-style markers, longest n-grams first."""
    own = markers.for_style(sentence.style)
    ids = sentence.ids
    removed = [False] * len(ids)
    spans = []
    for n in range(min(markers.n_max, len(ids)), 0, -1):
        i = 0
        while i + n <= len(ids):
            if not any(removed[i : i + n]) and tuple(ids[i : i + n]) in own:
                removed[i : i + n] = [True] * n
                spans.append((i, i + n))
                i += n
            else:
                i += 1
    kept = tuple(t for t, r in zip(ids, removed) if not r)
    return ContentSpan(sentence, kept, tuple(sorted(spans)))


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Token-level edit distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, 1):
        cur = [i]
        for j, tb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ta != tb)))
        prev = cur
    return prev[-1]


class _PaddedTargets:
    """Targets packed into a padded matrix for batched edit distance."""

    def __init__(self, seqs: Sequence[Sequence[int]]):
        self.lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        width = int(self.lengths.max()) if len(seqs) else 0
        self.tokens = np.full((len(seqs), width), -1, dtype=np.int64)
        for k, s in enumerate(seqs):
            self.tokens[k, : len(s)] = s

    def distances(self, a: Sequence[int]) -> np.ndarray:
        """Edit distance from ``a`` to every target, vectorized over targets."""
        n, width = self.tokens.shape
        prev = np.broadcast_to(np.arange(width + 1), (n, width + 1)).copy()
        for i, ta in enumerate(a, 1):
            sub = prev[:, :-1] + (self.tokens != ta)
            cur = np.empty_like(prev)
            cur[:, 0] = i
            diag_or_up = np.minimum(sub, prev[:, 1:] + 1)
            for j in range(1, width + 1):
                cur[:, j] = np.minimum(diag_or_up[:, j - 1], cur[:, j - 1] + 1)
            prev = cur
        return prev[np.arange(n), self.lengths]


def match_lexical(spans_S: Sequence[ContentSpan], spans_T: Sequence[ContentSpan]) -> list[PseudoPair]:
    """Pair each source span with its nearest target span (lowest index on ties)."""
    spans_T = [s for s in spans_T if not s.degenerate]
    if not spans_T:
        raise ValueError("no non-degenerate target spans to match against")
    targets = _PaddedTargets([s.kept_ids for s in spans_T])
    pairs = []
    for span in spans_S:
        if span.degenerate:
            continue
        d = targets.distances(span.kept_ids)
        k = int(np.argmin(d))
        pairs.append(PseudoPair(span.owner, spans_T[k].owner, int(d[k]), Method.LEXICAL))
    return pairs


class Embedder(Protocol):
    def fit(self, sentences: Sequence[Sentence]) -> "Embedder": ...

    def transform(self, sentences: Sequence[Sentence]) -> np.ndarray: ...


def _sentence_tokens(s: Sentence) -> list[str]:
    return [str(i) for i in s.ids]


@dataclass
class TfidfEmbedder:
    """Unigram TF-IDF vectors (smoothed idf, L2-normalized rows)."""

    _vectorizer: TfidfVectorizer | None = field(default=None, repr=False)

    def fit(self, sentences: Sequence[Sentence]) -> "TfidfEmbedder":
        self._vectorizer = TfidfVectorizer(analyzer=_sentence_tokens, norm="l2", smooth_idf=True)
        self._vectorizer.fit(list(sentences))
        return self

    @property
    def fitted(self) -> bool:
        return self._vectorizer is not None

    def transform(self, sentences: Sequence[Sentence]) -> np.ndarray:
        if self._vectorizer is None:
            raise RuntimeError("embedder is not fitted")
        return self._vectorizer.transform(list(sentences)).toarray()


def embed(sentence: Sentence, embedder: Embedder) -> np.ndarray:
    return embedder.transform([sentence])[0]


def match_semantic(
    corpus_S: Sequence[Sentence],
    corpus_T: Sequence[Sentence],
    embedder: Embedder,
    classifier=None,
    conf_threshold: float = 0.9,
    chunk: int = 512,
) -> list[PseudoPair]:
    """Pair each source sentence with its highest-cosine target.

    ``classifier`` (optional) needs ``predict_proba(sentences) -> (n, 2)``
    with columns ordered (S, T); a pair is dropped when the target is
    assigned to the wrong style with probability >= ``conf_threshold``.
    """
    if not corpus_T:
        raise ValueError("target corpus is empty")
    if not corpus_S:
        return []
    et = embedder.transform(corpus_T)
    wrong = np.zeros(len(corpus_T), dtype=bool)
    if classifier is not None:
        proba = np.asarray(classifier.predict_proba(list(corpus_T)))
        for k, t in enumerate(corpus_T):
            wrong[k] = proba[k, t.style.other.index] >= conf_threshold
    pairs = []
    for start in range(0, len(corpus_S), chunk):
        block = list(corpus_S[start : start + chunk])
        sims = embedder.transform(block) @ et.T
        best = np.argmax(sims, axis=1)
        for row, (src, k) in enumerate(zip(block, best)):
            if wrong[k]:
                continue
            pairs.append(PseudoPair(src, corpus_T[k], float(sims[row, k]), Method.SEMANTIC))
    dropped = int(wrong.sum())
    if dropped:
        log.info("classifier flagged %d of %d target sentences as mislabeled", dropped, len(corpus_T))
    return pairs


DEFAULT_LEXICAL_MAX_DISTANCE = 6.0
DEFAULT_SEMANTIC_MIN_COSINE = 0.5


def filter_pairs(
    pairs: Sequence[PseudoPair],
    min_len: int = 5,
    lexical_max_distance: float = DEFAULT_LEXICAL_MAX_DISTANCE,
    semantic_min_cosine: float = DEFAULT_SEMANTIC_MIN_COSINE,
) -> list[PseudoPair]:
    """Drop short sentences and weakly matched pairs, preserving order."""
    out = []
    for p in pairs:
        if len(p.source) < min_len or len(p.target) < min_len:
            continue
        if p.method is Method.LEXICAL and p.similarity > lexical_max_distance:
            continue
        if p.method is Method.SEMANTIC and p.similarity < semantic_min_cosine:
            continue
        out.append(p)
    return out


def select_pairs(pairs: Sequence[PseudoPair], count: int) -> list[PseudoPair]:
    """The ``count`` best-matched pairs, source order kept among equals."""
    if count <= 0:
        return []

    def key(ip):
        i, p = ip
        return (p.similarity if p.method is Method.LEXICAL else -p.similarity, i)

    chosen = sorted(enumerate(pairs), key=key)[:count]
    return [p for _, p in sorted(chosen, key=lambda ip: ip[0])]


PAIR_COLUMNS = ("source_style", "source_text", "target_text", "method", "similarity")


def write_pairs_tsv(pairs: Sequence[PseudoPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(PAIR_COLUMNS)
        for p in pairs:
            sim = str(int(p.similarity)) if p.method is Method.LEXICAL else f"{p.similarity:.6f}"
            w.writerow((p.source.style.value, p.source.surface, p.target.surface, p.method.value, sim))


def read_pairs_tsv(path: str | Path, vocab: Vocab) -> list[PseudoPair]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"pair file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != PAIR_COLUMNS:
            raise ValueError(f"{path}: expected columns {PAIR_COLUMNS}, got {reader.fieldnames}")
        pairs = []
        for row in reader:
            style = StyleLabel.parse(row["source_style"])
            pairs.append(
                PseudoPair(
                    encode_sentence(row["source_text"], vocab, style),
                    encode_sentence(row["target_text"], vocab, style.other),
                    float(row["similarity"]),
                    Method(row["method"]),
                )
            )
    return pairs


@dataclass
class MinerConfig:
    method: Method = Method.LEXICAL
    n_max: int = 4
    ratio_threshold: float = 5.0
    smoothing: float = 1.0
    min_len: int = 5
    lexical_max_distance: float = DEFAULT_LEXICAL_MAX_DISTANCE
    semantic_min_cosine: float = DEFAULT_SEMANTIC_MIN_COSINE
    conf_threshold: float = 0.9

    def __post_init__(self):
        self.method = Method(self.method)


def mine_pairs(
    corpus_S: Sequence[Sentence],
    corpus_T: Sequence[Sentence],
    cfg: MinerConfig | None = None,
    classifier=None,
    embedder: Embedder | None = None,
) -> tuple[list[PseudoPair], MarkerTable | None]:
    """Mine and filter S->T pseudo pairs with the configured strategy."""
    cfg = cfg or MinerConfig()
    markers = None
    if cfg.method is Method.LEXICAL:
        markers = mine_markers(corpus_S, corpus_T, cfg.n_max, cfg.ratio_threshold, cfg.smoothing)
        spans_S = [extract_content(s, markers) for s in corpus_S]
        spans_T = [extract_content(t, markers) for t in corpus_T]
        pairs = match_lexical(spans_S, spans_T)
    else:
        embedder = embedder or TfidfEmbedder().fit(list(corpus_S) + list(corpus_T))
        pairs = match_semantic(corpus_S, corpus_T, embedder, classifier, cfg.conf_threshold)
    kept = filter_pairs(pairs, cfg.min_len, cfg.lexical_max_distance, cfg.semantic_min_cosine)
    log.info("mined %d %s pairs, %d after filtering", len(pairs), cfg.method.value, len(kept))
    return kept, markers
