"""Tokenization, vocabulary and the sentence/style data model."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
STYLE_S_TOKEN = "<style_s>"
STYLE_T_TOKEN = "<style_t>"
RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, STYLE_S_TOKEN, STYLE_T_TOKEN)

SPLITS = ("train", "valid", "test")


class StyleLabel(enum.Enum):
    S = "S"
    T = "T"

    @property
    def other(self) -> "StyleLabel":
        return StyleLabel.T if self is StyleLabel.S else StyleLabel.S

    @property
    def index(self) -> int:
        """Class index used by the classifier head (S=0, T=1)."""
        return 0 if self is StyleLabel.S else 1

    @classmethod
    def parse(cls, value: "str | StyleLabel") -> "StyleLabel":
        if isinstance(value, StyleLabel):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown style label {value!r}; expected S or T") from None


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization with lowercasing and reserved-form escaping."""
    tokens = text.lower().split()
    return ["\\" + tok if tok in RESERVED_TOKENS else tok for tok in tokens]


@dataclass(frozen=True)
class Vocab:
    id_to_token: tuple[str, ...]
    token_to_id: Mapping[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if tuple(self.id_to_token[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    pad_id = property(lambda self: 0)
    bos_id = property(lambda self: 1)
    eos_id = property(lambda self: 2)
    unk_id = property(lambda self: 3)
    style_s_id = property(lambda self: 4)
    style_t_id = property(lambda self: 5)

    @property
    def reserved_ids(self) -> tuple[int, ...]:
        return tuple(range(len(RESERVED_TOKENS)))

    def style_id(self, style: StyleLabel) -> int:
        return self.style_s_id if style is StyleLabel.S else self.style_t_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def save(self, path: str | Path) -> None:
        header = " ".join(str(v) for v in (len(self), *self.reserved_ids))
        Path(path).write_text(header + "\n" + "\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        size, *reserved = (int(v) for v in lines[0].split())
        if tuple(reserved) != tuple(range(len(RESERVED_TOKENS))):
            raise ValueError(f"{path}: unexpected reserved ids {reserved}")
        tokens = tuple(lines[1 : 1 + size])
        if len(tokens) != size:
            raise ValueError(f"{path}: header says {size} tokens, found {len(tokens)}")
        return cls(tokens)


def build_vocab(lines: Iterable[str | Sequence[str]], min_freq: int = 1) -> Vocab:
    """Build a vocabulary ordered by (frequency desc, token asc).

    ``lines`` may hold raw strings (tokenized with :func:`tokenize`) or
    already-split token lists.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        toks = tokenize(line) if isinstance(line, str) else list(line)
        counts.update(toks)
        n_lines += 1
    if n_lines == 0 or not counts:
        raise ValueError("cannot build a vocabulary from empty input")
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(RESERVED_TOKENS + tuple(kept))


@dataclass(frozen=True)
class Sentence:
    ids: tuple[int, ...]
    style: StyleLabel
    surface: str
    degenerate: bool = False

    def __post_init__(self):
        if not self.ids and not self.degenerate:
            raise ValueError("non-degenerate sentence must have at least one token")

    def __len__(self) -> int:
        return len(self.ids)

    def with_style(self, style: StyleLabel) -> "Sentence":
        return Sentence(self.ids, style, self.surface, self.degenerate)


def encode_sentence(text: str, vocab: Vocab, style: StyleLabel | str) -> Sentence:
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("cannot encode an empty sentence")
    return Sentence(tuple(vocab.lookup(t) for t in tokens), StyleLabel.parse(style), " ".join(tokens))


_STRIPPED = frozenset((0, 1, 2))  # PAD, BOS, EOS


def decode_ids(ids: Iterable[int], vocab: Vocab) -> str:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} out of range for vocabulary of size {len(vocab)}")
        if i not in _STRIPPED:
            out.append(vocab.id_to_token[i])
    return " ".join(out)


def decode_sentence(sentence: Sentence | Sequence[int], vocab: Vocab) -> str:
    ids = sentence.ids if isinstance(sentence, Sentence) else sentence
    return decode_ids(ids, vocab)


def sentence_from_ids(ids: Iterable[int], vocab: Vocab, style: StyleLabel) -> Sentence:
    """Wrap generated ids (reserved PAD/BOS/EOS removed) as a Sentence."""
    kept = tuple(int(i) for i in ids if int(i) not in _STRIPPED)
    return Sentence(kept, style, decode_ids(kept, vocab), degenerate=not kept)


@dataclass
class Corpus:
    vocab: Vocab
    splits: dict[str, dict[StyleLabel, list[Sentence]]]

    def get(self, split: str, style: StyleLabel | str) -> list[Sentence]:
        return self.splits.get(split, {}).get(StyleLabel.parse(style), [])

    def train_lines(self) -> list[str]:
        return [s.surface for style in StyleLabel for s in self.get("train", style)]


def read_lines(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    raw = path.read_bytes().decode("utf-8")
    lines = [ln for ln in raw.replace("\r\n", "\n").replace("\r", "\n").split("\n") if ln.strip()]
    if not lines:
        raise ValueError(f"corpus file is empty: {path}")
    return lines


def load_corpus(
    paths: Mapping[str, Mapping[str | StyleLabel, str | Path]],
    vocab: Vocab | None = None,
    min_freq: int = 1,
) -> Corpus:
    """Load ``{split: {style: path}}`` files into a Corpus.

    When ``vocab`` is omitted it is built from the train split.
    """
    raw: dict[str, dict[StyleLabel, list[str]]] = {}
    for split, per_style in paths.items():
        raw[split] = {StyleLabel.parse(st): read_lines(p) for st, p in per_style.items()}
    if vocab is None:
        source = raw.get("train") or next(iter(raw.values()))
        vocab = build_vocab([ln for lines in source.values() for ln in lines], min_freq)
    splits = {
        split: {st: [encode_sentence(ln, vocab, st) for ln in lines] for st, lines in per_style.items()}
        for split, per_style in raw.items()
    }
    return Corpus(vocab, splits)


def corpus_paths(directory: str | Path, splits: Sequence[str] = SPLITS) -> dict[str, dict[StyleLabel, Path]]:
    """Conventional layout: ``<dir>/<split>.<s|t>.txt`` for every split present."""
    directory = Path(directory)
    out: dict[str, dict[StyleLabel, Path]] = {}
    for split in splits:
        per = {st: directory / f"{split}.{st.value.lower()}.txt" for st in StyleLabel}
        if all(p.exists() for p in per.values()):
            out[split] = per
    if "train" not in out:
        raise FileNotFoundError(f"no train.s.txt/train.t.txt pair in {directory}")
    return out
