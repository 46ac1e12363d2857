"""Style accuracy, BLEU and their geometric/harmonic composites."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .rewards import corpus_bleu
from .textcore import Sentence, StyleLabel


def compute_means(accuracy: float, bleu: float) -> tuple[float, float]:
    """(G2, H2) of two percentages; both are 0 when either input is 0."""
    for v in (accuracy, bleu):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"percentage out of range: {v}")
    if accuracy == 0 or bleu == 0:
        return 0.0, 0.0
    return math.sqrt(accuracy * bleu), 2 * accuracy * bleu / (accuracy + bleu)


@dataclass
class EvalReport:
    accuracy: float
    bleu: float
    g2: float
    h2: float
    n_sentences: int
    self_bleu: bool = False  # True when BLEU was measured against the inputs

    @classmethod
    def from_scores(cls, accuracy: float, bleu: float, n: int, self_bleu: bool = False) -> "EvalReport":
        g2, h2 = compute_means(accuracy, bleu)
        return cls(accuracy, bleu, g2, h2, n, self_bleu)

    def csv_row(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ("accuracy", "self_bleu" if self.self_bleu else "bleu", "g2", "h2", "n_sentences")
        if header:
            w.writerow(cols)
        w.writerow((f"{self.accuracy:.4f}", f"{self.bleu:.4f}", f"{self.g2:.4f}", f"{self.h2:.4f}", self.n_sentences))
        return buf.getvalue()

    def table(self) -> str:
        name = "Self-BLEU" if self.self_bleu else "BLEU"
        return (
            f"{'Accuracy':>9} {name:>9} {'G2':>6} {'H2':>6} {'N':>6}\n"
            f"{self.accuracy:9.1f} {self.bleu:9.1f} {self.g2:6.1f} {self.h2:6.1f} {self.n_sentences:6d}"
        )

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(
    outputs: Sequence[Sentence],
    references: Sequence[Sentence] | None,
    target_style: StyleLabel | Sequence[StyleLabel],
    eval_classifier,
    inputs: Sequence[Sentence] | None = None,
) -> EvalReport:
    """Accuracy (held-out classifier) and corpus BLEU, both as percentages.

    Without references, BLEU is measured against ``inputs`` and the report is
    flagged as self-BLEU.
    """
    if not outputs:
        raise ValueError("no outputs to evaluate")
    targets = [target_style] * len(outputs) if isinstance(target_style, StyleLabel) else list(target_style)
    if len(targets) != len(outputs):
        raise ValueError("one target style per output required")
    self_bleu = references is None
    refs = inputs if self_bleu else references
    if refs is None:
        raise ValueError("either references or inputs are required for BLEU")
    if len(refs) != len(outputs):
        raise ValueError(f"misaligned references: {len(outputs)} outputs vs {len(refs)} references")
    scored = [i for i, o in enumerate(outputs) if len(o)]
    proba = eval_classifier.predict_proba([outputs[i] for i in scored]) if scored else []
    hits = sum(1 for j, i in enumerate(scored) if proba[j, targets[i].index] > 0.5)
    accuracy = 100.0 * hits / len(outputs)
    bleu = 100.0 * corpus_bleu([o.ids for o in outputs], [r.ids for r in refs])
    return EvalReport.from_scores(accuracy, bleu, len(outputs), self_bleu)
