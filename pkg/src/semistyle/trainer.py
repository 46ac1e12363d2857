"""Classifier pre-training, MLE bootstrapping and the RL refinement loop."""

from __future__ import annotations

import copy
import csv
import dataclasses
import enum
import hashlib
import json
import logging
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .evalsuite import EvalReport, evaluate
from .generator import (
    DecodeConfig,
    DecodeMode,
    Example,
    Generator,
    decode_batch,
    mle_loss,
    pairs_to_examples,
    score_tokens,
    transfer,
)
from .neuralcore import TransformerConfig, load_tensors, save_tensors
from .pairminer import MinerConfig, PseudoPair, select_pairs
from .rewards import RewardConfig, RewardMode, batch_policy_loss, combine_rewards, cyclic_from_back
from .styleclf import StyleClassifier, score_with_salience, train_classifier
from .textcore import Corpus, Sentence, StyleLabel, Vocab

log = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 0.2
EVAL_SEED_OFFSET = 7919


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 32
    lr_bootstrap: float = 1e-3
    lr_rl: float = 1e-4
    lr_classifier: float = 1e-3
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    classifier_epochs: int = 3
    bootstrap_epochs: int = 40
    rl_steps: int = 500
    bootstrap_pair_count: int = 200
    smoothing: float = 0.15
    mle_weight: float = 0.0
    val_interval: int = 100
    layer_set: str = ""  # comma-separated layer indices; empty means top-2
    salience_norm: str = "none"
    model: TransformerConfig = field(default_factory=TransformerConfig)
    classifier: TransformerConfig = field(default_factory=TransformerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    valid_decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(mode=DecodeMode.GREEDY))
    miner: MinerConfig = field(default_factory=MinerConfig)

    def __post_init__(self):
        for name in ("batch_size", "classifier_epochs", "val_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("rl_steps", "bootstrap_epochs", "bootstrap_pair_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def layers(self) -> tuple[int, ...] | None:
        if not self.layer_set.strip():
            return None
        return tuple(int(v) for v in self.layer_set.split(","))

    def flat(self) -> dict[str, object]:
        return _flatten(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps({k: _plain(v) for k, v in self.flat().items()}, sort_keys=True).encode()).hexdigest()[:16]

    def write(self, path: str | Path) -> None:
        lines = [f"{k} = {_plain(v)}" for k, v in self.flat().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "TrainConfig":
        values: dict[str, str] = {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        values.update(overrides or {})
        return cls.from_flat(values)

    @classmethod
    def from_flat(cls, values: dict[str, str]) -> "TrainConfig":
        return _build(cls, values, "")


def _plain(v):
    return v.value if isinstance(v, enum.Enum) else v


def _flatten(obj, prefix: str = "") -> dict[str, object]:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out.update(_flatten(v, f"{prefix}{f.name}."))
        else:
            out[prefix + f.name] = v
    return out


def _parse(tp, raw: str, key: str):
    try:
        if tp is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp in (int, float, str):
            return tp(raw)
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(raw)
    except ValueError:
        raise ValueError(f"bad value {raw!r} for config key '{key}'") from None
    raise TypeError(f"unsupported config type {tp} for '{key}'")


def _build(cls, values: dict[str, str], prefix: str):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    known = set()
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            sub = {k: v for k, v in values.items() if k.startswith(key + ".")}
            known.update(sub)
            kwargs[f.name] = _build(tp, sub, key + ".")
        elif key in values:
            known.add(key)
            kwargs[f.name] = _parse(tp, values[key], key)
    unknown = sorted(set(values) - known)
    if unknown:
        raise KeyError(f"unknown config key '{unknown[0]}'")
    return cls(**kwargs)


@dataclass
class Checkpoint:
    generator: dict[str, torch.Tensor]
    optimizer: dict
    step: int
    metrics: dict
    config_hash: str

    @classmethod
    def capture(cls, gen: Generator, optim: torch.optim.Optimizer | None, step: int, metrics: dict, cfg: TrainConfig) -> "Checkpoint":
        return cls(
            {k: v.detach().clone() for k, v in gen.state_dict().items()},
            copy.deepcopy(optim.state_dict()) if optim is not None else {},
            step,
            dict(metrics),
            cfg.digest(),
        )

    def save(self, path: str | Path) -> None:
        tensors = {f"generator.{k}": v for k, v in self.generator.items()}
        groups = self.optimizer.get("param_groups", [])
        for pid, state in self.optimizer.get("state", {}).items():
            for key, value in state.items():
                tensors[f"optim.{pid}.{key}"] = torch.as_tensor(value)
        meta = {"kind": "checkpoint", "step": self.step, "metrics": self.metrics, "config_hash": self.config_hash, "param_groups": groups}
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        tensors, meta = load_tensors(path)
        gen = {k[len("generator.") :]: v for k, v in tensors.items() if k.startswith("generator.")}
        state: dict[int, dict] = {}
        for k, v in tensors.items():
            if k.startswith("optim."):
                _, pid, key = k.split(".", 2)
                state.setdefault(int(pid), {})[key] = v
        optim = {"state": state, "param_groups": meta["param_groups"]} if meta["param_groups"] else {}
        return cls(gen, optim, meta["step"], meta["metrics"], meta["config_hash"])

    def restore(self, gen: Generator, optim: torch.optim.Optimizer | None = None) -> None:
        gen.load_state_dict(self.generator)
        if optim is not None and self.optimizer:
            optim.load_state_dict(self.optimizer)


def make_optimizer(model: torch.nn.Module, lr: float, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)


def _apply(loss: torch.Tensor, model: torch.nn.Module, optim, clip: float) -> None:
    optim.zero_grad()
    loss.backward()
    if clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
    optim.step()


def bootstrap(
    gen: Generator,
    pairs: Sequence[PseudoPair],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> list[float]:
    """MLE training on pseudo pairs (both directions). Returns per-epoch mean loss."""
    if not pairs:
        raise ValueError("bootstrap needs at least one pseudo pair")
    examples = pairs_to_examples(pairs, bidirectional=True)
    optim = make_optimizer(gen, cfg.lr_bootstrap, cfg)
    rng = torch.Generator().manual_seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    curve = []
    gen.train()
    for epoch in range(cfg.bootstrap_epochs):
        order = torch.randperm(len(examples), generator=rng).tolist()
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            loss = mle_loss(gen, batch, cfg.smoothing)
            _apply(loss, gen, optim, cfg.grad_clip)
            total += loss.item() * len(batch)
        curve.append(total / len(examples))
        if out_dir is not None:
            Checkpoint.capture(gen, optim, epoch + 1, {"loss": curve[-1]}, cfg).save(Path(out_dir) / "bootstrap.ckpt")
    gen.eval()
    log.info("bootstrap: %d examples, loss %.4f -> %.4f", len(examples), curve[0] if curve else float("nan"), curve[-1] if curve else float("nan"))
    return curve


@dataclass
class RLStats:
    r_cyclic: float
    r_style: float
    mean_reward: float
    degenerate: int
    loss: float


def step_weights(w: np.ndarray, ended: bool, eos_weight: str = "mean") -> np.ndarray:
    """Token salience extended to the EOS step, weighted by the mean salience or 1."""
    if not ended:
        return w
    return np.append(w, w.mean() if eos_weight == "mean" and len(w) else 1.0)


def rl_step(
    gen: Generator,
    clf: StyleClassifier,
    optim: torch.optim.Optimizer,
    batch: Sequence[Sentence],
    cfg: TrainConfig,
    rng: torch.Generator,
    mle_batch: Sequence[Example] = (),
) -> RLStats:
    """One self-critical policy-gradient update on a single-style batch."""
    if not clf.frozen:
        raise RuntimeError("reward classifier must be frozen during RL")
    src_style = batch[0].style
    target = src_style.other
    gen.eval()
    greedy = decode_batch(gen, batch, target, DecodeConfig(mode=DecodeMode.GREEDY, extra_len=cfg.decode.extra_len))
    sampled = decode_batch(gen, batch, target, DecodeConfig(mode=DecodeMode.SAMPLE, temperature=1.0, extra_len=cfg.decode.extra_len), rng)
    ok = [i for i in range(len(batch)) if not (sampled[i].sentence.degenerate or greedy[i].sentence.degenerate)]
    back = decode_batch(
        gen,
        [greedy[i].sentence for i in ok] + [sampled[i].sentence for i in ok],
        src_style,
        DecodeConfig(mode=DecodeMode.GREEDY, extra_len=cfg.decode.extra_len),
    )
    r_cyc = np.zeros(len(batch))
    for j, i in enumerate(ok):
        r_cyc[i] = cyclic_from_back(batch[i], back[len(ok) + j].sentence, back[j].sentence)
    samples = [g.sentence for g in sampled]
    r_style, weights = score_with_salience(clf, samples, [target] * len(batch), cfg.layers, cfg.salience_norm)

    keep = [i for i in range(len(batch)) if not sampled[i].sentence.degenerate]
    rewards = []
    for i in keep:
        n = len(sampled[i].log_probs)
        w = step_weights(weights[i], sampled[i].ended, cfg.reward.eos_weight) if cfg.reward.mode is RewardMode.STEPWISE else None
        rewards.append(combine_rewards(r_cyc[i], r_style[i], w, cfg.reward, n))
    loss = torch.zeros((), dtype=gen.dtype)
    if keep:
        logp, pad = score_tokens(
            gen,
            [batch[i] for i in keep],
            [target] * len(keep),
            [sampled[i].tokens for i in keep],
            [sampled[i].ended for i in keep],
        )
        loss = batch_policy_loss(logp, pad, rewards) * (len(keep) / len(batch))
    if cfg.mle_weight > 0 and mle_batch:
        gen.train()
        loss = loss + cfg.mle_weight * mle_loss(gen, mle_batch, cfg.smoothing)
        gen.eval()
    if loss.requires_grad:
        _apply(loss, gen, optim, cfg.grad_clip)
    degenerate = len(batch) - len(keep)
    if degenerate:
        log.debug("%d degenerate samples contributed no gradient", degenerate)
    mean_r = float(np.mean([r.mean() for r in rewards])) if rewards else 0.0
    return RLStats(float(r_cyc.mean()), float(r_style.mean()), mean_r, degenerate, loss.item())


def distinct1(sentences: Sequence[Sentence]) -> float:
    toks = [t for s in sentences for t in s.ids]
    return len(set(toks)) / len(toks) if toks else 0.0


def bidirectional_eval(
    gen: Generator,
    inputs_S: Sequence[Sentence],
    inputs_T: Sequence[Sentence],
    eval_clf: StyleClassifier,
    decode_cfg: DecodeConfig,
) -> tuple[EvalReport, list[Sentence]]:
    """Transfer S->T and T->S, score against the inputs (self-BLEU)."""
    inputs = list(inputs_S) + list(inputs_T)
    targets = [StyleLabel.T] * len(inputs_S) + [StyleLabel.S] * len(inputs_T)
    outputs = transfer(gen, list(inputs_S), StyleLabel.T, decode_cfg) + transfer(gen, list(inputs_T), StyleLabel.S, decode_cfg)
    return evaluate(outputs, None, targets, eval_clf, inputs=inputs), outputs


class BatchStream:
    """Endless seeded reshuffling stream of batches from one sentence list."""

    def __init__(self, sentences: Sequence[Sentence], batch_size: int, rng: torch.Generator):
        self.sentences = list(sentences)
        self.batch_size = min(batch_size, len(self.sentences))
        self.rng = rng
        self.order: list[int] = []

    def next(self) -> list[Sentence]:
        if len(self.order) < self.batch_size:
            self.order += torch.randperm(len(self.sentences), generator=self.rng).tolist()
        chosen, self.order = self.order[: self.batch_size], self.order[self.batch_size :]
        return [self.sentences[i] for i in chosen]


METRIC_COLUMNS = ("step", "acc", "self_bleu", "g2", "h2", "distinct1")


@dataclass
class PipelineResult:
    best: Checkpoint
    generator: Generator
    reward_classifier: StyleClassifier
    eval_classifier: StyleClassifier
    metrics: list[dict]
    bootstrap_curve: list[float]
    test_report: EvalReport | None
    timings: dict[str, float]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def train_classifiers(corpus: Corpus, cfg: TrainConfig) -> tuple[StyleClassifier, StyleClassifier]:
    """Reward classifier (seed) and held-out evaluation classifier (different seed)."""
    S, T = corpus.get("train", StyleLabel.S), corpus.get("train", StyleLabel.T)
    valid = corpus.get("valid", StyleLabel.S) + corpus.get("valid", StyleLabel.T)
    out = []
    for seed in (cfg.seed, cfg.seed + EVAL_SEED_OFFSET):
        clf, report = train_classifier(S, T, cfg.classifier_epochs, seed, cfg.classifier, corpus.vocab, cfg.lr_classifier, cfg.batch_size, valid)
        log.info("classifier seed %d: train acc %.3f valid acc %s", seed, report.train_accuracy, report.valid_accuracy)
        out.append(clf.freeze())
    return out[0], out[1]


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_pipeline(
    cfg: TrainConfig,
    corpus: Corpus,
    pairs: Sequence[PseudoPair],
    out_dir: str | Path | None = None,
    classifiers: tuple[StyleClassifier, StyleClassifier] | None = None,
    init: Checkpoint | None = None,
) -> PipelineResult:
    """classifier -> bootstrap -> RL, keeping the checkpoint with best validation H2.

    ``classifiers`` and ``init`` let callers reuse earlier stages (for
    ablations that branch from one bootstrap checkpoint).
    """
    timings: dict[str, float] = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out / "config.txt")
    t0 = time.perf_counter()
    if classifiers is None:
        classifiers = _stage("classifier", train_classifiers, corpus, cfg)
    reward_clf, eval_clf = classifiers
    timings["classifier"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    gen = Generator(corpus.vocab, cfg.model, cfg.seed)
    chosen = select_pairs(pairs, cfg.bootstrap_pair_count)
    curve: list[float] = []
    if init is not None:
        init.restore(gen)
    elif chosen:
        curve = _stage("bootstrap", bootstrap, gen, chosen, cfg, out)
    timings["bootstrap"] = time.perf_counter() - t0

    valid_S, valid_T = corpus.get("valid", StyleLabel.S), corpus.get("valid", StyleLabel.T)
    if not valid_S or not valid_T:
        valid_S, valid_T = corpus.get("train", StyleLabel.S)[:100], corpus.get("train", StyleLabel.T)[:100]
    metrics: list[dict] = []
    inputs_d1 = distinct1(list(valid_S) + list(valid_T))

    def validate(step: int) -> Checkpoint:
        report, outputs = bidirectional_eval(gen, valid_S, valid_T, eval_clf, cfg.valid_decode)
        d1 = distinct1(outputs) / inputs_d1 if inputs_d1 else 0.0
        row = {"step": step, "acc": report.accuracy, "self_bleu": report.bleu, "g2": report.g2, "h2": report.h2, "distinct1": d1}
        metrics.append(row)
        if d1 < COLLAPSE_THRESHOLD:
            log.warning("possible mode collapse at step %d: relative distinct-1 %.3f", step, d1)
        log.info("valid step %d: acc %.1f self-bleu %.1f h2 %.1f", step, report.accuracy, report.bleu, report.h2)
        return Checkpoint.capture(gen, optim, step, row, cfg)

    t0 = time.perf_counter()
    optim = make_optimizer(gen, cfg.lr_rl, cfg)
    best = None
    if cfg.rl_steps == 0:
        best = validate(0)
    else:
        rng = torch.Generator().manual_seed(cfg.seed)
        torch.manual_seed(cfg.seed)
        streams = {st: BatchStream(corpus.get("train", st), cfg.batch_size, rng) for st in StyleLabel}
        mle_examples = pairs_to_examples(chosen) if cfg.mle_weight > 0 and chosen else []
        trace = []
        for step in range(1, cfg.rl_steps + 1):
            style = StyleLabel.S if step % 2 else StyleLabel.T
            mle_batch = [mle_examples[i] for i in torch.randint(len(mle_examples), (cfg.batch_size,), generator=rng).tolist()] if mle_examples else ()
            stats = _stage("rl", rl_step, gen, reward_clf, optim, streams[style].next(), cfg, rng, mle_batch)
            trace.append((step, stats.r_cyclic, stats.r_style, stats.mean_reward))
            if step % cfg.val_interval == 0 or step == cfg.rl_steps:
                ckpt = validate(step)
                if best is None or ckpt.metrics["h2"] > best.metrics["h2"]:
                    best = ckpt
                    if out is not None:
                        best.save(out / "best.ckpt")
        if out is not None:
            with open(out / "rewards.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("step", "r_cyclic", "r_style", "mean_reward"))
                w.writerows(trace)
    timings["rl"] = time.perf_counter() - t0
    if out is not None:
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            w.writeheader()
            w.writerows(metrics)
        best.save(out / "best.ckpt")

    best.restore(gen)
    test_report = None
    test_S, test_T = corpus.get("test", StyleLabel.S), corpus.get("test", StyleLabel.T)
    if test_S and test_T:
        t0 = time.perf_counter()
        test_report, _ = bidirectional_eval(gen, test_S, test_T, eval_clf, cfg.decode)
        timings["test"] = time.perf_counter() - t0
    return PipelineResult(best, gen, reward_clf, eval_clf, metrics, curve, test_report, timings)
