"""Training: positive query-answer pairs, full-softmax cross-entropy, Adam.

For every training record, each train-layer answer entity yields one
(query, answer) pair. A batch scores each query embedding against *all*
entities (no negative sampling); the loss is the mean negative log of the
softmax probability of the paired answer. Gradients flow into the encoder,
the input-token rows, and the answer-entity rows of the shared table.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .encoders import QueryModel, new_model
from .linearize import Vocabulary
from .rng import make_rng
from .sampler import Dataset

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss exploded (divergence guard tripped); carries the loss history."""

    def __init__(self, history):
        super().__init__(
            f"training diverged: loss exceeded 10x the initial value for 3 consecutive "
            f"epochs (last losses: {[round(h['loss'], 4) for h in history[-3:]]})"
        )
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "LSTM"
    d: int = 64
    layers: int = 2
    heads: int = 4
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    seed: int = 0
    precision: str = "double"
    max_len: int = 64
    rpe_clip: int = 16
    eval_every: int = 0  # epochs between validation-swap evaluations; 0 = off

    def __post_init__(self):
        if self.batch_size <= 0 or self.d <= 0 or self.epochs < 0:
            raise ValueError("sizes must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_mapping(mapping: dict) -> TrainConfig:
    """Build a TrainConfig from string-valued keys, coercing field types."""
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    for key, value in mapping.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        target = fields[key].type
        if isinstance(value, str):
            if target == "int":
                value = int(value)
            elif target == "float":
                value = float(value)
        kwargs[key] = value
    return TrainConfig(**kwargs)


def parse_config_file(path) -> dict:
    """Line-oriented ``key = value`` config; '#' starts a comment."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


@dataclass
class Pair:
    query: object  # prepared representation (token list or graph)
    target: int
    type_formula: str


def make_pairs(dataset: Dataset, model: QueryModel) -> tuple[list[Pair], int]:
    """One pair per (query, train-answer) combination, in record order.

    Records with an empty train answer set are skipped; the count of skipped
    records is returned alongside the pairs.
    """
    pairs: list[Pair] = []
    skipped = 0
    for record in dataset.iter_records():
        if not record.train_answers:
            skipped += 1
            continue
        prepared = model.prepare([record.query])[0]
        for v in sorted(record.train_answers):
            pairs.append(Pair(prepared, v, record.type_formula))
    if skipped:
        logger.info("make_pairs: skipped %d records with empty train answer sets", skipped)
    return pairs, skipped


def loss_and_grads(model: QueryModel, batch: list[Pair]):
    """Full-softmax cross-entropy over a batch of pairs.

    Returns ``(loss, grads, diagnostics)``; diagnostics carry the per-row
    softmax mass (should be 1 within float tolerance) for invariant checks.
    """
    queries = [p.query for p in batch]
    targets = np.array([p.target for p in batch], dtype=np.int64)
    Q, cache = model.encode(queries)  # (B, d)
    E = model.table.entity_rows  # (V, d)
    scores = Q @ E.T  # (B, V)
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    Z = exp.sum(axis=1, keepdims=True)
    probs = exp / Z
    B = len(batch)
    log_p = shifted[np.arange(B), targets] - np.log(Z[:, 0])
    loss = float(-np.mean(log_p))
    if not np.isfinite(loss):
        raise TrainingDivergedError([{"loss": loss}])

    d_scores = probs.copy()
    d_scores[np.arange(B), targets] -= 1.0
    d_scores /= B
    dQ = d_scores @ E
    grads = model.backward(cache, dQ)
    # score-side gradient for the (tied) entity rows
    grads["table"][model.vocab.entity_offset :] += d_scores.T @ Q
    diagnostics = {"prob_sums": probs.sum(axis=1)}
    return loss, grads, diagnostics


class Adam:
    """Adam with bias correction; parameters updated in place in name order."""

    def __init__(self, params: dict[str, np.ndarray], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.step_count += 1
        t = self.step_count
        for name in sorted(params):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Checkpoint:
    model: QueryModel
    config: TrainConfig
    moments: Adam
    step: int
    history: list = field(default_factory=list)

    def save(self, path):
        extra_tensors = {}
        for name, arr in self.moments.m.items():
            extra_tensors[f"adam.m.{name}"] = arr
        for name, arr in self.moments.v.items():
            extra_tensors[f"adam.v.{name}"] = arr
        self.model.save(
            path,
            extra_meta={"train_config": self.config.to_dict(), "step": self.step},
            extra_tensors=extra_tensors,
        )

    @staticmethod
    def load(path) -> "Checkpoint":
        model, meta, leftover = QueryModel.load(path)
        config = config_from_mapping(meta.get("train_config", {}))
        adam = Adam(
            model.parameters(),
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
        for name, arr in leftover.items():
            if name.startswith("adam.m."):
                adam.m[name[7:]] = arr
            elif name.startswith("adam.v."):
                adam.v[name[7:]] = arr
        adam.step_count = meta.get("step", 0)
        return Checkpoint(model, config, adam, meta.get("step", 0))


def _batches(pairs: list[Pair], order: np.ndarray, batch_size: int, group_types: bool):
    """Slice a shuffled pair list into batches.

    Tree encoders get batches grouped by query type so tree shapes align
    within a batch; sequence encoders just take consecutive slices.
    """
    shuffled = [pairs[i] for i in order]
    if not group_types:
        for i in range(0, len(shuffled), batch_size):
            yield shuffled[i : i + batch_size]
        return
    groups: dict[str, list[Pair]] = {}
    for p in shuffled:
        groups.setdefault(p.type_formula, []).append(p)
    for formula in sorted(groups):
        group = groups[formula]
        for i in range(0, len(group), batch_size):
            yield group[i : i + batch_size]


def _diverged(history: list[dict]) -> bool:
    if len(history) < 3:
        return False
    initial = history[0]["loss"]
    return all(h["loss"] > 10.0 * initial for h in history[-3:])


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    vocab: Vocabulary,
    eval_fn: Callable[[QueryModel], float] | None = None,
) -> Checkpoint:
    """Optimize a fresh model on the dataset's train-layer pairs.

    Deterministic given the seed: initialization, per-epoch shuffles, and
    the fixed parameter-update order all derive from it. ``eval_fn``, when
    given together with ``cfg.eval_every``, is called periodically (the
    validation-swap metric hook) and its value lands in the history log.
    """
    model = new_model(
        vocab,
        cfg.arch,
        cfg.d,
        cfg.seed,
        layers=cfg.layers,
        heads=cfg.heads,
        max_len=cfg.max_len,
        rpe_clip=cfg.rpe_clip,
        dtype=cfg.dtype,
    )
    params = model.parameters()
    adam = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    pairs, _ = make_pairs(dataset, model)
    history: list[dict] = []
    ckpt = Checkpoint(model, cfg, adam, 0, history)
    if not pairs or cfg.epochs == 0:
        return ckpt

    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, 1, epoch).permutation(len(pairs))
        losses = []
        for batch in _batches(pairs, order, cfg.batch_size, model.is_tree):
            loss, grads, _ = loss_and_grads(model, batch)
            adam.step(params, grads)
            losses.append(loss)
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if eval_fn is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            entry["val_swap_mrr"] = float(eval_fn(model))
        history.append(entry)
        if _diverged(history):
            raise TrainingDivergedError(history)
    ckpt.step = adam.step_count
    return ckpt
