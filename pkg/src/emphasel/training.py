"""Mini-batched SGD training with padding masks and best-epoch selection.

The per-token loss is the KL divergence of the predicted distribution from
the annotation-derived target; the per-instance loss is its mean over real
(unmasked) tokens and the batch loss the mean over instances. Each epoch
reshuffles instance order deterministically, and after each epoch the dev
split is scored so the best-performing epoch's weights become the returned
checkpoint (ties resolve to the earlier epoch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, target_distribution
from .embio import EmbeddingFile, validate_alignment
from .errors import DataFormatError, NumericError
from .evaluation import MatchReport, match_report
from .model import Checkpoint, EmphasisModel, ModelConfig, backward, build_model, forward, predict_corpus
from .nn import kl_loss, sgd_step
from .rng import SplitMix64, derive


@dataclass(frozen=True)
class Batch:
    """Padded instance group: pad rows are zero vectors with mask False."""

    indices: tuple[int, ...]  # corpus positions, shuffled order
    vectors: np.ndarray  # (B, T, dim) float64
    mask: np.ndarray  # (B, T) bool, True on real tokens (a prefix per row)
    targets: np.ndarray  # (B, T, 2) float64, zeros on pad rows

    @property
    def size(self) -> int:
        return len(self.indices)


def target_matrix(inst) -> np.ndarray:
    return np.asarray(target_distribution(inst), dtype=np.float64)


def make_batches(
    c: Corpus, ef: EmbeddingFile, batch_size: int, seed: int, epoch_index: int
) -> list[Batch]:
    """Shuffle instance order with derive(seed, epoch_index) and group by size.

    The final partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    validate_alignment(c, ef)
    order = SplitMix64(derive(seed, epoch_index)).permutation(len(c))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        lengths = [len(c.instances[i]) for i in chunk]
        width = max(lengths)
        vectors = np.zeros((len(chunk), width, ef.dim))
        mask = np.zeros((len(chunk), width), dtype=bool)
        targets = np.zeros((len(chunk), width, 2))
        for row, (i, n) in enumerate(zip(chunk, lengths)):
            vectors[row, :n] = ef.per_instance[i].astype(np.float64)
            mask[row, :n] = True
            targets[row, :n] = target_matrix(c.instances[i])
        batches.append(Batch(tuple(chunk), vectors, mask, targets))
    return batches


def batch_loss_and_grads(model: EmphasisModel, batch: Batch) -> float:
    """Forward/backward over one batch; returns the batch loss.

    Gradients accumulate on the model parameters and are NOT applied here.
    """
    total = 0.0
    for row in range(batch.size):
        n = int(batch.mask[row].sum())
        probs, cache = forward(model, batch.vectors[row, :n])
        target = batch.targets[row, :n]
        token_losses = kl_loss(target, probs)
        total += float(np.mean(token_losses))
        # d(batch loss)/d(logits): (pred - target) / (tokens * batch size)
        dlogits = (probs - target) / (n * batch.size)
        backward(model, cache, dlogits)
    return total / batch.size


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 1-based
    mean_loss: float  # instance-weighted mean training loss
    dev: MatchReport


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[EpochRecord, ...]

    def serialize(self) -> str:
        lines = []
        for r in self.records:
            scores = " ".join(f"m{m}={s!r}" for m, s in zip((1, 2, 3, 4), r.dev.m_scores))
            lines.append(f"epoch={r.epoch} loss={r.mean_loss!r} {scores} average={r.dev.average!r}")
        return "\n".join(lines) + "\n"

    def best_epoch(self) -> EpochRecord:
        best = self.records[0]
        for r in self.records[1:]:
            if r.dev.average > best.dev.average:
                best = r
        return best


def train(
    cfg: ModelConfig,
    train_data: tuple[Corpus, EmbeddingFile],
    dev_data: tuple[Corpus, EmbeddingFile],
) -> tuple[Checkpoint, TrainHistory]:
    """Full training run; returns the best-epoch checkpoint and the history."""
    train_c, train_ef = train_data
    dev_c, dev_ef = dev_data
    validate_alignment(train_c, train_ef)
    validate_alignment(dev_c, dev_ef)
    if len(train_c) == 0 or len(dev_c) == 0:
        raise DataFormatError("cannot train on an empty corpus")
    for name, ef in (("train", train_ef), ("dev", dev_ef)):
        if ef.dim != cfg.input_dim:
            raise DataFormatError(
                f"{name} embeddings have dim {ef.dim}, config expects {cfg.input_dim}"
            )

    model = build_model(cfg)
    records = []
    best_avg = -1.0
    best_epoch = 0
    best_tensors: dict[str, np.ndarray] = {}

    for epoch in range(1, cfg.epochs + 1):
        loss_sum = 0.0
        for batch_index, batch in enumerate(
            make_batches(train_c, train_ef, cfg.batch_size, cfg.seed, epoch)
        ):
            try:
                loss = batch_loss_and_grads(model, batch)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {batch_index}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericError(f"epoch {epoch} batch {batch_index}: loss is {loss}")
            loss_sum += loss * batch.size
            sgd_step(model.parameters(), cfg.lr, cfg.momentum)
        mean_loss = loss_sum / len(train_c)

        try:
            dev_report = match_report(dev_c, predict_corpus(model, dev_ef))
        except NumericError as exc:
            raise NumericError(f"epoch {epoch} dev evaluation: {exc}") from exc
        records.append(EpochRecord(epoch, mean_loss, dev_report))
        if dev_report.average > best_avg:
            best_avg = dev_report.average
            best_epoch = epoch
            best_tensors = {name: p.value.copy() for name, p in model.named_parameters()}

    ckpt = Checkpoint(cfg, best_tensors, best_epoch, best_avg, train_ef.source_tag)
    return ckpt, TrainHistory(tuple(records))
