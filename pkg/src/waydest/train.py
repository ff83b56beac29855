"""Many-to-many training with Gradient Dropout.

Every step of a trajectory is trained toward the trajectory's destination.
Gradient Dropout keeps each step's loss with a per-instance probability that
shrinks with the log-scaled length of the instance, so long voyages do not
dominate a batch.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam, Tensor, no_grad
from .nn import functional as F
from .represent import DEFAULT_POISSON_LAMBDA, FeatureScaler, NestedSequence, sample_sequence
from .way import Batch, WayModel, collate

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    lr: float = 1e-4
    dropout: float = 0.3
    gradient_dropout: bool = True
    seed: int = 0
    poisson_lambda: float = DEFAULT_POISSON_LAMBDA
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class StepMask:
    keep: np.ndarray  # (B, N) bool, False on padding
    ratios: np.ndarray  # (B,)

    @property
    def n_kept(self) -> int:
        return int(self.keep.sum())


def step_losses(logits, labels) -> Tensor:
    """Cross entropy of every step against its trajectory's single label.

    ``logits`` is (N, Y) with a scalar label, or (B, N, Y) with B labels.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    squeeze = logits.ndim == 2
    if squeeze:
        logits = logits.reshape(1, *logits.shape)
    B, N, Y = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= Y:
        raise IndexError(f"label outside [0, {Y})")
    onehot = np.zeros((B, 1, Y))
    onehot[np.arange(B), 0, labels] = 1.0
    losses = -F.sum(F.log_softmax(logits, axis=-1) * onehot, axis=-1)
    return losses.reshape(N) if squeeze else losses


def gd_ratios(lengths: Sequence[int]) -> np.ndarray:
    """Per-instance keep probability ``1 + log_{max N}(min N / N_k)``.

    The shortest instance always gets 1. When the shortest instance has a
    single step the formula reaches 0 for the longest one, so ratios are
    floored at ``1 / N_k`` (one expected step per instance).
    """
    n = np.asarray(lengths, dtype=float)
    if n.size == 0:
        return n
    if (n < 1).any():
        raise ValueError("lengths must be >= 1")
    top, low = n.max(), n.min()
    if top == 1 or top == low:
        return np.ones_like(n)
    # log(n / low) is exact for integer ratios, which keeps e.g. {4, 8, 16} exact
    ratios = 1.0 - np.log(n / low) / np.log(top)
    return np.clip(ratios, 1.0 / n, 1.0)


def sample_step_mask(lengths, ratios, rng: np.random.Generator, n_steps: int | None = None) -> StepMask:
    """Keep each real step independently with its instance's ratio.

    If nothing survives, one uniformly chosen real step is kept.
    """
    lengths = np.asarray(lengths, dtype=int)
    ratios = np.asarray(ratios, dtype=float)
    n_steps = int(lengths.max()) if n_steps is None else n_steps
    valid = np.arange(n_steps)[None, :] < lengths[:, None]
    keep = (rng.random((len(lengths), n_steps)) < ratios[:, None]) & valid
    if not keep.any():
        flat = np.flatnonzero(valid)
        keep.flat[flat[rng.integers(len(flat))]] = True
    return StepMask(keep, ratios)


def apply_gd(losses: Sequence[np.ndarray], ratios, rng: np.random.Generator) -> tuple[StepMask, float]:
    """Mask per-instance step losses and average what survives."""
    lengths = [len(l) for l in losses]
    mask = sample_step_mask(lengths, ratios, rng)
    kept = np.concatenate([np.asarray(l, dtype=float)[mask.keep[i, : len(l)]] for i, l in enumerate(losses)])
    return mask, kept.sum() / kept.size


def masked_mean(losses: Tensor, keep: np.ndarray) -> Tensor:
    count = int(keep.sum())
    if count == 0:
        raise ValueError("no steps selected")
    return F.sum(losses * keep.astype(float)) * (1.0 / count)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float | None
    val_accuracy: float | None
    steps: int
    kept_fraction: float
    best: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    history: list[EpochLog] = field(default_factory=list)
    optimizer_steps: int = 0


def iter_batches(seqs, order, size):
    for start in range(0, len(order), size):
        yield [seqs[i] for i in order[start : start + size]]


def make_batch(seqs, rng, scaler, ship_index, lam) -> Batch:
    return collate([sample_sequence(s, rng, scaler, lam) for s in seqs], ship_index)


def evaluate(
    model: WayModel,
    seqs: Sequence[NestedSequence],
    scaler: FeatureScaler,
    ship_index: dict[str, int],
    seed: int,
    lam: float = DEFAULT_POISSON_LAMBDA,
    batch_size: int = 64,
) -> tuple[list[np.ndarray], float | None]:
    """Per-trajectory (N_i, Y) logits and the mean step loss (None without labels).

    Sampling uses a generator seeded with ``seed`` so repeated evaluations agree.
    """
    rng = np.random.default_rng(seed)
    outputs, total, count = [], 0.0, 0
    with no_grad():
        for chunk in iter_batches(seqs, np.arange(len(seqs)), batch_size):
            batch = make_batch(chunk, rng, scaler, ship_index, lam)
            logits = model.forward(batch, training=False)
            for b, n in enumerate(batch.lengths):
                outputs.append(logits.data[b, :n].copy())
            if batch.labels is not None:
                losses = step_losses(logits, batch.labels).data
                total += float(losses[batch.valid].sum())
                count += int(batch.valid.sum())
    return outputs, (total / count if count else None)


def train(
    model: WayModel,
    train_seqs: Sequence[NestedSequence],
    val_seqs: Sequence[NestedSequence] | None,
    scaler: FeatureScaler,
    ship_index: dict[str, int],
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[EpochLog, WayModel], None] | None = None,
) -> TrainResult:
    """Optimise ``model`` in place and return the best-validation state.

    Without a validation set the training loss picks the best epoch.
    """
    if not train_seqs:
        raise ValueError("empty training set")
    if any(s.label is None for s in train_seqs):
        raise ValueError("every training sequence needs a destination label")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.lr)
    best_state = model.state_dict()
    best_loss, best_epoch = math.inf, 0
    history = []
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_seqs))
        total, n_batches, kept, real = 0.0, 0, 0, 0
        for chunk in iter_batches(train_seqs, order, config.batch_size):
            batch = make_batch(chunk, rng, scaler, ship_index, config.poisson_lambda)
            logits = model.forward(batch, training=True, rng=rng)
            losses = step_losses(logits, batch.labels)
            if config.gradient_dropout:
                mask = sample_step_mask(batch.lengths, gd_ratios(batch.lengths), rng, batch.deltas.shape[1])
                keep = mask.keep
            else:
                keep = batch.valid
            loss = masked_mean(losses, keep)
            value = loss.item()
            if not math.isfinite(value):
                ids = [s.traj_id for s in chunk]
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {steps + 1}; trajectories {ids}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
            total += value
            n_batches += 1
            kept += int(keep.sum())
            real += int(batch.valid.sum())

        train_loss = total / n_batches
        val_loss = val_acc = None
        if val_seqs:
            outputs, val_loss = evaluate(
                model, val_seqs, scaler, ship_index, config.seed + 1, config.poisson_lambda, config.eval_batch_size
            )
            hits = sum(int((o.argmax(axis=1) == s.label).sum()) for o, s in zip(outputs, val_seqs))
            val_acc = hits / sum(len(o) for o in outputs)
        score = val_loss if val_loss is not None else train_loss
        log = EpochLog(epoch, train_loss, val_loss, val_acc, steps, kept / real)
        if score < best_loss:
            best_loss, best_epoch = score, epoch
            best_state = model.state_dict()
            log.best = True
        history.append(log)
        logger.info(
            "epoch %d train %.4f val %s acc %s%s",
            epoch,
            train_loss,
            "-" if val_loss is None else f"{val_loss:.4f}",
            "-" if val_acc is None else f"{val_acc:.4f}",
            " *" if log.best else "",
        )
        if on_epoch is not None:
            on_epoch(log, model)
    return TrainResult(best_state, best_epoch, history, steps)
