"""Training loop, clip-level evaluation, and gradient checking.

The optimizer is deliberately plain: mini-batch gradient descent with
optional classical momentum, a fixed shuffle per epoch from one seeded
generator, and validation-loss early stopping that snapshots the best
parameters.  Every reduction runs in a fixed order, so a (seed, config,
data) triple maps to bit-identical parameters and reports.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Segment
from .errors import ContractError, TrainingDivergedError, ValidationError
from .layers import backward
from .model import TrainedModel, model_forward, model_forward_tape

logger = logging.getLogger(__name__)

LOSS_EPS = 1e-12

__all__ = [
    "TrainConfig",
    "EpochStats",
    "RunReport",
    "cross_entropy",
    "cross_entropy_grad",
    "train",
    "predict_clip",
    "evaluate",
    "EvalResult",
    "grad_check",
    "GradCheckReport",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    patience: int = 10
    hop: int | None = None  # None: segment hop defaults to q (non-overlapping)
    optimizer: str = "momentum"  # "sgd" | "momentum"
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValidationError("batch_size, epochs, and patience must all be >= 1")
        if self.hop is not None and self.hop < 1:
            raise ValidationError(f"hop must be >= 1, got {self.hop}")
        if self.optimizer not in ("sgd", "momentum"):
            raise ValidationError(f"optimizer must be 'sgd' or 'momentum', got {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "patience": self.patience,
            "hop": self.hop,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
        }


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    validation_loss: float | None
    validation_accuracy: float | None


@dataclass
class RunReport:
    config: dict
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False
    test_accuracy: float | None = None
    confusion: np.ndarray | None = None
    class_names: tuple[str, ...] = ()
    wall_clock_seconds: float = 0.0

    def to_text(self) -> str:
        """Structured text: key-value lines plus a confusion grid.

        wall_clock is reported but sits on its own clearly-marked line so
        deterministic comparisons can strip it.
        """
        lines = ["[config]"]
        for key, value in sorted(self.config.items()):
            lines.append(f"{key} = {value!r}")
        lines.append("")
        lines.append("[epochs]")
        lines.append("epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc")
        for s in self.epochs:
            val_loss = "-" if s.validation_loss is None else repr(s.validation_loss)
            val_acc = "-" if s.validation_accuracy is None else repr(s.validation_accuracy)
            lines.append(
                f"{s.epoch}\t{s.train_loss!r}\t{s.train_accuracy!r}\t{val_loss}\t{val_acc}"
            )
        lines.append("")
        lines.append("[result]")
        lines.append(f"best_epoch = {self.best_epoch}")
        lines.append(f"stopped_early = {self.stopped_early}")
        lines.append(f"test_accuracy = {self.test_accuracy!r}")
        if self.confusion is not None:
            lines.append("")
            lines.append("[confusion]")
            header = list(self.class_names) or [str(i) for i in range(self.confusion.shape[0])]
            lines.append("true\\pred\t" + "\t".join(header + ["none"]))
            for i, row in enumerate(self.confusion):
                name = header[i] if i < len(header) else str(i)
                lines.append(name + "\t" + "\t".join(str(int(v)) for v in row))
        lines.append("")
        lines.append(f"wall_clock_seconds = {self.wall_clock_seconds!r}")
        return "\n".join(lines) + "\n"

    def deterministic_text(self) -> str:
        """Report text without the wall-clock line (the only timing field)."""
        return "\n".join(
            line for line in self.to_text().splitlines()
            if not line.startswith("wall_clock_seconds")
        ) + "\n"


def cross_entropy(pred: np.ndarray, target: int) -> float:
    """-log p[target], with p floored at 1e-12."""
    pred = np.asarray(pred, dtype=np.float64)
    if not 0 <= target < pred.shape[0]:
        raise ValidationError(f"target {target} out of range for {pred.shape[0]} classes")
    return float(-np.log(max(pred[target], LOSS_EPS)))


def cross_entropy_grad(pred: np.ndarray, target: int) -> np.ndarray:
    """d loss / d pred for the clamped cross-entropy."""
    pred = np.asarray(pred, dtype=np.float64)
    if not 0 <= target < pred.shape[0]:
        raise ValidationError(f"target {target} out of range for {pred.shape[0]} classes")
    grad = np.zeros_like(pred)
    if pred[target] > LOSS_EPS:
        grad[target] = -1.0 / pred[target]
    return grad


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _segment_loss_and_grads(model: TrainedModel, segment: Segment):
    probs, tape = model_forward_tape(model, segment.frames)
    loss = cross_entropy(probs, segment.label)
    grads = backward(tape, cross_entropy_grad(probs, segment.label))
    correct = int(np.argmax(probs)) == segment.label
    return loss, grads, correct


def _dataset_loss(model: TrainedModel, segments: list[Segment]) -> tuple[float, float]:
    """Mean segment loss and segment-level accuracy (no gradients)."""
    total, correct = 0.0, 0
    for segment in segments:
        probs = model_forward(model, segment.frames)
        total += cross_entropy(probs, segment.label)
        correct += int(np.argmax(probs)) == segment.label
    n = len(segments)
    return total / n, correct / n


def train(
    model: TrainedModel,
    train_segments: list[Segment],
    config: TrainConfig,
    validation_segments: list[Segment] | None = None,
) -> tuple[TrainedModel, RunReport]:
    """Mini-batch gradient descent with early stopping on validation loss.

    The model is updated in place and also returned.  With a validation
    set, the parameters restored at the end are the best-validation-loss
    snapshot, never anything worse.
    """
    if not train_segments:
        raise ValidationError("training split is empty")
    started = time.monotonic()
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    report = RunReport(config=config.to_dict(), class_names=model.labels)

    best_loss = np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    epochs_since_best = 0

    order = np.arange(len(train_segments))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        epoch_loss, epoch_correct = 0.0, 0
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start : batch_start + config.batch_size]
            sums: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in params.items()}
            for idx in batch:
                loss, grads, correct = _segment_loss_and_grads(model, train_segments[idx])
                epoch_loss += loss
                epoch_correct += correct
                for key in sums:
                    sums[key] += grads[key]
            scale = 1.0 / len(batch)
            for key in params:
                grad = sums[key] * scale
                if config.optimizer == "momentum":
                    velocity[key] *= config.momentum
                    velocity[key] -= config.learning_rate * grad
                    params[key] += velocity[key]
                else:
                    params[key] -= config.learning_rate * grad
        train_loss = epoch_loss / len(train_segments)
        train_acc = epoch_correct / len(train_segments)
        if not np.isfinite(train_loss):
            raise TrainingDivergedError(epoch=epoch, loss=train_loss)

        val_loss = val_acc = None
        if validation_segments:
            val_loss, val_acc = _dataset_loss(model, validation_segments)
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(epoch=epoch, loss=val_loss)
        report.epochs.append(EpochStats(epoch, train_loss, train_acc, val_loss, val_acc))

        monitored = val_loss if validation_segments else train_loss
        if monitored < best_loss:
            best_loss = monitored
            best_params = model.copy_parameters()
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                report.stopped_early = True
                logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break

    if best_params is not None:
        model.set_parameters(best_params)
    report.best_epoch = best_epoch
    report.wall_clock_seconds = time.monotonic() - started
    return model, report


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def predict_clip(model: TrainedModel, segments: list[Segment]) -> tuple[int, np.ndarray]:
    """Majority vote over segment predictions.

    Ties go to the higher mean probability across the clip's segments,
    then to the lower class id.  Segments are processed in a canonical
    order, so the result is invariant to how the list is arranged.
    """
    if not segments:
        raise ContractError("predict_clip needs at least one segment")
    clip_ids = {s.clip_id for s in segments}
    if len(clip_ids) != 1:
        raise ContractError(f"segments from multiple clips passed together: {sorted(clip_ids)}")
    ordered = sorted(segments, key=lambda s: s.start)
    votes = np.zeros(model.spec.class_count, dtype=np.int64)
    prob_sum = np.zeros(model.spec.class_count)
    for segment in ordered:
        probs = model_forward(model, segment.frames)
        votes[int(np.argmax(probs))] += 1
        prob_sum += probs
    mean_probs = prob_sum / len(ordered)
    top = votes.max()
    tied = np.flatnonzero(votes == top)
    if tied.size == 1:
        return int(tied[0]), mean_probs
    best = tied[np.argmax(mean_probs[tied])]
    # argmax already prefers the first (lowest id) among equal means
    return int(best), mean_probs


@dataclass
class EvalResult:
    clip_accuracy: float
    confusion: np.ndarray  # c x (c+1); last column: clips with no segments
    per_clip: dict[str, int]  # clip id -> predicted class (-1: no segments)

    def __post_init__(self):
        if not 0.0 <= self.clip_accuracy <= 1.0:
            raise ValidationError(f"accuracy {self.clip_accuracy} outside [0, 1]")


def evaluate(
    model: TrainedModel,
    segments_by_clip: dict[str, list[Segment]],
    labels_by_clip: dict[str, int],
) -> EvalResult:
    """Per-clip accuracy and confusion over a set of clips.

    A clip whose segment list is empty cannot be predicted; it counts as
    wrong and lands in the confusion matrix's trailing "none" column so
    row sums still equal per-class clip counts.
    """
    if set(segments_by_clip) != set(labels_by_clip):
        raise ContractError("segments_by_clip and labels_by_clip list different clips")
    if not labels_by_clip:
        raise ContractError("evaluate needs at least one clip")
    c = model.spec.class_count
    confusion = np.zeros((c, c + 1), dtype=np.int64)
    per_clip: dict[str, int] = {}
    correct = 0
    for clip_id in sorted(labels_by_clip):
        truth = labels_by_clip[clip_id]
        if not 0 <= truth < c:
            raise ValidationError(f"clip {clip_id!r} label {truth} out of range for {c} classes")
        segments = segments_by_clip[clip_id]
        if not segments:
            logger.warning("clip %r has no segments; counted as an error", clip_id)
            per_clip[clip_id] = -1
            confusion[truth, c] += 1
            continue
        predicted, _ = predict_clip(model, segments)
        per_clip[clip_id] = predicted
        confusion[truth, predicted] += 1
        correct += predicted == truth
    return EvalResult(
        clip_accuracy=correct / len(labels_by_clip),
        confusion=confusion,
        per_clip=per_clip,
    )


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    per_tensor: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def to_text(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} tolerance={self.tolerance:g}"]
        for key in sorted(self.per_tensor):
            lines.append(f"{key}\t{self.per_tensor[key]:.3e}")
        lines.append(f"max\t{self.max_relative_error:.3e}")
        return "\n".join(lines) + "\n"


_FD_STEP = 1e-5
_KINK_MARGIN = 1e-3


def _nudge_kinks(model: TrainedModel, segment: np.ndarray) -> np.ndarray:
    """Move the comparison point away from activation kinks.

    Central differences step each parameter by 1e-5; any pre-activation
    within that reach of 0 can cross the kink and poison the numeric
    gradient.  Exact-zero inputs get the documented 1e-7 nudge, and each
    layer's biases are shifted (on this working copy only) until every
    pre-activation clears the kink by a safe margin.
    """
    segment = segment.copy()
    segment[segment == 0.0] += 1e-7
    offsets = _KINK_MARGIN * np.array([3.0, -3.0, 7.0, -7.0, 13.0, -13.0])
    for _ in range(8):
        _, tape = model_forward_tape(model, segment)
        moved = False
        for record in tape.records:
            pre = getattr(record, "pre", None)
            bias = getattr(record.layer, "bias", None) if hasattr(record, "layer") else None
            if pre is None:
                continue
            if bias is None:
                bias = record.bias if hasattr(record, "bias") else None
            if bias is None:
                continue
            pre2d = pre if pre.ndim == 2 else pre[None, :]
            for j in range(pre2d.shape[1]):
                column = pre2d[:, j]
                if np.min(np.abs(column)) >= _KINK_MARGIN:
                    continue
                for off in offsets:
                    if np.min(np.abs(column + off)) >= _KINK_MARGIN:
                        bias[j] += off
                        moved = True
                        break
                else:
                    bias[j] += offsets[0]
                    moved = True
            if moved:
                break  # shifting one layer moves everything downstream; recompute
        if not moved:
            break
    return segment


def grad_check(
    model: TrainedModel,
    segment: np.ndarray,
    target: int,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Central-difference check of every parameter tensor.

    Works on a deep copy of the parameters, so the passed model is left
    untouched.  Relative error per entry is |a - n| / max(|a|, |n|, 1e-3);
    the floor keeps finite-difference noise on near-zero gradients from
    drowning the signal without hiding real disagreements.
    """
    snapshot = model.copy_parameters()
    try:
        segment = _nudge_kinks(model, np.asarray(segment, dtype=np.float64))
        probs, tape = model_forward_tape(model, segment)
        analytic = backward(tape, cross_entropy_grad(probs, target))

        params = model.parameters()
        per_tensor: dict[str, float] = {}
        for key in sorted(params):
            tensor = params[key]
            worst = 0.0
            flat = tensor.reshape(-1)
            grad_flat = analytic[key].reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + _FD_STEP
                up = cross_entropy(model_forward(model, segment), target)
                flat[i] = original - _FD_STEP
                down = cross_entropy(model_forward(model, segment), target)
                flat[i] = original
                numeric = (up - down) / (2.0 * _FD_STEP)
                a = grad_flat[i]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
                worst = max(worst, rel)
            per_tensor[key] = worst
        return GradCheckReport(
            max_relative_error=max(per_tensor.values()),
            per_tensor=per_tensor,
            tolerance=tolerance,
        )
    finally:
        model.set_parameters(snapshot)
