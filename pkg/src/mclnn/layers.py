"""Conditional layers over temporal frame windows, and their gradients.

A conditional layer of order ``n`` owns ``2n + 1`` weight matrices, one per
frame of a sliding window.  The output vector for a window is

    f(bias + sum_u  x[u] @ Z[u]),   u = -n .. n

where ``x[u]`` is the frame at window offset ``u`` and ``Z[u]`` is the
weight matrix for that offset, gated by the layer's binary mask when one
is present.  Applied across a block of ``t`` frames the layer emits
``t - 2n`` frames: output frame ``i`` summarizes input frames
``[i, i + 2n]`` and sits at the window's middle position ``i + n``.

Gradients are computed by reverse replay of an :class:`ActivationTape`
that caches inputs, effective weights and pre-activations per step.  The
mask is a constant: gradients of masked weights are gated element-wise,
so dead connections receive exactly zero gradient.

All accumulations run in a fixed order (window offset ``-n .. n``, tape
order reversed), so repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InsufficientFramesError, ShapeError
from .mask import BinaryMask

__all__ = [
    "PRelu",
    "Sigmoid",
    "LinearActivation",
    "ClnnLayer",
    "ActivationTape",
    "effective_weights",
    "window_forward",
    "block_forward",
    "global_mean_pool",
    "prelu",
    "dense_forward",
    "softmax",
    "backward",
]


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Rectifier with a per-neuron negative-side slope.

    Returns ``x`` where ``x > 0`` and ``slopes * x`` elsewhere; ``slopes``
    broadcasts along the trailing axis of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    slopes = np.asarray(slopes, dtype=np.float64)
    if x.shape[-1] != slopes.shape[-1] or slopes.ndim != 1:
        raise ShapeError.mismatch("prelu slopes", x.shape[-1:], slopes.shape)
    return np.where(x > 0, x, slopes * x)


@dataclass
class PRelu:
    """Learnable rectifier; ``slopes`` has one entry per neuron."""

    slopes: np.ndarray

    def apply(self, z: np.ndarray) -> np.ndarray:
        return prelu(z, self.slopes)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        return np.where(z > 0, 1.0, self.slopes)

    def slope_gradient(self, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        # d(prelu)/d(slope) is z on the non-positive branch, 0 elsewhere.
        contrib = upstream * np.where(z > 0, 0.0, z)
        return contrib.reshape(-1, z.shape[-1]).sum(axis=0)


@dataclass
class Sigmoid:
    def apply(self, z: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-z))

    def derivative(self, z: np.ndarray) -> np.ndarray:
        s = self.apply(z)
        return s * (1.0 - s)


@dataclass
class LinearActivation:
    def apply(self, z: np.ndarray) -> np.ndarray:
        return z

    def derivative(self, z: np.ndarray) -> np.ndarray:
        return np.ones_like(z)


Activation = PRelu | Sigmoid | LinearActivation


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


@dataclass
class ClnnLayer:
    """One conditional layer.

    Attributes:
        order: frames considered on each side of the window's middle frame.
        weights: tensor of shape ``(2*order + 1, l, e)``; index ``d`` holds
            the matrix for window offset ``u = d - order``, so earlier
            frames pair with lower indices.
        bias: vector of length ``e``.
        mask: optional ``l x e`` binary mask gating every weight matrix.
        activation: :class:`PRelu`, :class:`Sigmoid` or
            :class:`LinearActivation`.
    """

    order: int
    weights: np.ndarray
    bias: np.ndarray
    mask: BinaryMask | None = None
    activation: Activation = field(default_factory=LinearActivation)

    def __post_init__(self):
        if self.order < 0:
            raise ContractError(f"layer order must be >= 0, got {self.order}")
        w = self.weights
        if w.ndim != 3 or w.shape[0] != 2 * self.order + 1:
            raise ShapeError(
                f"weights must have shape (2*order+1, l, e) = "
                f"({2 * self.order + 1}, l, e), got {w.shape}"
            )
        if self.bias.shape != (w.shape[2],):
            raise ShapeError.mismatch("bias", (w.shape[2],), self.bias.shape)
        if self.mask is not None and self.mask.entries.shape != w.shape[1:]:
            raise ShapeError.mismatch("layer mask", w.shape[1:], self.mask.entries.shape)
        if isinstance(self.activation, PRelu) and self.activation.slopes.shape != (w.shape[2],):
            raise ShapeError.mismatch(
                "prelu slopes", (w.shape[2],), self.activation.slopes.shape
            )

    @property
    def input_width(self) -> int:
        return self.weights.shape[1]

    @property
    def output_width(self) -> int:
        return self.weights.shape[2]


@dataclass
class DenseLayer:
    """Per-vector fully connected layer ``y = f(x @ weights + bias)``."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = field(default_factory=LinearActivation)

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"dense weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ShapeError.mismatch("dense bias", (self.weights.shape[1],), self.bias.shape)


def effective_weights(layer: ClnnLayer) -> np.ndarray:
    """Weight tensor with the mask applied, or the raw tensor when unmasked."""
    if layer.mask is None:
        return layer.weights
    return layer.weights * layer.mask.entries


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class ClnnRecord:
    name: str
    layer: ClnnLayer
    inputs: np.ndarray      # (t, l)
    effective: np.ndarray   # (2n+1, l, e) as used in the pass
    pre: np.ndarray         # (t - 2n, e)
    outputs: np.ndarray     # (t - 2n, e)


@dataclass
class PoolRecord:
    name: str
    inputs: np.ndarray      # (k, e)
    outputs: np.ndarray     # (e,)


@dataclass
class DenseRecord:
    name: str
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation
    inputs: np.ndarray      # (in,)
    pre: np.ndarray         # (out,)
    outputs: np.ndarray     # (out,)


@dataclass
class SoftmaxRecord:
    name: str
    inputs: np.ndarray
    outputs: np.ndarray


TapeRecord = ClnnRecord | PoolRecord | DenseRecord | SoftmaxRecord


class ActivationTape:
    """Ordered cache of one forward pass, sufficient for exact gradients."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def append(self, record: TapeRecord) -> None:
        self.records.append(record)

    def replay(self) -> None:
        """Recompute every record from its cached inputs.

        Raises :class:`ContractError` if any recomputed output differs from
        the recorded one in a single bit.
        """
        for rec in self.records:
            fresh = _recompute(rec)
            if not np.array_equal(fresh, rec.outputs):
                raise ContractError(f"tape record {rec.name!r} does not replay bit-identically")


def _recompute(rec: TapeRecord) -> np.ndarray:
    if isinstance(rec, ClnnRecord):
        pre = _block_pre(rec.effective, rec.layer.bias, rec.inputs, rec.layer.order)
        return rec.layer.activation.apply(pre)
    if isinstance(rec, PoolRecord):
        return rec.inputs.mean(axis=0)
    if isinstance(rec, DenseRecord):
        return rec.activation.apply(rec.inputs @ rec.weights + rec.bias)
    if isinstance(rec, SoftmaxRecord):
        return softmax(rec.inputs)
    raise ContractError(f"unknown tape record type {type(rec).__name__}")


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _block_pre(effective: np.ndarray, bias: np.ndarray, block: np.ndarray, order: int) -> np.ndarray:
    t_out = block.shape[0] - 2 * order
    pre = np.tile(bias, (t_out, 1))
    for d in range(2 * order + 1):
        pre += block[d : d + t_out] @ effective[d]
    return pre


def block_forward(
    layer: ClnnLayer,
    block: np.ndarray,
    tape: ActivationTape | None = None,
    name: str = "clnn",
) -> np.ndarray:
    """Slide the layer's window over ``block``.

    Args:
        layer: the conditional layer.
        block: ``(t, l)`` array of consecutive frames, ``t >= 2*order + 1``.
        tape: optional tape to record the pass on.
        name: record name used to key this layer's gradients.

    Returns:
        ``(t - 2*order, e)`` array; output frame ``i`` is the window
        response for input frames ``[i, i + 2*order]``.
    """
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[1] != layer.input_width:
        raise ShapeError.mismatch(
            "block frames", ("t", layer.input_width), block.shape
        )
    if block.shape[0] < 2 * layer.order + 1:
        raise InsufficientFramesError(layer.order, block.shape[0])
    z = effective_weights(layer)
    pre = _block_pre(z, layer.bias, block, layer.order)
    out = layer.activation.apply(pre)
    if tape is not None:
        tape.append(ClnnRecord(name, layer, block, z, pre, out))
    return out


def window_forward(layer: ClnnLayer, window: np.ndarray) -> np.ndarray:
    """Response vector for one full window of exactly ``2*order + 1`` frames."""
    window = np.asarray(window, dtype=np.float64)
    expected = 2 * layer.order + 1
    if window.ndim != 2 or window.shape[0] != expected:
        actual = window.shape[0] if window.ndim == 2 else window.shape
        raise ContractError(f"window_forward expects exactly {expected} frame(s), got {actual}")
    return block_forward(layer, window)[0]


def global_mean_pool(
    block: np.ndarray,
    tape: ActivationTape | None = None,
    name: str = "pool",
) -> np.ndarray:
    """Per-dimension mean across the temporal axis."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] < 1:
        raise ContractError(f"global_mean_pool needs a non-empty (k, e) block, got shape {block.shape}")
    out = block.mean(axis=0)
    if tape is not None:
        tape.append(PoolRecord(name, block, out))
    return out


def dense_forward(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    activation: Activation | None = None,
    tape: ActivationTape | None = None,
    name: str = "dense",
) -> np.ndarray:
    """``f(x @ weights + bias)`` for a single vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    activation = activation if activation is not None else LinearActivation()
    if x.shape != (weights.shape[0],):
        raise ShapeError.mismatch("dense input", (weights.shape[0],), x.shape)
    if bias.shape != (weights.shape[1],):
        raise ShapeError.mismatch("dense bias", (weights.shape[1],), bias.shape)
    pre = x @ weights + bias
    out = activation.apply(pre)
    if tape is not None:
        tape.append(DenseRecord(name, weights, bias, activation, x, pre, out))
    return out


def softmax(
    x: np.ndarray,
    tape: ActivationTape | None = None,
    name: str = "softmax",
) -> np.ndarray:
    """Probability vector via max-subtracted exponentials."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ContractError("softmax input must be non-empty")
    shifted = np.exp(x - x.max())
    out = shifted / shifted.sum()
    if tape is not None:
        tape.append(SoftmaxRecord(name, x, out))
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(tape: ActivationTape, loss_gradient: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for every parameter recorded on the tape.

    Args:
        tape: a completed forward pass.
        loss_gradient: gradient of the loss with respect to the output of
            the tape's final record.

    Returns:
        dict mapping ``"<record name>.<weights|bias|slopes>"`` to gradient
        arrays shaped like the parameters.  Masked weight gradients are
        gated by the mask, so masked-out entries are exactly zero.
    """
    if not tape.records:
        raise ContractError("backward needs a tape with at least one record")
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(loss_gradient, dtype=np.float64)
    for rec in reversed(tape.records):
        if g.shape != rec.outputs.shape:
            raise ShapeError.mismatch(
                f"gradient flowing into record {rec.name!r}", rec.outputs.shape, g.shape
            )
        if isinstance(rec, SoftmaxRecord):
            p = rec.outputs
            g = p * (g - np.dot(g, p))
        elif isinstance(rec, DenseRecord):
            dpre = g * rec.activation.derivative(rec.pre)
            grads[f"{rec.name}.weights"] = np.outer(rec.inputs, dpre)
            grads[f"{rec.name}.bias"] = dpre
            if isinstance(rec.activation, PRelu):
                grads[f"{rec.name}.slopes"] = rec.activation.slope_gradient(rec.pre, g)
            g = dpre @ rec.weights.T
        elif isinstance(rec, PoolRecord):
            k = rec.inputs.shape[0]
            g = np.tile(g / k, (k, 1))
        elif isinstance(rec, ClnnRecord):
            layer = rec.layer
            n = layer.order
            t_out = rec.pre.shape[0]
            dpre = g * layer.activation.derivative(rec.pre)
            dw = np.empty_like(layer.weights)
            dx = np.zeros_like(rec.inputs)
            for d in range(2 * n + 1):
                dw[d] = rec.inputs[d : d + t_out].T @ dpre
                dx[d : d + t_out] += dpre @ rec.effective[d].T
            if layer.mask is not None:
                dw *= layer.mask.entries
            grads[f"{rec.name}.weights"] = dw
            grads[f"{rec.name}.bias"] = dpre.sum(axis=0)
            if isinstance(layer.activation, PRelu):
                grads[f"{rec.name}.slopes"] = layer.activation.slope_gradient(rec.pre, g)
            g = dx
        else:
            raise ContractError(f"unknown tape record type {type(rec).__name__}")
    return grads
