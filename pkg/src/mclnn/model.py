"""Model assembly: architecture specs, initialization, forward pass, io.

A model is a stack of conditional layers (each trading 2n frames for
temporal context), a global mean pool over the k surviving frames, one
dense hidden layer, and a softmax output.  Masks are derived from the
spec, never stored: a model file round-trips parameters bit-exactly and
regenerates masks on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import ContractError, HeaderMismatchError, ValidationError
from .features import NormStats
from .layers import (
    ActivationTape,
    ClnnLayer,
    DenseLayer,
    LinearActivation,
    PRelu,
    Sigmoid,
    block_forward,
    dense_forward,
    global_mean_pool,
    softmax,
)
from .mask import BinaryMask, MaskSpec, generate_mask

MODEL_MAGIC = b"MCLN"
MODEL_VERSION = 1

INIT_SLOPE = 0.25

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "TrainedModel",
    "segment_size",
    "frame_plan",
    "build_model",
    "model_forward",
    "model_forward_tape",
    "save_model",
    "load_model",
    "PRESETS",
]


@dataclass(frozen=True)
class LayerSpec:
    """One conditional layer: width, temporal order, optional banding."""

    width: int
    order: int
    bandwidth: int | None = None
    overlap: int | None = None

    def __post_init__(self):
        if self.width < 1:
            raise ValidationError(f"layer width must be >= 1, got {self.width}")
        if (self.bandwidth is None) != (self.overlap is None):
            raise ValidationError("bandwidth and overlap must be given together or not at all")

    @property
    def masked(self) -> bool:
        return self.bandwidth is not None


@dataclass(frozen=True)
class ModelSpec:
    feature_length: int
    layers: tuple[LayerSpec, ...]
    extra_frames: int
    dense_width: int
    class_count: int
    activation: str = "prelu"
    # order 0 turns a layer into a plain frame-wise dense map; useful only
    # for degenerate tests, so it must be asked for explicitly.
    allow_order_zero: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.feature_length < 1:
            raise ValidationError(f"feature_length must be >= 1, got {self.feature_length}")
        if not self.layers:
            raise ValidationError("a model needs at least one conditional layer")
        if self.extra_frames < 1:
            raise ValidationError(f"extra_frames must be >= 1, got {self.extra_frames}")
        if self.dense_width < 1:
            raise ValidationError(f"dense_width must be >= 1, got {self.dense_width}")
        if self.class_count < 1:
            raise ValidationError(f"class_count must be >= 1, got {self.class_count}")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(
                f"unknown activation {self.activation!r}; choose from {sorted(_ACTIVATIONS)}"
            )
        min_order = 0 if self.allow_order_zero else 1
        for i, layer in enumerate(self.layers):
            if layer.order < min_order:
                raise ValidationError(
                    f"layer {i} has order {layer.order}; orders must be >= {min_order}"
                )

    def input_widths(self) -> list[int]:
        """Feature length seen by each conditional layer."""
        return [self.feature_length] + [layer.width for layer in self.layers[:-1]]


def segment_size(spec: ModelSpec) -> int:
    """Frames per segment: q = sum over layers of 2n, plus k."""
    return sum(2 * layer.order for layer in spec.layers) + spec.extra_frames


def frame_plan(spec: ModelSpec) -> list[int]:
    """Frame counts entering each layer and leaving the last.

    Starts at ``segment_size`` and drops 2n per layer, ending at
    ``extra_frames``.  Any non-positive intermediate count means the
    architecture cannot run and raises a validation error.
    """
    plan = [segment_size(spec)]
    for layer in spec.layers:
        plan.append(plan[-1] - 2 * layer.order)
    if any(count < 1 for count in plan):
        raise ValidationError(f"architecture starves of frames: plan {plan}")
    return plan


_ACTIVATIONS = {"prelu", "sigmoid", "linear"}


def _make_activation(name: str, width: int):
    if name == "prelu":
        return PRelu(slopes=np.full(width, INIT_SLOPE))
    if name == "sigmoid":
        return Sigmoid()
    return LinearActivation()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class TrainedModel:
    """Architecture plus every parameter tensor and data-side statistics.

    Immutable during inference; training updates the arrays in place and
    needs exclusive access.
    """

    spec: ModelSpec
    clnn_layers: list[ClnnLayer]
    dense: DenseLayer
    output: DenseLayer
    labels: tuple[str, ...]
    norm_stats: NormStats | None = None
    init_seed: int = 0
    init_scheme: str = "glorot-uniform"

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(self.labels) != self.spec.class_count:
            raise ValidationError(
                f"{len(self.labels)} labels for {self.spec.class_count} classes"
            )
        if self.norm_stats is not None and self.norm_stats.mean.shape[0] != self.spec.feature_length:
            raise ValidationError(
                f"normalization length {self.norm_stats.mean.shape[0]} "
                f"!= feature length {self.spec.feature_length}"
            )

    def parameters(self) -> dict[str, np.ndarray]:
        """Live views of every trainable tensor, in a fixed key order."""
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.clnn_layers):
            params[f"clnn{i}.weights"] = layer.weights
            params[f"clnn{i}.bias"] = layer.bias
            if isinstance(layer.activation, PRelu):
                params[f"clnn{i}.slopes"] = layer.activation.slopes
        for name, dense in (("dense", self.dense), ("output", self.output)):
            params[f"{name}.weights"] = dense.weights
            params[f"{name}.bias"] = dense.bias
            if isinstance(dense.activation, PRelu):
                params[f"{name}.slopes"] = dense.activation.slopes
        return params

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            raise ContractError(
                f"parameter keys differ: {sorted(set(values) ^ set(params))}"
            )
        for key, target in params.items():
            source = values[key]
            if source.shape != target.shape:
                raise ContractError(f"{key}: shape {source.shape} != {target.shape}")
            target[...] = source

    def masks(self) -> list[BinaryMask | None]:
        return [layer.mask for layer in self.clnn_layers]


def build_model(spec: ModelSpec, seed: int, labels: tuple[str, ...] | None = None) -> TrainedModel:
    """Deterministic initialization: masked band weights start (and stay) zero."""
    if labels is None:
        labels = tuple(str(i) for i in range(spec.class_count))
    rng = np.random.default_rng(seed)
    widths = spec.input_widths()
    clnn_layers = []
    for layer_spec, l_in in zip(spec.layers, widths):
        e = layer_spec.width
        matrices = 2 * layer_spec.order + 1
        weights = _glorot(rng, l_in, e, (matrices, l_in, e))
        mask = None
        if layer_spec.masked:
            mask = generate_mask(
                MaskSpec(
                    feature_length=l_in,
                    hidden_width=e,
                    bandwidth=layer_spec.bandwidth,
                    overlap=layer_spec.overlap,
                )
            )
            weights = weights * mask.entries
        clnn_layers.append(
            ClnnLayer(
                order=layer_spec.order,
                weights=weights,
                bias=np.zeros(e),
                mask=mask,
                activation=_make_activation(spec.activation, e),
            )
        )
    last_width = spec.layers[-1].width
    dense = DenseLayer(
        weights=_glorot(rng, last_width, spec.dense_width, (last_width, spec.dense_width)),
        bias=np.zeros(spec.dense_width),
        activation=_make_activation(spec.activation, spec.dense_width),
    )
    output = DenseLayer(
        weights=_glorot(rng, spec.dense_width, spec.class_count, (spec.dense_width, spec.class_count)),
        bias=np.zeros(spec.class_count),
        activation=LinearActivation(),
    )
    return TrainedModel(
        spec=spec,
        clnn_layers=clnn_layers,
        dense=dense,
        output=output,
        labels=labels,
        init_seed=seed,
    )


def model_forward_tape(model: TrainedModel, segment: np.ndarray) -> tuple[np.ndarray, ActivationTape]:
    """Forward pass recording every step for the backward walk."""
    segment = np.asarray(segment, dtype=np.float64)
    q = segment_size(model.spec)
    expected = (q, model.spec.feature_length)
    if segment.shape != expected:
        raise ContractError(f"segment shape {segment.shape}, model expects {expected}")
    tape = ActivationTape()
    block = segment
    for i, layer in enumerate(model.clnn_layers):
        block = block_forward(layer, block, tape=tape, name=f"clnn{i}")
    pooled = global_mean_pool(block, tape=tape, name="pool")
    hidden = dense_forward(
        pooled, model.dense.weights, model.dense.bias,
        activation=model.dense.activation, tape=tape, name="dense",
    )
    logits = dense_forward(
        hidden, model.output.weights, model.output.bias,
        activation=None, tape=tape, name="output",
    )
    probs = softmax(logits, tape=tape, name="softmax")
    return probs, tape


def model_forward(model: TrainedModel, segment: np.ndarray) -> np.ndarray:
    """Class probabilities for one q x l segment."""
    probs, _ = model_forward_tape(model, segment)
    return probs


# ---------------------------------------------------------------------------
# io
# ---------------------------------------------------------------------------


def _spec_to_header(spec: ModelSpec) -> dict:
    return {
        "feature_length": spec.feature_length,
        "layers": [
            {"width": s.width, "order": s.order, "bandwidth": s.bandwidth, "overlap": s.overlap}
            for s in spec.layers
        ],
        "extra_frames": spec.extra_frames,
        "dense_width": spec.dense_width,
        "class_count": spec.class_count,
        "activation": spec.activation,
        "allow_order_zero": spec.allow_order_zero,
    }


def _spec_from_header(header: dict) -> ModelSpec:
    return ModelSpec(
        feature_length=int(header["feature_length"]),
        layers=tuple(
            LayerSpec(
                width=int(s["width"]),
                order=int(s["order"]),
                bandwidth=None if s["bandwidth"] is None else int(s["bandwidth"]),
                overlap=None if s["overlap"] is None else int(s["overlap"]),
            )
            for s in header["layers"]
        ),
        extra_frames=int(header["extra_frames"]),
        dense_width=int(header["dense_width"]),
        class_count=int(header["class_count"]),
        activation=header["activation"],
        allow_order_zero=bool(header["allow_order_zero"]),
    )


def save_model(model: TrainedModel, path) -> None:
    """Binary model file; masks are regenerated from the architecture on load."""
    params = model.parameters()
    arrays = list(params.values())
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in params.items()]
    header = {
        "spec": _spec_to_header(model.spec),
        "labels": list(model.labels),
        "init_seed": model.init_seed,
        "init_scheme": model.init_scheme,
        "params": manifest,
        "norm": None,
    }
    if model.norm_stats is not None:
        header["norm"] = {
            "source_split": model.norm_stats.source_split,
            "stats_id": model.norm_stats.stats_id,
            "length": int(model.norm_stats.mean.shape[0]),
        }
        arrays += [model.norm_stats.mean, model.norm_stats.std]
    container.write(path, MODEL_MAGIC, MODEL_VERSION, header, arrays)


def load_model(path) -> TrainedModel:
    def shapes(header):
        declared = [tuple(int(d) for d in entry["shape"]) for entry in header["params"]]
        if header["norm"] is not None:
            n = int(header["norm"]["length"])
            declared += [(n,), (n,)]
        return declared

    header, arrays = container.read(path, MODEL_MAGIC, MODEL_VERSION, shapes)
    spec = _spec_from_header(header["spec"])
    skeleton = build_model(spec, seed=int(header["init_seed"]), labels=tuple(header["labels"]))
    values = {
        entry["name"]: array
        for entry, array in zip(header["params"], arrays[: len(header["params"])])
    }
    expected = skeleton.parameters()
    if set(values) != set(expected):
        raise HeaderMismatchError(
            f"{path}: parameter manifest {sorted(values)} does not match "
            f"the declared architecture {sorted(expected)}"
        )
    for key, array in values.items():
        if array.shape != expected[key].shape:
            raise HeaderMismatchError(
                f"{path}: {key} stored as {array.shape}, architecture needs {expected[key].shape}"
            )
    skeleton.set_parameters(values)
    skeleton.init_scheme = header["init_scheme"]
    if header["norm"] is not None:
        mean, std = arrays[-2], arrays[-1]
        skeleton.norm_stats = NormStats(
            mean=mean,
            std=std,
            source_split=header["norm"]["source_split"],
            stats_id=header["norm"]["stats_id"],
        )
    return skeleton


# Reference 10-class configuration: 256 mel bins in, two masked layers
# (220 then 200 nodes, order 4), mean pool over 10 frames, 50-node dense.
PRESETS: dict[str, ModelSpec] = {
    "table3": ModelSpec(
        feature_length=256,
        layers=(
            LayerSpec(width=220, order=4, bandwidth=40, overlap=-10),
            LayerSpec(width=200, order=4, bandwidth=10, overlap=3),
        ),
        extra_frames=10,
        dense_width=50,
        class_count=10,
    ),
}
