"""Small classifiers whose parameters live in one flat vector.

Every architecture is described by a :class:`ModelSpec`, which fixes an
ordered list of named parameter blocks, and a :class:`ParamVector` is the
concatenation of those blocks. The forward pass slices the flat vector back
into blocks inside the autodiff graph, so gradients land directly on the
flat vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import prod
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError

KINDS = ("mlp", "mlp-deep", "convnet-small", "convnet-wide")

DEFAULT_WIDTHS = {
    "mlp": (128,),
    "mlp-deep": (64, 64, 64),
    "convnet-small": (16, 16),
    "convnet-wide": (32, 32),
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``widths`` holds hidden-layer sizes for the MLP kinds and per-block
    channel counts for the ConvNet kinds (each block is conv3x3 -> relu ->
    maxpool2x2). ConvNets take ``(channels, H, W)`` inputs with ``H`` and
    ``W`` divisible by ``2 ** len(widths)``; MLPs flatten any input shape.
    """

    kind: str
    input_shape: tuple
    n_classes: int
    widths: tuple = ()
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        widths = tuple(int(w) for w in self.widths) or DEFAULT_WIDTHS[self.kind]
        object.__setattr__(self, "widths", widths)
        if self.n_classes < 2:
            raise ContractError("n_classes must be at least 2")
        if self.activation != "relu":
            raise ContractError(f"unsupported activation {self.activation!r}")
        if any(s < 1 for s in self.input_shape) or any(w < 1 for w in widths):
            raise ContractError("input_shape and widths must be positive")
        if self.is_conv:
            if len(self.input_shape) != 3:
                raise ShapeError(f"{self.kind} needs (channels, H, W) inputs, got {self.input_shape}")
            div = 2 ** len(widths)
            if self.input_shape[1] % div or self.input_shape[2] % div:
                raise ShapeError(
                    f"{self.kind}: spatial dims {self.input_shape[1:]} not divisible by {div}")

    @property
    def is_conv(self) -> bool:
        return self.kind.startswith("convnet")

    @cached_property
    def layout(self) -> tuple:
        """Ordered ``(name, shape)`` parameter blocks."""
        blocks = []
        if self.is_conv:
            cin, h, w = self.input_shape
            for i, cout in enumerate(self.widths):
                blocks += [(f"conv{i}.weight", (cout, cin, 3, 3)), (f"conv{i}.bias", (cout,))]
                cin, h, w = cout, h // 2, w // 2
            fan_in = cin * h * w
            blocks += [("fc.weight", (fan_in, self.n_classes)), ("fc.bias", (self.n_classes,))]
        else:
            sizes = [prod(self.input_shape), *self.widths, self.n_classes]
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                blocks += [(f"fc{i}.weight", (a, b)), (f"fc{i}.bias", (b,))]
        return tuple(blocks)

    @cached_property
    def offsets(self) -> dict:
        out, start = {}, 0
        for name, shape in self.layout:
            out[name] = (start, start + prod(shape), shape)
            start += prod(shape)
        return out

    @property
    def parameter_count(self) -> int:
        return sum(prod(shape) for _, shape in self.layout)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": ",".join(map(str, self.input_shape)),
            "n_classes": str(self.n_classes),
            "widths": ",".join(map(str, self.widths)),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            kind=d["kind"],
            input_shape=tuple(int(s) for s in d["input_shape"].split(",")),
            n_classes=int(d["n_classes"]),
            widths=tuple(int(s) for s in d["widths"].split(",") if s),
            activation=d.get("activation", "relu"),
        )


def parameter_count(spec: ModelSpec) -> int:
    return spec.parameter_count


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    spec: ModelSpec = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != (self.spec.parameter_count,):
            raise ShapeError(
                f"parameter vector has shape {vals.shape}, spec needs ({self.spec.parameter_count},)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return (isinstance(other, ParamVector) and self.spec == other.spec
                and np.array_equal(self.values, other.values))

    def unflatten(self) -> dict:
        return unflatten(self)

    def copy_values(self) -> np.ndarray:
        return np.array(self.values)


def unflatten(params: ParamVector) -> dict:
    """Name -> array views (read-only) for each parameter block."""
    return {name: params.values[a:b].reshape(shape)
            for name, (a, b, shape) in params.spec.offsets.items()}


def flatten(blocks: dict, spec: ModelSpec) -> ParamVector:
    parts = []
    for name, shape in spec.layout:
        arr = np.asarray(blocks[name], dtype=np.float64)
        if arr.shape != shape:
            raise ShapeError(f"block {name}: expected {shape}, got {arr.shape}")
        parts.append(arr.reshape(-1))
    return ParamVector(np.concatenate(parts), spec)


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Kaiming-uniform (fan-in, relu gain) weights and zero biases.

    Values are rounded through float32 so an initialization survives the
    32-bit trajectory file format unchanged.
    """
    rng = np.random.default_rng(seed)
    blocks = {}
    for name, shape in spec.layout:
        if name.endswith(".bias"):
            blocks[name] = np.zeros(shape)
            continue
        fan_in = prod(shape[1:]) if len(shape) == 4 else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        blocks[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)
    return flatten(blocks, spec)


def _block(theta: ad.Tensor, spec: ModelSpec, name: str) -> ad.Tensor:
    a, b, shape = spec.offsets[name]
    return theta[a:b].reshape(shape)


def forward(spec: ModelSpec, params: Union[ParamVector, ad.Tensor, np.ndarray],
            inputs) -> ad.Tensor:
    """Logits of shape ``(batch, n_classes)``.

    ``params`` may be a :class:`ParamVector` (treated as a constant) or a
    flat :class:`~bpc.autodiff.Tensor` when gradients w.r.t. the parameters
    are wanted; ``inputs`` may likewise be an array or a Tensor.
    """
    if isinstance(params, ParamVector):
        if params.spec != spec:
            raise ContractError("parameter vector was built for a different ModelSpec")
        theta = ad.Tensor(params.values)
    else:
        theta = ad.as_tensor(params)
    if theta.shape != (spec.parameter_count,):
        raise ShapeError(f"params shape {theta.shape} != ({spec.parameter_count},)")
    x = ad.as_tensor(inputs)
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"inputs shape {x.shape} does not match input_shape {spec.input_shape}")
    n = x.shape[0]

    if spec.is_conv:
        h = x
        for i in range(len(spec.widths)):
            h = ad.conv2d(h, _block(theta, spec, f"conv{i}.weight"),
                          _block(theta, spec, f"conv{i}.bias"), padding="same")
            h = ad.maxpool2x2(ad.relu(h))
        h = h.reshape(n, -1)
        return ad.add(ad.matmul(h, _block(theta, spec, "fc.weight")),
                      _block(theta, spec, "fc.bias"))

    h = x.reshape(n, -1)
    depth = len(spec.widths) + 1
    for i in range(depth):
        h = ad.add(ad.matmul(h, _block(theta, spec, f"fc{i}.weight")),
                   _block(theta, spec, f"fc{i}.bias"))
        if i < depth - 1:
            h = ad.relu(h)
    return h


def predict_logits(spec: ModelSpec, params: ParamVector, inputs: np.ndarray,
                   batch_size: Optional[int] = 2048) -> np.ndarray:
    """Constant-mode forward in chunks; returns a plain array."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if batch_size is None or len(inputs) <= batch_size:
        return forward(spec, params, inputs).data
    return np.concatenate([forward(spec, params, inputs[i:i + batch_size]).data
                           for i in range(0, len(inputs), batch_size)])


def accuracy(spec: ModelSpec, params: ParamVector, inputs, labels: Sequence[int]) -> float:
    """Fraction correct by argmax; ties go to the lowest class index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("accuracy of an empty set is undefined")
    pred = predict_logits(spec, params, inputs).argmax(axis=1)
    return float((pred == labels).mean())
