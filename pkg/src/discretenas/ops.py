"""Candidate operations of the cell search space and the fixed scaffolding.

The search space has seven operations (no ``zero``). Separable convolutions
are ReLU, depthwise k x k, pointwise 1 x 1, then standardization, applied
once. Pools and skip-connect own no weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import ContractError, ParamStore, ShapeError, Tensor
from .autodiff import primitives as P


class OpKind(str, enum.Enum):
    SEP_CONV_3X3 = "sep_conv_3x3"
    SEP_CONV_5X5 = "sep_conv_5x5"
    DIL_CONV_3X3 = "dil_conv_3x3"
    DIL_CONV_5X5 = "dil_conv_5x5"
    MAX_POOL_3X3 = "max_pool_3x3"
    AVG_POOL_3X3 = "avg_pool_3x3"
    SKIP_CONNECT = "skip_connect"

    @property
    def index(self) -> int:
        return OP_KINDS.index(self)

    @property
    def is_conv(self) -> bool:
        return self in _CONV_SHAPES


OP_KINDS: Tuple[OpKind, ...] = tuple(OpKind)
NUM_OPS = len(OP_KINDS)

# kind -> (kernel, dilation)
_CONV_SHAPES = {
    OpKind.SEP_CONV_3X3: (3, 1),
    OpKind.SEP_CONV_5X5: (5, 1),
    OpKind.DIL_CONV_3X3: (3, 2),
    OpKind.DIL_CONV_5X5: (5, 2),
}


def kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class NormContext:
    """Controls how standardization layers obtain their statistics.

    ``batch``: use the current batch. ``collect``: use the current batch and
    accumulate pooled per-channel moments under each layer key. ``frozen``:
    use previously collected moments, making evaluation per-sample.
    """

    MODES = ("batch", "collect", "frozen")

    def __init__(self, mode: str = "batch", stats: Optional[Dict[str, Tuple[np.ndarray, np.ndarray]]] = None):
        if mode not in self.MODES:
            raise ContractError(f"unknown norm mode {mode!r}")
        self.mode = mode
        self._moments: Dict[str, List] = {}
        self._stats = dict(stats or {})

    def standardize(self, x: Tensor, key: str) -> Tensor:
        if self.mode == "frozen":
            if key not in self._stats:
                raise ContractError(f"no frozen statistics for layer {key!r}")
            return P.batch_norm(x, self._stats[key])[0]
        if self.mode == "collect":
            d = x.data
            n = d.shape[0] * d.shape[2] * d.shape[3]
            acc = self._moments.setdefault(key, [0.0, 0.0, 0])
            acc[0] = acc[0] + d.sum(axis=(0, 2, 3))
            acc[1] = acc[1] + (d * d).sum(axis=(0, 2, 3))
            acc[2] += n
        return P.batch_norm(x)[0]

    def frozen(self) -> "NormContext":
        """A frozen context using the moments collected so far."""
        stats = dict(self._stats)
        for key, (s, s2, n) in self._moments.items():
            mu = s / n
            stats[key] = (mu, np.maximum(s2 / n - mu * mu, 0.0))
        return NormContext("frozen", stats)

    @property
    def stats(self) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
        return dict(self._stats)


def standardize(x: Tensor, key: str, norm: Optional[NormContext]) -> Tensor:
    if norm is None:
        return P.batch_norm(x)[0]
    return norm.standardize(x, key)


def _check_spatial(name: str, z: Tensor, stride: int) -> None:
    if z.ndim != 4:
        raise ShapeError(f"{name}: expected (batch, channels, H, W), got {z.shape}")
    if z.shape[2] % stride or z.shape[3] % stride:
        raise ContractError(f"{name}: spatial extent {z.shape[2:]} not divisible by stride {stride}")


@dataclass
class OpInstance:
    """One candidate operation on one edge, with its weight names."""

    kind: OpKind
    stride: int
    channels: int
    prefix: str
    param_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.kind = OpKind(self.kind)
        if self.stride not in (1, 2):
            raise ContractError(f"stride must be 1 or 2, got {self.stride}")
        if self.channels < 1:
            raise ContractError("channels must be positive")
        if self.kind.is_conv:
            self.param_names = (f"{self.prefix}.dw", f"{self.prefix}.pw")

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        if not self.kind.is_conv:
            return
        k, _ = _CONV_SHAPES[self.kind]
        c = self.channels
        store.add(self.param_names[0], kaiming(rng, (c, k, k), k * k), "theta")
        store.add(self.param_names[1], kaiming(rng, (c, c, 1, 1), c), "theta")

    def __call__(self, z: Tensor, leaves: Dict[str, Tensor], norm: Optional[NormContext] = None,
                 activated: Optional[Tensor] = None) -> Tensor:
        return apply(self, z, leaves, norm, activated)


def apply(op: OpInstance, z: Tensor, leaves: Dict[str, Tensor], norm: Optional[NormContext] = None,
          activated: Optional[Tensor] = None) -> Tensor:
    """Run ``op`` on ``z``; ``activated`` may carry a cached ``relu(z)``."""
    _check_spatial(op.kind.value, z, op.stride)
    if z.shape[1] != op.channels:
        raise ShapeError(f"{op.kind.value}: expected {op.channels} channels, got {z.shape}")
    kind = op.kind
    if kind.is_conv:
        k, dilation = _CONV_SHAPES[kind]
        h = activated if activated is not None else P.relu(z)
        h = P.depthwise_conv2d(h, leaves[op.param_names[0]], stride=op.stride, dilation=dilation)
        h = P.conv2d(h, leaves[op.param_names[1]])
        return standardize(h, op.prefix, norm)
    if kind is OpKind.MAX_POOL_3X3:
        return P.max_pool(z, 3, op.stride)
    if kind is OpKind.AVG_POOL_3X3:
        return P.avg_pool(z, 3, op.stride)
    if op.stride == 1:
        return z
    return spatial_reduce(z)


def spatial_reduce(z: Tensor) -> Tensor:
    """Parameter-free 2x downsampling: mean over each 2 x 2 block."""
    return P.avg_pool(z, 2, 2)


@dataclass
class ReLUConvBN:
    """ReLU, 1 x 1 convolution, standardization; optional 2x pre-reduction."""

    in_channels: int
    out_channels: int
    prefix: str
    reduce: bool = False

    @property
    def weight(self) -> str:
        return f"{self.prefix}.w"

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(self.weight, kaiming(rng, (self.out_channels, self.in_channels, 1, 1), self.in_channels),
                  "theta")

    def __call__(self, z: Tensor, leaves: Dict[str, Tensor], norm: Optional[NormContext] = None) -> Tensor:
        if z.shape[1] != self.in_channels:
            raise ShapeError(f"{self.prefix}: expected {self.in_channels} channels, got {z.shape}")
        if self.reduce:
            _check_spatial(self.prefix, z, 2)
            z = spatial_reduce(z)
        h = P.conv2d(P.relu(z), leaves[self.weight])
        return standardize(h, self.prefix, norm)


@dataclass
class Stem:
    """3 x 3 convolution and standardization producing both cell inputs."""

    in_channels: int
    cell_channels: int
    prefix: str = "stem"

    @property
    def weight(self) -> str:
        return f"{self.prefix}.w"

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(self.weight, kaiming(rng, (self.cell_channels, self.in_channels, 3, 3), 9 * self.in_channels),
                  "theta")

    def pre_activation(self, x: Tensor, leaves: Dict[str, Tensor]) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"stem: expected (batch, {self.in_channels}, H, W), got {x.shape}")
        return P.conv2d(x, leaves[self.weight])

    def __call__(self, x: Tensor, leaves: Dict[str, Tensor], norm: Optional[NormContext] = None):
        h = standardize(self.pre_activation(x, leaves), self.prefix, norm)
        return h, h


def build_stem(in_channels: int, cell_channels: int) -> Stem:
    if in_channels < 1 or cell_channels < 1:
        raise ContractError("channel counts must be positive")
    return Stem(in_channels, cell_channels)


@dataclass
class Classifier:
    """Global average pooling followed by a linear layer."""

    in_features: int
    num_classes: int
    prefix: str = "classifier"

    @property
    def weight(self) -> str:
        return f"{self.prefix}.w"

    @property
    def bias(self) -> str:
        return f"{self.prefix}.b"

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(self.weight, rng.standard_normal((self.in_features, self.num_classes))
                  * np.sqrt(1.0 / self.in_features), "theta")
        store.add(self.bias, np.zeros(self.num_classes), "theta")

    def __call__(self, features: Tensor, leaves: Dict[str, Tensor]) -> Tensor:
        return build_classifier(features, leaves[self.weight], leaves[self.bias])


def build_classifier(features: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Logits of shape (batch, num_classes) from rank-4 features."""
    if features.ndim != 4:
        raise ShapeError(f"classifier: features must be rank-4, got {features.shape}")
    pooled = P.global_avg_pool(features)
    return P.add(P.matmul(pooled, weight), bias)
