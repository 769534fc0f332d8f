"""Cell-based super-network with mixed-operation edges.

Edge ``(i, j)`` computes ``sum_o a[o] * o(z_i)`` with ``a = softmax(alpha_ij)``;
node ``j`` sums its incoming flows weighted by ``b = softmax`` of the betas
of its incoming edges. A cell outputs the channel concatenation of its
intermediate nodes. Architecture parameters are shared by all cells of the
same type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import ContractError, ParamStore, ShapeError, Tape, Tensor, default_dtype
from .autodiff import primitives as P
from .ops import (NUM_OPS, OP_KINDS, Classifier, NormContext, OpInstance, OpKind, ReLUConvBN, Stem,
                  build_stem)

CELL_TYPES = ("normal", "reduction")

Weight = Union[Tensor, np.ndarray, float]


@dataclass(frozen=True)
class CellSpec:
    """DAG shape of a cell: nodes 0 and 1 are inputs, the rest intermediate."""

    num_nodes: int = 6
    cell_type: str = "normal"

    def __post_init__(self):
        if self.num_nodes < 3:
            raise ContractError("a cell needs at least one intermediate node")
        if self.cell_type not in CELL_TYPES:
            raise ContractError(f"unknown cell type {self.cell_type!r}")

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return cell_edges(self.num_nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def intermediate_nodes(self) -> range:
        return range(2, self.num_nodes)

    def node_edges(self, j: int) -> range:
        """Edge indices whose destination is node ``j`` (contiguous)."""
        return node_edge_range(j)


def cell_edges(num_nodes: int) -> List[Tuple[int, int]]:
    """Edges ``(i, j)`` with ``i < j`` and ``j >= 2``, ordered by ``j`` then ``i``."""
    return [(i, j) for j in range(2, num_nodes) for i in range(j)]


def node_edge_range(j: int) -> range:
    start = sum(range(2, j))
    return range(start, start + j)


# architecture parameters

@dataclass
class ArchParams:
    """Operation logits ``alpha[t]`` (E, |O|) and edge logits ``beta[t]`` (E,) per cell type.

    ``normalize_edges=False`` marks fixed (discretized) parameters whose edge
    weights are ``exp(beta)`` directly, so a kept edge at ``beta = 0`` has
    weight exactly 1 and a dropped edge at ``-inf`` has weight 0.
    """

    alpha: Dict[str, np.ndarray]
    beta: Dict[str, np.ndarray]
    num_nodes: int = 6
    normalize_edges: bool = True

    def __post_init__(self):
        n_edges = len(cell_edges(self.num_nodes))
        if set(self.alpha) != set(self.beta):
            raise ContractError("alpha and beta must cover the same cell types")
        for t in self.alpha:
            if t not in CELL_TYPES:
                raise ContractError(f"unknown cell type {t!r}")
            if self.alpha[t].shape != (n_edges, NUM_OPS) or self.beta[t].shape != (n_edges,):
                raise ShapeError(f"{t}: alpha {self.alpha[t].shape}, beta {self.beta[t].shape} "
                                 f"do not fit {n_edges} edges x {NUM_OPS} ops")

    @property
    def cell_types(self) -> Tuple[str, ...]:
        return tuple(t for t in CELL_TYPES if t in self.alpha)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return cell_edges(self.num_nodes)

    def copy(self) -> "ArchParams":
        return ArchParams({t: a.copy() for t, a in self.alpha.items()},
                          {t: b.copy() for t, b in self.beta.items()},
                          self.num_nodes, self.normalize_edges)

    def op_weights(self, cell_type: str) -> np.ndarray:
        """``softmax(alpha)`` per edge, shape (E, |O|)."""
        return _np_softmax(self.alpha[cell_type], axis=1)

    def edge_weights(self, cell_type: str) -> np.ndarray:
        """Per-node ``softmax(beta)`` (or ``exp(beta)`` when fixed), shape (E,)."""
        beta = self.beta[cell_type]
        if not self.normalize_edges:
            return np.exp(beta)
        out = np.empty_like(beta)
        for j in range(2, self.num_nodes):
            r = node_edge_range(j)
            out[r.start:r.stop] = _np_softmax(beta[r.start:r.stop], axis=0)
        return out

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for t in self.cell_types:
            out[f"alpha.{t}"] = self.alpha[t]
            out[f"beta.{t}"] = self.beta[t]
        return out

    def update(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            kind, t = name.split(".", 1)
            target = self.alpha if kind == "alpha" else self.beta
            if target[t].shape != value.shape:
                raise ShapeError(f"{name}: shape {value.shape} != {target[t].shape}")
            target[t] = np.asarray(value, dtype=target[t].dtype)


def _np_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def init_arch_params(cell_types: Sequence[str] = CELL_TYPES, num_nodes: int = 6, seed: int = 0,
                     std: float = 1e-3, beta_offset: float = 0.0) -> ArchParams:
    """Near-zero logits (near-uniform softmax), deterministic per seed.

    ``beta_offset`` shifts every edge logit by a constant. Per-node softmax
    is shift-invariant, so this changes only which logits count as positive
    for the cardinality term.
    """
    rng = np.random.default_rng([seed, 0xA2C4])
    n_edges = len(cell_edges(num_nodes))
    alpha, beta = {}, {}
    for t in cell_types:
        alpha[t] = rng.normal(0.0, std, size=(n_edges, NUM_OPS)).astype(default_dtype())
        beta[t] = (beta_offset + rng.normal(0.0, std, size=n_edges)).astype(default_dtype())
    return ArchParams(alpha, beta, num_nodes)


# mixing weights as seen by the forward pass

class MixingWeights:
    """Per-edge operation weights and per-edge flow weights for one cell type.

    Entries are tape tensors during search (so gradients reach alpha/beta)
    or plain arrays for fixed evaluation. Exact zeros are skipped.
    """

    def __init__(self, ops: Union[Tensor, np.ndarray], edges: Union[Tensor, np.ndarray]):
        self._ops = ops
        self._edges = edges
        self._rows: Dict[int, Weight] = {}
        self._flows: Dict[int, Weight] = {}

    def op_row(self, e: int) -> Weight:
        if e not in self._rows:
            self._rows[e] = self._ops[e]
        return self._rows[e]

    def edge(self, e: int) -> Weight:
        if e not in self._flows:
            self._flows[e] = self._edges[e]
        return self._flows[e]


def tape_weights(tape: Tape, arch: ArchParams) -> Tuple[Dict[str, MixingWeights], Dict[str, Tensor]]:
    """Record alpha/beta as trainable leaves and return their softmax views."""
    weights, leaves = {}, {}
    for t in arch.cell_types:
        a_leaf = tape.leaf(arch.alpha[t], role="alpha", name=f"alpha.{t}")
        b_leaf = tape.leaf(arch.beta[t], role="beta", name=f"beta.{t}")
        leaves[a_leaf.name] = a_leaf
        leaves[b_leaf.name] = b_leaf
        a = P.softmax(a_leaf, axis=1)
        if arch.normalize_edges:
            parts = []
            for j in range(2, arch.num_nodes):
                r = node_edge_range(j)
                parts.append(P.softmax(P.take(b_leaf, slice(r.start, r.stop)), axis=0))
            b = P.concat(parts, axis=0)
        else:
            b = tape.constant(np.exp(arch.beta[t]))
        weights[t] = MixingWeights(a, b)
    return weights, leaves


def fixed_weights(arch: ArchParams) -> Dict[str, MixingWeights]:
    """Constant mixing weights (no gradient to the architecture)."""
    return {t: MixingWeights(arch.op_weights(t), arch.edge_weights(t)) for t in arch.cell_types}


def _is_zero(w: Weight) -> bool:
    return not isinstance(w, Tensor) and float(w) == 0.0


def _weighted(w: Weight, x: Tensor) -> Tensor:
    if isinstance(w, Tensor):
        return P.multiply(w, x)
    w = float(w)
    return x if w == 1.0 else P.scale(x, w)


def mixed_edge_forward(op_weights: Union[Tensor, np.ndarray], z: Tensor, ops: Sequence[OpInstance],
                       leaves: Dict[str, Tensor], norm: Optional[NormContext] = None,
                       activated: Optional[Tensor] = None) -> Tensor:
    """``sum_o w[o] * op_o(z)`` over the candidate operations of one edge."""
    n = op_weights.shape[0] if isinstance(op_weights, (Tensor, np.ndarray)) else len(op_weights)
    if n != len(ops):
        raise ShapeError(f"mixed edge: {n} weights for {len(ops)} operations")
    out = None
    for o, op in enumerate(ops):
        w = P.take(op_weights, o) if isinstance(op_weights, Tensor) else op_weights[o]
        if _is_zero(w):
            continue
        y = op(z, leaves, norm, activated if op.kind.is_conv else None)
        term = _weighted(w, y)
        out = term if out is None else P.add(out, term)
    return out


def node_forward(edge_weights: Sequence[Weight], flows: Sequence[Tensor]) -> Tensor:
    """``sum_i b_i * f_i`` for one destination node."""
    if len(edge_weights) != len(flows) or not flows:
        raise ShapeError(f"node: {len(edge_weights)} weights for {len(flows)} flows")
    out = None
    for w, f in zip(edge_weights, flows):
        term = _weighted(w, f)
        out = term if out is None else P.add(out, term)
    return out


# network modules

@dataclass
class NetworkConfig:
    in_channels: int = 3
    channels: int = 16
    num_cells: int = 8
    num_nodes: int = 6
    num_classes: int = 10

    def __post_init__(self):
        for name in ("in_channels", "channels", "num_cells", "num_classes"):
            if getattr(self, name) < 1:
                raise ContractError(f"network.{name} must be positive")
        if self.num_nodes < 3:
            raise ContractError("network.num_nodes must be at least 3")

    @property
    def reduction_cells(self) -> Tuple[int, ...]:
        """Reduction positions at 1/3 and 2/3 depth; none for fewer than 3 cells."""
        n = self.num_cells
        if n < 3:
            return ()
        return (n // 3, 2 * n // 3)

    @property
    def cell_types(self) -> Tuple[str, ...]:
        return ("normal", "reduction") if self.reduction_cells else ("normal",)

    @property
    def downsample(self) -> int:
        return 2 ** len(self.reduction_cells)


# Candidate sets: cell_type -> {edge index -> tuple of OpKind}
Candidates = Dict[str, Dict[int, Tuple[OpKind, ...]]]


def full_candidates(config: NetworkConfig) -> Candidates:
    n_edges = len(cell_edges(config.num_nodes))
    return {t: {e: OP_KINDS for e in range(n_edges)} for t in config.cell_types}


@dataclass
class Cell:
    index: int
    spec: CellSpec
    channels: int
    preprocess0: ReLUConvBN
    preprocess1: ReLUConvBN
    ops: Dict[int, List[OpInstance]] = field(default_factory=dict)

    @property
    def reduction(self) -> bool:
        return self.spec.cell_type == "reduction"

    @property
    def out_channels(self) -> int:
        return (self.spec.num_nodes - 2) * self.channels


def cell_forward(cell: Cell, z_prev_prev: Tensor, z_prev: Tensor, weights: MixingWeights,
                 leaves: Dict[str, Tensor], norm: Optional[NormContext] = None) -> Tensor:
    """Channel concatenation of the intermediate nodes of one cell."""
    states = [cell.preprocess0(z_prev_prev, leaves, norm), cell.preprocess1(z_prev, leaves, norm)]
    if states[0].shape != states[1].shape:
        raise ShapeError(f"cell {cell.index}: preprocessed inputs {states[0].shape} vs {states[1].shape}")
    activated: Dict[int, Tensor] = {}
    edges = cell.spec.edges
    b, c, h, w = states[1].shape
    stride = 2 if cell.reduction else 1
    for j in cell.spec.intermediate_nodes:
        flows, flow_weights = [], []
        for e in cell.spec.node_edges(j):
            ops = cell.ops.get(e)
            if not ops:
                continue
            bw = weights.edge(e)
            if _is_zero(bw):
                continue
            i = edges[e][0]
            if i not in activated and any(op.kind.is_conv for op in ops):
                activated[i] = P.relu(states[i])
            flows.append(mixed_edge_forward(weights.op_row(e), states[i], ops, leaves, norm, activated.get(i)))
            flow_weights.append(bw)
        if flows:
            states.append(node_forward(flow_weights, flows))
        else:
            states.append(states[1].tape.constant(np.zeros((b, c, h // stride, w // stride),
                                                           dtype=states[1].data.dtype)))
    return P.concat(states[2:], axis=1)


class CellNetwork:
    """Stem, stacked cells, classifier; edges carry the given candidate sets.

    With full candidates this is the super-network; with one candidate per
    kept edge it is a discrete sub-network.
    """

    def __init__(self, config: NetworkConfig, candidates: Optional[Candidates] = None, seed: int = 0):
        self.config = config
        self.candidates = full_candidates(config) if candidates is None else candidates
        missing = set(config.cell_types) - set(self.candidates)
        if missing:
            raise ContractError(f"no candidates for cell types {sorted(missing)}")
        self.params = ParamStore()
        rng = np.random.default_rng([seed, 0x7E7A])
        c = config.channels
        self.stem: Stem = build_stem(config.in_channels, c)
        self.stem.init_params(self.params, rng)
        c_pp, c_p = c, c
        reduction_prev = False
        self.cells: List[Cell] = []
        for k in range(config.num_cells):
            reduction = k in config.reduction_cells
            if reduction:
                c *= 2
            spec = CellSpec(config.num_nodes, "reduction" if reduction else "normal")
            cell = Cell(k, spec, c,
                        ReLUConvBN(c_pp, c, f"cell{k}.pre0", reduce=reduction_prev),
                        ReLUConvBN(c_p, c, f"cell{k}.pre1"))
            cell.preprocess0.init_params(self.params, rng)
            cell.preprocess1.init_params(self.params, rng)
            for e, kinds in sorted(self.candidates[spec.cell_type].items()):
                i, j = spec.edges[e]
                stride = 2 if reduction and i < 2 else 1
                ops = []
                for kind in kinds:
                    op = OpInstance(kind, stride, c, f"cell{k}.e{i}_{j}.{OpKind(kind).value}")
                    op.init_params(self.params, rng)
                    ops.append(op)
                cell.ops[e] = ops
            self.cells.append(cell)
            c_pp, c_p = c_p, cell.out_channels
            reduction_prev = reduction
        self.classifier = Classifier(c_p, config.num_classes)
        self.classifier.init_params(self.params, rng)

    def num_params(self) -> int:
        return self.params.count()

    def cell_params(self) -> int:
        return int(sum(v.size for k, v in self.params.items() if ".e" in k and k.startswith("cell")))

    def forward(self, x: Tensor, leaves: Dict[str, Tensor], weights: Mapping[str, MixingWeights],
                norm: Optional[NormContext] = None) -> Tensor:
        return network_forward(self, x, leaves, weights, norm)

    def logits(self, x: np.ndarray, weights: Mapping[str, MixingWeights],
               norm: Optional[NormContext] = None) -> np.ndarray:
        """Forward pass without keeping the tape around."""
        tape = Tape()
        leaves = tape.bind(self.params)
        return self.forward(tape.leaf(x), leaves, weights, norm).data


def network_forward(net: CellNetwork, x: Tensor, leaves: Dict[str, Tensor],
                    weights: Mapping[str, MixingWeights], norm: Optional[NormContext] = None) -> Tensor:
    """Logits (batch, num_classes) for images ``x`` (batch, C, H, W)."""
    cfg = net.config
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"network: expected (batch, {cfg.in_channels}, H, W), got {x.shape}")
    if x.shape[2] % cfg.downsample or x.shape[3] % cfg.downsample:
        raise ContractError(f"network: H, W must be divisible by {cfg.downsample}, got {x.shape[2:]}")
    s0, s1 = net.stem(x, leaves, norm)
    for cell in net.cells:
        s0, s1 = s1, cell_forward(cell, s0, s1, weights[cell.spec.cell_type], leaves, norm)
    return net.classifier(s1, leaves)


def SuperNetwork(config: NetworkConfig, seed: int = 0) -> CellNetwork:  # noqa: N802
    """The super-network: every edge carries all |O| candidate operations."""
    return CellNetwork(config, None, seed)
