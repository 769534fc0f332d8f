"""Entropy regularizers that steer architecture weights toward a discrete cell.

``op_entropy_*`` penalize the entropy of each edge's operation distribution.
``edge_group_loss`` penalizes the entropy of the edge distribution inside an
:class:`EdgeGroup` plus the squared gap between the sum of its positive
betas and the group's target cardinality ``K``. Epoch schedules scale both
terms against the classification loss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import ContractError, Tensor
from .autodiff import primitives as P
from .autodiff.primitives import PROB_FLOOR
from .supernet import cell_edges

Edge = Tuple[int, int]


class ConfigError(ValueError):
    """Invalid regularizer, schedule, or group configuration."""


def _entropy(p: Tensor) -> Tensor:
    return P.scale(P.sum(P.multiply(p, P.log(p, floor=PROB_FLOOR))), -1.0)


def op_entropy_edge(alpha_edge: Tensor) -> Tensor:
    """Entropy of ``softmax(alpha_edge)`` for one edge, in ``[0, ln |O|]``."""
    if alpha_edge.data.size == 0:
        raise ContractError("op_entropy_edge: empty alpha vector")
    return _entropy(P.softmax(alpha_edge, axis=-1))


def op_entropy_total(alphas: Union[Tensor, Mapping[str, Tensor], Sequence[Tensor]]) -> Tensor:
    """Sum of per-edge operation entropies over every (E, |O|) alpha block."""
    if isinstance(alphas, Tensor):
        alphas = [alphas]
    elif isinstance(alphas, Mapping):
        alphas = list(alphas.values())
    total = None
    for a in alphas:
        h = _entropy(P.softmax(a, axis=-1))
        total = h if total is None else P.add(total, h)
    if total is None:
        raise ContractError("op_entropy_total: no alpha parameters")
    return total


@dataclass(frozen=True)
class EdgeGroup:
    """Candidate edges of which exactly ``k`` are to be kept."""

    edges: Tuple[Edge, ...]
    k: int

    def __post_init__(self):
        edges = tuple(tuple(int(v) for v in e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges:
            raise ConfigError("edge group must contain at least one edge")
        if len(set(edges)) != len(edges):
            raise ConfigError(f"edge group lists an edge twice: {edges}")
        if not 1 <= self.k <= len(edges):
            raise ConfigError(f"edge group target k={self.k} outside [1, {len(edges)}]")


def node_group(j: int, k: int) -> EdgeGroup:
    return EdgeGroup(tuple((i, j) for i in range(j)), k)


def nodes_group(nodes: Iterable[int], k: int) -> EdgeGroup:
    return EdgeGroup(tuple((i, j) for j in nodes for i in range(j)), k)


def balanced_groups(num_nodes: int = 6, k: int = 2) -> List[EdgeGroup]:
    """One group per intermediate node with target ``k`` (2 keeps 8 of 14 edges)."""
    return [node_group(j, k) for j in range(2, num_nodes)]


GROUP_PRESETS: Dict[str, List[EdgeGroup]] = {
    "balanced-8": balanced_groups(6, 2),
    "imbalanced-3": [nodes_group((2, 3), 1), node_group(4, 1), node_group(5, 1)],
    "imbalanced-4": [node_group(2, 1), node_group(3, 1), node_group(4, 1), node_group(5, 1)],
    "imbalanced-5": [node_group(2, 1), node_group(3, 1), node_group(4, 1), node_group(5, 2)],
    "imbalanced-6": [node_group(2, 1), node_group(3, 1), node_group(4, 2), node_group(5, 2)],
}


def group_preset(name: str, num_nodes: int = 6) -> List[EdgeGroup]:
    if name == "balanced-8" and num_nodes != 6:
        return balanced_groups(num_nodes, 2)
    if name not in GROUP_PRESETS:
        raise ConfigError(f"unknown group preset {name!r}; choose from {sorted(GROUP_PRESETS)}")
    if num_nodes != 6:
        raise ConfigError(f"preset {name!r} is defined for 6-node cells")
    return list(GROUP_PRESETS[name])


def validate_groups(groups: Sequence[EdgeGroup], num_nodes: int = 6) -> None:
    """Groups must partition the edge set of the cell exactly."""
    expected = set(cell_edges(num_nodes))
    seen: Dict[Edge, int] = {}
    for g_idx, group in enumerate(groups):
        for edge in group.edges:
            if edge not in expected:
                raise ConfigError(f"group {g_idx}: edge {edge} is not an edge of a {num_nodes}-node cell")
            if edge in seen:
                raise ConfigError(f"edge {edge} appears in groups {seen[edge]} and {g_idx}")
            seen[edge] = g_idx
    missing = sorted(expected - set(seen))
    if missing:
        raise ConfigError(f"edges not covered by any group: {missing}")


def edge_indices(group: EdgeGroup, num_nodes: int = 6) -> np.ndarray:
    index = {e: n for n, e in enumerate(cell_edges(num_nodes))}
    return np.array([index[e] for e in group.edges], dtype=np.intp)


def edge_group_terms(beta_group: Tensor, k: int) -> Tuple[Tensor, Tensor]:
    """(entropy of softmax over the group, ``(sum of positive betas - k)^2``)."""
    entropy = _entropy(P.softmax(beta_group, axis=-1))
    positive = (beta_group.data > 0).astype(beta_group.data.dtype)
    cardinality = P.square(P.add(P.sum(P.multiply(beta_group, positive)), -float(k)))
    return entropy, cardinality


def edge_group_loss(beta_group: Tensor, k: int) -> Tensor:
    if beta_group.data.size == 0:
        raise ContractError("edge_group_loss: empty group")
    if k < 1:
        raise ContractError("edge_group_loss: k must be at least 1")
    entropy, cardinality = edge_group_terms(beta_group, k)
    return P.add(entropy, cardinality)


def edge_loss_terms(betas: Mapping[str, Tensor], groups: Sequence[EdgeGroup],
                    num_nodes: int = 6) -> Tuple[Tensor, Tensor]:
    """Summed (entropy, cardinality) terms over all groups of all cell types."""
    validate_groups(groups, num_nodes)
    idx = [edge_indices(g, num_nodes) for g in groups]
    ent, card = None, None
    for beta in betas.values():
        for group, ix in zip(groups, idx):
            e, c = edge_group_terms(P.take(beta, ix), group.k)
            ent = e if ent is None else P.add(ent, e)
            card = c if card is None else P.add(card, c)
    if ent is None:
        raise ContractError("edge loss: no beta parameters")
    return ent, card


def edge_loss_total(betas: Mapping[str, Tensor], groups: Sequence[EdgeGroup], num_nodes: int = 6) -> Tensor:
    ent, card = edge_loss_terms(betas, groups, num_nodes)
    return P.add(ent, card)


# epoch schedules

SCHEDULE_KINDS = ("const", "linear", "exp", "step", "log")


@dataclass(frozen=True)
class ScheduleSpec:
    """Monotone epoch multiplier in [0, 1]; zero before ``activation``."""

    kind: str = "const"
    activation: int = 0
    k: float = 5.0
    t0: float = 0.5

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; choose from {SCHEDULE_KINDS}")
        if self.activation < 0:
            raise ConfigError("schedule activation epoch must be non-negative")
        if self.kind in ("exp", "log") and not self.k > 0:
            raise ConfigError("schedule shape constant k must be positive")
        if self.kind == "step" and not 0.0 <= self.t0 <= 1.0:
            raise ConfigError("step time t0 must lie in [0, 1]")


def schedule_value(spec: ScheduleSpec, epoch: int, total_epochs: int) -> float:
    """Value of the control function at ``epoch`` of ``total_epochs``."""
    if not 0 <= epoch < total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < spec.activation:
        return 0.0
    span = total_epochs - 1 - spec.activation
    t = 1.0 if span <= 0 else min(1.0, max(0.0, (epoch - spec.activation) / span))
    kind = spec.kind
    if kind == "const":
        return 1.0
    if kind == "linear":
        return t
    if kind == "exp":
        return math.expm1(spec.k * t) / math.expm1(spec.k)
    if kind == "log":
        return math.log1p(spec.k * t) / math.log1p(spec.k)
    return 0.0 if t < spec.t0 else 1.0


@dataclass(frozen=True)
class Schedules:
    """Control functions for the classification-relative, operation, and edge terms.

    Defaults: linear ramp on the regularizer block, log on the operation
    term, constant on the edge term, and edge weight = 4 x its control value.
    """

    lambda_c: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("linear"))
    lambda_1: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("log"))
    lambda_2: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("const"))
    beta_multiplier: float = 4.0
    enabled: bool = True

    def factors(self, epoch: int, total_epochs: int) -> Tuple[float, float, float]:
        """(lambda_c, lambda_alpha, lambda_beta) at ``epoch``."""
        if not self.enabled:
            return 0.0, 0.0, 0.0
        lc = schedule_value(self.lambda_c, epoch, total_epochs)
        la = schedule_value(self.lambda_1, epoch, total_epochs)
        lb = self.beta_multiplier * schedule_value(self.lambda_2, epoch, total_epochs)
        return lc, la, lb


BASELINE = Schedules(enabled=False)


@dataclass
class LossReport:
    l_c: float
    l_o: float
    l_e: float
    lambda_c: float
    lambda_alpha: float
    lambda_beta: float
    total: float
    l_e_entropy: float = 0.0
    l_e_cardinality: float = 0.0

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def total_loss(l_c, l_o, l_e, schedules: Schedules, epoch: int, total_epochs: int,
               l_e_parts: Optional[Tuple[float, float]] = None):
    """``L_C + lambda_c * (lambda_alpha * L_O + lambda_beta * L_E)``.

    Accepts tape tensors (returns ``(tensor, report)``) or floats (returns
    ``(float, report)``).
    """
    lc, la, lb = schedules.factors(epoch, total_epochs)
    if isinstance(l_c, Tensor):
        reg = P.add(P.scale(l_o, la), P.scale(l_e, lb))
        total = P.add(l_c, P.scale(reg, lc))
        value = total
        nums = float(l_c.data), float(l_o.data), float(l_e.data), float(total.data)
    else:
        value = l_c + lc * (la * l_o + lb * l_e)
        nums = float(l_c), float(l_o), float(l_e), float(value)
    ent, card = l_e_parts if l_e_parts is not None else (0.0, 0.0)
    report = LossReport(nums[0], nums[1], nums[2], lc, la, lb, nums[3], float(ent), float(card))
    return value, report
