"""Discrete architectures: derivation, one-hot probing, and sub-networks."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ContractError
from .ops import OP_KINDS, NormContext, OpKind
from .regularizers import ConfigError, EdgeGroup, edge_indices, validate_groups
from .supernet import ArchParams, CellNetwork, MixingWeights, NetworkConfig, cell_edges, fixed_weights

log = logging.getLogger(__name__)

Edge = Tuple[int, int]
GENOTYPE_SCHEMA_VERSION = 1


@dataclass
class Genotype:
    """Kept edges with their operation, per cell type."""

    cells: Dict[str, List[Tuple[Edge, OpKind]]]
    groups: List[EdgeGroup]
    num_nodes: int = 6

    def __post_init__(self):
        for t, kept in self.cells.items():
            edges = [e for e, _ in kept]
            if len(set(edges)) != len(edges):
                raise ContractError(f"genotype {t}: an edge is kept twice")
            for group in self.groups:
                n = sum(e in group.edges for e in edges)
                if n != group.k:
                    raise ContractError(f"genotype {t}: group {group.edges} keeps {n} edges, expected {group.k}")

    def kept_edges(self, cell_type: str) -> List[Edge]:
        return [e for e, _ in self.cells[cell_type]]

    def num_kept(self, cell_type: str) -> int:
        return len(self.cells[cell_type])

    def to_dict(self) -> dict:
        return {
            "schema_version": GENOTYPE_SCHEMA_VERSION,
            "num_nodes": self.num_nodes,
            "cells": {t: [{"edge": list(e), "op": op.value} for e, op in kept] for t, kept in self.cells.items()},
            "groups": [{"edges": [list(e) for e in g.edges], "k": g.k} for g in self.groups],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "Genotype":
        try:
            if d["schema_version"] != GENOTYPE_SCHEMA_VERSION:
                raise ConfigError(f"genotype.schema_version: unsupported {d['schema_version']!r}")
            cells = {t: [(tuple(item["edge"]), OpKind(item["op"])) for item in kept]
                     for t, kept in d["cells"].items()}
            groups = [EdgeGroup(tuple(tuple(e) for e in g["edges"]), int(g["k"])) for g in d["groups"]]
            return cls(cells, groups, int(d.get("num_nodes", 6)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed genotype: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed genotype JSON: {exc}") from exc

    def __eq__(self, other) -> bool:
        return isinstance(other, Genotype) and self.to_dict() == other.to_dict()


def _group_softmax(beta: np.ndarray) -> np.ndarray:
    finite = np.isfinite(beta)
    if not finite.any():
        return np.full_like(beta, 1.0 / len(beta))
    z = beta - beta[finite].max()
    e = np.where(finite, np.exp(z), 0.0)
    return e / e.sum()


def _top_k(values: np.ndarray, edges: Sequence[Edge], k: int, where: str) -> List[int]:
    """Indices of the k largest values; ties prefer the lexicographically smaller edge."""
    order = sorted(range(len(values)), key=lambda n: (-values[n], edges[n]))
    if k < len(order) and values[order[k - 1]] == values[order[k]]:
        log.warning("%s: tie at the selection boundary between edges %s and %s; keeping %s",
                    where, edges[order[k - 1]], edges[order[k]], edges[order[k - 1]])
    return order[:k]


def _argmax_op(row: np.ndarray, where: str) -> int:
    best = int(np.argmax(row))
    if np.count_nonzero(row == row[best]) > 1:
        log.warning("%s: tied operation weights; keeping %s", where, OP_KINDS[best].value)
    return best


def derive_genotype(arch: ArchParams, groups: Sequence[EdgeGroup]) -> Genotype:
    """Argmax operation per edge; top-K edges per group by softmax(beta) over the group."""
    validate_groups(groups, arch.num_nodes)
    edges = cell_edges(arch.num_nodes)
    cells = {}
    for t in arch.cell_types:
        kept: List[Tuple[Edge, OpKind]] = []
        for group in groups:
            ix = edge_indices(group, arch.num_nodes)
            mass = _group_softmax(arch.beta[t][ix])
            for n in _top_k(mass, group.edges, group.k, f"{t} group {group.edges}"):
                e = int(ix[n])
                op = _argmax_op(arch.alpha[t][e], f"{t} edge {edges[e]}")
                kept.append((edges[e], OP_KINDS[op]))
        kept.sort(key=lambda item: (item[0][1], item[0][0]))
        cells[t] = kept
    return Genotype(cells, list(groups), arch.num_nodes)


def one_hot_arch(arch: ArchParams, genotype: Genotype) -> ArchParams:
    """Fixed parameters: chosen operations at weight 1, kept edges at weight 1, the rest 0.

    Dropped edges are removed from node sums rather than renormalized.
    """
    edges = cell_edges(arch.num_nodes)
    index = {e: n for n, e in enumerate(edges)}
    alpha, beta = {}, {}
    for t in arch.cell_types:
        if t not in genotype.cells:
            raise ContractError(f"genotype has no {t} cell")
        a = np.full_like(arch.alpha[t], -np.inf)
        a[np.arange(len(edges)), np.argmax(arch.alpha[t], axis=1)] = 0.0
        b = np.full_like(arch.beta[t], -np.inf)
        for e, op in genotype.cells[t]:
            n = index[e]
            a[n] = -np.inf
            a[n, op.index] = 0.0
            b[n] = 0.0
        alpha[t], beta[t] = a, b
    return ArchParams(alpha, beta, arch.num_nodes, normalize_edges=False)


def kept_op_mass(arch: ArchParams, genotype: Genotype) -> Dict[str, Dict[str, float]]:
    """softmax(alpha) weight of the chosen operation on every kept edge."""
    index = {e: n for n, e in enumerate(cell_edges(arch.num_nodes))}
    out = {}
    for t in arch.cell_types:
        w = arch.op_weights(t)
        out[t] = {f"{e[0]}-{e[1]}": float(w[index[e], op.index]) for e, op in genotype.cells[t]}
    return out


def kept_edge_mass(arch: ArchParams, genotype: Genotype) -> Dict[str, List[float]]:
    """Per group, the group-softmax(beta) mass on its kept edges."""
    out = {}
    for t in arch.cell_types:
        kept = set(genotype.kept_edges(t))
        masses = []
        for group in genotype.groups:
            ix = edge_indices(group, arch.num_nodes)
            mass = _group_softmax(arch.beta[t][ix])
            masses.append(float(sum(m for m, e in zip(mass, group.edges) if e in kept)))
        out[t] = masses
    return out


@dataclass
class GapReport:
    supernet_accuracy: float
    discretized_accuracy: float
    kept_op_mass: Dict[str, Dict[str, float]] = field(default_factory=dict)
    kept_edge_mass: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def drop(self) -> float:
        return self.supernet_accuracy - self.discretized_accuracy

    def as_dict(self) -> dict:
        return {"supernet_accuracy": self.supernet_accuracy,
                "discretized_accuracy": self.discretized_accuracy,
                "drop": self.drop,
                "kept_op_mass": self.kept_op_mass,
                "kept_edge_mass": self.kept_edge_mass}


def accuracy(net: CellNetwork, images: np.ndarray, labels: np.ndarray, weights: Mapping[str, MixingWeights],
             norm: Optional[NormContext] = None, batch_size: int = 100) -> float:
    """Percentage of correctly classified samples."""
    if len(labels) == 0:
        raise ConfigError("empty evaluation set")
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = net.logits(images[start:start + batch_size], weights, norm)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return 100.0 * correct / len(labels)


def collect_norm_stats(net: CellNetwork, images: np.ndarray, weights: Mapping[str, MixingWeights],
                       batch_size: int = 100) -> NormContext:
    """Frozen standardization statistics pooled over ``images``."""
    ctx = NormContext("collect")
    for start in range(0, len(images), batch_size):
        net.logits(images[start:start + batch_size], weights, ctx)
    return ctx.frozen()


def gap_probe(net: CellNetwork, arch: ArchParams, genotype: Genotype, eval_images: np.ndarray,
              eval_labels: np.ndarray, norm: Optional[NormContext] = None,
              stats_images: Optional[np.ndarray] = None) -> GapReport:
    """Accuracy of the continuous super-network vs its one-hot discretization, same weights.

    Both evaluations use the same frozen standardization statistics, taken
    from ``norm`` or collected from the continuous model on ``stats_images``
    (default: the evaluation images).
    """
    if len(eval_labels) == 0:
        raise ConfigError("gap probe needs a non-empty evaluation set")
    continuous = fixed_weights(arch)
    if norm is None or norm.mode != "frozen":
        norm = collect_norm_stats(net, eval_images if stats_images is None else stats_images, continuous)
    discrete = fixed_weights(one_hot_arch(arch, genotype))
    return GapReport(accuracy(net, eval_images, eval_labels, continuous, norm),
                     accuracy(net, eval_images, eval_labels, discrete, norm),
                     kept_op_mass(arch, genotype), kept_edge_mass(arch, genotype))


def subnetwork_candidates(genotype: Genotype, config: NetworkConfig):
    if genotype.num_nodes != config.num_nodes:
        raise ContractError(f"genotype has {genotype.num_nodes}-node cells, network {config.num_nodes}")
    missing = [t for t in config.cell_types if t not in genotype.cells]
    if missing:
        raise ContractError(f"genotype lacks cell types {missing}")
    index = {e: n for n, e in enumerate(cell_edges(config.num_nodes))}
    return {t: {index[e]: (op,) for e, op in genotype.cells[t]} for t in config.cell_types}


def subnetwork_weights(net: CellNetwork) -> Dict[str, MixingWeights]:
    """Unit weights on every kept edge and operation of a sub-network."""
    out = {}
    for t, cand in net.candidates.items():
        out[t] = MixingWeights({e: np.ones(len(k)) for e, k in cand.items()},
                               {e: 1.0 for e in cand})
    return out


def instantiate_subnetwork(genotype: Genotype, config: NetworkConfig, seed: int = 0) -> CellNetwork:
    """Freshly initialized network containing only the genotype's edges and operations."""
    return CellNetwork(config, subnetwork_candidates(genotype, config), seed)
