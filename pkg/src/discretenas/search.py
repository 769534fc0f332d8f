"""Alternating first-order search and stand-alone sub-network retraining.

Each step updates the network weights on a weight-split batch with the
classification loss only, then updates the architecture logits on an
architecture-split batch with the full regularized objective, then clamps
the edge logits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .autodiff import NumericError, Tape, default_dtype, set_default_dtype
from .autodiff import primitives as P
from .config import RunConfig
from .data import Dataset, SplitSpec, batches, channel_stats, load_cifar10_dir, normalize, split, synth_generate
from .discretize import (GapReport, Genotype, _group_softmax, accuracy, collect_norm_stats, derive_genotype,
                         gap_probe, instantiate_subnetwork, subnetwork_weights)
from .ops import NormContext
from .optim import SGD, Adam, OptimState, cosine_lr, project_beta
from .regularizers import (EdgeGroup, LossReport, Schedules, edge_indices, edge_loss_terms, op_entropy_total,
                           total_loss)
from .supernet import ArchParams, CellNetwork, MixingWeights, SuperNetwork, fixed_weights, init_arch_params, tape_weights

log = logging.getLogger(__name__)

StepCallback = Callable[[dict], None]


# data

@dataclass
class TaskData:
    """Standardized train/test images plus the statistics used to standardize them."""

    train: Dataset
    test: Dataset
    mean: np.ndarray
    std: np.ndarray


def load_task(cfg: RunConfig) -> TaskData:
    task = cfg.task
    if task.kind == "synthetic":
        full = synth_generate(task.classes, task.train_count + task.test_count, task.height, task.width,
                              seed=cfg.seed)
        train = full.subset(np.arange(task.train_count))
        test = full.subset(np.arange(task.train_count, len(full)))
    else:
        train, test = load_cifar10_dir(task.path)
        train = train.subset(np.arange(min(task.train_count, len(train))))
        test = test.subset(np.arange(min(task.test_count, len(test))))
    mean, std = channel_stats(train)
    dtype = default_dtype()
    return TaskData(Dataset(normalize(train.images, mean, std).astype(dtype), train.labels, train.num_classes),
                    Dataset(normalize(test.images, mean, std).astype(dtype), test.labels, test.num_classes),
                    mean, std)


# single updates

def theta_step(net: CellNetwork, weights: Mapping[str, MixingWeights], x: np.ndarray, y: np.ndarray,
               sgd: SGD, lr: float) -> float:
    """One SGD step on the network weights with the classification loss alone."""
    tape = Tape()
    leaves = tape.bind(net.params)
    loss = P.cross_entropy(net.forward(tape.leaf(x), leaves, weights, NormContext("batch")), y)
    names = net.params.names("theta")
    grads = tape.gradients(loss, names)
    new = sgd.step({k: net.params[k] for k in names}, grads, lr)
    for k, v in new.items():
        net.params[k] = v
    return float(loss.data)


def arch_objective(net: CellNetwork, arch: ArchParams, x: np.ndarray, y: np.ndarray,
                   schedules: Schedules, groups: Sequence[EdgeGroup], epoch: int, total_epochs: int):
    """Record the regularized objective on a fresh tape; returns (tape, loss, leaves, report)."""
    tape = Tape()
    leaves = tape.bind(net.params)
    weights, arch_leaves = tape_weights(tape, arch)
    l_c = P.cross_entropy(net.forward(tape.leaf(x), leaves, weights, NormContext("batch")), y)
    alphas = {k: v for k, v in arch_leaves.items() if k.startswith("alpha.")}
    betas = {k: v for k, v in arch_leaves.items() if k.startswith("beta.")}
    l_o = op_entropy_total(alphas)
    ent, card = edge_loss_terms(betas, groups, arch.num_nodes)
    l_e = P.add(ent, card)
    loss, report = total_loss(l_c, l_o, l_e, schedules, epoch, total_epochs,
                              (float(ent.data), float(card.data)))
    return tape, loss, arch_leaves, report


def arch_step(net: CellNetwork, arch: ArchParams, x: np.ndarray, y: np.ndarray, adam_alpha: Adam, adam_beta: Adam,
              schedules: Schedules, groups: Sequence[EdgeGroup], epoch: int, total_epochs: int,
              beta_bound: float = 1.0) -> LossReport:
    """One Adam step on alpha and beta with the full objective, then the beta clamp."""
    tape, loss, arch_leaves, report = arch_objective(net, arch, x, y, schedules, groups, epoch, total_epochs)
    grads = tape.gradients(loss, list(arch_leaves))
    cur = arch.arrays()
    a_names = [k for k in cur if k.startswith("alpha.")]
    b_names = [k for k in cur if k.startswith("beta.")]
    arch.update(adam_alpha.step({k: cur[k] for k in a_names}, {k: grads[k].astype(cur[k].dtype) for k in a_names}))
    arch.update(adam_beta.step({k: cur[k] for k in b_names}, {k: grads[k].astype(cur[k].dtype) for k in b_names}))
    project_beta(arch, beta_bound)
    return report


# per-step diagnostics

def edge_max_alpha(arch: ArchParams) -> Dict[str, List[float]]:
    return {t: [float(v) for v in arch.op_weights(t).max(axis=1)] for t in arch.cell_types}


def group_topk_mass(arch: ArchParams, groups: Sequence[EdgeGroup]) -> Dict[str, List[float]]:
    """Per group, the largest-K mass of softmax(beta) taken over the group."""
    out = {}
    for t in arch.cell_types:
        masses = []
        for g in groups:
            m = np.sort(_group_softmax(arch.beta[t][edge_indices(g, arch.num_nodes)]))[::-1]
            masses.append(float(m[:g.k].sum()))
        out[t] = masses
    return out


def mean_op_entropy(arch: ArchParams) -> float:
    hs = []
    for t in arch.cell_types:
        p = np.maximum(arch.op_weights(t), 1e-12)
        hs.append(-(p * np.log(p)).sum(axis=1))
    return float(np.mean(np.concatenate(hs)))


@dataclass
class Snapshot:
    """softmax(alpha) (E, |O|) and per-node softmax(beta) (E,) per cell type at the end of an epoch."""

    epoch: int
    op_weights: Dict[str, np.ndarray]
    edge_weights: Dict[str, np.ndarray]


def snapshot(arch: ArchParams, epoch: int) -> Snapshot:
    return Snapshot(epoch, {t: arch.op_weights(t) for t in arch.cell_types},
                    {t: arch.edge_weights(t) for t in arch.cell_types})


def _mean_report(reports: Sequence[LossReport]) -> LossReport:
    keys = LossReport.__dataclass_fields__
    return LossReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys})


# epochs and runs

def search_epoch(net: CellNetwork, arch: ArchParams, data_w: Dataset, data_a: Dataset, optim: OptimState,
                 schedules: Schedules, epoch: int, total_epochs: int, groups: Sequence[EdgeGroup],
                 batch_size: int, seed: int, lr0: float = 0.25, beta_bound: float = 1.0,
                 on_step: Optional[StepCallback] = None) -> List[LossReport]:
    """One pass of paired (weight batch, architecture batch) updates."""
    if len(data_w) == 0 or len(data_a) == 0:
        raise ValueError("both data splits must be non-empty")
    lr = cosine_lr(epoch, total_epochs, lr0)
    reports = []
    pairs = zip(batches(data_w, batch_size, seed, 2 * epoch), batches(data_a, batch_size, seed, 2 * epoch + 1))
    for step, ((xw, yw), (xa, ya)) in enumerate(pairs):
        try:
            l_theta = theta_step(net, fixed_weights(arch), xw, yw, optim.sgd, lr)
            report = arch_step(net, arch, xa, ya, optim.adam_alpha, optim.adam_beta, schedules, groups,
                               epoch, total_epochs, beta_bound)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, batch {step}: {exc}") from exc
        reports.append(report)
        if on_step is not None:
            on_step({"epoch": epoch, "step": step, "report": report, "theta_loss": l_theta,
                     "lr_theta": lr, "lr_arch": optim.adam_alpha.lr, "arch": arch})
    optim.epoch = epoch + 1
    return reports


@dataclass
class SearchResult:
    arch: ArchParams
    net: CellNetwork
    epoch_reports: List[LossReport]
    step_reports: List[LossReport]
    snapshots: List[Snapshot]
    genotype: Genotype
    groups: List[EdgeGroup]
    data: TaskData
    optim: OptimState
    config: RunConfig
    gap: Optional[GapReport] = None

    def summary(self) -> dict:
        """Final entropies, kept masses, and gap report (no timing fields)."""
        last = self.epoch_reports[-1]
        return {
            "epochs": len(self.epoch_reports),
            "final_loss": last.as_dict(),
            "mean_op_entropy": mean_op_entropy(self.arch),
            "edge_max_alpha": edge_max_alpha(self.arch),
            "group_topk_mass": group_topk_mass(self.arch, self.groups),
            "max_beta": float(max(b.max() for b in self.arch.beta.values())),
            "genotype": self.genotype.to_dict(),
            "gap": self.gap.as_dict() if self.gap is not None else None,
        }


def make_optim(cfg: RunConfig) -> OptimState:
    s = cfg.search
    betas = tuple(s.arch_betas)
    return OptimState(SGD(s.lr0, s.momentum, s.weight_decay),
                      Adam(s.arch_lr, betas, s.arch_weight_decay, s.arch_eps),
                      Adam(s.arch_lr, betas, s.arch_weight_decay, s.arch_eps))


def run_search(cfg: RunConfig, on_step: Optional[StepCallback] = None, probe: bool = True) -> SearchResult:
    """Full search for one configuration; deterministic per seed."""
    cfg.validate()
    groups = cfg.edge_groups()
    schedules = cfg.schedules()
    previous = default_dtype()
    set_default_dtype(np.dtype(cfg.search.precision).type)
    try:
        data = load_task(cfg)
        data_w, data_a = split(data.train, SplitSpec(cfg.search.split_fraction, cfg.seed))
        net = SuperNetwork(cfg.network_config(), cfg.seed)
        arch = init_arch_params(cfg.network_config().cell_types, cfg.network.nodes, cfg.seed,
                                beta_offset=cfg.search.beta_init_offset)
        optim = make_optim(cfg)
        total = cfg.search.epochs
        epoch_reports, step_reports, snaps = [], [], []
        for epoch in range(total):
            reports = search_epoch(net, arch, data_w, data_a, optim, schedules, epoch, total, groups,
                                   cfg.search.batch_size, cfg.seed, cfg.search.lr0, cfg.search.beta_bound,
                                   on_step)
            step_reports.extend(reports)
            epoch_reports.append(_mean_report(reports))
            snaps.append(snapshot(arch, epoch))
            log.info("epoch %d/%d: L_C %.4f L_O %.4f L_E %.4f", epoch + 1, total, epoch_reports[-1].l_c,
                     epoch_reports[-1].l_o, epoch_reports[-1].l_e)
        genotype = derive_genotype(arch, groups)
        result = SearchResult(arch, net, epoch_reports, step_reports, snaps, genotype, groups, data, optim, cfg)
        if probe:
            result.gap = gap_probe(net, arch, genotype, data.test.images, data.test.labels,
                                   stats_images=data_w.images)
        return result
    finally:
        set_default_dtype(previous)


# retraining

@dataclass
class RetrainReport:
    accuracy: float
    train_accuracy: float
    epochs: int
    num_params: int
    cell_params: int
    final_loss: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def train_subnetwork(genotype: Genotype, cfg: RunConfig, data: Optional[TaskData] = None,
                     on_epoch: Optional[Callable[[int, float], None]] = None) -> RetrainReport:
    """Train the discrete architecture from scratch on the full training split; report test accuracy."""
    r = cfg.retrain
    previous = default_dtype()
    set_default_dtype(np.dtype(cfg.search.precision).type)
    try:
        data = load_task(cfg) if data is None else data
        net = instantiate_subnetwork(genotype, cfg.retrain_network_config(), cfg.seed)
        weights = subnetwork_weights(net)
        sgd = SGD(r.lr0, r.momentum, r.weight_decay)
        loss = float("nan")
        for epoch in range(r.epochs):
            lr = cosine_lr(epoch, r.epochs, r.lr0)
            losses = []
            for step, (x, y) in enumerate(batches(data.train, r.batch_size, cfg.seed + 1, epoch)):
                try:
                    losses.append(theta_step(net, weights, x, y, sgd, lr))
                except NumericError as exc:
                    raise NumericError(f"retrain epoch {epoch}, batch {step}: {exc}") from exc
            loss = float(np.mean(losses))
            if on_epoch is not None:
                on_epoch(epoch, loss)
        norm = collect_norm_stats(net, data.train.images, weights)
        return RetrainReport(accuracy(net, data.test.images, data.test.labels, weights, norm),
                             accuracy(net, data.train.images, data.train.labels, weights, norm),
                             r.epochs, net.num_params(), net.cell_params(), loss)
    finally:
        set_default_dtype(previous)
