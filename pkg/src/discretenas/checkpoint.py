"""Checkpoint and dataset archives.

A checkpoint is an uncompressed ``.npz`` archive. Entry ``header`` holds a
UTF-8 JSON document (format tag, schema version, resolved run config,
candidate sets, seed and next epoch). All arrays are stored little-endian:

    theta/<param name>        network weights
    alpha/<cell type>         operation logits (E, |O|)
    beta/<cell type>          edge logits (E,)
    data/mean, data/std       input standardization statistics
    optim/<slot>/<name>       optimizer buffers (optional)

Loading reproduces every array bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .autodiff import default_dtype, set_default_dtype
from .config import RunConfig, from_dict
from .data import Dataset
from .discretize import Genotype, subnetwork_candidates
from .optim import SGD, Adam, OptimState
from .supernet import ArchParams, CellNetwork, NetworkConfig

CHECKPOINT_FORMAT = "discretenas-checkpoint"
DATASET_FORMAT = "discretenas-dataset"
CHECKPOINT_VERSION = 1

PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    """A checkpoint file is missing, unreadable, or inconsistent."""


def _le(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False) if a.dtype.byteorder == ">" else a


def _header_array(header: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def _write(path: PathLike, arrays: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **{k: _le(v) for k, v in arrays.items()})
    os.replace(tmp, path)


def _read(path: PathLike, fmt: str) -> tuple:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such file: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: not a readable archive ({exc})") from exc
    if "header" not in arrays:
        raise CheckpointError(f"{path}: missing header entry")
    try:
        header = json.loads(arrays.pop("header").tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format") != fmt:
        raise CheckpointError(f"{path}: expected format {fmt!r}, found {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
    return header, arrays


@dataclass
class Checkpoint:
    net: CellNetwork
    arch: ArchParams
    config: RunConfig
    mean: np.ndarray
    std: np.ndarray
    seed: int
    epoch: int
    genotype: Optional[Genotype] = None
    optim: Optional[OptimState] = None
    header: dict = field(default_factory=dict)


def save_checkpoint(path: PathLike, net: CellNetwork, arch: ArchParams, cfg: RunConfig, mean: np.ndarray,
                    std: np.ndarray, epoch: int, optim: Optional[OptimState] = None,
                    genotype: Optional[Genotype] = None) -> None:
    """Write weights, architecture logits, config, and statistics to ``path``.

    ``genotype`` marks a sub-network checkpoint whose candidate sets follow it.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "network": dataclasses.asdict(net.config),
        "num_nodes": arch.num_nodes,
        "normalize_edges": arch.normalize_edges,
        "seed": cfg.seed,
        "epoch": epoch,
        "genotype": genotype.to_dict() if genotype is not None else None,
        "optim": None,
    }
    arrays: Dict[str, np.ndarray] = {"header": _header_array({})}
    for name, value in net.params.items():
        arrays[f"theta/{name}"] = value
    for t in arch.cell_types:
        arrays[f"alpha/{t}"] = arch.alpha[t]
        arrays[f"beta/{t}"] = arch.beta[t]
    arrays["data/mean"] = mean
    arrays["data/std"] = std
    if optim is not None:
        header["optim"] = {"epoch": optim.epoch, "adam_t": {"alpha": optim.adam_alpha.t, "beta": optim.adam_beta.t},
                           "sgd": {"lr": optim.sgd.lr, "momentum": optim.sgd.momentum,
                                   "weight_decay": optim.sgd.weight_decay}}
        for name, v in optim.sgd.velocity.items():
            arrays[f"optim/sgd_v/{name}"] = v
        for slot, adam in (("alpha", optim.adam_alpha), ("beta", optim.adam_beta)):
            for name, v in adam.m.items():
                arrays[f"optim/{slot}_m/{name}"] = v
            for name, v in adam.v.items():
                arrays[f"optim/{slot}_v/{name}"] = v
    arrays["header"] = _header_array(header)
    _write(path, arrays)


def load_checkpoint(path: PathLike) -> Checkpoint:
    header, arrays = _read(path, CHECKPOINT_FORMAT)
    try:
        cfg = from_dict(header["config"])
        net_cfg = NetworkConfig(**header["network"])
        genotype = Genotype.from_dict(header["genotype"]) if header.get("genotype") else None
        candidates = subnetwork_candidates(genotype, net_cfg) if genotype is not None else None
        previous = default_dtype()
        set_default_dtype(cfg.search.precision)
        try:
            net = CellNetwork(net_cfg, candidates, cfg.seed)
        finally:
            set_default_dtype(previous)
        theta = {k[len("theta/"):]: v for k, v in arrays.items() if k.startswith("theta/")}
        if set(theta) != set(net.params.names()):
            missing = sorted(set(net.params.names()) ^ set(theta))
            raise CheckpointError(f"{path}: weights do not match the network ({missing[:3]} ...)")
        for name, value in theta.items():
            if value.shape != net.params[name].shape:
                raise CheckpointError(f"{path}: {name} has shape {value.shape}, expected {net.params[name].shape}")
            net.params[name] = value
        types = [k[len("alpha/"):] for k in arrays if k.startswith("alpha/")]
        arch = ArchParams({t: arrays[f"alpha/{t}"] for t in types}, {t: arrays[f"beta/{t}"] for t in types},
                          header["num_nodes"], header["normalize_edges"])
        optim = _load_optim(header.get("optim"), arrays, cfg)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: missing entry {exc}") from exc
    return Checkpoint(net, arch, cfg, arrays["data/mean"], arrays["data/std"], header["seed"], header["epoch"],
                      genotype, optim, header)


def _load_optim(meta: Optional[dict], arrays: Dict[str, np.ndarray], cfg: RunConfig) -> Optional[OptimState]:
    if meta is None:
        return None

    def slot(prefix: str) -> Dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    s = cfg.search
    sgd = SGD(meta["sgd"]["lr"], meta["sgd"]["momentum"], meta["sgd"]["weight_decay"], slot("optim/sgd_v/"))
    adams = {}
    for name in ("alpha", "beta"):
        adams[name] = Adam(s.arch_lr, tuple(s.arch_betas), s.arch_weight_decay, s.arch_eps,
                           slot(f"optim/{name}_m/"), slot(f"optim/{name}_v/"), dict(meta["adam_t"][name]))
    return OptimState(sgd, adams["alpha"], adams["beta"], meta["epoch"])


def save_dataset(path: PathLike, dataset: Dataset, meta: Optional[dict] = None) -> None:
    """Archive a dataset (e.g. a generated synthetic task) in the checkpoint container."""
    header = {"format": DATASET_FORMAT, "version": CHECKPOINT_VERSION, "num_classes": dataset.num_classes,
              "meta": meta or {}}
    _write(path, {"header": _header_array(header), "images": dataset.images, "labels": dataset.labels})


def load_dataset(path: PathLike) -> Dataset:
    header, arrays = _read(path, DATASET_FORMAT)
    try:
        return Dataset(arrays["images"], arrays["labels"], header["num_classes"])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing entry {exc}") from exc
