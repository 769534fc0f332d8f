"""Run orchestration: artifacts written by each subcommand.

A search run directory holds

    manifest.json     resolved config (all defaults expanded) and artifact names
    metrics.jsonl     one record per optimization step, then one summary record
    checkpoint.npz    weights, architecture logits, statistics, optimizer state
    genotype.json     the derived discrete architecture
    summary.json      final entropies, kept masses, and the gap report
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Dict, Optional

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, resolve
from .data import SplitSpec, split
from .discretize import Genotype, derive_genotype, gap_probe, one_hot_arch
from .regularizers import group_preset
from .search import edge_max_alpha, group_topk_mass, load_task, run_search, train_subnetwork

ARTIFACTS = ("manifest.json", "metrics.jsonl", "checkpoint.npz", "genotype.json", "summary.json")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


class MetricsWriter:
    """Append-only line-delimited records for one run."""

    def __init__(self, path: Path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._last = (-1, -1)

    def write(self, record: dict) -> None:
        self._fh.write(_dump(record) + "\n")
        self._fh.flush()

    def step(self, info: dict, groups, start: float) -> None:
        key = (info["epoch"], info["step"])
        if key <= self._last:
            raise ValueError(f"metrics out of order: {key} after {self._last}")
        self._last = key
        arch = info["arch"]
        record = {"kind": "step", "run_id": self.run_id, "epoch": info["epoch"], "step": info["step"],
                  **info["report"].as_dict(), "theta_loss": info["theta_loss"],
                  "lr_theta": info["lr_theta"], "lr_arch": info["lr_arch"],
                  "edges": [list(e) for e in arch.edges],
                  "edge_max_alpha": edge_max_alpha(arch),
                  "edge_weights": {t: [float(v) for v in arch.edge_weights(t)] for t in arch.cell_types},
                  "group_topk_mass": group_topk_mass(arch, groups),
                  "wall_clock": time.perf_counter() - start}
        self.write(record)

    def close(self) -> None:
        self._fh.close()


def write_manifest(out_dir: Path, cfg: RunConfig, command: str, extra: Optional[dict] = None) -> Path:
    manifest = {"command": command, "package_version": __version__, "run_id": cfg.run_id,
                "config": resolve(cfg), "artifacts": list(ARTIFACTS)}
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def execute_search(cfg: RunConfig, out_dir: Optional[Path] = None) -> Dict[str, Path]:
    """Run a search and write the five run artifacts; returns their paths."""
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else cfg.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, cfg, "search")
    groups = cfg.edge_groups()
    writer = MetricsWriter(out_dir / "metrics.jsonl", cfg.run_id)
    start = time.perf_counter()
    try:
        result = run_search(cfg, on_step=lambda info: writer.step(info, groups, start))
        summary = {"kind": "summary", "run_id": cfg.run_id, **result.summary()}
        writer.write(summary)
    finally:
        writer.close()
    save_checkpoint(out_dir / "checkpoint.npz", result.net, result.arch, cfg, result.data.mean, result.data.std,
                    cfg.search.epochs, result.optim)
    (out_dir / "genotype.json").write_text(result.genotype.to_json())
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {name: out_dir / name for name in ARTIFACTS}


def probe_checkpoint(path, groups_preset: str, export_one_hot: Optional[Path] = None) -> dict:
    """Gap report of a saved super-network under the given group preset."""
    ckpt = load_checkpoint(path)
    groups = group_preset(groups_preset, ckpt.arch.num_nodes)
    genotype = derive_genotype(ckpt.arch, groups)
    data = load_task(ckpt.config)
    data_w, _ = split(data.train, SplitSpec(ckpt.config.search.split_fraction, ckpt.config.seed))
    report = gap_probe(ckpt.net, ckpt.arch, genotype, data.test.images, data.test.labels,
                       stats_images=data_w.images)
    if export_one_hot is not None:
        save_checkpoint(export_one_hot, ckpt.net, one_hot_arch(ckpt.arch, genotype), ckpt.config,
                        ckpt.mean, ckpt.std, ckpt.epoch)
    return {"kind": "gap_probe", "run_id": ckpt.config.run_id, "checkpoint": str(path),
            "groups": groups_preset, "genotype": genotype.to_dict(), **report.as_dict()}


def execute_retrain(genotype: Genotype, cfg: RunConfig, out_dir: Optional[Path] = None) -> dict:
    """Retrain a genotype from scratch; writes ``retrain.json`` and returns the report record."""
    report = train_subnetwork(genotype, cfg)
    record = {"kind": "retrain", "run_id": cfg.run_id, "genotype": genotype.to_dict(), **report.as_dict()}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "retrain.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record
