"""Minimal deterministic SVG line charts for search metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39")


class MetricsError(ValueError):
    """The metrics stream is empty or unparseable."""


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return s.rstrip("0").rstrip(".") if "." in s else s


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 10))
        v += step
    return out


@dataclass
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]


@dataclass
class LineChart:
    title: str
    x_label: str
    y_label: str
    series: List[Series] = field(default_factory=list)
    y_range: Optional[Tuple[float, float]] = None
    width: int = 640
    height: int = 400

    def add(self, label: str, xs: Sequence[float], ys: Sequence[float]) -> None:
        if len(xs) != len(ys):
            raise ValueError(f"series {label!r}: {len(xs)} x values vs {len(ys)} y values")
        self.series.append(Series(label, list(xs), list(ys)))

    def render(self) -> str:
        if not self.series:
            raise ValueError("chart has no series")
        xs = [x for s in self.series for x in s.xs]
        ys = [y for s in self.series for y in s.ys if math.isfinite(y)]
        x0, x1 = min(xs), max(xs)
        y0, y1 = self.y_range if self.y_range else (min(ys), max(ys))
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        left, right, top, bottom = 60, 150, 36, 48
        pw, ph = self.width - left - right, self.height - top - bottom

        def px(x):
            return left + (0.5 if x1 == x0 else (x - x0) / (x1 - x0)) * pw

        def py(y):
            return top + (1.0 - (y - y0) / (y1 - y0)) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" data-x-min="{_fmt(x0)}" data-x-max="{_fmt(x1)}">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<text x="{self.width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
               f'font-size="14">{escape(self.title)}</text>',
               f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>']
        for t in _ticks(y0, y1):
            y = py(t)
            out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                       f'font-size="10">{_fmt(t)}</text>')
        for t in _ticks(x0, x1):
            x = px(t)
            out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle" font-family="sans-serif" '
                       f'font-size="10">{_fmt(t)}</text>')
        out.append(f'<text x="{left + pw / 2:.1f}" y="{self.height - 10}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12">{escape(self.x_label)}</text>')
        out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12" transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(self.y_label)}</text>')
        for n, s in enumerate(self.series):
            color = PALETTE[n % len(PALETTE)]
            pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(s.xs, s.ys) if math.isfinite(y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            ly = top + 12 + 14 * n
            out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{left + pw + 32}" y="{ly}" font-family="sans-serif" font-size="10">'
                       f'{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def read_metrics(path) -> List[dict]:
    """Per-step records from a line-delimited metrics stream."""
    records = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise MetricsError(f"cannot read metrics {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MetricsError(f"{path}:{n}: invalid record ({exc.msg})") from exc
        if rec.get("kind", "step") == "step":
            records.append(rec)
    if not records:
        raise MetricsError(f"{path}: no step records")
    return records


def _last_per_epoch(records: Iterable[dict]) -> Dict[int, dict]:
    out: Dict[int, dict] = {}
    for rec in records:
        out[int(rec["epoch"])] = rec
    return dict(sorted(out.items()))


def build_charts(records: Sequence[dict], cell_type: str = "normal") -> Dict[str, LineChart]:
    by_epoch = _last_per_epoch(records)
    epochs = list(by_epoch)
    first = by_epoch[epochs[0]]
    if cell_type not in first["edge_max_alpha"]:
        cell_type = sorted(first["edge_max_alpha"])[0]

    alpha = LineChart(f"max softmax(alpha) per edge ({cell_type})", "epoch", "weight", y_range=(0.0, 1.0))
    labels = first.get("edges") or [str(e) for e in range(len(first["edge_max_alpha"][cell_type]))]
    for e, label in enumerate(labels):
        alpha.add(f"{label[0]}-{label[1]}" if isinstance(label, list) else label, epochs,
                  [by_epoch[ep]["edge_max_alpha"][cell_type][e] for ep in epochs])

    beta = LineChart(f"softmax(beta) per incoming edge ({cell_type})", "epoch", "weight", y_range=(0.0, 1.0))
    if "edge_weights" in first:
        for e, label in enumerate(labels):
            beta.add(f"{label[0]}-{label[1]}" if isinstance(label, list) else label, epochs,
                     [by_epoch[ep]["edge_weights"][cell_type][e] for ep in epochs])
    else:
        for g in range(len(first["group_topk_mass"][cell_type])):
            beta.add(f"group {g} top-K", epochs, [by_epoch[ep]["group_topk_mass"][cell_type][g] for ep in epochs])

    loss = LineChart("loss components (epoch mean)", "epoch", "value")
    for key, label in (("l_c", "L_C"), ("l_o", "L_O"), ("l_e", "L_E"), ("total", "total")):
        means = []
        for ep in epochs:
            vals = [r[key] for r in records if int(r["epoch"]) == ep]
            means.append(sum(vals) / len(vals))
        loss.add(label, epochs, means)
    return {"alpha_evolution.svg": alpha, "beta_evolution.svg": beta, "loss_components.svg": loss}


def export_plots(metrics_path, out_dir) -> List[Path]:
    records = read_metrics(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, chart in build_charts(records).items():
        path = out_dir / name
        path.write_text(chart.render())
        written.append(path)
    return written
