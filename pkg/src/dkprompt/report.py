"""Benchmark report emission: metric tables, per-sequence center errors,
SVG curves and matplotlib figures.

All files are staged in a temporary directory inside ``out_dir`` and moved
into place with ``os.replace`` once every one of them has been written.
Numbers are formatted with fixed precision so outputs are byte-stable.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from pathlib import Path

from .io import atomic_write_text

METRICS_HEADER = "sequence,frames,auc,prec20,nprec02"
CLE_HEADER = "frame,cle,norm_cle"
SVG_W, SVG_H = 800, 600
_MARGIN = 60


def pct(v):
    return f"{100.0 * v:.2f}"


def metrics_csv(report):
    lines = [METRICS_HEADER]
    rows = list(report.summaries)
    if report.aggregate is not None:
        rows.append(report.aggregate)
    for s in rows:
        lines.append(f"{s.name},{s.frames},{pct(s.auc)},{pct(s.prec20)},{pct(s.nprec02)}")
    return "\n".join(lines) + "\n"


def cle_csv(result):
    lines = [CLE_HEADER]
    for i, (c, n) in enumerate(zip(result.cle, result.norm_cle), start=1):
        lines.append(f"{i},{c:.6f},{n:.6f}")
    return "\n".join(lines) + "\n"


def _polyline_points(xs, ys, x_max):
    pw, ph = SVG_W - 2 * _MARGIN, SVG_H - 2 * _MARGIN
    pts = []
    for x, y in zip(xs, ys):
        px = _MARGIN + pw * float(x) / x_max
        py = SVG_H - _MARGIN - ph * float(y)
        pts.append(f"{px:.2f},{py:.2f}")
    return " ".join(pts)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def curves_svg(title, xlabel, series):
    """``series`` is a list of (label, EvalCurve); y axis fixed to [0, 1]."""
    x_max = max(float(c.thresholds[-1]) for _, c in series)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_W} {SVG_H}" '
        f'width="{SVG_W}" height="{SVG_H}">',
        f'<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="white"/>',
        f'<text x="{SVG_W // 2}" y="30" text-anchor="middle" font-size="18">{title}</text>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{SVG_W - 2 * _MARGIN}" '
        f'height="{SVG_H - 2 * _MARGIN}" fill="none" stroke="black"/>',
        f'<text x="{SVG_W // 2}" y="{SVG_H - 20}" text-anchor="middle" font-size="14">{xlabel}</text>',
    ]
    for i, (label, curve) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = _polyline_points(curve.thresholds, curve.scores, x_max)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        out.append(f'<text x="{SVG_W - _MARGIN - 10}" y="{_MARGIN + 20 + 18 * i}" '
                   f'text-anchor="end" font-size="13" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series(report, attr):
    rows = list(report.summaries)
    if report.aggregate is not None and len(rows) > 1:
        rows.append(report.aggregate)
    return [(s.name, getattr(s, attr)) for s in rows]


def _plot_png(path, title, xlabel, series):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=100)
    try:
        for label, curve in series:
            ax.plot(curve.thresholds, curve.scores, label=label, linewidth=1.5)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("fraction of frames")
        ax.set_ylim(0.0, 1.02)
        ax.set_title(title)
        ax.grid(True, linewidth=0.4, alpha=0.5)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        # No Software/date metadata so repeated runs are byte-identical.
        fig.savefig(path, format="png", metadata={"Software": None})
    finally:
        plt.close(fig)


_PLOTS = (
    ("success", "Success plot", "overlap threshold", "success"),
    ("precision", "Precision plot", "location error threshold (px)", "precision"),
    ("norm_precision", "Normalized precision plot", "normalized location error threshold",
     "norm_precision"),
)


def report_files(report, figures=True):
    """Mapping of file name to bytes, or to a callable that writes the file."""
    files = {"metrics.csv": metrics_csv(report).encode("ascii")}
    for r in report.sequences:
        files[f"cle_{r.name}.csv"] = cle_csv(r).encode("ascii")
    if report.summaries and figures:
        for stem, title, xlabel, attr in _PLOTS:
            series = _series(report, attr)
            files[f"{stem}.svg"] = curves_svg(title, xlabel, series).encode("utf-8")
            files[f"{stem}.png"] = (lambda p, t=title, x=xlabel, s=series: _plot_png(p, t, x, s))
    if report.missing or report.errors:
        lines = [f"missing,{m}" for m in report.missing] + [f"error,{e}" for e in report.errors]
        files["skipped.txt"] = ("\n".join(lines) + "\n").encode("utf-8")
    return files


def write_files_atomic(out_dir, files):
    """Stage every file, then rename each into ``out_dir``.

    Any failure while staging leaves ``out_dir`` untouched.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        for name, payload in files.items():
            target = stage / name
            if callable(payload):
                payload(target)
            else:
                target.write_bytes(payload)
        written = []
        for name in files:
            os.replace(stage / name, out_dir / name)
            written.append(out_dir / name)
        return written
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def emit_report(report, out_dir, figures=True):
    """Write the report's CSVs (and curves when there is data); returns paths."""
    return write_files_atomic(out_dir, report_files(report, figures))


def write_csv(path, header, rows, fmt):
    """Tiny fixed-format CSV writer used by the CLI tables."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f(v) for f, v in zip(fmt, row)))
    atomic_write_text(path, "\n".join(lines) + "\n")

