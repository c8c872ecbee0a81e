"""Report files: CSV tables, a JSON summary and plain SVG line plots.

All writes go to a temporary file that is then renamed into place. File
names carry the config hash and the seed; payloads contain no timestamps,
so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path
from typing import Iterable

__all__ = ["emit_report", "write_atomic", "svg_lines", "FORMATS"]

FORMATS = ("csv", "json", "svg")
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def write_atomic(path: Path, data: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _csv_text(rows: list[dict]) -> str:
    cols: list[str] = []
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return v


def _plain(v):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as ``null``."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "tolist"):
        return _plain(v.tolist())
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _nice(lo: float, hi: float) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi <= lo:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def svg_lines(title: str, series: dict, logy: bool = False, width: int = 560, height: int = 380) -> str:
    """A line plot of ``{label: (xs, ys)}`` using only basic SVG elements."""
    left, right, top, bottom = 60, 20, 30, 45
    pts = {}
    for label, (xs, ys) in series.items():
        pairs = [(float(x), float(y)) for x, y in zip(xs, ys)
                 if math.isfinite(float(x)) and math.isfinite(float(y)) and (not logy or float(y) > 0)]
        if logy:
            pairs = [(x, math.log10(y)) for x, y in pairs]
        pts[label] = pairs
    allx = [x for p in pts.values() for x, _ in p] or [0.0, 1.0]
    ally = [y for p in pts.values() for _, y in p] or [0.0, 1.0]
    x0, x1 = _nice(min(allx), max(allx))
    y0, y1 = _nice(min(ally), max(ally))
    pw, ph = width - left - right, height - top - bottom

    def X(x):
        return left + (x - x0) / (x1 - x0) * pw

    def Y(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{X(xv):.1f}" y="{top + ph + 15}" text-anchor="middle">{xv:.3g}</text>')
        ylab = f"1e{yv:.2g}" if logy else f"{yv:.3g}"
        out.append(f'<text x="{left - 5}" y="{Y(yv) + 4:.1f}" text-anchor="end">{ylab}</text>')
    for n, (label, pairs) in enumerate(pts.items()):
        color = _COLORS[n % len(_COLORS)]
        if len(pairs) > 1:
            path = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in pairs)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        for x, y in pairs if len(pairs) <= 60 else []:
            out.append(f'<circle cx="{X(x):.2f}" cy="{Y(y):.2f}" r="2.5" fill="{color}"/>')
        ly = top + 14 + 14 * n
        out.append(f'<line x1="{left + pw - 110}" y1="{ly - 4}" x2="{left + pw - 92}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 88}" y="{ly}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _slug(s: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in s.lower()).strip("-")


def emit_report(results: Iterable, out_dir, config_hash: str, seed, formats=("csv", "json", "svg"),
                stem: str = "report") -> list[Path]:
    """Write the files for a list of :class:`~tiltlab.experiments.ExperimentResult`.

    Returns the written paths. ``formats`` is any subset of ``csv``, ``json``
    and ``svg``.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown formats {sorted(bad)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create output directory {out}: {err}") from err
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    tag = f"{config_hash[:12]}-s{seed}"
    written = []
    if "csv" in formats:
        for r in results:
            for name, rows in r.tables.items():
                if rows:
                    p = out / f"{stem}-{_slug(r.name)}-{_slug(name)}-{tag}.csv"
                    write_atomic(p, _csv_text(rows))
                    written.append(p)
    if "json" in formats:
        body = {
            "config_hash": config_hash,
            "seed": seed,
            "passed": all(r.passed for r in results),
            "results": [r.summary() for r in results],
        }
        p = out / f"{stem}-{tag}.json"
        write_atomic(p, json.dumps(_plain(body), indent=2, sort_keys=True, allow_nan=False) + "\n")
        written.append(p)
    if "svg" in formats:
        for r in results:
            for name, series in r.series.items():
                logy = name in ("survival", "maxima")
                p = out / f"{stem}-{_slug(r.name)}-{_slug(name)}-{tag}.svg"
                write_atomic(p, svg_lines(f"{r.name}: {name}", series, logy=logy))
                written.append(p)
    return written
