"""Summary tables and deterministic SVG line plots."""

import csv
import math
from xml.sax.saxutils import escape

from .evaluation import MetricReport

SUMMARY_COLUMNS = ("arch", "method", "kind", "mode", "metric", "n", "mean", "stderr")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def merge_reports(paths):
    rep = MetricReport()
    for p in paths:
        rep.extend(MetricReport.from_csv(p))
    return rep


def write_summary_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in report.summary():
            w.writerow([row[c] if c not in ("mean", "stderr") else repr(row[c]) for c in SUMMARY_COLUMNS])


def read_summary_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["n"] = int(r["n"])
        r["mean"] = float(r["mean"])
        r["stderr"] = float(r["stderr"])
    return rows


def format_table(report, metric=None):
    """Plain-text table of mean ± standard error, one row per (arch, method, kind, metric)."""
    rows = [r for r in report.summary() if metric is None or r["metric"] == metric]
    modes = sorted({r["mode"] for r in rows})
    cells = {}
    for r in rows:
        key = (r["arch"], r["method"], r["kind"], r["metric"])
        cells.setdefault(key, {})[r["mode"]] = f"{r['mean']:.4f} ± {r['stderr']:.4f} (n={r['n']})"
    header = ["arch", "method", "kind", "metric"] + modes
    body = [list(k) + [cells[k].get(m, "-") for m in modes] for k in sorted(cells)]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)] if body else [len(h) for h in header]

    def line(cols):
        return "  ".join(str(c).ljust(w) for c, w in zip(cols, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(b) for b in body]) + "\n"


def _nice_range(lo, hi):
    if not math.isfinite(lo) or not math.isfinite(hi):
        return 0.0, 1.0
    if hi - lo < 1e-12:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def svg_line_plot(series, title="", xlabel="", ylabel="", width=640, height=400):
    """One ``<polyline>`` per series, preceded by a ``<!-- series: name -->`` comment.

    ``series`` maps a name to ``(xs, ys)``. Series are drawn in sorted name
    order and coordinates are printed with fixed precision, so identical
    inputs give identical bytes.
    """
    names = sorted(series)
    xs = [float(x) for n in names for x in series[n][0]]
    ys = [float(y) for n in names for y in series[n][1] if math.isfinite(float(y))]
    x0, x1 = _nice_range(min(xs, default=0.0), max(xs, default=1.0))
    y0, y1 = _nice_range(min(ys, default=0.0), max(ys, default=1.0))
    left, right, top, bottom = 70, 170, 40, 60
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{px(xv):.2f}" y="{top + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.2f}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, name in enumerate(names):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(*series[name])
                       if math.isfinite(float(y)))
        label = escape(name.replace("--", "-"))
        out.append(f"<!-- series: {label} -->")
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def metric_series(report, metric, arch=None):
    """Per (method, mode) series of the metric's mean over dataset kinds, kinds on the x axis by index."""
    rows = [r for r in report.summary() if r["metric"] == metric and (arch is None or r["arch"] == arch)]
    kinds = sorted({r["kind"] for r in rows})
    series = {}
    for r in rows:
        name = f"{r['arch']}/{r['method']}/{r['mode']}"
        xs, ys = series.setdefault(name, ([], []))
        xs.append(kinds.index(r["kind"]))
        ys.append(r["mean"])
    for name, (xs, ys) in series.items():
        order = sorted(range(len(xs)), key=xs.__getitem__)
        series[name] = ([xs[i] for i in order], [ys[i] for i in order])
    return series, kinds
