"""Byte-deterministic result artifacts: CSV tables and hand-rolled SVG line
plots (no plotting library, so identical inputs give identical bytes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 150, 20, 45
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f")


@dataclass
class Series:
    name: str
    xs: list
    ys: list


@dataclass
class RegimeReport:
    """One row per (regime, split) with the two scores of interest."""
    rows: list = field(default_factory=list)  # dicts: regime, split, wer, si_snr

    def add(self, regime: str, split: str, wer: float, si_snr: float | None):
        self.rows.append({"regime": regime, "split": split, "wer": wer,
                          "si_snr": si_snr})

    def to_csv(self) -> str:
        lines = ["regime,split,wer,si_snr"]
        for r in self.rows:
            snr = "" if r["si_snr"] is None else f"{r['si_snr']:.4f}"
            lines.append(f"{r['regime']},{r['split']},{r['wer']:.4f},{snr}")
        return "\n".join(lines) + "\n"


def series_to_csv(series: list[Series], x_label: str, y_label: str) -> str:
    lines = [f"series,{x_label},{y_label}"]
    for s in series:
        for x, y in zip(s.xs, s.ys):
            lines.append(f"{s.name},{_fmt(x)},{y:.4f}")
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, float) and not x.is_integer():
        return f"{x:.4f}"
    return str(int(x))


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def svg_line_plot(series: list[Series], title: str, x_label: str, y_label: str) -> str:
    """Minimal SVG: axes, ticks, one polyline + markers per series, legend."""
    if not series or all(not s.xs for s in series):
        raise ValueError("nothing to plot")
    xs_all = [x for s in series for x in s.xs]
    ys_all = [y for s in series for y in s.ys]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return MARGIN_T + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="14" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T + ph}" x2="{MARGIN_L + pw}" '
        f'y2="{MARGIN_T + ph}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{MARGIN_T + ph}" stroke="black"/>',
        f'<text x="{MARGIN_L + pw // 2}" y="{HEIGHT - 8}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="14" y="{MARGIN_T + ph // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {MARGIN_T + ph // 2})">{y_label}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(t):.1f}" y1="{MARGIN_T + ph}" x2="{px(t):.1f}" '
                     f'y2="{MARGIN_T + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{MARGIN_T + ph + 16}" '
                     f'text-anchor="middle" font-size="10">{t:.2f}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{py(t):.1f}" x2="{MARGIN_L}" '
                     f'y2="{py(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 6}" y="{py(t):.1f}" text-anchor="end" '
                     f'font-size="10">{t:.2f}</text>')
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s.xs, s.ys))
        if len(s.xs) > 1:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"/>')
        for x, y in zip(s.xs, s.ys):
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" '
                         f'fill="{color}"/>')
        ly = MARGIN_T + 14 + 16 * k
        lx = MARGIN_L + pw + 8
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{lx + 22}" y="{ly}" font-size="11">{s.name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(series: list[Series], out_prefix, title: str,
                x_label: str, y_label: str) -> tuple[Path, Path]:
    """Write <prefix>.csv and <prefix>.svg; both byte-deterministic."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    svg_path = out_prefix.with_suffix(".svg")
    csv_path.write_text(series_to_csv(series, x_label, y_label), encoding="utf-8")
    svg_path.write_text(svg_line_plot(series, title, x_label, y_label), encoding="utf-8")
    return csv_path, svg_path
