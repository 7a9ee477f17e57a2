"""CSV and hand-written SVG report files."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .propensity import PropensityTable

PAIRS = (
    ("gender", "female", "male"),
    ("volume", "average_purchasers", "high_purchasers"),
    ("tenure", "medium_tenured", "high_tenured"),
    ("season", "summer", "winter"),
)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], provenance: Optional[str] = None) -> Path:
    lines = [provenance] if provenance else []
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def histogram_svg(counts: Sequence[int], title: str, width: int = 480, height: int = 260) -> str:
    counts = np.asarray(counts)
    pad, n = 30, len(counts)
    top = max(1, int(counts.max()))
    bw = (width - 2 * pad) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
    ]
    for i, c in enumerate(counts):
        h = (height - 2 * pad - 10) * c / top
        x = pad + i * bw
        parts.append(f'<rect x="{x:.1f}" y="{height - pad - h:.1f}" width="{bw - 1:.1f}" height="{h:.1f}" fill="#4a78b0"/>')
    for k in range(0, 11, 2):
        x = pad + k / 10 * (width - 2 * pad)
        parts.append(f'<text x="{x:.1f}" y="{height - pad + 14}" text-anchor="middle">{k / 10:.1f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def distribution_rows(table: PropensityTable, products: Sequence[int]) -> List[Tuple]:
    """(product, pair, first, second, truth share of first, generated share of first) rows.

    Each pair's shares are renormalized to sum to one.
    """
    index = {int(p): i for i, p in enumerate(table.products)}
    rows = []
    for p in products:
        i = index[int(p)]
        for pair, a, b in PAIRS:
            ta, tb = table.truth[a][i], table.truth[b][i]
            ga, gb = table.generated[a][i], table.generated[b][i]
            rows.append((int(p), pair, a, b, _share(ta, tb), _share(ga, gb)))
    return rows


def _share(a: float, b: float) -> float:
    return 0.5 if a + b == 0 else a / (a + b)


def distribution_svg(product: int, rows: Sequence[Tuple], width: int = 520, height: int = 240) -> str:
    """Grouped bars: ground truth vs generated share of each pair's first class."""
    rows = [r for r in rows if r[0] == product]
    pad = 30
    gw = (width - 2 * pad) / len(rows)
    plot_h = height - 2 * pad - 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">product {product}: ground truth (dark) vs generated (light)</text>',
    ]
    for k, (_, pair, a, b, t, g) in enumerate(rows):
        x0 = pad + k * gw
        for j, (v, color) in enumerate(((t, "#2b4c7e"), (g, "#9bb7d4"))):
            h = plot_h * v
            parts.append(
                f'<rect x="{x0 + 8 + j * (gw / 2 - 8):.1f}" y="{height - pad - h:.1f}" width="{gw / 2 - 10:.1f}" height="{h:.1f}" fill="{color}"/>'
            )
        parts.append(f'<text x="{x0 + gw / 2:.1f}" y="{height - pad + 14}" text-anchor="middle">{a}/{b}</text>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_distribution_report(out_dir, table: PropensityTable, products: Sequence[int], provenance: Optional[str] = None) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = distribution_rows(table, products)
    paths = [
        write_csv(
            out_dir / "distribution.csv",
            ("product", "pair", "first", "second", "truth_share", "generated_share"),
            rows,
            provenance,
        )
    ]
    for p in products:
        path = out_dir / f"product_{int(p)}.svg"
        path.write_text(distribution_svg(int(p), rows))
        paths.append(path)
    return paths


def metrics_rows(metrics: Dict[str, float]) -> List[Tuple[str, float]]:
    return [(k, v) for k, v in metrics.items()]
