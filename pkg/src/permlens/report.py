"""Summary tables (TSV and text) and figures for maps, diffs and gap batches."""

from __future__ import annotations

import csv
import io
from collections import Counter
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .gap import CLASSES, GapReport, MapDiff  # noqa: E402
from .propagate import PermissionMap, resolution_histogram  # noqa: E402

Row = Tuple[object, ...]
PNG_META = {"Software": None}


def size_counts(pm: PermissionMap) -> Dict[int, int]:
    """Number of entry points per permission-set size (timeouts excluded)."""
    return dict(sorted(Counter(len(p) for p in pm.per_entry.values()).items()))


def size_summary(pm: PermissionMap) -> str:
    parts = [f"{n} perm{'' if n == 1 else 's'}: {c}" for n, c in size_counts(pm).items()]
    if pm.timeouts:
        parts.append(f"timeout: {len(pm.timeouts)}")
    return ", ".join(parts) if parts else "no entry points"


def size_rows(pm: PermissionMap) -> List[Row]:
    rows: List[Row] = [(n, c) for n, c in size_counts(pm).items()]
    if pm.timeouts:
        rows.append((TIMEOUT_LABEL, len(pm.timeouts)))
    return rows


TIMEOUT_LABEL = "TIMEOUT"
SIZE_HEADER = ("permissions", "entry_points")


def map_rows(pm: PermissionMap) -> List[Row]:
    return [(e, TIMEOUT_LABEL if pm.permissions(e) is None else ",".join(sorted(pm.permissions(e))))
            for e in pm.entries]


def resolution_rows(pm: PermissionMap) -> List[Row]:
    return resolution_histogram(pm).rows()


def diff_rows(d: MapDiff) -> List[Row]:
    counts = d.counts()
    total = sum(counts.values())
    rows: List[Row] = [(c, counts[c], _pct(counts[c], total)) for c in CLASSES]
    rows.append(("same size", d.same_size(), _pct(d.same_size(), total)))
    rows.append(("total", total, _pct(total, total)))
    return rows


def _pct(n: int, total: int) -> str:
    return f"{100.0 * n / total:.2f}%" if total else "0.00%"


def gap_histogram(reports: Sequence[GapReport]) -> List[Row]:
    """Apps per gap size; discarded apps get their own row so rows sum to the batch size."""
    sizes = Counter(len(r.gap) for r in reports if not r.discarded)
    rows: List[Row] = [(n, sizes[n]) for n in sorted(sizes)]
    discarded = sum(1 for r in reports if r.discarded)
    if discarded:
        rows.append(("discarded", discarded))
    return rows


def to_tsv(header: Sequence[str], rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def to_text(header: Sequence[str], rows: Sequence[Row]) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for k, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_sizes(pm: PermissionMap, path: Path) -> Path:
    counts = size_counts(pm)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = list(counts)
    ax.bar([str(x) for x in xs], [counts[x] for x in xs], color="#4c72b0")
    ax.set_xlabel("permissions per entry point")
    ax.set_ylabel("entry points")
    ax.set_title(f"{pm.framework} ({pm.analysis})")
    return _save(fig, path)


def plot_gap_histogram(reports: Sequence[GapReport], path: Path) -> Path:
    rows = gap_histogram(reports)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([str(r[0]) for r in rows], [r[1] for r in rows], color="#dd8452")
    ax.set_xlabel("permission gap size")
    ax.set_ylabel("apps")
    return _save(fig, path)


def plot_diff(d: MapDiff, path: Path, labels: Tuple[str, str] = ("a", "b")) -> Path:
    """Per-entry set sizes of both maps, entries sorted by the first map's size."""
    entries = sorted(d.classification, key=lambda e: (d.a_sizes[e], d.b_sizes[e], e))
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    xs = range(len(entries))
    ax.step(xs, [d.a_sizes[e] for e in entries], where="mid", label=labels[0])
    ax.step(xs, [d.b_sizes[e] for e in entries], where="mid", label=labels[1], linestyle="--")
    ax.set_xlabel("entry points (sorted)")
    ax.set_ylabel("permissions")
    ax.legend()
    return _save(fig, path)
