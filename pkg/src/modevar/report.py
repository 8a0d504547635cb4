"""Table and manifest rendering shared by the CLI subcommands.

Numbers print with 3 fractional digits (full precision behind the precise
flag); missing cells print as the literal N/A.  Aligned text is the
default; TSV is a flag away.  Tables go to stdout and the run manifest to
stderr, so captured result tables stay byte-stable across reruns.
"""

from __future__ import annotations

import sys
import time

__all__ = ["format_cell", "render_table", "emit_manifest", "Stopwatch"]


def format_cell(value, precise: bool = False) -> str:
    if value is None:
        return "N/A"
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if value != value or value in (float("inf"), float("-inf")):
        return "N/A"
    return repr(float(value)) if precise else f"{value:.3f}"


def render_table(headers, rows, tsv: bool = False, precise: bool = False) -> str:
    cells = [[format_cell(v, precise) for v in row] for row in rows]
    head = [str(h) for h in headers]
    if tsv:
        lines = ["\t".join(head)]
        lines.extend("\t".join(row) for row in cells)
        return "\n".join(lines) + "\n"
    widths = [len(h) for h in head]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    out = []

    def fmt(row):
        parts = [row[0].ljust(widths[0])]
        parts.extend(row[i].rjust(widths[i]) for i in range(1, len(row)))
        return "  ".join(parts).rstrip()

    out.append(fmt(head))
    out.append("  ".join("-" * w for w in widths))
    out.extend(fmt(row) for row in cells)
    return "\n".join(out) + "\n"


def emit_manifest(entries, stream=None) -> None:
    """Write 'key: value' manifest lines, one table's provenance."""
    stream = stream if stream is not None else sys.stderr
    stream.write("--- run manifest ---\n")
    for key, value in entries:
        stream.write(f"{key}: {value}\n")
    stream.flush()


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def seconds(self) -> float:
        return time.perf_counter() - self.start
