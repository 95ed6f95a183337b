"""Shared text formatting for CSV/JSON exports (9 significant digits)."""

from __future__ import annotations


def format_float(v: float) -> str:
    return f"{float(v):.9g}"


def csv_line(cells) -> str:
    out = []
    for c in cells:
        if isinstance(c, float):
            out.append(format_float(c))
        else:
            out.append(str(c))
    return ",".join(out) + "\n"
