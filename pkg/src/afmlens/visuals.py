#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

from typing import Mapping, Sequence


def fmt_value(value) -> str:
    """Format a table cell: floats with 4 significant digits, missing values as '-'."""
    if value is None or value == "":
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def print_table(header: Sequence[str], rows: Sequence[Mapping]) -> None:
    """Print dict rows as left-aligned columns.

    Arguments:
        header (Sequence[str]): Keys to print, also used as column titles.
        rows (Sequence[Mapping]): Rows keyed by header entries.
    """
    cells = [[fmt_value(row.get(key)) for key in header] for row in rows]
    widths = [max([len(title)] + [len(line[i]) for line in cells]) for i, title in enumerate(header)]
    template = " ".join("{:" + str(width) + "}" for width in widths)
    print(template.format(*header).rstrip())
    for line in cells:
        print(template.format(*line).rstrip())


def print_info(title: str, info: Mapping) -> None:
    """Print a titled block of right-aligned keys and their values."""
    maxlen = len(max(info.keys(), key=len))
    print(f"--- {title} ---")
    for key, val in info.items():
        print(f"{key:>{maxlen}}: {fmt_value(val)}")
    print()
