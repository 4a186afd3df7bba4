#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Per-link, per-adjacency and fabric-aggregate network-level metrics."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import clamp_utilization


class Stage(Enum):
    TOR = "tor"
    AGGREGATION = "aggregation"
    SPINE = "spine"


@dataclass(frozen=True)
class PortRecord:
    """Octet counters of one switch port over one collection interval."""

    fabric: str
    stage: Stage
    port_id: str
    peer_port_id: str
    port_speed: int
    src_block: str
    dst_block: str
    window_start: int
    outgoing_octets: int
    incoming_octets: int
    window_len: int

    def __post_init__(self):
        if self.port_speed <= 0:
            raise ValueError(f"port speed must be positive, got {self.port_speed}")
        if self.window_len <= 0:
            raise ValueError(f"window length must be positive, got {self.window_len}")
        if self.outgoing_octets < 0 or self.incoming_octets < 0:
            raise ValueError("negative octets")
        if not self.fabric or not self.port_id:
            raise ValueError("fabric and port id must be non-empty")

    @property
    def window_end(self) -> int:
        return self.window_start + self.window_len

    @property
    def is_inter_block(self) -> bool:
        return self.src_block != self.dst_block


class Stat(Enum):
    MAX = "max"
    MEAN = "mean"
    PERCENTILE = "percentile"
    P5P95_DISTANCE = "p5p95"
    JAIN = "jain"


def link_utilization(record: PortRecord) -> float:
    """Return the outgoing bit rate of a port divided by its speed.

    Arguments:
        record (PortRecord): The counters of one port over one window.

    Returns:
        float: The (clamped) utilization fraction.
    """
    rate = record.outgoing_octets * 8 / record.window_len
    return clamp_utilization(rate / record.port_speed)


def adjacency_utilization(records: Sequence[PortRecord]) -> float:
    """Treat all links between one pair of blocks as a single aggregated link.

    The result is capacity weighted: the sum of outgoing bits over the sum of port capacities.

    Raises:
        ValueError: If the set is empty or mixes windows or block pairs.

    Returns:
        float: The (clamped) adjacency utilization.
    """
    if not records:
        raise ValueError("empty adjacency")
    first = records[0]
    for rec in records[1:]:
        # Lengths may differ when some intervals of a window are missing.
        if rec.window_start != first.window_start:
            raise ValueError("mixed windows in adjacency")
        if (rec.src_block, rec.dst_block) != (first.src_block, first.dst_block):
            raise ValueError("mixed block pairs in adjacency")
    bits = sum(rec.outgoing_octets * 8 for rec in records)
    capacity = sum(rec.port_speed * rec.window_len for rec in records)
    return clamp_utilization(bits / capacity)


def percentile(values: Iterable[float], k: float) -> float:
    """Linear-interpolated percentile between order statistics (k in [0, 100])."""
    if not 0 <= k <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {k}")
    return float(np.percentile(np.asarray(list(values), dtype=float), k))


def jain_index(values: Iterable[float]) -> float:
    """Jain's fairness index (sum x)^2 / (n * sum x^2); all-zero input counts as perfectly fair."""
    arr = np.asarray(list(values), dtype=float)
    squares = float(np.sum(arr * arr))
    if squares == 0:
        return 1.0
    total = float(np.sum(arr))
    return total * total / (arr.size * squares)


def fabric_aggregate(values: Sequence[float], stat: Stat, k: Optional[float] = None) -> float:
    """Aggregate per-link or per-adjacency values into one fabric-level value.

    Arguments:
        values (Sequence[float]): Non-empty finite values.
        stat (Stat): The aggregate to compute.

    Keyword Arguments:
        k (float): The percentile for Stat.PERCENTILE. (default: {None})

    Raises:
        ValueError: If values is empty, contains non-finite values, or k is missing.

    Returns:
        float: The aggregate.
    """
    if len(values) == 0:
        raise ValueError("cannot aggregate an empty list")
    if not all(math.isfinite(v) for v in values):
        raise ValueError("cannot aggregate non-finite values")
    if stat is Stat.MAX:
        return float(max(values))
    if stat is Stat.MEAN:
        return float(np.mean(values))
    if stat is Stat.PERCENTILE:
        if k is None:
            raise ValueError("percentile aggregate needs k")
        return percentile(values, k)
    if stat is Stat.P5P95_DISTANCE:
        return max(0.0, percentile(values, 95) - percentile(values, 5))
    return jain_index(values)
