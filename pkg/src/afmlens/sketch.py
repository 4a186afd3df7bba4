#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Mergeable streaming quantile sketch (merging t-digest).

Incoming values are buffered and periodically compacted into centroids bounded by the
arcsine scale function k(q) = delta * (asin(2q - 1) / pi + 1/2): a centroid may only span one
unit of k, which keeps centroids small at the tails.
"""

import logging
import math
from typing import List, Tuple

import numpy as np

from .__config__ import CFGVARS

logger = logging.getLogger(__name__)

# Buffered values per unit of compression before a compaction is forced.
_BUFFER_FACTOR = 5


def _k_scale(q: float, compression: float) -> float:
    return compression * (math.asin(2 * q - 1) / math.pi + 0.5)


def _k_inverse(k: float, compression: float) -> float:
    if k >= compression:
        return 1.0
    return (math.sin((k / compression - 0.5) * math.pi) + 1) / 2


class QuantileSketch:
    """A merging t-digest over a stream of finite values.

    Centroid means are kept strictly increasing. While the total count does not exceed the
    compression, only identical values share a centroid, so quantiles are exact.
    """

    def __init__(self, compression: float = None):
        if compression is None:
            compression = CFGVARS.getfloat('sketch', 'compression')
        if not compression > 0:
            raise ValueError(f"Compression must be positive, got {compression}.")
        self.compression = float(compression)
        self.count = 0
        self.min = math.inf
        self.max = -math.inf
        self._centroids: List[Tuple[float, float]] = []
        self._buffer: List[float] = []

    def __repr__(self) -> str:
        return f"QuantileSketch(compression={self.compression:g}, count={self.count})"

    def __len__(self) -> int:
        return self.count

    @property
    def centroids(self) -> List[Tuple[float, float]]:
        """The compacted (mean, weight) pairs in ascending mean order."""
        self._flush()
        return list(self._centroids)

    def add(self, value: float) -> "QuantileSketch":
        """Add one finite value.

        Raises:
            ValueError: If the value is NaN or infinite.

        Returns:
            QuantileSketch: The sketch itself, for chaining.
        """
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"Cannot add non-finite value {value}.")
        self._buffer.append(value)
        self.count += 1
        self.min = min(self.min, value)
        self.max = max(self.max, value)
        if len(self._buffer) >= _BUFFER_FACTOR * self.compression:
            self._flush()
        return self

    def update(self, values) -> "QuantileSketch":
        for value in values:
            self.add(value)
        return self

    def merge(self, other: "QuantileSketch") -> "QuantileSketch":
        """Return a new sketch summarizing both inputs; neither input is modified.

        Raises:
            ValueError: If the compressions differ.
        """
        if self.compression != other.compression:
            raise ValueError(
                f"Cannot merge sketches with compression {self.compression:g} and {other.compression:g}.")
        if other.count == 0:
            return self.copy()
        if self.count == 0:
            return other.copy()
        merged = QuantileSketch(self.compression)
        merged.count = self.count + other.count
        merged.min = min(self.min, other.min)
        merged.max = max(self.max, other.max)
        pieces = self.centroids + other.centroids
        merged._centroids = self._compact(pieces, merged.count)
        return merged

    def copy(self) -> "QuantileSketch":
        clone = QuantileSketch(self.compression)
        clone.count, clone.min, clone.max = self.count, self.min, self.max
        clone._centroids = list(self._centroids)
        clone._buffer = list(self._buffer)
        return clone

    def quantile(self, q: float) -> float:
        """Approximate the q-quantile using linear interpolation on cumulative weight.

        Centroids are anchored at the rank of their center, the endpoints at min and max. While
        no distinct values were merged, each centroid anchors both its first and last rank,
        which reproduces exact linear-interpolated order statistics.

        Raises:
            ValueError: If q lies outside [0, 1] or the sketch is empty.
        """
        if not 0 <= q <= 1:
            raise ValueError(f"Quantile must lie in [0, 1], got {q}.")
        if self.count == 0:
            raise ValueError("Cannot query an empty sketch.")
        self._flush()
        ranks, values = self._anchors()
        return float(np.interp(q * (self.count - 1), ranks, values))

    def _anchors(self) -> Tuple[List[float], List[float]]:
        exact = self.count <= self.compression
        ranks: List[float] = []
        values: List[float] = []
        seen = 0.0
        for mean, weight in self._centroids:
            if exact:
                points = (seen, seen + weight - 1)
            else:
                points = (seen + (weight - 1) / 2,)
            for rank in points:
                if not ranks or rank > ranks[-1]:
                    ranks.append(rank)
                    values.append(mean)
            seen += weight
        if ranks[0] > 0:
            ranks.insert(0, 0.0)
            values.insert(0, self.min)
        last = self.count - 1
        if ranks[-1] < last:
            ranks.append(float(last))
            values.append(self.max)
        return ranks, values

    def _flush(self) -> None:
        if not self._buffer:
            return
        pieces = self._centroids + [(value, 1.0) for value in self._buffer]
        self._buffer = []
        self._centroids = self._compact(pieces, self.count)

    def _compact(self, pieces: List[Tuple[float, float]], total: float) -> List[Tuple[float, float]]:
        # Ascending means, ties by weight, so the result does not depend on input order.
        pieces = sorted(pieces)
        may_merge = total > self.compression
        out: List[Tuple[float, float]] = []
        cur_mean, cur_weight = pieces[0]
        q_left = 0.0
        q_limit = _k_inverse(_k_scale(q_left, self.compression) + 1, self.compression)
        for mean, weight in pieces[1:]:
            q_right = q_left + (cur_weight + weight) / total
            if mean == cur_mean or (may_merge and q_right <= q_limit):
                new_weight = cur_weight + weight
                cur_mean = cur_mean + (mean - cur_mean) * weight / new_weight
                cur_weight = new_weight
                continue
            out.append((cur_mean, cur_weight))
            q_left += cur_weight / total
            q_limit = _k_inverse(_k_scale(min(q_left, 1.0), self.compression) + 1, self.compression)
            cur_mean, cur_weight = mean, weight
        out.append((cur_mean, cur_weight))
        # Weighted means can round onto a neighbour; keep means strictly increasing.
        compacted = [out[0]]
        for mean, weight in out[1:]:
            if mean <= compacted[-1][0]:
                prev_mean, prev_weight = compacted[-1]
                compacted[-1] = (prev_mean, prev_weight + weight)
            else:
                compacted.append((mean, weight))
        logger.debug("Compacted %d pieces into %d centroids", len(pieces), len(compacted))
        return compacted

    def to_dict(self) -> dict:
        """Serialize as {compression, count, min, max, centroids: [[mean, weight], ...]}.

        An empty sketch carries null min and max.
        """
        return {
            'compression': self.compression,
            'count': self.count,
            'min': self.min if self.count else None,
            'max': self.max if self.count else None,
            'centroids': [[mean, weight] for mean, weight in self.centroids],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantileSketch":
        """Rebuild a sketch from its serialized form.

        Raises:
            ValueError: If the centroids violate the sketch invariants.
        """
        sketch = cls(float(data['compression']))
        centroids = [(float(mean), float(weight)) for mean, weight in data['centroids']]
        count = int(data['count'])
        if any(weight <= 0 for _, weight in centroids):
            raise ValueError("Centroid weights must be positive.")
        if any(b[0] <= a[0] for a, b in zip(centroids, centroids[1:])):
            raise ValueError("Centroid means must be strictly increasing.")
        if not math.isclose(sum(weight for _, weight in centroids), count):
            raise ValueError("Centroid weights do not sum to the count.")
        sketch.count = count
        if count:
            sketch.min, sketch.max = float(data['min']), float(data['max'])
            if centroids[0][0] < sketch.min or centroids[-1][0] > sketch.max:
                raise ValueError("Centroid means must lie within [min, max].")
        sketch._centroids = centroids
        return sketch
