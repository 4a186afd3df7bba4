#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Congestion knee detection on the high-percentile envelope of an (NLM, AFM) relationship."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .model import JoinedSample, KneeDirection
from .regression import bucket_groups, bucket_width, check_series, samples_to_arrays

logger = logging.getLogger(__name__)

MIN_ENVELOPE_POINTS = 4


@dataclass(frozen=True)
class EnvelopeCurve:
    """Per-bucket envelope points (bucket center, envelope AFM value) in ascending x."""

    points: Tuple[Tuple[float, float], ...]
    direction: KneeDirection = KneeDirection.CONVEX_INCREASING
    bucket_width: float = 0.0

    def __post_init__(self):
        if len(self.points) < MIN_ENVELOPE_POINTS:
            raise ValueError(f"insufficient envelope ({len(self.points)} points)")
        xs = [x for x, _ in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("envelope x values must be strictly increasing")
        if not all(math.isfinite(y) for _, y in self.points):
            raise ValueError("envelope y values must be finite")

    @property
    def x(self) -> np.ndarray:
        return np.array([x for x, _ in self.points], dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array([y for _, y in self.points], dtype=float)


@dataclass(frozen=True)
class KneeResult:
    knee_x: float
    curvature: float
    bucket_index: int

    def to_dict(self) -> dict:
        return {'knee_x': self.knee_x, 'curvature': self.curvature, 'bucket_index': self.bucket_index}


def build_envelope(samples: Sequence[JoinedSample], k: int, env_quantile: float = 0.95,
                   min_bucket_samples: int = 10,
                   direction: KneeDirection = KneeDirection.CONVEX_INCREASING) -> EnvelopeCurve:
    """Build the envelope: the env_quantile of the AFM in each of k equal-width NLM buckets.

    Arguments:
        samples (Sequence[JoinedSample]): Samples of one relationship.
        k (int): Bucket count.

    Keyword Arguments:
        env_quantile (float): Envelope percentile as a fraction. (default: {0.95})
        min_bucket_samples (int): Buckets with fewer samples are omitted. (default: {10})
        direction (KneeDirection): Expected shape of the curve. (default: {CONVEX_INCREASING})

    Raises:
        ValueError: If fewer than 4 buckets are populated.

    Returns:
        EnvelopeCurve: The envelope.
    """
    check_series(samples)
    x, y = samples_to_arrays(samples)
    groups = bucket_groups(x, y, k, min_bucket_samples)
    points = tuple((center, float(np.percentile(members, env_quantile * 100))) for center, members in groups)
    return EnvelopeCurve(points, direction, bucket_width(x, k))


def difference_curve(curve: EnvelopeCurve) -> np.ndarray:
    """Return the normalized difference curve in the original point order.

    Points are normalized to the unit square and reflected so the working curve is concave
    increasing; the difference is then y_hat - x_hat. A flat envelope yields all zeros.
    """
    x, y = curve.x, curve.y
    x_norm = (x - x.min()) / (x.max() - x.min())
    y_span = y.max() - y.min()
    if y_span == 0:
        return np.zeros_like(x)
    y_norm = (y - y.min()) / y_span
    x_hat = 1 - x_norm
    y_hat = 1 - y_norm if curve.direction is KneeDirection.CONVEX_INCREASING else y_norm
    return y_hat - x_hat


def detect_knee(curve: EnvelopeCurve, curvature_threshold: float) -> Optional[KneeResult]:
    """Find the maximum-curvature knee of an envelope curve.

    Candidates are interior local maxima of the difference curve whose height reaches the
    threshold; the highest one wins, ties going to the smallest x.

    Arguments:
        curve (EnvelopeCurve): The envelope.
        curvature_threshold (float): Minimum difference-curve height in (0, 1).

    Raises:
        ValueError: If the threshold lies outside (0, 1).

    Returns:
        Optional[KneeResult]: The knee, or None when no candidate survives.
    """
    if not 0 < curvature_threshold < 1:
        raise ValueError(f"curvature threshold must lie in (0, 1), got {curvature_threshold}")
    diff = difference_curve(curve)
    # Working in original order keeps ascending x, so the first maximum is the smallest x.
    best = None
    for i in range(1, diff.size - 1):
        if diff[i] < diff[i - 1] or diff[i] < diff[i + 1] or diff[i] < curvature_threshold:
            continue
        if best is None or diff[i] > diff[best]:
            best = i
    if best is None:
        logger.debug("No knee at curvature threshold %g (max height %.4g)", curvature_threshold, diff.max())
        return None
    knee = KneeResult(float(curve.x[best]), float(diff[best]), best)
    logger.debug("Knee at x=%.4g with curvature %.4g", knee.knee_x, knee.curvature)
    return knee
