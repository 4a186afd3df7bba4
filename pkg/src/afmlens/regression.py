#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Bucketed conditional quantiles and linear/queueing fits under asymmetric squared loss."""

import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Sequence, Tuple

import numpy as np

from .model import FittedModel, JoinedSample, ModelKind, TailSide

logger = logging.getLogger(__name__)

# Largest utilization accepted by the queueing transform x / (1 - x).
QUEUEING_X_LIMIT = 0.995

_STEP_FACTOR = 0.5
_MAX_SWEEPS = 500
_REL_TOLERANCE = 1e-10
_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class BucketPoint:
    """Conditional quantile of the AFM within one NLM bucket."""

    x: float
    y_tau: float
    n: int


class Prediction(NamedTuple):
    value: float
    in_domain: bool


def check_series(samples: Sequence[JoinedSample]) -> None:
    """Check samples are non-empty and describe one (NLM, AFM, QoS, scope) relationship.

    Raises:
        ValueError: If the list is empty or mixes metric identities.
    """
    if not samples:
        raise ValueError("no samples")
    first = samples[0]
    ident = (first.nlm_kind, first.afm_kind, first.qos, first.scope)
    for sample in samples:
        if (sample.nlm_kind, sample.afm_kind, sample.qos, sample.scope) != ident:
            raise ValueError("samples mix metric identities")


def samples_to_arrays(samples: Sequence[JoinedSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Return the (nlm_value, afm_value) columns of a sample list as float arrays."""
    x = np.fromiter((s.nlm_value for s in samples), dtype=float, count=len(samples))
    y = np.fromiter((s.afm_value for s in samples), dtype=float, count=len(samples))
    return x, y


def bucket_width(x: np.ndarray, n_buckets: int) -> float:
    return float(np.max(x) - np.min(x)) / n_buckets


def bucket_groups(x: np.ndarray, y: np.ndarray, n_buckets: int,
                  min_samples: int) -> List[Tuple[float, np.ndarray]]:
    """Split [min x, max x] into equal-width buckets and group the y values per bucket.

    The maximum x falls into the last bucket. Buckets holding fewer than min_samples values
    are left out.

    Returns:
        list: (bucket center, y values) for every populated bucket, in ascending x.
    """
    lo = float(np.min(x))
    width = bucket_width(x, n_buckets)
    if width == 0:
        return [(lo, y)] if y.size >= min_samples else []
    index = np.minimum(((x - lo) / width).astype(int), n_buckets - 1)
    groups = []
    for i in range(n_buckets):
        members = y[index == i]
        if members.size >= min_samples:
            groups.append((lo + (i + 0.5) * width, members))
    return groups


def bucketize(samples: Sequence[JoinedSample], n_buckets: int, tau: float,
              tail_side: TailSide = TailSide.UPPER, min_bucket_samples: int = 10) -> List[BucketPoint]:
    """Discretize samples into (bucket center, conditional quantile) points.

    Arguments:
        samples (Sequence[JoinedSample]): Samples of one relationship.
        n_buckets (int): Number of equal-width buckets over the observed NLM range.
        tau (float): Target quantile; the lower tail uses 1 - tau.

    Keyword Arguments:
        tail_side (TailSide): Which tail of the AFM is modeled. (default: {TailSide.UPPER})
        min_bucket_samples (int): Buckets with fewer samples are omitted. (default: {10})

    Raises:
        ValueError: If fewer than 2 buckets survive.

    Returns:
        List[BucketPoint]: One point per populated bucket.
    """
    check_series(samples)
    quantile = 1 - tau if tail_side is TailSide.LOWER else tau
    x, y = samples_to_arrays(samples)
    points = [BucketPoint(center, float(np.percentile(members, quantile * 100)), int(members.size))
              for center, members in bucket_groups(x, y, n_buckets, min_bucket_samples)]
    if len(points) < 2:
        raise ValueError(f"insufficient buckets ({len(points)} populated)")
    logger.debug("Bucketized %d samples into %d points", len(samples), len(points))
    return points


def _pair(predictions, truths, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(predictions, dtype=float)
    truth = np.asarray(truths, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {truth.size} truths")
    if pred.size == 0:
        raise ValueError("empty input")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return pred, truth


def _asymmetric(err: np.ndarray, alpha: float) -> float:
    over = err[err > 0]
    under = err[err < 0]
    over_term = float(np.mean(over * over)) if over.size else 0.0
    under_term = float(np.mean(under * under)) if under.size else 0.0
    return 2 * (alpha * over_term + (1 - alpha) * under_term)


def amse(predictions, truths, alpha: float) -> float:
    """Asymmetric mean squared error.

    Over- and under-predictions are averaged separately over their own counts and weighted
    alpha and 1 - alpha. Exact hits count on neither side; an empty side contributes 0.

    Raises:
        ValueError: On length mismatch, empty input or alpha outside (0, 1).
    """
    pred, truth = _pair(predictions, truths, alpha)
    return _asymmetric(pred - truth, alpha)


def rarmse(predictions, truths, alpha: float) -> float:
    """Relative asymmetric root mean squared error, the scale-free counterpart of amse.

    Raises:
        ZeroDivisionError: If any truth is zero.
        ValueError: On length mismatch, empty input or alpha outside (0, 1).
    """
    pred, truth = _pair(predictions, truths, alpha)
    if np.any(truth == 0):
        raise ZeroDivisionError("rARMSE is undefined for zero-valued truths")
    return float(np.sqrt(_asymmetric((pred - truth) / truth, alpha)))


def _direct_search(objective: Callable[[float, float], float],
                   start: Tuple[float, float]) -> Tuple[Tuple[float, float], float]:
    """Compass search over axis and diagonal moves; steps halve whenever no move improves."""
    params = np.array(start, dtype=float)
    steps = np.abs(params) * 0.1 + 1e-6
    best = objective(*params)
    for sweep in range(_MAX_SWEEPS):
        previous = best
        trial_best, trial_params = best, None
        for direction in _DIRECTIONS:
            trial = params + np.array(direction) * steps
            value = objective(*trial)
            if value < trial_best:
                trial_best, trial_params = value, trial
        if trial_params is None:
            steps *= _STEP_FACTOR
        else:
            params, best = trial_params, trial_best
        improvement = previous - best
        tiny_steps = np.all(steps <= _REL_TOLERANCE * (np.abs(params) + 1))
        if improvement <= _REL_TOLERANCE * max(abs(previous), 1e-300) and tiny_steps:
            logger.debug("Direct search converged after %d sweeps", sweep + 1)
            break
    return (float(params[0]), float(params[1])), best


def fit_linear(points: Sequence[BucketPoint], alpha: float) -> Tuple[float, float]:
    """Fit y_tau = beta * x + c minimizing amse over the bucket points.

    Amse averages each side over its own count, so the least-squares line is only a starting
    point, even at alpha = 0.5. The search runs over slope and centred level rather than
    (beta, c) and moves along axes and diagonals, which makes it a compass search and not a
    plain coordinate descent. It starts from the least-squares line and from that line shifted
    to each decile of its residuals, the lowest and highest included; the best result wins.

    Arguments:
        points (Sequence[BucketPoint]): At least two points with distinct x.
        alpha (float): Weight of overpredictions in (0, 1).

    Raises:
        ValueError: If the x values are degenerate or alpha is out of range.

    Returns:
        tuple: (beta, c)
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.array([p.x for p in points], dtype=float)
    y = np.array([p.y_tau for p in points], dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        raise ValueError("degenerate x: need at least two distinct NLM values")
    slope, intercept = (float(v) for v in np.polyfit(x, y, 1))

    # Centered coordinates decouple slope and level for the search.
    x_mean = float(np.mean(x))
    xc = x - x_mean
    level = intercept + slope * x_mean
    residuals = y - (slope * xc + level)

    def objective(beta: float, a: float) -> float:
        return _asymmetric(beta * xc + a - y, alpha)

    shifts = np.quantile(residuals, np.linspace(0, 1, 11))
    starts = [(slope, level)] + [(slope, level + float(shift)) for shift in shifts]
    results = [_direct_search(objective, start) for start in starts]
    (beta, a), _ = min(results, key=lambda res: res[1])
    return beta, a - beta * x_mean


def queueing_transform(x):
    """Map utilization x to x / (1 - x), the reciprocal delay law of a single queue."""
    return np.asarray(x, dtype=float) / (1 - np.asarray(x, dtype=float))


def fit_queueing(points: Sequence[BucketPoint], alpha: float) -> Tuple[float, float]:
    """Fit y_tau = beta * x / (1 - x) + c by a linear fit in the transformed variable.

    Raises:
        ValueError: If any point has x >= 0.995, or on degenerate x.

    Returns:
        tuple: (beta, c)
    """
    if any(p.x >= QUEUEING_X_LIMIT for p in points):
        raise ValueError(f"queueing transform needs x < {QUEUEING_X_LIMIT}")
    transformed = [BucketPoint(float(queueing_transform(p.x)), p.y_tau, p.n) for p in points]
    return fit_linear(transformed, alpha)


FITTERS = {
    ModelKind.LINEAR: fit_linear,
    ModelKind.QUEUEING: fit_queueing,
}


def evaluate(kind: ModelKind, slope: float, intercept: float, x) -> np.ndarray:
    """Evaluate a model curve on an array of NLM values (no domain checks)."""
    x = np.asarray(x, dtype=float)
    if kind is ModelKind.QUEUEING:
        return slope * queueing_transform(x) + intercept
    return slope * x + intercept


def predict(model: FittedModel, x: float) -> Prediction:
    """Predict the AFM quantile at NLM value x.

    Values beyond the model's knee threshold are still returned but flagged out of domain.

    Raises:
        ValueError: For a queueing model at x >= 1.

    Returns:
        Prediction: (value, in_domain)
    """
    if model.kind is ModelKind.QUEUEING and x >= 1:
        raise ValueError(f"queueing model is undefined at x={x}")
    value = float(evaluate(model.kind, model.slope, model.intercept, x))
    in_domain = model.knee_threshold is None or x <= model.knee_threshold
    if not in_domain:
        logger.warning("Prediction at %.4g lies beyond the knee threshold %.4g", x, model.knee_threshold)
    return Prediction(value, in_domain)


def overprediction_fraction(model: FittedModel, points: Sequence[BucketPoint]) -> float:
    """Fraction of points whose quantile the model strictly overpredicts."""
    if not points:
        raise ValueError("no points")
    pred = evaluate(model.kind, model.slope, model.intercept, [p.x for p in points])
    truth = np.array([p.y_tau for p in points], dtype=float)
    return float(np.mean(pred > truth))
