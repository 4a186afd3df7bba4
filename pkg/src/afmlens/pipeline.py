#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Knee-gated model fitting, selection and scoring, plus the stability and sensitivity harnesses."""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .__config__ import get_threads
from .knee import KneeResult, build_envelope, detect_knee
from .model import AfmKind, FittedModel, JoinedSample, MetricKind, ModelKind, PipelineConfig, QosClass, Scope
from .regression import (FITTERS, BucketPoint, amse, bucket_groups, bucket_width, bucketize, check_series,
                         evaluate, overprediction_fraction, rarmse, samples_to_arrays)

logger = logging.getLogger(__name__)

WEEK = 7 * 24 * 3600
ALPHA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
CURVATURE_GRID = (0.05, 0.1, 0.3, 0.5, 0.7, 0.8)


class Verdict(Enum):
    ACCURATE = "accurate"
    NO_CLEAR_RELATIONSHIP = "no_clear_relationship"
    INSUFFICIENT_DATA = "insufficient_data"


@dataclass(frozen=True)
class PairKey:
    fabric: str
    scope: Scope
    qos: QosClass
    nlm_kind: MetricKind
    afm_kind: AfmKind

    @classmethod
    def of(cls, sample: JoinedSample) -> "PairKey":
        return cls(sample.fabric, sample.scope, sample.qos, sample.nlm_kind, sample.afm_kind)

    def to_dict(self) -> dict:
        return {
            'fabric': self.fabric,
            'scope': self.scope.code,
            'qos': self.qos.value,
            'nlm': self.nlm_kind.code,
            'afm': self.afm_kind.code,
        }


@dataclass
class PairModelReport:
    """Outcome of fitting one (NLM, AFM) pair.

    selected is only set for an accurate pair; best is the lowest-rARMSE candidate either way.
    """

    key: PairKey
    verdict: Verdict
    knee: Optional[KneeResult] = None
    candidates: List[FittedModel] = field(default_factory=list)
    selected: Optional[FittedModel] = None
    bucket_width: float = 0.0
    train_points: List[BucketPoint] = field(default_factory=list)
    test_points: List[BucketPoint] = field(default_factory=list)
    n_train: int = 0
    n_test: int = 0

    @property
    def knee_threshold(self) -> Optional[float]:
        if self.knee is None:
            return None
        return self.knee.knee_x - self.bucket_width

    @property
    def best(self) -> Optional[FittedModel]:
        scored = [model for model in self.candidates if model.test_rarmse is not None]
        if not scored:
            return None
        return min(scored, key=lambda model: model.test_rarmse)

    def to_dict(self) -> dict:
        return {
            'key': self.key.to_dict(),
            'verdict': self.verdict.value,
            'knee': self.knee.to_dict() if self.knee else None,
            'knee_threshold': self.knee_threshold,
            'bucket_width': self.bucket_width,
            'candidates': [model.to_dict() for model in self.candidates],
            'selected': self.selected.to_dict() if self.selected else None,
            'n_train': self.n_train,
            'n_test': self.n_test,
        }


@dataclass
class WindowReport:
    train_span: Tuple[int, int]
    test_span: Tuple[int, int]
    report: PairModelReport

    def __post_init__(self):
        if self.test_span[0] != self.train_span[1]:
            raise ValueError("test span must start where the train span ends")

    def to_dict(self) -> dict:
        best = self.report.best
        return {
            'train_start': self.train_span[0],
            'train_end': self.train_span[1],
            'test_end': self.test_span[1],
            'verdict': self.report.verdict.value,
            'kind': best.kind.value if best else None,
            'test_rarmse': best.test_rarmse if best else None,
            'knee_x': self.report.knee.knee_x if self.report.knee else None,
            'report': self.report.to_dict(),
        }


def coverage(model: FittedModel, test: Sequence[JoinedSample]) -> float:
    """Fraction of test samples inside the model's knee-bounded domain.

    Raises:
        ValueError: If the test set is empty.
    """
    if not test:
        raise ValueError("cannot compute coverage on an empty test set")
    if model.knee_threshold is None:
        return 1.0
    inside = sum(1 for sample in test if sample.nlm_value <= model.knee_threshold)
    return inside / len(test)


def _score(model: FittedModel, points: Sequence[BucketPoint]) -> Optional[float]:
    try:
        pred = evaluate(model.kind, model.slope, model.intercept, [p.x for p in points])
        return rarmse(pred, [p.y_tau for p in points], model.alpha)
    except (ValueError, ZeroDivisionError) as ex:
        logger.warning("Cannot score %s model: %s", model.kind.value, ex)
        return None


def fit_pair(train: Sequence[JoinedSample], test: Sequence[JoinedSample], cfg: PipelineConfig,
             key: Optional[PairKey] = None) -> PairModelReport:
    """Detect the knee, fit linear and queueing models below it and select the better one.

    The regression subset holds the training samples more than one bucket below the knee.
    Candidates are scored on the test set restricted to that domain, by comparing predicted and
    observed bucket quantiles with rARMSE; the lowest score wins and is accepted when it does
    not exceed the error threshold.

    Arguments:
        train (Sequence[JoinedSample]): Training samples of one relationship.
        test (Sequence[JoinedSample]): Test samples of the same relationship.
        cfg (PipelineConfig): Pipeline parameters.

    Keyword Arguments:
        key (PairKey): Report key, needed only when train may be empty. (default: {None})

    Raises:
        ValueError: If train is empty and no key was given, or the samples mix identities.

    Returns:
        PairModelReport: The report; failures fold into the verdict.
    """
    if not train:
        if key is None:
            raise ValueError("no training samples")
        return PairModelReport(key, Verdict.INSUFFICIENT_DATA, n_test=len(test))
    check_series(list(train) + list(test))
    report = PairModelReport(key or PairKey.of(train[0]), Verdict.INSUFFICIENT_DATA,
                             n_train=len(train), n_test=len(test))

    x_train, _ = samples_to_arrays(train)
    report.bucket_width = bucket_width(x_train, cfg.n_buckets)
    try:
        curve = build_envelope(train, cfg.n_buckets, cfg.envelope, cfg.min_bucket_samples, cfg.knee_direction)
        report.knee = detect_knee(curve, cfg.curvature_threshold)
    except ValueError as ex:
        logger.debug("Skipping knee detection: %s", ex)

    threshold = report.knee_threshold
    subset = list(train) if threshold is None else [s for s in train if s.nlm_value < threshold]
    try:
        report.train_points = bucketize(subset, cfg.n_buckets, cfg.target_quantile, cfg.tail_side,
                                        cfg.min_bucket_samples)
    except ValueError as ex:
        logger.info("Insufficient training data for %s: %s", report.key.nlm_kind, ex)
        return report

    y_train = [p.y_tau for p in report.train_points]
    for kind, fitter in FITTERS.items():
        try:
            slope, intercept = fitter(report.train_points, cfg.bias)
        except ValueError as ex:
            logger.debug("Cannot fit %s model: %s", kind.value, ex)
            continue
        pred = evaluate(kind, slope, intercept, [p.x for p in report.train_points])
        report.candidates.append(FittedModel(
            kind=kind,
            slope=slope,
            intercept=intercept,
            tau=cfg.quantile,
            alpha=cfg.bias,
            knee_threshold=threshold,
            train_amse=amse(pred, y_train, cfg.bias),
        ))

    in_domain = list(test) if threshold is None else [s for s in test if s.nlm_value <= threshold]
    if in_domain:
        try:
            report.test_points = bucketize(in_domain, cfg.n_buckets, cfg.target_quantile, cfg.tail_side,
                                           cfg.min_bucket_samples)
        except ValueError as ex:
            logger.info("Insufficient test data for %s: %s", report.key.nlm_kind, ex)
    if report.test_points:
        report.candidates = [replace(model, test_rarmse=_score(model, report.test_points),
                                     coverage=coverage(model, test))
                             for model in report.candidates]

    best = report.best
    if best is None:
        return report
    if best.is_accurate(cfg.error_threshold):
        report.verdict = Verdict.ACCURATE
        report.selected = best
    else:
        report.verdict = Verdict.NO_CLEAR_RELATIONSHIP
    logger.debug("Pair %s: %s (%s, rARMSE %.4g)", report.key.nlm_kind, report.verdict.value,
                 best.kind.value, best.test_rarmse)
    return report


def verdict_for(report: PairModelReport, error_threshold: float) -> Verdict:
    """Recompute a report's verdict under another error threshold without refitting."""
    best = report.best
    if best is None:
        return Verdict.INSUFFICIENT_DATA
    return Verdict.ACCURATE if best.is_accurate(error_threshold) else Verdict.NO_CLEAR_RELATIONSHIP


def plot_rows(report: PairModelReport, test: Sequence[JoinedSample], cfg: PipelineConfig) -> List[dict]:
    """Plot-ready rows over all test buckets: observed and predicted quantile plus a knee marker.

    Predictions are left empty outside the model's domain or when no model was scored.
    """
    if not test:
        return []
    x, y = samples_to_arrays(test)
    quantile = cfg.quantile
    width = bucket_width(x, cfg.n_buckets)
    model = report.best
    rows = []
    for center, members in bucket_groups(x, y, cfg.n_buckets, cfg.min_bucket_samples):
        predicted = None
        if model is not None and (model.knee_threshold is None or center <= model.knee_threshold):
            predicted = float(evaluate(model.kind, model.slope, model.intercept, center))
        at_knee = report.knee is not None and abs(report.knee.knee_x - center) <= width / 2
        rows.append({
            'bucket_x': center,
            'observed': float(np.percentile(members, quantile * 100)),
            'predicted': predicted,
            'knee': int(at_knee),
        })
    return rows


def _parallel_map(func: Callable, items: Iterable) -> list:
    items = list(items)
    threads = min(get_threads(), max(len(items), 1))
    if threads <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        # map keeps input order, whatever order the evaluations finish in.
        return list(executor.map(func, items))


def _span(series: Sequence[JoinedSample]) -> Tuple[int, int]:
    start = min(s.window_start for s in series)
    end = max(s.window_end for s in series)
    return start, end


def split_windows(start: int, end: int, length: int, step: int) -> List[int]:
    """Offsets (absolute start times) of every window of the given length that fits in [start, end)."""
    if length <= 0 or step <= 0:
        raise ValueError("window length and step must be positive")
    offsets = []
    offset = start
    while offset + length <= end:
        offsets.append(offset)
        offset += step
    return offsets


def _between(series: Sequence[JoinedSample], start: int, end: int) -> List[JoinedSample]:
    return [s for s in series if start <= s.window_start < end]


def stability_sweep(series: Sequence[JoinedSample], cfg: PipelineConfig, train_len: int = 4 * WEEK,
                    test_len: int = 2 * WEEK, step: int = 2 * WEEK) -> List[WindowReport]:
    """Slide a train/test window pair over a time series and fit every placement.

    Arguments:
        series (Sequence[JoinedSample]): Samples of one relationship, any order.
        cfg (PipelineConfig): Pipeline parameters.

    Keyword Arguments:
        train_len (int): Training duration in seconds. (default: {4 weeks})
        test_len (int): Test duration in seconds. (default: {2 weeks})
        step (int): Offset between placements in seconds. (default: {2 weeks})

    Raises:
        ValueError: If the series spans less than train_len + test_len.

    Returns:
        List[WindowReport]: One report per placement, in time order.
    """
    check_series(series)
    start, end = _span(series)
    offsets = split_windows(start, end, train_len + test_len, step)
    if not offsets:
        raise ValueError(f"series spans {(end - start) / WEEK:.3g} weeks, "
                         f"{(train_len + test_len) / WEEK:.3g} are needed")
    key = PairKey.of(series[0])
    logger.debug("Evaluating %d windows", len(offsets))

    def evaluate_window(offset: int) -> WindowReport:
        train_end = offset + train_len
        test_end = train_end + test_len
        report = fit_pair(_between(series, offset, train_end), _between(series, train_end, test_end), cfg, key)
        return WindowReport((offset, train_end), (train_end, test_end), report)

    return _parallel_map(evaluate_window, offsets)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    curvature: float
    tau: float
    error_threshold: float
    verdict: Verdict
    knee_x: Optional[float] = None
    kind: Optional[ModelKind] = None
    test_rarmse: Optional[float] = None
    coverage: Optional[float] = None
    overprediction: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            'alpha': self.alpha,
            'curvature': self.curvature,
            'tau': self.tau,
            'error_threshold': self.error_threshold,
            'verdict': self.verdict.value,
            'knee_x': self.knee_x,
            'kind': self.kind.value if self.kind else None,
            'test_rarmse': self.test_rarmse,
            'coverage': self.coverage,
            'overprediction': self.overprediction,
        }


def sensitivity_sweep(train: Sequence[JoinedSample], test: Sequence[JoinedSample], base_cfg: PipelineConfig,
                      alphas: Sequence[float] = ALPHA_GRID, curvatures: Sequence[float] = CURVATURE_GRID,
                      error_thresholds: Optional[Sequence[float]] = None,
                      taus: Optional[Sequence[float]] = None) -> List[SweepRow]:
    """Evaluate the cross product of bias, curvature threshold, target quantile and error threshold.

    Models are refit along the bias, curvature and quantile axes only; the error threshold
    merely recomputes the verdict.

    Keyword Arguments:
        error_thresholds (Sequence[float]): (default: {the base threshold})
        taus (Sequence[float]): (default: {the base target quantile})

    Raises:
        ValueError: If any grid is empty.

    Returns:
        List[SweepRow]: Rows ordered by (alpha, curvature, tau, threshold) in grid order.
    """
    error_thresholds = list(error_thresholds) if error_thresholds is not None else [base_cfg.error_threshold]
    taus = list(taus) if taus is not None else [base_cfg.target_quantile]
    for name, grid in (('alpha', alphas), ('curvature', curvatures), ('threshold', error_thresholds),
                       ('tau', taus)):
        if not grid:
            raise ValueError(f"empty {name} grid")
    check_series(train)
    key = PairKey.of(train[0])
    points = list(itertools.product(alphas, curvatures, taus))

    def evaluate_point(point: Tuple[float, float, float]) -> PairModelReport:
        alpha, curvature, tau = point
        cfg = base_cfg.with_changes(bias=alpha, curvature_threshold=curvature, target_quantile=tau)
        return fit_pair(train, test, cfg, key)

    rows = []
    for (alpha, curvature, tau), report in zip(points, _parallel_map(evaluate_point, points)):
        best = report.best
        over = None
        if best is not None and report.train_points:
            over = overprediction_fraction(best, report.train_points)
        for threshold in error_thresholds:
            rows.append(SweepRow(
                alpha=alpha,
                curvature=curvature,
                tau=tau,
                error_threshold=threshold,
                verdict=verdict_for(report, threshold),
                knee_x=report.knee.knee_x if report.knee else None,
                kind=best.kind if best else None,
                test_rarmse=best.test_rarmse if best else None,
                coverage=best.coverage if best else None,
                overprediction=over,
            ))
    return rows


@dataclass(frozen=True)
class KneeWindow:
    span: Tuple[int, int]
    n: int
    knee: Optional[KneeResult] = None

    def to_dict(self) -> dict:
        return {
            'start': self.span[0],
            'end': self.span[1],
            'n': self.n,
            'knee_x': self.knee.knee_x if self.knee else None,
            'curvature': self.knee.curvature if self.knee else None,
        }


def knee_stability(series: Sequence[JoinedSample], cfg: PipelineConfig, window: int = WEEK,
                   step: int = WEEK) -> List[KneeWindow]:
    """Detect the knee in consecutive windows to see whether it appears, moves or disappears.

    Raises:
        ValueError: If the series is shorter than one window.
    """
    check_series(series)
    start, end = _span(series)
    offsets = split_windows(start, end, window, step)
    if not offsets:
        raise ValueError(f"series spans {(end - start) / WEEK:.3g} weeks, {window / WEEK:.3g} are needed")

    def evaluate_window(offset: int) -> KneeWindow:
        samples = _between(series, offset, offset + window)
        knee = None
        if samples:
            try:
                curve = build_envelope(samples, cfg.n_buckets, cfg.envelope, cfg.min_bucket_samples,
                                       cfg.knee_direction)
                knee = detect_knee(curve, cfg.curvature_threshold)
            except ValueError as ex:
                logger.debug("No envelope for window at %d: %s", offset, ex)
        return KneeWindow((offset, offset + window), len(samples), knee)

    return _parallel_map(evaluate_window, offsets)


def _rank_key(item: Tuple[MetricKind, PairModelReport]) -> tuple:
    kind, report = item
    best = report.best
    accurate = report.verdict is Verdict.ACCURATE
    return (not accurate, best is None, best.test_rarmse if best else 0.0, kind.code)


def rank_predictors(train_by_nlm: Mapping[MetricKind, Sequence[JoinedSample]],
                    test_by_nlm: Mapping[MetricKind, Sequence[JoinedSample]],
                    configs: Optional[Mapping[MetricKind, PipelineConfig]] = None
                    ) -> List[Tuple[MetricKind, PairModelReport]]:
    """Fit one AFM against several NLMs and order the NLMs by how well they predict it.

    Accurate pairs come first, then ascending test rARMSE; pairs without a scored model last.

    Keyword Arguments:
        configs (Mapping): Per-NLM configuration. (default: {PipelineConfig.from_cfg per pair})

    Raises:
        ValueError: If no NLM was given, or one has neither training nor test samples.
    """
    kinds = list(train_by_nlm)
    if not kinds:
        raise ValueError("no predictors to rank")

    def evaluate_kind(kind: MetricKind) -> PairModelReport:
        train = list(train_by_nlm[kind])
        test = list(test_by_nlm.get(kind, []))
        series = train or test
        if not series:
            raise ValueError(f"no samples for {kind}")
        if configs is not None and kind in configs:
            cfg = configs[kind]
        else:
            cfg = PipelineConfig.from_cfg(kind, series[0].afm_kind)
        return fit_pair(train, test, cfg, PairKey.of(series[0]))

    reports = _parallel_map(evaluate_kind, kinds)
    return sorted(zip(kinds, reports), key=_rank_key)


def group_reports(reports: Iterable[PairModelReport]) -> Dict[Verdict, int]:
    """Count reports per verdict."""
    counts = {verdict: 0 for verdict in Verdict}
    for report in reports:
        counts[report.verdict] += 1
    return counts
