#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Command implementations shared by the command-line front end."""

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__, storage, visuals
from .ingestion import (AfmRecord, DataFormat, NlmValue, join_series, parse_afm_records, parse_port_records,
                        reaggregate_nlm)
from .model import DEFAULT_WINDOW_LEN, AfmKind, JoinedSample, MetricKind, ModelKind, PipelineConfig, QosClass, Scope
from .pipeline import (ALPHA_GRID, CURVATURE_GRID, WEEK, PairKey, PairModelReport, Verdict, fit_pair,
                       group_reports, knee_stability, plot_rows, rank_predictors, sensitivity_sweep, stability_sweep)
from .synthgen import AfmMode, GeneratorSpec, emit_files, generate

logger = logging.getLogger(__name__)

VERDICT_EXIT = {
    Verdict.ACCURATE: 0,
    Verdict.NO_CLEAR_RELATIONSHIP: 2,
    Verdict.INSUFFICIENT_DATA: 3,
}
DEFAULT_RANK_NLMS = ("mlu", "alu", "mau", "aau", "link_p90", "adjacency_p90")


@dataclass
class RunManifest:
    """What produced a report: enough to re-run it and get the same JSON."""

    command: str
    config: dict = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__
    seed: Optional[int] = None
    created: Optional[str] = None

    @classmethod
    def create(cls, command: str, config: dict, inputs: Sequence[Path] = (), seed: Optional[int] = None,
               deterministic: bool = False, outputs: Sequence[Path] = ()) -> "RunManifest":
        """Collect the SHA-256 digests of inputs and outputs; deterministic runs carry no timestamp."""
        created = None if deterministic else datetime.now(timezone.utc).isoformat()
        return cls(
            command=command,
            config=config,
            inputs={str(path): storage.get_file_hash(path) for path in inputs},
            outputs={str(path): storage.get_file_hash(path) for path in outputs},
            seed=seed,
            created=created,
        )

    def to_dict(self) -> dict:
        out = {
            'command': self.command,
            'config': self.config,
            'inputs': self.inputs,
            'version': self.version,
        }
        if self.outputs:
            out['outputs'] = self.outputs
        if self.seed is not None:
            out['seed'] = self.seed
        if self.created is not None:
            out['created'] = self.created
        return out


def _emit(manifest: RunManifest, body: dict, out: Optional[Path]) -> None:
    data = {'manifest': manifest.to_dict(), **body}
    if out is None:
        print(storage.dump_json(data), end="")
    else:
        storage.write_json(out, data)


def load_port_values(nlm_file: Path, kinds: Sequence[MetricKind],
                     window: int = DEFAULT_WINDOW_LEN) -> List[NlmValue]:
    """Parse a port counter file and re-aggregate it into NLM values of the given kinds."""
    parsed = parse_port_records(storage.read_bytes(nlm_file), DataFormat.from_path(nlm_file))
    for err in parsed.errors[:10]:
        logger.warning("%s:%d: %s", nlm_file, err.line, err.message)
    values, _ = reaggregate_nlm(parsed.records, window, kinds)
    return values


def load_afm_records(afm_file: Path) -> List[AfmRecord]:
    parsed = parse_afm_records(storage.read_bytes(afm_file), DataFormat.from_path(afm_file))
    for err in parsed.errors[:10]:
        logger.warning("%s:%d: %s", afm_file, err.line, err.message)
    return parsed.records


def select_series(samples: Sequence[JoinedSample], qos: QosClass, scope: Scope,
                  fabric: Optional[str] = None) -> List[JoinedSample]:
    """Keep the samples of one (fabric, scope, QoS) relationship.

    Raises:
        ValueError: If nothing matches, or several fabrics match and none was chosen.
    """
    chosen = [s for s in samples if s.qos is qos and s.scope == scope and (fabric is None or s.fabric == fabric)]
    fabrics = sorted({s.fabric for s in chosen})
    if len(fabrics) > 1:
        raise ValueError(f"input holds several fabrics ({', '.join(fabrics)}), pick one with --fabric")
    if not chosen:
        raise ValueError(f"no joined samples for scope '{scope}' and QoS '{qos.value}'")
    return chosen


def load_series(nlm_file: Path, afm_file: Path, nlm: str, afm: str, qos: str, scope: str,
                fabric: Optional[str] = None, window: int = DEFAULT_WINDOW_LEN) -> List[JoinedSample]:
    """Parse, re-aggregate, join and select one relationship from a pair of input files."""
    nlm_kind, afm_kind = MetricKind.parse(nlm), AfmKind.parse(afm)
    values = load_port_values(nlm_file, [nlm_kind], window)
    samples, report = join_series(values, load_afm_records(afm_file), nlm_kind, afm_kind)
    logger.info("Joined %d windows (%d NLM-only, %d AFM-only, %d invalid)",
                report.matched, report.nlm_only, report.afm_only, report.dropped_invalid)
    return select_series(samples, QosClass.parse(qos), Scope.parse(scope), fabric)


def split_at(samples: Sequence[JoinedSample], train_end: Optional[int] = None) -> Tuple[list, list, int]:
    """Split samples by time: train before train_end, test from it on.

    Without train_end the split lies at two thirds of the covered time span.
    """
    if train_end is None:
        start = min(s.window_start for s in samples)
        end = max(s.window_end for s in samples)
        train_end = start + (end - start) * 2 // 3
    train = [s for s in samples if s.window_start < train_end]
    test = [s for s in samples if s.window_start >= train_end]
    return train, test, train_end


def resolve_config(nlm_kind: MetricKind, afm_kind: AfmKind, tau: float = None, alpha: float = None,
                   curvature: float = None, threshold: float = None, buckets: int = None) -> PipelineConfig:
    return PipelineConfig.from_cfg(nlm_kind, afm_kind, target_quantile=tau, bias=alpha,
                                   curvature_threshold=curvature, error_threshold=threshold, n_buckets=buckets)


def _print_report(report: PairModelReport) -> None:
    key = report.key
    visuals.print_info(f"[{report.verdict.value.upper()}] {key.nlm_kind} -> {key.afm_kind}", {
        "Fabric": key.fabric,
        "Scope": key.scope.code,
        "QoS": key.qos.value,
        "Knee": report.knee.knee_x if report.knee else None,
        "Samples": f"{report.n_train} train / {report.n_test} test",
    })
    visuals.print_table(("kind", "slope", "intercept", "train_amse", "test_rarmse", "coverage"),
                        [model.to_dict() for model in report.candidates])


def cmd_synth(out: Path, kind: str = "linear", beta: float = 1.0, c: float = 0.0, knee_x: float = None,
              penalty: float = 500.0, sigma: float = 0.05, n: int = 1000, seed: int = 0, x_lo: float = 0.05,
              x_hi: float = 0.9, fmt: str = "csv", afm_mode: str = "scalar", deterministic: bool = False) -> int:
    """Generate a synthetic trace and write it with a manifest.

    Returns:
        int: The exit status.
    """
    spec = GeneratorSpec(kind=ModelKind(kind), beta=beta, c=c, knee_x=knee_x, penalty_slope=penalty, sigma=sigma,
                         x_lo=x_lo, x_hi=x_hi, n=n, seed=seed)
    paths = emit_files(generate(spec), Path(out), DataFormat(fmt), AfmMode(afm_mode))
    config = {
        'kind': kind, 'beta': beta, 'c': c, 'knee_x': knee_x, 'penalty': penalty, 'sigma': sigma, 'n': n,
        'x_lo': x_lo, 'x_hi': x_hi, 'format': fmt, 'afm_mode': afm_mode,
    }
    manifest = RunManifest.create("synth", config, seed=seed, deterministic=deterministic,
                                  outputs=sorted(paths.values()))
    storage.write_json(Path(out) / "manifest.json", manifest.to_dict())
    print(f"Trace of {n} windows written to '{out}'.")
    return 0


def cmd_fit(nlm_file: Path, afm_file: Path, nlm: str = "mau", afm: str = "transmit_latency:1KiB:p99",
            qos: str = "low", scope: str = "fabric", fabric: str = None, window: int = DEFAULT_WINDOW_LEN,
            tau: float = None, alpha: float = None, curvature: float = None, threshold: float = None,
            buckets: int = None, train_end: int = None, out: Path = None, plot: Path = None,
            deterministic: bool = False) -> int:
    """Fit one (NLM, AFM) pair and report the selected model.

    Returns:
        int: 0 if accurate, 2 without a clear relationship, 3 on insufficient data.
    """
    samples = load_series(nlm_file, afm_file, nlm, afm, qos, scope, fabric, window)
    train, test, train_end = split_at(samples, train_end)
    cfg = resolve_config(MetricKind.parse(nlm), AfmKind.parse(afm), tau, alpha, curvature, threshold, buckets)
    report = fit_pair(train, test, cfg, key=PairKey.of(samples[0]))
    config = {**cfg.to_dict(), 'nlm': nlm, 'afm': afm, 'qos': qos, 'scope': scope, 'train_end': train_end}
    manifest = RunManifest.create("fit", config, [nlm_file, afm_file], deterministic=deterministic)
    _emit(manifest, {'report': report.to_dict()}, out)
    if plot is not None:
        storage.write_csv(plot, ("bucket_x", "observed", "predicted", "knee"), plot_rows(report, test, cfg))
    if out is not None:
        _print_report(report)
    return VERDICT_EXIT[report.verdict]


def cmd_stability(nlm_file: Path, afm_file: Path, nlm: str = "mau", afm: str = "transmit_latency:1KiB:p99",
                  qos: str = "low", scope: str = "fabric", fabric: str = None, window: int = DEFAULT_WINDOW_LEN,
                  tau: float = None, alpha: float = None, curvature: float = None, threshold: float = None,
                  buckets: int = None, train_weeks: float = 4, test_weeks: float = 2, step_weeks: float = 2,
                  out: Path = None, table: Path = None, deterministic: bool = False) -> int:
    """Run the sliding-window stability harness."""
    samples = load_series(nlm_file, afm_file, nlm, afm, qos, scope, fabric, window)
    cfg = resolve_config(MetricKind.parse(nlm), AfmKind.parse(afm), tau, alpha, curvature, threshold, buckets)
    windows = stability_sweep(samples, cfg, int(train_weeks * WEEK), int(test_weeks * WEEK), int(step_weeks * WEEK))
    rows = [win.to_dict() for win in windows]
    config = {**cfg.to_dict(), 'nlm': nlm, 'afm': afm, 'qos': qos, 'scope': scope,
              'train_weeks': train_weeks, 'test_weeks': test_weeks, 'step_weeks': step_weeks}
    manifest = RunManifest.create("stability", config, [nlm_file, afm_file], deterministic=deterministic)
    verdicts = {verdict.value: count for verdict, count in group_reports(win.report for win in windows).items()}
    _emit(manifest, {'verdicts': verdicts, 'windows': rows}, out)
    header = ("train_start", "train_end", "test_end", "verdict", "kind", "test_rarmse", "knee_x")
    if table is not None:
        storage.write_csv(table, header, [{key: row[key] for key in header} for row in rows])
    if out is not None:
        visuals.print_table(header, rows)
    return 0


def cmd_sweep(nlm_file: Path, afm_file: Path, nlm: str = "mau", afm: str = "transmit_latency:1KiB:p99",
              qos: str = "low", scope: str = "fabric", fabric: str = None, window: int = DEFAULT_WINDOW_LEN,
              tau: float = None, alpha: float = None, curvature: float = None, threshold: float = None,
              buckets: int = None, train_end: int = None, alphas: list = None, curvatures: list = None,
              thresholds: list = None, taus: list = None, out: Path = None, table: Path = None,
              deterministic: bool = False) -> int:
    """Run a sensitivity sweep.

    Without any axis flag the bias and curvature axes take their default grids. Once an axis
    is given, axes not given stay at the base value; an axis given without values uses its
    default grid.
    """
    samples = load_series(nlm_file, afm_file, nlm, afm, qos, scope, fabric, window)
    train, test, train_end = split_at(samples, train_end)
    cfg = resolve_config(MetricKind.parse(nlm), AfmKind.parse(afm), tau, alpha, curvature, threshold, buckets)
    if all(values is None for values in (alphas, curvatures, thresholds, taus)):
        alphas, curvatures = [], []

    def axis(values: Optional[list], default: Sequence[float], base: float) -> List[float]:
        if values is None:
            return [base]
        return list(values) or list(default)

    grids = {
        'alphas': axis(alphas, ALPHA_GRID, cfg.bias),
        'curvatures': axis(curvatures, CURVATURE_GRID, cfg.curvature_threshold),
        'error_thresholds': axis(thresholds, (cfg.error_threshold,), cfg.error_threshold),
        'taus': axis(taus, (cfg.target_quantile,), cfg.target_quantile),
    }
    rows = [row.to_dict() for row in sensitivity_sweep(train, test, cfg, **grids)]
    config = {**cfg.to_dict(), **grids, 'nlm': nlm, 'afm': afm, 'qos': qos, 'scope': scope, 'train_end': train_end}
    manifest = RunManifest.create("sweep", config, [nlm_file, afm_file], deterministic=deterministic)
    _emit(manifest, {'rows': rows}, out)
    header = ("alpha", "curvature", "tau", "error_threshold", "verdict", "knee_x", "kind", "test_rarmse",
              "coverage", "overprediction")
    if table is not None:
        storage.write_csv(table, header, rows)
    if out is not None:
        visuals.print_table(header, rows)
    return 0


def cmd_knees(nlm_file: Path, afm_file: Path, nlm: str = "mau", afm: str = "transmit_latency:1KiB:p99",
              qos: str = "low", scope: str = "fabric", fabric: str = None, window: int = DEFAULT_WINDOW_LEN,
              curvature: float = None, buckets: int = None, window_weeks: float = 1, step_weeks: float = 1,
              out: Path = None, table: Path = None, deterministic: bool = False) -> int:
    """Report the knee of each window to judge its week-to-week stability."""
    samples = load_series(nlm_file, afm_file, nlm, afm, qos, scope, fabric, window)
    cfg = resolve_config(MetricKind.parse(nlm), AfmKind.parse(afm), curvature=curvature, buckets=buckets)
    rows = [win.to_dict() for win in knee_stability(samples, cfg, int(window_weeks * WEEK), int(step_weeks * WEEK))]
    config = {**cfg.to_dict(), 'nlm': nlm, 'afm': afm, 'qos': qos, 'scope': scope,
              'window_weeks': window_weeks, 'step_weeks': step_weeks}
    manifest = RunManifest.create("knees", config, [nlm_file, afm_file], deterministic=deterministic)
    _emit(manifest, {'windows': rows}, out)
    header = ("start", "end", "n", "knee_x", "curvature")
    if table is not None:
        storage.write_csv(table, header, rows)
    if out is not None:
        visuals.print_table(header, rows)
    return 0


def cmd_rank(nlm_file: Path, afm_file: Path, nlms: list = None, afm: str = "transmit_latency:1KiB:p99",
             qos: str = "low", scope: str = "fabric", fabric: str = None, window: int = DEFAULT_WINDOW_LEN,
             tau: float = None, alpha: float = None, curvature: float = None, threshold: float = None,
             train_end: int = None, out: Path = None, deterministic: bool = False) -> int:
    """Rank several NLMs by how well they predict one AFM."""
    kinds = [MetricKind.parse(code) for code in (nlms or DEFAULT_RANK_NLMS)]
    afm_kind = AfmKind.parse(afm)
    values = load_port_values(nlm_file, kinds, window)
    afm_records = load_afm_records(afm_file)
    trains, tests, configs = {}, {}, {}
    for kind in kinds:
        joined, _ = join_series(values, afm_records, kind, afm_kind)
        try:
            series = select_series(joined, QosClass.parse(qos), Scope.parse(scope), fabric)
        except ValueError as ex:
            logger.warning("Skipping %s: %s", kind, ex)
            continue
        trains[kind], tests[kind], _ = split_at(series, train_end)
        configs[kind] = resolve_config(kind, afm_kind, tau, alpha, curvature, threshold)
    ranking = rank_predictors(trains, tests, configs)
    rows = []
    for kind, report in ranking:
        best = report.best
        rows.append({
            'nlm': kind.code,
            'verdict': report.verdict.value,
            'kind': best.kind.value if best else None,
            'test_rarmse': best.test_rarmse if best else None,
            'knee_x': report.knee.knee_x if report.knee else None,
        })
    config = {'nlms': [kind.code for kind in kinds], 'afm': afm, 'qos': qos, 'scope': scope,
              'configs': {kind.code: cfg.to_dict() for kind, cfg in configs.items()}}
    manifest = RunManifest.create("rank", config, [nlm_file, afm_file], deterministic=deterministic)
    _emit(manifest, {'ranking': rows, 'reports': [report.to_dict() for _, report in ranking]}, out)
    if out is not None:
        visuals.print_table(("nlm", "verdict", "kind", "test_rarmse", "knee_x"), rows)
    return 0
