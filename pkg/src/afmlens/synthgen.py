#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Seeded synthetic NLM/AFM traces with known ground truth.

Randomness comes from SplitMix64 used as a counter-based generator: output i of seed s is
mix(s + (i + 1) * 0x9E3779B97F4A7C15), so any slice of the stream can be computed directly.
The first outputs for seed 0 are 0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4 and 0x06c45d188009454f.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .ingestion import AFM_COLUMNS, AFM_SKETCH_COLUMN, NLM_COLUMNS, DataFormat, scope_metrics
from .metrics import PortRecord, Stage
from .model import (DEFAULT_WINDOW_LEN, MAU, AfmKind, JoinedSample, MetricKind, ModelKind, QosClass, Scope,
                    ScopeKind)
from .regression import evaluate
from .sketch import QuantileSketch
from . import storage

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
DEFAULT_PORT_SPEED = 100_000_000_000
DEFAULT_SUB_INTERVALS = 10
DEFAULT_AFM_KIND = AfmKind.parse("transmit_latency:1KiB:p99")
# Spread of the per-window distributions emitted as sketches.
_SKETCH_SPREAD = 0.2


def splitmix64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Return outputs offset .. offset + count - 1 of the SplitMix64 stream for a seed."""
    with np.errstate(over='ignore'):
        index = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
        z = np.uint64(seed & MASK64) + index * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def uniforms(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Uniform doubles in [0, 1) from the top 53 bits of each output."""
    return (splitmix64(seed, count, offset) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def normals(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Standard normals by Box-Muller over two consecutive blocks of uniforms."""
    u1 = 1.0 - uniforms(seed, count, offset)
    u2 = uniforms(seed, count, offset + count)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class AfmMode(Enum):
    SCALAR = "scalar"
    SKETCH = "sketch"
    BOTH = "both"


@dataclass(frozen=True)
class GeneratorSpec:
    """Ground truth and emission metadata of a synthetic trace."""

    kind: ModelKind = ModelKind.LINEAR
    beta: float = 1.0
    c: float = 0.0
    knee_x: Optional[float] = None
    penalty_slope: float = 500.0
    sigma: float = 0.0
    x_lo: float = 0.05
    x_hi: float = 0.9
    n: int = 1000
    seed: int = 0
    fabric: str = "synth"
    scope: Scope = field(default_factory=Scope.fabric_wide)
    qos: QosClass = QosClass.LOW
    nlm_kind: MetricKind = MAU
    afm_kind: AfmKind = DEFAULT_AFM_KIND
    window_len: int = DEFAULT_WINDOW_LEN
    start: int = 0
    port_speed: int = DEFAULT_PORT_SPEED

    def __post_init__(self):
        bounded = self.kind is ModelKind.QUEUEING or self.knee_x is not None
        checks = (
            (0 <= self.x_lo <= self.x_hi <= 1, "need 0 <= x_lo <= x_hi <= 1"),
            (not bounded or self.x_hi < 1, "x_hi must stay below 1 for queueing or knee traces"),
            (self.c >= 0, "c must be non-negative"),
            (self.sigma >= 0, "sigma must be non-negative"),
            (self.n >= 1, "n must be positive"),
            (self.penalty_slope > 0, "penalty slope must be positive"),
            (self.knee_x is None or 0 < self.knee_x < 1, "knee_x must lie in (0, 1)"),
            (self.window_len > 0 and self.window_len % DEFAULT_SUB_INTERVALS == 0,
             f"window length must be a positive multiple of {DEFAULT_SUB_INTERVALS}"),
            (self.window_len > 0 and self.start % self.window_len == 0, "start must be aligned to the window length"),
            (self.nlm_kind.is_utilization, "the generated NLM must be a utilization"),
        )
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        # Both model curves are monotone in x, so the endpoints bound the base AFM.
        ends = evaluate(self.kind, self.beta, self.c, [self.x_lo, self.x_hi])
        if not np.all(ends > 0):
            raise ValueError("base AFM must be positive over [x_lo, x_hi]")

    def quantile_truth(self, tau: float) -> Tuple[float, float]:
        """True (beta, c) of the conditional tau-quantile below the knee.

        Multiplicative lognormal noise scales every quantile by exp(sigma * z_tau).
        """
        factor = math.exp(self.sigma * float(norm.ppf(tau)))
        return self.beta * factor, self.c * factor

    def base(self, x: np.ndarray) -> np.ndarray:
        """Noise-free AFM at NLM values x, including the post-knee penalty."""
        y = evaluate(self.kind, self.beta, self.c, x)
        if self.knee_x is not None:
            excess = np.maximum(np.asarray(x, dtype=float) - self.knee_x, 0.0)
            y = y + self.penalty_slope * excess * excess
        return y


def link_blocks(scope: Scope) -> Tuple[str, str]:
    """Source and destination block of the single link carrying a scope's traffic."""
    if scope.kind is ScopeKind.BLOCK:
        return scope.block_id, scope.block_id
    if scope.kind is ScopeKind.ADJACENCY:
        return scope.block_id, scope.peer_block_id
    return "blk-a", "blk-b"


def _octets(x: float, port_speed: int, window_len: int) -> int:
    return int(round(x * port_speed * window_len / 8))


def port_records(fabric: str, scope: Scope, window_start: int, octets: int, window_len: int = DEFAULT_WINDOW_LEN,
                 port_speed: int = DEFAULT_PORT_SPEED,
                 sub_intervals: int = DEFAULT_SUB_INTERVALS) -> List[PortRecord]:
    """Split one window's octets across native-cadence records of the scope's single link."""
    src, dst = link_blocks(scope)
    sub_len = window_len // sub_intervals
    share, rest = divmod(octets, sub_intervals)
    records = []
    for j in range(sub_intervals):
        part = share + (1 if j < rest else 0)
        records.append(PortRecord(
            fabric=fabric,
            stage=Stage.AGGREGATION,
            port_id=f"{src}:p1",
            peer_port_id=f"{dst}:p1",
            port_speed=port_speed,
            src_block=src,
            dst_block=dst,
            window_start=window_start + j * sub_len,
            outgoing_octets=part,
            incoming_octets=part,
            window_len=sub_len,
        ))
    return records


def _nlm_value(spec: GeneratorSpec, octets: int) -> float:
    src, dst = link_blocks(spec.scope)
    window = PortRecord(spec.fabric, Stage.AGGREGATION, f"{src}:p1", f"{dst}:p1", spec.port_speed, src, dst,
                        spec.start, octets, octets, spec.window_len)
    return scope_metrics([window], [spec.nlm_kind])[spec.nlm_kind]


def generate(spec: GeneratorSpec) -> List[JoinedSample]:
    """Draw a trace: one joined sample per consecutive window.

    NLM values are quantized through port octet counters exactly as ingestion derives them;
    the AFM is the model curve (plus knee penalty) times lognormal noise.

    Returns:
        List[JoinedSample]: Samples in time order.
    """
    u = uniforms(spec.seed, spec.n)
    eps = normals(spec.seed, spec.n, offset=spec.n)
    x_raw = spec.x_lo + (spec.x_hi - spec.x_lo) * u
    x = np.array([_nlm_value(spec, _octets(value, spec.port_speed, spec.window_len)) for value in x_raw])
    y = spec.base(x) * np.exp(spec.sigma * eps)
    samples = [JoinedSample(
        window_start=spec.start + i * spec.window_len,
        window_len=spec.window_len,
        fabric=spec.fabric,
        scope=spec.scope,
        qos=spec.qos,
        nlm_kind=spec.nlm_kind,
        nlm_value=float(x[i]),
        afm_kind=spec.afm_kind,
        afm_value=float(y[i]),
    ) for i in range(spec.n)]
    logger.debug("Generated %d samples (seed %d)", spec.n, spec.seed)
    return samples


def sketch_size(stat: float) -> int:
    """Smallest value count whose interpolation rank for the stat is a whole number."""
    for size in (101, 1001, 10001):
        rank = stat / 100 * (size - 1)
        if math.isclose(rank, round(rank), abs_tol=1e-9):
            return size
    raise ValueError(f"cannot emit an exact sketch for stat {stat:g}")


def window_sketch(value: float, stat: float, compression: Optional[float] = None) -> QuantileSketch:
    """A small per-window distribution whose stat-quantile is exactly value."""
    size = sketch_size(stat)
    pivot = int(round(stat / 100 * (size - 1)))
    values = [value * math.exp(_SKETCH_SPREAD * (j - pivot) / (size - 1)) for j in range(size)]
    values[pivot] = value
    # Counts up to the compression keep the sketch exact.
    return QuantileSketch(max(compression or 0, size)).update(values)


def _afm_rows(sample: JoinedSample, mode: AfmMode, compression: Optional[float]) -> List[dict]:
    afm_kind = sample.afm_kind
    src, dst = {
        ScopeKind.FABRIC_WIDE: ("", ""),
        ScopeKind.BLOCK: (sample.scope.block_id, sample.scope.block_id),
        ScopeKind.ADJACENCY: (sample.scope.block_id, sample.scope.peer_block_id),
    }[sample.scope.kind]
    base = {
        'fabric': sample.fabric,
        'window_start_epoch_s': sample.window_start,
        'window_len_s': sample.window_len,
        'qos': sample.qos.value,
        'src_block': src,
        'dst_block': dst,
        'afm_family': afm_kind.family.value,
        'size_class': afm_kind.size_class.value if afm_kind.size_class else "",
    }
    rows = []
    if mode in (AfmMode.SCALAR, AfmMode.BOTH):
        rows.append(dict(base, stat=f"p{afm_kind.stat:g}", value=sample.afm_value))
    if mode in (AfmMode.SKETCH, AfmMode.BOTH):
        sketch = window_sketch(sample.afm_value, afm_kind.stat, compression)
        rows.append(dict(base, stat="", value="", sketch_json=sketch.to_dict()))
    return rows


def emit_files(samples: Sequence[JoinedSample], directory: Path, fmt: DataFormat = DataFormat.CSV,
               afm_mode: AfmMode = AfmMode.SCALAR, port_speed: int = DEFAULT_PORT_SPEED,
               compression: Optional[float] = None) -> Dict[str, Path]:
    """Write samples as port counter and AFM files that parse and join back to the same samples.

    Arguments:
        samples (Sequence[JoinedSample]): Utilization samples, e.g. from generate().
        directory (Path): Output directory, created when missing.

    Keyword Arguments:
        fmt (DataFormat): CSV or JSONL. (default: {DataFormat.CSV})
        afm_mode (AfmMode): Emit AFM scalars, sketches or both. (default: {AfmMode.SCALAR})
        port_speed (int): Speed of the emitted link in bits/s. (default: {100 Gb/s})
        compression (float): Sketch compression, raised to the per-window value count. (default: {None})

    Raises:
        ValueError: If a sample's NLM is not a utilization.
        OSError: If the directory cannot be written.

    Returns:
        Dict[str, Path]: The 'nlm' and 'afm' file paths.
    """
    directory = Path(directory)
    storage.create_dirs(directory)
    nlm_rows, afm_rows = [], []
    for sample in samples:
        if not sample.nlm_kind.is_utilization:
            raise ValueError(f"cannot emit counters for NLM '{sample.nlm_kind}'")
        octets = _octets(sample.nlm_value, port_speed, sample.window_len)
        for rec in port_records(sample.fabric, sample.scope, sample.window_start, octets, sample.window_len,
                                port_speed):
            nlm_rows.append({
                'fabric': rec.fabric,
                'stage': rec.stage.value,
                'port_id': rec.port_id,
                'peer_port_id': rec.peer_port_id,
                'port_speed_bps': rec.port_speed,
                'src_block': rec.src_block,
                'dst_block': rec.dst_block,
                'window_start_epoch_s': rec.window_start,
                'window_len_s': rec.window_len,
                'outgoing_octets': rec.outgoing_octets,
                'incoming_octets': rec.incoming_octets,
            })
        afm_rows.extend(_afm_rows(sample, afm_mode, compression))

    suffix = fmt.value
    paths = {'nlm': directory / f"nlm.{suffix}", 'afm': directory / f"afm.{suffix}"}
    if fmt is DataFormat.CSV:
        for row in afm_rows:
            if AFM_SKETCH_COLUMN in row:
                row[AFM_SKETCH_COLUMN] = json.dumps(row[AFM_SKETCH_COLUMN], sort_keys=True)
        afm_header = list(AFM_COLUMNS)
        if afm_mode is not AfmMode.SCALAR:
            afm_header.append(AFM_SKETCH_COLUMN)
        storage.write_csv(paths['nlm'], NLM_COLUMNS, nlm_rows)
        storage.write_csv(paths['afm'], afm_header, afm_rows)
    else:
        storage.write_jsonl(paths['nlm'], nlm_rows)
        storage.write_jsonl(paths['afm'], afm_rows)
    logger.info("Wrote %d port records and %d AFM rows to %s", len(nlm_rows), len(afm_rows), directory)
    return paths
