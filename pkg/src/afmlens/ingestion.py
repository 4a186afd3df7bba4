#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Parse NLM and AFM record files, re-aggregate port counters and join both streams."""

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from . import ENCODING
from .metrics import PortRecord, Stage, Stat, adjacency_utilization, fabric_aggregate, link_utilization
from .model import (ADJACENCY_UTILIZATION, AAU, ALU, DEFAULT_WINDOW_LEN, JAIN, LINK_UTILIZATION, MAU, MLU,
                    P5P95_ADJACENCY, P5P95_LINK, AfmFamily, AfmKind, JoinedSample, MetricKind, NlmName,
                    QosClass, Scope, SizeClass, parse_family, parse_size_class, parse_stat, validate_sample)
from .sketch import QuantileSketch

logger = logging.getLogger(__name__)

NLM_COLUMNS = (
    "fabric", "stage", "port_id", "peer_port_id", "port_speed_bps", "src_block", "dst_block",
    "window_start_epoch_s", "window_len_s", "outgoing_octets", "incoming_octets",
)
AFM_COLUMNS = (
    "fabric", "window_start_epoch_s", "window_len_s", "qos", "src_block", "dst_block",
    "afm_family", "size_class", "stat", "value",
)
AFM_SKETCH_COLUMN = "sketch_json"
AFM_UNIT_COLUMN = "unit"

# Seconds per latency unit accepted in the optional unit column.
LATENCY_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}

DEFAULT_NLM_KINDS = (
    LINK_UTILIZATION, ADJACENCY_UTILIZATION, MLU, ALU, MAU, AAU,
    MetricKind(NlmName.PERCENTILE_LINK, 50), MetricKind(NlmName.PERCENTILE_LINK, 90),
    MetricKind(NlmName.PERCENTILE_LINK, 99), MetricKind(NlmName.PERCENTILE_ADJACENCY, 50),
    MetricKind(NlmName.PERCENTILE_ADJACENCY, 90), MetricKind(NlmName.PERCENTILE_ADJACENCY, 99),
    P5P95_LINK, P5P95_ADJACENCY, JAIN,
)

Stream = Union[bytes, BinaryIO]


class DataFormat(Enum):
    CSV = "csv"
    JSONL = "jsonl"

    @classmethod
    def from_path(cls, path: Path) -> "DataFormat":
        suffix = Path(path).suffix.lower().lstrip(".")
        if suffix == "json":
            suffix = "jsonl"
        try:
            return cls(suffix)
        except ValueError:
            raise LookupError(f"Cannot tell the format of '{path}' (use .csv or .jsonl).") from None


@dataclass(frozen=True)
class JoinKey:
    """Identifies one joinable window. NLM keys carry no QoS (qos is None)."""

    fabric: str
    window_start: int
    scope: Scope
    qos: Optional[QosClass] = None

    def __post_init__(self):
        if not self.fabric:
            raise ValueError("join key needs a fabric")

    @property
    def window(self) -> Tuple[str, int, Scope]:
        return (self.fabric, self.window_start, self.scope)

    def sort_key(self) -> tuple:
        return (self.fabric, self.window_start, self.scope.code, self.qos.value if self.qos else "")


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    records: list = field(default_factory=list)
    errors: List[RowError] = field(default_factory=list)


@dataclass(frozen=True)
class AfmRecord:
    """One AFM row: either a pre-computed percentile (stat, value) or a distribution sketch."""

    key: JoinKey
    window_len: int
    family: AfmFamily
    size_class: Optional[SizeClass]
    stat: Optional[float] = None
    value: Optional[float] = None
    sketch: Optional[QuantileSketch] = None

    def matches(self, afm_kind: AfmKind) -> bool:
        if (self.family, self.size_class) != (afm_kind.family, afm_kind.size_class):
            return False
        return self.sketch is not None or self.stat == afm_kind.stat


@dataclass(frozen=True)
class NlmValue:
    key: JoinKey
    kind: MetricKind
    value: float
    window_len: int = DEFAULT_WINDOW_LEN


@dataclass
class ReaggregationReport:
    windows: int = 0
    gaps: Dict[Tuple[str, int], float] = field(default_factory=dict)


@dataclass
class JoinReport:
    """Join bookkeeping. Matched pairs include those later dropped as invalid."""

    matched: int = 0
    nlm_only: int = 0
    afm_only: int = 0
    dropped_invalid: int = 0


def _decode(stream: Stream) -> str:
    data = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    try:
        return bytes(data).decode(ENCODING)
    except UnicodeDecodeError as ex:
        raise ValueError(f"unreadable stream: {ex}") from None


def _iter_rows(stream: Stream, fmt: DataFormat, required: Sequence[str],
               optional: Sequence[str], errors: List[RowError]) -> Iterator[Tuple[int, dict]]:
    text = _decode(stream)
    known = set(required) | set(optional)
    if fmt is DataFormat.CSV:
        reader = csv.DictReader(io.StringIO(text))
        header = reader.fieldnames or []
        unknown = [col for col in header if col not in known]
        if unknown:
            raise ValueError(f"unknown column(s): {', '.join(unknown)}")
        missing = [col for col in required if col not in header]
        if header and missing:
            raise ValueError(f"missing column(s): {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row
        return
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as ex:
            errors.append(RowError(line_no, f"invalid JSON: {ex.msg}"))
            continue
        if not isinstance(row, dict):
            errors.append(RowError(line_no, "expected a JSON object"))
            continue
        unknown = [col for col in row if col not in known]
        if unknown:
            errors.append(RowError(line_no, f"unknown field(s): {', '.join(unknown)}"))
            continue
        yield line_no, row


def _int(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"not an integer: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return int(str(value).strip())


def _text(row: dict, column: str) -> str:
    value = row.get(column)
    return "" if value is None else str(value).strip()


def _port_record(row: dict) -> PortRecord:
    missing = [col for col in NLM_COLUMNS if col not in row]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    try:
        stage = Stage(_text(row, "stage").lower())
    except ValueError:
        raise ValueError(f"unknown stage '{row['stage']}'") from None
    return PortRecord(
        fabric=_text(row, "fabric"),
        stage=stage,
        port_id=_text(row, "port_id"),
        peer_port_id=_text(row, "peer_port_id"),
        port_speed=_int(row["port_speed_bps"]),
        src_block=_text(row, "src_block"),
        dst_block=_text(row, "dst_block"),
        window_start=_int(row["window_start_epoch_s"]),
        outgoing_octets=_int(row["outgoing_octets"]),
        incoming_octets=_int(row["incoming_octets"]),
        window_len=_int(row["window_len_s"]),
    )


def parse_port_records(stream: Stream, fmt: DataFormat = DataFormat.CSV) -> ParseResult:
    """Parse port counter records (one PortRecord per data row).

    Arguments:
        stream (bytes | BinaryIO): UTF-8 encoded CSV with a header row, or JSONL.

    Keyword Arguments:
        fmt (DataFormat): The input format. (default: {DataFormat.CSV})

    Raises:
        ValueError: If the stream cannot be decoded or the CSV header names unknown columns.

    Returns:
        ParseResult: The records plus per-row errors with line numbers.
    """
    result = ParseResult()
    for line_no, row in _iter_rows(stream, fmt, NLM_COLUMNS, (), result.errors):
        try:
            result.records.append(_port_record(row))
        except (ValueError, TypeError) as ex:
            result.errors.append(RowError(line_no, str(ex)))
    if result.errors:
        logger.warning("%d malformed port record row(s)", len(result.errors))
    return result


def _scaled_sketch(sketch: QuantileSketch, factor: float) -> QuantileSketch:
    data = sketch.to_dict()
    data['min'] *= factor
    data['max'] *= factor
    data['centroids'] = [[mean * factor, weight] for mean, weight in data['centroids']]
    return QuantileSketch.from_dict(data)


def _afm_record(row: dict) -> AfmRecord:
    qos = QosClass.parse(_text(row, "qos"))
    family = parse_family(_text(row, "afm_family"))
    size_class = parse_size_class(_text(row, "size_class"))
    key = JoinKey(
        fabric=_text(row, "fabric"),
        window_start=_int(row["window_start_epoch_s"]),
        scope=Scope.from_blocks(_text(row, "src_block"), _text(row, "dst_block")),
        qos=qos,
    )
    window_len = _int(row["window_len_s"])
    if window_len <= 0:
        raise ValueError("zero window")

    factor = 1.0
    unit = _text(row, AFM_UNIT_COLUMN).lower()
    if unit and family is AfmFamily.TRANSMIT_LATENCY:
        if unit not in LATENCY_UNITS:
            raise ValueError(f"unknown latency unit '{unit}'")
        factor = LATENCY_UNITS[unit]

    raw_sketch = row.get(AFM_SKETCH_COLUMN)
    if raw_sketch not in (None, ""):
        try:
            data = json.loads(raw_sketch) if isinstance(raw_sketch, str) else raw_sketch
            sketch = QuantileSketch.from_dict(data)
        except (ValueError, KeyError, TypeError) as ex:
            raise ValueError(f"bad sketch: {ex}") from None
        if not sketch.count:
            raise ValueError("bad sketch: empty")
        if factor != 1.0:
            sketch = _scaled_sketch(sketch, factor)
        return AfmRecord(key, window_len, family, size_class, sketch=sketch)

    stat = parse_stat(_text(row, "stat"))
    value = float(row["value"]) * factor
    return AfmRecord(key, window_len, family, size_class, stat=stat, value=value)


def parse_afm_records(stream: Stream, fmt: DataFormat = DataFormat.CSV) -> ParseResult:
    """Parse AFM records carrying either percentile scalars or serialized sketches.

    Latencies given in another unit (optional unit column) are converted to seconds.

    Raises:
        ValueError: If the stream cannot be decoded or the CSV header names unknown columns.

    Returns:
        ParseResult: AfmRecords plus per-row errors (unknown QoS, bad sketch, ...).
    """
    result = ParseResult()
    required = [col for col in AFM_COLUMNS if col not in ("stat", "value")]
    optional = ("stat", "value", AFM_SKETCH_COLUMN, AFM_UNIT_COLUMN)
    for line_no, row in _iter_rows(stream, fmt, required, optional, result.errors):
        try:
            result.records.append(_afm_record(row))
        except KeyError as ex:
            result.errors.append(RowError(line_no, f"missing field {ex}"))
        except (ValueError, LookupError, TypeError) as ex:
            result.errors.append(RowError(line_no, str(ex)))
    if result.errors:
        logger.warning("%d malformed AFM row(s)", len(result.errors))
    return result


def _link_groups(links: Sequence[PortRecord]) -> List[List[PortRecord]]:
    groups: Dict[Tuple[str, str], List[PortRecord]] = defaultdict(list)
    for link in links:
        groups[(link.src_block, link.dst_block)].append(link)
    return [groups[pair] for pair in sorted(groups)]


def scope_metrics(links: Sequence[PortRecord], kinds: Sequence[MetricKind]) -> Dict[MetricKind, float]:
    """Compute the requested NLMs over the window-aggregated links of one scope.

    Per-entity kinds are only defined when the scope holds a single link
    (LinkUtilization) or a single adjacency (AdjacencyUtilization).

    Returns:
        dict: The value per metric kind that is defined for these links.
    """
    link_utils = [link_utilization(link) for link in links]
    adj_utils = [adjacency_utilization(group) for group in _link_groups(links)]
    out = {}
    for kind in kinds:
        name = kind.name
        if name is NlmName.LINK_UTILIZATION:
            if len(link_utils) == 1:
                out[kind] = link_utils[0]
        elif name is NlmName.ADJACENCY_UTILIZATION:
            if len(adj_utils) == 1:
                out[kind] = adj_utils[0]
        elif name is NlmName.MLU:
            out[kind] = fabric_aggregate(link_utils, Stat.MAX)
        elif name is NlmName.ALU:
            out[kind] = fabric_aggregate(link_utils, Stat.MEAN)
        elif name is NlmName.MAU:
            out[kind] = fabric_aggregate(adj_utils, Stat.MAX)
        elif name is NlmName.AAU:
            out[kind] = fabric_aggregate(adj_utils, Stat.MEAN)
        elif name is NlmName.PERCENTILE_LINK:
            out[kind] = fabric_aggregate(link_utils, Stat.PERCENTILE, kind.k)
        elif name is NlmName.PERCENTILE_ADJACENCY:
            out[kind] = fabric_aggregate(adj_utils, Stat.PERCENTILE, kind.k)
        elif name is NlmName.P5P95_LINK:
            out[kind] = fabric_aggregate(link_utils, Stat.P5P95_DISTANCE)
        elif name is NlmName.P5P95_ADJACENCY:
            out[kind] = fabric_aggregate(adj_utils, Stat.P5P95_DISTANCE)
        elif name is NlmName.JAIN:
            out[kind] = fabric_aggregate(link_utils, Stat.JAIN)
    return out


def _scoped_links(links: Sequence[PortRecord]) -> Iterator[Tuple[Scope, List[PortRecord]]]:
    inter = [link for link in links if link.is_inter_block]
    if inter:
        yield Scope.fabric_wide(), inter
        for group in _link_groups(inter):
            yield Scope.adjacency(group[0].src_block, group[0].dst_block), group
    internal: Dict[str, List[PortRecord]] = defaultdict(list)
    for link in links:
        if not link.is_inter_block and link.src_block:
            internal[link.src_block].append(link)
    for block_id in sorted(internal):
        yield Scope.block(block_id), internal[block_id]


def reaggregate_nlm(records: Sequence[PortRecord], window_len: int = DEFAULT_WINDOW_LEN,
                    kinds: Optional[Sequence[MetricKind]] = None) -> Tuple[List[NlmValue], ReaggregationReport]:
    """Re-aggregate native-cadence port counters into windows and derive the NLMs.

    Octets are summed per port across each window before utilization is derived; per-interval
    utilizations are never averaged. A window missing some intervals is still emitted, computed
    over the observed time, and its missing fraction is reported.

    Arguments:
        records (Sequence[PortRecord]): Port counters at their native cadence.

    Keyword Arguments:
        window_len (int): Target window length in seconds. (default: {300})
        kinds (Sequence[MetricKind]): NLMs to emit. (default: {DEFAULT_NLM_KINDS})

    Raises:
        ValueError: On records straddling a window boundary, cadences that do not divide the
            window, or duplicate (port, interval) records.

    Returns:
        tuple: The NLM values sorted by key and kind, and the gap report.
    """
    if window_len <= 0:
        raise ValueError("window length must be positive")
    kinds = list(kinds) if kinds is not None else list(DEFAULT_NLM_KINDS)

    seen = set()
    ports: Dict[Tuple[str, int, str], List[PortRecord]] = defaultdict(list)
    for rec in records:
        if window_len % rec.window_len:
            raise ValueError(f"cadence {rec.window_len}s of port '{rec.port_id}' does not divide {window_len}s")
        start = rec.window_start // window_len * window_len
        if rec.window_end > start + window_len:
            raise ValueError(f"record of port '{rec.port_id}' at {rec.window_start} straddles a window boundary")
        ident = (rec.fabric, rec.port_id, rec.window_start)
        if ident in seen:
            raise ValueError(f"duplicate record for port '{rec.port_id}' at {rec.window_start}")
        seen.add(ident)
        ports[(rec.fabric, start, rec.port_id)].append(rec)

    windows: Dict[Tuple[str, int], List[PortRecord]] = defaultdict(list)
    for (fabric, start, _), parts in sorted(ports.items()):
        first = parts[0]
        windows[(fabric, start)].append(PortRecord(
            fabric=fabric,
            stage=first.stage,
            port_id=first.port_id,
            peer_port_id=first.peer_port_id,
            port_speed=first.port_speed,
            src_block=first.src_block,
            dst_block=first.dst_block,
            window_start=start,
            outgoing_octets=sum(part.outgoing_octets for part in parts),
            incoming_octets=sum(part.incoming_octets for part in parts),
            window_len=sum(part.window_len for part in parts),
        ))

    report = ReaggregationReport(windows=len(windows))
    values: List[NlmValue] = []
    for (fabric, start), links in sorted(windows.items()):
        observed = sum(link.window_len for link in links)
        missing = 1 - observed / (len(links) * window_len)
        if missing > 0:
            report.gaps[(fabric, start)] = missing
            logger.warning("Window %s@%d misses %.1f%% of its intervals", fabric, start, missing * 100)
        for scope, scoped in _scoped_links(links):
            key = JoinKey(fabric, start, scope)
            for kind, value in scope_metrics(scoped, kinds).items():
                values.append(NlmValue(key, kind, value, window_len))
    values.sort(key=lambda val: (val.key.sort_key(), val.kind.code))
    return values, report


def join_series(nlm: Sequence[NlmValue], afm: Sequence[AfmRecord], nlm_kind: MetricKind, afm_kind: AfmKind,
                tau_stat: Optional[float] = None) -> Tuple[List[JoinedSample], JoinReport]:
    """Inner-join NLM values with AFM records on (fabric, window, scope).

    An NLM window matches the AFM records of every QoS class at the same key. Sketch rows are
    read at the AFM kind's reported stat (or tau_stat, when given); scalar rows are taken as is.

    Returns:
        tuple: Samples sorted by key, and the JoinReport.
    """
    nlm_index: Dict[Tuple[str, int, Scope], NlmValue] = {}
    for val in nlm:
        if val.kind == nlm_kind:
            nlm_index.setdefault(val.key.window, val)

    afm_index: Dict[JoinKey, AfmRecord] = {}
    for rec in afm:
        if not rec.matches(afm_kind):
            continue
        held = afm_index.get(rec.key)
        # Scalars win over sketches for the same key.
        if held is None or (held.sketch is not None and rec.sketch is None):
            afm_index[rec.key] = rec

    quantile = tau_stat if tau_stat is not None else afm_kind.quantile
    report = JoinReport()
    samples: List[JoinedSample] = []
    matched_windows = set()
    for key in sorted(afm_index, key=JoinKey.sort_key):
        partner = nlm_index.get(key.window)
        if partner is None:
            report.afm_only += 1
            continue
        report.matched += 1
        matched_windows.add(key.window)
        rec = afm_index[key]
        try:
            afm_value = rec.value if rec.sketch is None else rec.sketch.quantile(quantile)
            sample = JoinedSample(
                window_start=key.window_start,
                window_len=rec.window_len,
                fabric=key.fabric,
                scope=key.scope,
                qos=key.qos,
                nlm_kind=nlm_kind,
                nlm_value=partner.value,
                afm_kind=afm_kind,
                afm_value=afm_value,
            )
            samples.append(validate_sample(sample))
        except ValueError as ex:
            report.dropped_invalid += 1
            logger.warning("Dropping sample %s@%d: %s", key.fabric, key.window_start, ex)
    report.nlm_only = sum(1 for window in nlm_index if window not in matched_windows)
    if report.nlm_only or report.afm_only:
        logger.info("Join left %d NLM-only and %d AFM-only windows", report.nlm_only, report.afm_only)
    return samples, report
