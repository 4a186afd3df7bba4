#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

"""Shared domain vocabulary: metric identities, scopes, samples, configuration and fitted models."""

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Optional

from .__config__ import CFGVARS

# Counter jitter above full utilization that is still accepted (and clamped).
UTILIZATION_TOLERANCE = 0.02
DEFAULT_WINDOW_LEN = 300

DEFAULT_MAX_BUCKETS = 20
DEFAULT_MEAN_BUCKETS = 100


class NlmName(Enum):
    LINK_UTILIZATION = "link_utilization"
    ADJACENCY_UTILIZATION = "adjacency_utilization"
    MLU = "mlu"
    ALU = "alu"
    MAU = "mau"
    AAU = "aau"
    PERCENTILE_LINK = "link_p"
    PERCENTILE_ADJACENCY = "adjacency_p"
    P5P95_LINK = "link_p5p95"
    P5P95_ADJACENCY = "adjacency_p5p95"
    JAIN = "jain"


_PERCENTILE_NAMES = (NlmName.PERCENTILE_LINK, NlmName.PERCENTILE_ADJACENCY)
_NON_UTILIZATION_NAMES = (NlmName.P5P95_LINK, NlmName.P5P95_ADJACENCY, NlmName.JAIN)


@dataclass(frozen=True)
class MetricKind:
    """A network-level metric identity, e.g. MAU or the 90th percentile link utilization."""

    name: NlmName
    k: Optional[float] = None

    def __post_init__(self):
        if self.name in _PERCENTILE_NAMES:
            if self.k is None or not 0 <= self.k <= 100:
                raise ValueError(f"Percentile metric needs k in [0, 100], got {self.k}.")
        elif self.k is not None:
            raise ValueError(f"Metric '{self.name.value}' takes no percentile parameter.")

    @property
    def code(self) -> str:
        if self.name in _PERCENTILE_NAMES:
            return f"{self.name.value}{self.k:g}"
        return self.name.value

    @property
    def is_utilization(self) -> bool:
        """True for metrics measured as a fraction of capacity (subject to clamping)."""
        return self.name not in _NON_UTILIZATION_NAMES

    @property
    def is_average(self) -> bool:
        return self.name in (NlmName.ALU, NlmName.AAU)

    @classmethod
    def parse(cls, code: str) -> "MetricKind":
        """Parse a metric code such as 'mau', 'link_p90' or 'adjacency_p5p95'.

        Raises:
            LookupError: If the code names no known metric.
        """
        code = code.strip().lower()
        for name in NlmName:
            if name not in _PERCENTILE_NAMES and code == name.value:
                return cls(name)
        for name in _PERCENTILE_NAMES:
            if code.startswith(name.value):
                try:
                    return cls(name, float(code[len(name.value):]))
                except ValueError:
                    break
        raise LookupError(f"Unknown NLM '{code}'.")

    def __str__(self) -> str:
        return self.code


MLU = MetricKind(NlmName.MLU)
ALU = MetricKind(NlmName.ALU)
MAU = MetricKind(NlmName.MAU)
AAU = MetricKind(NlmName.AAU)
LINK_UTILIZATION = MetricKind(NlmName.LINK_UTILIZATION)
ADJACENCY_UTILIZATION = MetricKind(NlmName.ADJACENCY_UTILIZATION)
P5P95_LINK = MetricKind(NlmName.P5P95_LINK)
P5P95_ADJACENCY = MetricKind(NlmName.P5P95_ADJACENCY)
JAIN = MetricKind(NlmName.JAIN)


class AfmFamily(Enum):
    TRANSMIT_LATENCY = "transmit_latency"
    DELIVERY_RATE = "delivery_rate"


class SizeClass(Enum):
    KIB_1 = "1KiB"
    KIB_8 = "8KiB"
    KIB_64 = "64KiB"
    KIB_256 = "256KiB"


@dataclass(frozen=True)
class AfmKind:
    """An application-facing metric: family, RPC size class (latency only) and reported percentile."""

    family: AfmFamily
    size_class: Optional[SizeClass]
    stat: float

    def __post_init__(self):
        if self.family is AfmFamily.DELIVERY_RATE and self.size_class is not None:
            raise ValueError("Delivery rate carries no size class.")
        if self.family is AfmFamily.TRANSMIT_LATENCY and self.size_class is None:
            raise ValueError("Transmit latency needs a size class.")
        if not 0 < self.stat < 100:
            raise ValueError(f"AFM stat must lie in (0, 100), got {self.stat}.")

    @property
    def quantile(self) -> float:
        return self.stat / 100

    @property
    def code(self) -> str:
        parts = [self.family.value]
        if self.size_class:
            parts.append(self.size_class.value)
        parts.append(f"p{self.stat:g}")
        return ":".join(parts)

    @classmethod
    def parse(cls, code: str) -> "AfmKind":
        """Parse an AFM code such as 'transmit_latency:1KiB:p99' or 'delivery_rate:p1'.

        Raises:
            LookupError: If family, size class or stat are unknown.
        """
        parts = code.strip().split(":")
        if len(parts) not in (2, 3):
            raise LookupError(f"Unknown AFM '{code}'.")
        family = parse_family(parts[0])
        size_class = parse_size_class(parts[1]) if len(parts) == 3 else None
        return cls(family, size_class, parse_stat(parts[-1]))

    def __str__(self) -> str:
        return self.code


def parse_family(value: str) -> AfmFamily:
    try:
        return AfmFamily(value.strip().lower())
    except ValueError:
        raise LookupError(f"Unknown AFM family '{value}'.") from None


def parse_size_class(value: str) -> Optional[SizeClass]:
    value = value.strip()
    if not value:
        return None
    for size in SizeClass:
        if size.value.lower() == value.lower():
            return size
    raise LookupError(f"Unknown size class '{value}'.")


def parse_stat(value: str) -> float:
    """Parse a reported percentile like 'p99', '99' or '99.9'."""
    text = str(value).strip().lower().lstrip("p")
    try:
        return float(text)
    except ValueError:
        raise LookupError(f"Unknown AFM stat '{value}'.") from None


class QosClass(Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"

    @classmethod
    def parse(cls, value: str) -> "QosClass":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise LookupError(f"unknown QoS '{value}'") from None


class ScopeKind(Enum):
    FABRIC_WIDE = "fabric"
    BLOCK = "block"
    ADJACENCY = "adjacency"


@dataclass(frozen=True)
class Scope:
    """What part of the fabric a metric describes."""

    kind: ScopeKind
    block_id: str = ""
    peer_block_id: str = ""

    def __post_init__(self):
        if self.kind is ScopeKind.FABRIC_WIDE and (self.block_id or self.peer_block_id):
            raise ValueError("Fabric-wide scope takes no block id.")
        if self.kind is ScopeKind.BLOCK and (not self.block_id or self.peer_block_id):
            raise ValueError("Block scope requires exactly one non-empty block id.")
        if self.kind is ScopeKind.ADJACENCY and not (self.block_id and self.peer_block_id):
            raise ValueError("Adjacency scope requires source and destination block ids.")

    @classmethod
    def fabric_wide(cls) -> "Scope":
        return cls(ScopeKind.FABRIC_WIDE)

    @classmethod
    def block(cls, block_id: str) -> "Scope":
        return cls(ScopeKind.BLOCK, block_id)

    @classmethod
    def adjacency(cls, src_block: str, dst_block: str) -> "Scope":
        return cls(ScopeKind.ADJACENCY, src_block, dst_block)

    @classmethod
    def from_blocks(cls, src_block: str, dst_block: str) -> "Scope":
        """Derive the scope of an AFM row from its source/destination block columns."""
        src_block, dst_block = src_block.strip(), dst_block.strip()
        if not src_block and not dst_block:
            return cls.fabric_wide()
        if src_block == dst_block:
            return cls.block(src_block)
        return cls.adjacency(src_block, dst_block)

    @property
    def code(self) -> str:
        return ":".join(x for x in (self.kind.value, self.block_id, self.peer_block_id) if x)

    @classmethod
    def parse(cls, code: str) -> "Scope":
        """Parse 'fabric', 'block:<id>' or 'adjacency:<src>:<dst>'."""
        parts = code.strip().split(":")
        try:
            kind = ScopeKind(parts[0].lower())
        except ValueError:
            raise LookupError(f"Unknown scope '{code}'.") from None
        return cls(kind, *parts[1:])

    def __str__(self) -> str:
        return self.code


@dataclass(frozen=True)
class JoinedSample:
    """One (window, scope, QoS) pairing of an NLM value with an AFM value."""

    window_start: int
    window_len: int
    fabric: str
    scope: Scope
    qos: QosClass
    nlm_kind: MetricKind
    nlm_value: float
    afm_kind: AfmKind
    afm_value: float

    @property
    def window_end(self) -> int:
        return self.window_start + self.window_len


def clamp_utilization(value: float) -> float:
    """Clamp counter jitter slightly above 1 to exactly 1.

    Raises:
        ValueError: If the value is negative or exceeds 1 by more than the tolerance.
    """
    if value < 0:
        raise ValueError(f"negative utilization {value}")
    if value > 1:
        if value - 1 > UTILIZATION_TOLERANCE:
            raise ValueError(f"utilization {value} exceeds capacity")
        return 1.0
    return value


def validate_sample(sample: JoinedSample) -> JoinedSample:
    """Check every JoinedSample invariant.

    Utilization values within the jitter tolerance above 1 come back clamped; everything else
    comes back unchanged.

    Raises:
        ValueError: Naming the first invariant that failed.
    """
    if sample.window_len <= 0:
        raise ValueError("zero window")
    if not sample.fabric:
        raise ValueError("empty fabric")
    if not math.isfinite(sample.nlm_value):
        raise ValueError("non-finite NLM")
    if not math.isfinite(sample.afm_value):
        raise ValueError("non-finite AFM")
    if sample.afm_value < 0:
        raise ValueError("negative AFM")
    if sample.nlm_kind.is_utilization:
        clamped = clamp_utilization(sample.nlm_value)
        if clamped != sample.nlm_value:
            return replace(sample, nlm_value=clamped)
    return sample


class KneeDirection(Enum):
    CONVEX_INCREASING = "convex_increasing"
    CONCAVE_DECREASING = "concave_decreasing"


class TailSide(Enum):
    UPPER = "upper"
    LOWER = "lower"


@dataclass(frozen=True)
class PipelineConfig:
    """Parameters of knee detection, quantile regression and scoring."""

    target_quantile: float = 0.95
    bias: float = 0.5
    curvature_threshold: float = 0.5
    error_threshold: float = 0.15
    n_buckets: int = DEFAULT_MAX_BUCKETS
    min_bucket_samples: int = 10
    knee_direction: KneeDirection = KneeDirection.CONVEX_INCREASING
    tail_side: TailSide = TailSide.UPPER
    envelope_quantile: float = 0.95

    def __post_init__(self):
        checks = (
            (0 < self.target_quantile < 1, "target quantile must lie in (0, 1)"),
            (0 < self.bias < 1, "bias must lie in (0, 1)"),
            (0 < self.curvature_threshold < 1, "curvature threshold must lie in (0, 1)"),
            (self.error_threshold > 0, "error threshold must be positive"),
            (self.n_buckets >= 4, "at least 4 buckets are needed"),
            (self.min_bucket_samples >= 1, "min bucket samples must be positive"),
            (0 < self.envelope_quantile < 1, "envelope quantile must lie in (0, 1)"),
        )
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def quantile(self) -> float:
        """The conditional quantile actually fitted, after applying the tail side."""
        if self.tail_side is TailSide.LOWER:
            return 1 - self.target_quantile
        return self.target_quantile

    @property
    def envelope(self) -> float:
        """The envelope percentile fed to knee detection, mirrored for the lower tail."""
        if self.tail_side is TailSide.LOWER:
            return 1 - self.envelope_quantile
        return self.envelope_quantile

    def with_changes(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for fld in fields(self):
            value = getattr(self, fld.name)
            out[fld.name] = value.value if isinstance(value, Enum) else value
        return out

    @classmethod
    def from_cfg(cls, nlm_kind: Optional[MetricKind] = None, afm_kind: Optional[AfmKind] = None,
                 **overrides) -> "PipelineConfig":
        """Resolve the configured defaults for one (NLM, AFM) pair.

        Average-type NLMs get the finer bucket count, delivery rates fit the lower tail
        with a concave-decreasing knee. Explicit overrides that are not None win.

        Returns:
            PipelineConfig: The resolved configuration.
        """
        section = CFGVARS['pipeline']
        n_buckets = section.getint('max_buckets')
        if nlm_kind is not None and nlm_kind.is_average:
            n_buckets = section.getint('mean_buckets')
        values = {
            'target_quantile': section.getfloat('target_quantile'),
            'bias': section.getfloat('bias'),
            'curvature_threshold': section.getfloat('curvature_threshold'),
            'error_threshold': section.getfloat('error_threshold'),
            'n_buckets': n_buckets,
            'min_bucket_samples': section.getint('min_bucket_samples'),
            'envelope_quantile': section.getfloat('envelope_quantile'),
        }
        if afm_kind is not None and afm_kind.family is AfmFamily.DELIVERY_RATE:
            values['tail_side'] = TailSide.LOWER
            values['knee_direction'] = KneeDirection.CONCAVE_DECREASING
        values.update({key: val for key, val in overrides.items() if val is not None})
        return cls(**values)


class ModelKind(Enum):
    LINEAR = "linear"
    QUEUEING = "queueing"


@dataclass(frozen=True)
class FittedModel:
    """A fitted quantile-regression model and its scores."""

    kind: ModelKind
    slope: float
    intercept: float
    tau: float
    alpha: float
    knee_threshold: Optional[float] = None
    train_amse: float = 0.0
    test_rarmse: Optional[float] = None
    coverage: Optional[float] = None

    def __post_init__(self):
        if self.kind is ModelKind.QUEUEING and self.knee_threshold is not None \
                and self.knee_threshold >= 1:
            raise ValueError("Queueing model needs a knee threshold below 1.")
        if self.train_amse < 0 or (self.test_rarmse is not None and self.test_rarmse < 0):
            raise ValueError("Errors must be non-negative.")
        if self.coverage is not None and not 0 <= self.coverage <= 1:
            raise ValueError("Coverage must lie in [0, 1].")

    def is_accurate(self, error_threshold: float) -> bool:
        return self.test_rarmse is not None and self.test_rarmse <= error_threshold

    def to_dict(self) -> dict:
        """Serialize with snake_case keys, omitting absent optionals."""
        out = {}
        for fld in fields(self):
            value = getattr(self, fld.name)
            if value is None:
                continue
            out[fld.name] = value.value if isinstance(value, Enum) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FittedModel":
        """Inverse of to_dict.

        Raises:
            ValueError: On unknown keys or an unknown model kind.
        """
        known = {fld.name for fld in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown model fields: {sorted(unknown)}")
        values = dict(data)
        values['kind'] = ModelKind(values['kind'])
        return cls(**values)
