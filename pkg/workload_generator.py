"""
Synthetic Workload Generator
Nested begin/end call traces with configurable timing, and anomaly injection
(overloaded environment, slow operation, reordered calls)

Workload files are YAML:

    workload:
      seed: 7
      start_time: 0            # timestamp of every trace's first event
      max_depth: 16            # nesting depth bound
      roots: [request]         # each trace runs one root, picked at random
      operations:
        - label: request
          children: [parse, render]     # called in this order
          duration: {uniform: [8, 12]}  # self time, integer bounds inclusive
        - label: parse
          repetition: [1, 3]            # calls per parent invocation
          duration: {normal: [10, 1.5]} # mean, standard deviation
    anomaly:                   # optional
      kind: overload           # overload | slow_op | reorder
      factor: 3                # overload and slow_op
      label: parse             # slow_op only
      occurrence: 0            # reorder only: which eligible sibling pair
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import yaml

from timed_trace import (
    OPERATION_PATTERN,
    EventType,
    TimedEvent,
    TimedTrace,
    validate,
)

logger = logging.getLogger(__name__)


class WorkloadError(Exception):
    """Invalid workload specification"""


class AnomalyError(Exception):
    """Anomaly that cannot be specified or applied"""


class DurationKind(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"


@dataclass(frozen=True)
class DurationSpec:
    """Self-time distribution: uniform integers lo..hi or normal(mu, sigma) rounded"""

    kind: DurationKind
    first: float
    second: float

    def __post_init__(self):
        object.__setattr__(self, "kind", DurationKind(self.kind))
        if self.kind is DurationKind.UNIFORM:
            if int(self.first) != self.first or int(self.second) != self.second:
                raise WorkloadError("uniform duration bounds must be integers")
            if not 0 <= self.first <= self.second:
                raise WorkloadError(f"invalid uniform bounds {self.first}..{self.second}")
        elif self.first < 0 or self.second < 0:
            raise WorkloadError("normal duration needs non-negative mean and deviation")

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "DurationSpec":
        return cls(DurationKind.UNIFORM, lo, hi)

    @classmethod
    def normal(cls, mu: float, sigma: float) -> "DurationSpec":
        return cls(DurationKind.NORMAL, mu, sigma)

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind is DurationKind.UNIFORM:
            return int(rng.integers(int(self.first), int(self.second) + 1))
        return max(0, int(round(float(rng.normal(self.first, self.second)))))


@dataclass(frozen=True)
class OperationSpec:
    label: str
    children: Tuple[str, ...] = ()
    repetition: Tuple[int, int] = (1, 1)
    duration: DurationSpec = DurationSpec(DurationKind.UNIFORM, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "repetition", tuple(self.repetition))
        if not OPERATION_PATTERN.fullmatch(self.label):
            raise WorkloadError(f"invalid operation label {self.label!r}")
        low, high = self.repetition
        if not 0 <= low <= high:
            raise WorkloadError(f"{self.label}: invalid repetition {low}..{high}")


@dataclass(frozen=True)
class WorkloadSpec:
    operations: Tuple[OperationSpec, ...]
    roots: Tuple[str, ...]
    seed: int = 0
    start_time: int = 0
    max_depth: int = 16

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))
        object.__setattr__(self, "roots", tuple(self.roots))
        labels = [op.label for op in self.operations]
        if len(set(labels)) != len(labels):
            raise WorkloadError("operation labels must be unique")
        if not self.roots:
            raise WorkloadError("a workload needs at least one root operation")
        known = set(labels)
        for name in self.roots:
            if name not in known:
                raise WorkloadError(f"unknown root operation {name!r}")
        for op in self.operations:
            for child in op.children:
                if child not in known:
                    raise WorkloadError(f"{op.label}: unknown child operation {child!r}")
        if self.start_time < 0:
            raise WorkloadError("start_time must be non-negative")
        self._check_nesting()

    def _check_nesting(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(op.label for op in self.operations)
        graph.add_edges_from(
            (op.label, child) for op in self.operations for child in op.children
        )
        if not nx.is_directed_acyclic_graph(graph):
            cycle = " -> ".join(edge[0] for edge in nx.find_cycle(graph))
            raise WorkloadError(f"nesting cannot terminate: cycle through {cycle}")
        depth = nx.dag_longest_path_length(graph) + 1
        if depth > self.max_depth:
            raise WorkloadError(f"nesting depth {depth} exceeds bound {self.max_depth}")

    @cached_property
    def by_label(self) -> Dict[str, OperationSpec]:
        return {op.label: op for op in self.operations}


def _split_evenly(total: int, parts: int) -> List[int]:
    """Integer split, remainder to the earliest parts"""
    quotient, remainder = divmod(total, parts)
    return [quotient + 1 if i < remainder else quotient for i in range(parts)]


class WorkloadGenerator:
    """Seeded generator of well-formed nested call traces"""

    def __init__(self, spec: WorkloadSpec, seed: Optional[int] = None):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed if seed is None else seed)

    def _emit(self, op: OperationSpec, cursor: int, events: List[TimedEvent]) -> int:
        events.append(TimedEvent(EventType.BEGIN, op.label, cursor))
        calls: List[OperationSpec] = []
        for name in op.children:
            child = self.spec.by_label[name]
            low, high = child.repetition
            calls.extend([child] * int(self.rng.integers(low, high + 1)))

        gaps = _split_evenly(op.duration.sample(self.rng), len(calls) + 1)
        now = cursor + gaps[0]
        for call, gap in zip(calls, gaps[1:]):
            now = self._emit(call, now, events) + gap
        events.append(TimedEvent(EventType.END, op.label, now))
        return now

    def trace(self) -> TimedTrace:
        root = self.spec.roots[int(self.rng.integers(len(self.spec.roots)))]
        events: List[TimedEvent] = []
        self._emit(self.spec.by_label[root], self.spec.start_time, events)
        return TimedTrace.from_events(events)

    def corpus(self, n: int) -> List[TimedTrace]:
        if n < 1:
            raise WorkloadError(f"corpus size must be at least 1, got {n}")
        return [self.trace() for _ in range(n)]


def generate_corpus(spec: WorkloadSpec, n: int, seed: Optional[int] = None) -> List[TimedTrace]:
    """n well-formed traces, identical for identical (spec, seed)"""
    traces = WorkloadGenerator(spec, seed).corpus(n)
    logger.info(
        f"Generated {n} traces ({sum(len(t) for t in traces)} events) "
        f"with seed {spec.seed if seed is None else seed}"
    )
    return traces


# Anomalies


class AnomalyKind(str, Enum):
    OVERLOAD = "overload"
    SLOW_OP = "slow_op"
    REORDER = "reorder"


@dataclass(frozen=True)
class AnomalySpec:
    kind: AnomalyKind
    factor: Fraction = Fraction(1)
    label: Optional[str] = None
    occurrence: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AnomalyKind(self.kind))
        object.__setattr__(self, "factor", Fraction(str(self.factor)))
        if self.kind in (AnomalyKind.OVERLOAD, AnomalyKind.SLOW_OP) and self.factor <= 1:
            raise AnomalyError(f"{self.kind.value} factor must exceed 1, got {self.factor}")
        if self.kind is AnomalyKind.SLOW_OP and not self.label:
            raise AnomalyError("slow_op needs the label of the slowed operation")
        if self.occurrence < 0:
            raise AnomalyError("occurrence must be non-negative")

    @classmethod
    def overload(cls, factor) -> "AnomalySpec":
        return cls(AnomalyKind.OVERLOAD, factor)

    @classmethod
    def slow_op(cls, label: str, factor) -> "AnomalySpec":
        return cls(AnomalyKind.SLOW_OP, factor, label)

    @classmethod
    def reorder(cls, occurrence: int = 0) -> "AnomalySpec":
        return cls(AnomalyKind.REORDER, occurrence=occurrence)

    def describe(self) -> str:
        if self.kind is AnomalyKind.OVERLOAD:
            return f"overload x{self.factor}"
        if self.kind is AnomalyKind.SLOW_OP:
            return f"slow {self.label} x{self.factor}"
        return f"reorder #{self.occurrence}"


def _round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def _scale_self_time(trace: TimedTrace, spec: AnomalySpec) -> TimedTrace:
    """
    Each gap between consecutive events belongs to the innermost open
    operation; gaps owned by slowed operations are stretched by the factor.
    """
    origin = trace[0].timestamp
    open_ops: List[str] = []
    elapsed = Fraction(0)
    events = []
    for index, event in enumerate(trace):
        if index > 0:
            delta = event.timestamp - trace[index - 1].timestamp
            owner = open_ops[-1] if open_ops else None
            slowed = owner is not None and (
                spec.kind is AnomalyKind.OVERLOAD or owner == spec.label
            )
            elapsed += delta * spec.factor if slowed else delta
        events.append(
            TimedEvent(event.event_type, event.operation, origin + _round_half_up(elapsed))
        )
        if event.event_type is EventType.BEGIN:
            open_ops.append(event.operation)
        else:
            open_ops.pop()
    return TimedTrace.from_events(events)


def _sibling_pairs(trace: TimedTrace) -> List[Tuple[int, int]]:
    """Adjacent sibling calls (Begin indices) whose labels differ"""
    children: Dict[int, List[int]] = {}
    open_begins: List[int] = []
    for index, event in enumerate(trace):
        if event.event_type is EventType.BEGIN:
            parent = open_begins[-1] if open_begins else -1
            children.setdefault(parent, []).append(index)
            open_begins.append(index)
        else:
            open_begins.pop()
    pairs = []
    for siblings in children.values():
        for first, second in zip(siblings, siblings[1:]):
            if trace[first].operation != trace[second].operation:
                pairs.append((first, second))
    return sorted(pairs)


def _reorder(trace: TimedTrace, occurrence: int) -> TimedTrace:
    pairs = _sibling_pairs(trace)
    if not pairs:
        raise AnomalyError("trace has no adjacent sibling calls with different labels")
    first, second = pairs[occurrence % len(pairs)]
    first_label, second_label = trace[first].operation, trace[second].operation
    relabel = {
        first: second_label,
        trace.pair(first): second_label,
        second: first_label,
        trace.pair(second): first_label,
    }
    events = [
        TimedEvent(event.event_type, relabel.get(index, event.operation), event.timestamp)
        for index, event in enumerate(trace)
    ]
    return TimedTrace.from_events(events)


def inject_anomaly(trace: TimedTrace, spec: AnomalySpec) -> TimedTrace:
    """Well-formed trace in, well-formed but anomalous trace out"""
    violations = validate(trace)
    if violations:
        raise AnomalyError(f"cannot inject into a malformed trace: {violations[0]}")
    if spec.kind is AnomalyKind.REORDER:
        return _reorder(trace, spec.occurrence)
    if spec.kind is AnomalyKind.SLOW_OP and spec.label not in trace.operations:
        raise AnomalyError(f"operation {spec.label!r} does not occur in the trace")
    return _scale_self_time(trace, spec)


def generate_anomalous_corpus(
    spec: WorkloadSpec, anomaly: AnomalySpec, n: int, seed: Optional[int] = None
) -> List[TimedTrace]:
    """
    n anomalous traces; generated traces the anomaly cannot apply to
    (e.g. the slowed operation never ran) are skipped.
    """
    if n < 1:
        raise WorkloadError(f"corpus size must be at least 1, got {n}")
    generator = WorkloadGenerator(spec, seed)
    traces: List[TimedTrace] = []
    attempts = 0
    while len(traces) < n:
        attempts += 1
        if attempts > 10 * n:
            raise WorkloadError(
                f"{anomaly.describe()} applies to too few generated traces "
                f"({len(traces)} of {attempts - 1})"
            )
        try:
            traces.append(inject_anomaly(generator.trace(), anomaly))
        except AnomalyError:
            continue
    logger.info(f"Generated {n} anomalous traces ({anomaly.describe()})")
    return traces


# YAML specification files


def _duration_from_dict(data: Any, label: str) -> DurationSpec:
    if not isinstance(data, dict) or len(data) != 1:
        raise WorkloadError(f"{label}: duration must be {{uniform: [lo, hi]}} or {{normal: [mu, sigma]}}")
    (kind, params), = data.items()
    if not isinstance(params, (list, tuple)) or len(params) != 2:
        raise WorkloadError(f"{label}: duration {kind} takes two parameters")
    try:
        return DurationSpec(DurationKind(kind), params[0], params[1])
    except ValueError as e:
        raise WorkloadError(f"{label}: unknown duration kind {kind!r}") from e


def workload_from_dict(data: Dict[str, Any]) -> WorkloadSpec:
    try:
        operations = tuple(
            OperationSpec(
                label=str(entry["label"]),
                children=tuple(entry.get("children", ())),
                repetition=tuple(entry.get("repetition", (1, 1))),
                duration=_duration_from_dict(entry.get("duration", {"uniform": [0, 0]}), str(entry["label"])),
            )
            for entry in data["operations"]
        )
        return WorkloadSpec(
            operations=operations,
            roots=tuple(data["roots"]),
            seed=int(data.get("seed", 0)),
            start_time=int(data.get("start_time", 0)),
            max_depth=int(data.get("max_depth", 16)),
        )
    except (KeyError, TypeError) as e:
        raise WorkloadError(f"incomplete workload specification: {e}") from e


def anomaly_from_dict(data: Dict[str, Any]) -> AnomalySpec:
    try:
        return AnomalySpec(
            kind=AnomalyKind(data["kind"]),
            factor=data.get("factor", 1),
            label=data.get("label"),
            occurrence=int(data.get("occurrence", 0)),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise AnomalyError(f"invalid anomaly specification: {e}") from e


def load_workload(path: Union[str, Path]) -> Tuple[WorkloadSpec, Optional[AnomalySpec]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise WorkloadError(f"cannot read workload file {path}: {e}") from e
    if not isinstance(data, dict) or "workload" not in data:
        raise WorkloadError(f"{path}: missing 'workload' section")
    workload = workload_from_dict(data["workload"])
    anomaly = anomaly_from_dict(data["anomaly"]) if data.get("anomaly") else None
    return workload, anomaly
