"""
Timed Trace Model
Begin/end events with timestamps, corpus parsing, well-formedness checks and normalization
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

MAX_TIMESTAMP = 2**64 - 1
OPERATION_PATTERN = re.compile(r"[A-Za-z0-9_.$]+")
TIMESTAMP_PATTERN = re.compile(r"[0-9]+")


class TraceError(Exception):
    """Base error for timed trace handling"""


class TraceFormatError(TraceError):
    """Trace text that cannot be turned into a timed trace"""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


class EventType(str, Enum):
    BEGIN = "B"
    END = "E"


class ViolationKind(Enum):
    TIME_DECREASE = "time-decrease"
    PAIRING = "pairing"
    NESTING = "nesting"


@dataclass(frozen=True)
class TimedEvent:
    """One begin or end event of an operation"""

    event_type: EventType
    operation: str
    timestamp: int

    def __post_init__(self):
        if not isinstance(self.event_type, EventType):
            raise TraceFormatError(f"unknown event type {self.event_type!r}")
        if not self.operation or not OPERATION_PATTERN.fullmatch(self.operation):
            raise TraceFormatError(f"invalid operation label {self.operation!r}")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int):
            raise TraceFormatError(f"non-integer timestamp {self.timestamp!r}")
        if self.timestamp < 0:
            raise TraceFormatError(f"negative timestamp {self.timestamp}")
        if self.timestamp > MAX_TIMESTAMP:
            raise TraceFormatError(f"timestamp {self.timestamp} exceeds 64 bits")

    @property
    def symbol(self) -> Tuple[str, EventType]:
        return (self.operation, self.event_type)

    def __str__(self) -> str:
        return f"{self.event_type.value} {self.operation} {self.timestamp}"


@dataclass(frozen=True)
class Violation:
    """A broken well-formedness property at one event index"""

    kind: ViolationKind
    index: int
    message: str

    def __str__(self) -> str:
        return f"{self.kind.value} at index {self.index}: {self.message}"


@dataclass(frozen=True)
class TimedTrace:
    """
    Ordered sequence of timed events with resolved begin/end pairing.
    pairing[i] is the index of the partner event, or None for a Begin whose
    End has not been logged yet (open traces only).
    """

    events: Tuple[TimedEvent, ...]
    pairing: Tuple[Optional[int], ...]

    @classmethod
    def from_events(
        cls, events: Iterable[TimedEvent], allow_open: bool = False
    ) -> "TimedTrace":
        events = tuple(events)
        if not events:
            raise TraceFormatError("empty trace")
        return cls(events, _resolve_pairing(events, allow_open))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TimedEvent]:
        return iter(self.events)

    def __getitem__(self, index: int) -> TimedEvent:
        return self.events[index]

    def pair(self, index: int) -> Optional[int]:
        return self.pairing[index]

    @property
    def timestamps(self) -> Tuple[int, ...]:
        return tuple(event.timestamp for event in self.events)

    @property
    def operations(self) -> List[str]:
        return sorted({event.operation for event in self.events})

    @property
    def is_open(self) -> bool:
        return any(partner is None for partner in self.pairing)

    def duration(self, index: int) -> Optional[int]:
        """Elapsed time of the operation owning event `index`"""
        partner = self.pairing[index]
        if partner is None:
            return None
        begin, end = sorted((index, partner))
        return self.events[end].timestamp - self.events[begin].timestamp


def _resolve_pairing(
    events: Sequence[TimedEvent],
    allow_open: bool,
    line_numbers: Optional[Sequence[int]] = None,
) -> Tuple[Optional[int], ...]:
    """An End closes the most recent unmatched Begin with the same label"""
    pairing: List[Optional[int]] = [None] * len(events)
    open_begins: Dict[str, List[int]] = {}

    for index, event in enumerate(events):
        if event.event_type is EventType.BEGIN:
            open_begins.setdefault(event.operation, []).append(index)
            continue
        stack = open_begins.get(event.operation)
        if not stack:
            raise TraceFormatError(
                f"unmatched End for {event.operation}",
                _line_of(line_numbers, index),
            )
        begin = stack.pop()
        pairing[begin] = index
        pairing[index] = begin

    unmatched = sorted(index for stack in open_begins.values() for index in stack)
    if unmatched and not allow_open:
        first = unmatched[0]
        raise TraceFormatError(
            f"unmatched Begin for {events[first].operation}",
            _line_of(line_numbers, first),
        )
    return tuple(pairing)


def _line_of(line_numbers: Optional[Sequence[int]], index: int) -> Optional[int]:
    return line_numbers[index] if line_numbers is not None else None


def validate(trace: TimedTrace) -> List[Violation]:
    """Check the three well-formedness properties; an empty list means well-formed"""
    violations: List[Violation] = []
    events = trace.events

    for index in range(1, len(events)):
        if events[index].timestamp < events[index - 1].timestamp:
            violations.append(
                Violation(
                    ViolationKind.TIME_DECREASE,
                    index,
                    f"timestamp {events[index].timestamp} after "
                    f"{events[index - 1].timestamp}",
                )
            )

    consistent = [False] * len(events)
    for index, event in enumerate(events):
        partner = trace.pairing[index]
        problem = _pairing_problem(trace, index, partner)
        if problem:
            violations.append(Violation(ViolationKind.PAIRING, index, problem))
        else:
            consistent[index] = True

    # Stack of open Begin indices; an End must close the innermost one
    open_stack: List[int] = []
    for index, event in enumerate(events):
        if not consistent[index]:
            continue
        if event.event_type is EventType.BEGIN:
            open_stack.append(index)
            continue
        begin = trace.pairing[index]
        if open_stack and open_stack[-1] == begin:
            open_stack.pop()
            continue
        inner = open_stack[-1] if open_stack else None
        detail = (
            f"{events[inner].operation} started at index {inner} is still open"
            if inner is not None
            else "no open operation to close"
        )
        violations.append(
            Violation(
                ViolationKind.NESTING,
                index,
                f"End of {event.operation} while {detail}",
            )
        )
        if begin in open_stack:
            open_stack.remove(begin)

    order = list(ViolationKind)
    violations.sort(key=lambda v: (v.index, order.index(v.kind)))
    return violations


def _pairing_problem(trace: TimedTrace, index: int, partner: Optional[int]) -> str:
    event = trace.events[index]
    if partner is None:
        return f"{event.operation} has no matching {_other(event.event_type).name}"
    if not 0 <= partner < len(trace.events) or partner == index:
        return f"invalid partner index {partner}"
    if trace.pairing[partner] != index:
        return f"partner {partner} does not point back"
    other = trace.events[partner]
    if other.operation != event.operation:
        return f"paired with {other.operation} at index {partner}"
    if other.event_type is event.event_type:
        return f"paired with another {event.event_type.name} at index {partner}"
    begin_first = (event.event_type is EventType.BEGIN) == (index < partner)
    if not begin_first:
        return f"End of {event.operation} precedes its Begin"
    return ""


def _other(event_type: EventType) -> EventType:
    return EventType.END if event_type is EventType.BEGIN else EventType.BEGIN


def is_well_formed(trace: TimedTrace) -> bool:
    return not validate(trace)


def normalize(trace: TimedTrace) -> TimedTrace:
    """Shift timestamps so that the first event happens at time 0"""
    base = trace.events[0].timestamp
    if base == 0:
        return trace
    events = tuple(
        TimedEvent(event.event_type, event.operation, event.timestamp - base)
        for event in trace.events
    )
    return TimedTrace(events, trace.pairing)


# Text format: "<B|E> <operation> <timestamp>" per line, blank line between traces


def _iter_blocks(text: str) -> Iterator[List[Tuple[int, str]]]:
    block: List[Tuple[int, str]] = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if line.startswith("#"):
            continue
        if not line.strip():
            if block:
                yield block
                block = []
            continue
        block.append((line_number, line))
    if block:
        yield block


def _parse_event(line: str, line_number: int) -> TimedEvent:
    parts = line.split(" ")
    if len(parts) != 3:
        raise TraceFormatError(
            f"expected '<B|E> <operation> <timestamp>', got {line!r}", line_number
        )
    kind, operation, stamp = parts
    if kind not in ("B", "E"):
        raise TraceFormatError(f"event type must be B or E, got {kind!r}", line_number)
    if not OPERATION_PATTERN.fullmatch(operation):
        raise TraceFormatError(f"invalid operation label {operation!r}", line_number)
    if stamp.startswith("-") and TIMESTAMP_PATTERN.fullmatch(stamp[1:]):
        raise TraceFormatError(f"negative timestamp {stamp}", line_number)
    if not TIMESTAMP_PATTERN.fullmatch(stamp):
        raise TraceFormatError(f"non-integer timestamp {stamp!r}", line_number)
    try:
        return TimedEvent(EventType(kind), operation, int(stamp))
    except TraceFormatError as e:
        raise TraceFormatError(str(e), line_number) from e


def _trace_from_block(block: List[Tuple[int, str]], allow_open: bool) -> TimedTrace:
    events = [_parse_event(line, number) for number, line in block]
    line_numbers = [number for number, _ in block]
    return TimedTrace(
        tuple(events), _resolve_pairing(events, allow_open, line_numbers)
    )


def parse_trace(text: str, allow_open: bool = False) -> TimedTrace:
    """Parse the text of exactly one trace"""
    blocks = list(_iter_blocks(text))
    if not blocks:
        raise TraceFormatError("empty trace")
    if len(blocks) > 1:
        raise TraceFormatError(
            f"expected one trace, found {len(blocks)}", blocks[1][0][0]
        )
    return _trace_from_block(blocks[0], allow_open)


def parse_corpus(text: str, allow_open: bool = False) -> List[TimedTrace]:
    """Parse a corpus file holding many blank-line separated traces"""
    traces = [_trace_from_block(block, allow_open) for block in _iter_blocks(text)]
    if not traces:
        raise TraceFormatError("corpus holds no traces")
    return traces


def load_corpus(path: Union[str, Path], allow_open: bool = False) -> List[TimedTrace]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise TraceError(f"cannot read corpus {path}: {e}") from e
    traces = parse_corpus(text, allow_open)
    logger.info(
        f"Loaded {len(traces)} traces ({count_events(traces)} events) from {path}"
    )
    return traces


def format_trace(trace: TimedTrace) -> str:
    return "".join(f"{event}\n" for event in trace.events)


def format_corpus(traces: Sequence[TimedTrace]) -> str:
    return "\n".join(format_trace(trace) for trace in traces)


def write_corpus(path: Union[str, Path], traces: Sequence[TimedTrace]) -> None:
    Path(path).write_text(format_corpus(traces), encoding="utf-8")
    logger.info(f"Wrote {len(traces)} traces to {path}")


def count_events(traces: Iterable[TimedTrace]) -> int:
    return sum(len(trace) for trace in traces)
