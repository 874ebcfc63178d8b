"""
Timed Automaton Core
Clocks, guards, transitions, acceptance checking, model files and DOT export
"""

import logging
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from timed_trace import (
    EventType,
    TimedEvent,
    TimedTrace,
    ViolationKind,
    normalize,
    validate,
)

logger = logging.getLogger(__name__)

MODEL_HEADER = "tkt-model 1"


class AutomatonError(Exception):
    """Base error for automaton construction and checking"""


class ModelFormatError(AutomatonError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


class MalformedTraceError(AutomatonError):
    """The checker was handed a trace that is not well-formed"""


class ClockKind(str, Enum):
    ABSOLUTE = "t"
    RELATIVE = "c"


@dataclass(frozen=True)
class ClockId:
    kind: ClockKind
    index: int

    @property
    def is_absolute(self) -> bool:
        return self.kind is ClockKind.ABSOLUTE

    @property
    def sort_key(self) -> Tuple[int, int]:
        return (0 if self.is_absolute else 1, self.index)

    def __lt__(self, other: "ClockId") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return "t" if self.is_absolute else f"c{self.index}"


ABSOLUTE_CLOCK = ClockId(ClockKind.ABSOLUTE, 0)


def relative_clock(index: int) -> ClockId:
    return ClockId(ClockKind.RELATIVE, index)


def parse_clock(token: str) -> ClockId:
    if token == "t":
        return ABSOLUTE_CLOCK
    if token.startswith("c") and token[1:].isdigit():
        return relative_clock(int(token[1:]))
    raise ModelFormatError(f"invalid clock {token!r}")


class GuardForm(Enum):
    EQUALITY = "equality"
    INTERVAL = "interval"


@dataclass(frozen=True)
class Guard:
    """Constraint on one clock: an observed value or a closed interval"""

    clock: ClockId
    form: GuardForm
    lo: Fraction
    hi: Fraction

    @classmethod
    def equality(cls, clock: ClockId, value: int) -> "Guard":
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise AutomatonError(f"equality guard needs a non-negative integer, got {value!r}")
        return cls(clock, GuardForm.EQUALITY, Fraction(value), Fraction(value))

    @classmethod
    def interval(cls, clock: ClockId, lo, hi) -> "Guard":
        lo, hi = Fraction(lo), Fraction(hi)
        if not 0 <= lo <= hi:
            raise AutomatonError(f"invalid interval [{lo}, {hi}] on {clock}")
        return cls(clock, GuardForm.INTERVAL, lo, hi)

    @property
    def is_equality(self) -> bool:
        return self.form is GuardForm.EQUALITY

    @property
    def value(self) -> int:
        return int(self.lo)

    @property
    def sort_key(self):
        return (self.clock.sort_key, self.form is GuardForm.INTERVAL, self.lo, self.hi)

    def holds(self, clock_value) -> bool:
        return self.lo <= clock_value <= self.hi

    def __str__(self) -> str:
        if self.is_equality:
            return f"{self.clock}={self.value}"
        return f"{self.clock}:[{self.lo},{self.hi}]"


@dataclass(frozen=True)
class Transition:
    """
    Edge of a timed automaton. Guards form a multiset (duplicate equality
    observations are kept); resets are a set.
    """

    source: int
    target: int
    operation: str
    event_type: EventType
    guards: Tuple[Guard, ...] = ()
    resets: FrozenSet[ClockId] = frozenset()

    def __post_init__(self):
        object.__setattr__(
            self, "guards", tuple(sorted(self.guards, key=lambda g: g.sort_key))
        )
        object.__setattr__(self, "resets", frozenset(self.resets))
        if self.event_type is EventType.END and any(
            not clock.is_absolute for clock in self.resets
        ):
            raise AutomatonError(
                f"End transition {self.operation} {self.source}->{self.target} "
                "resets a relative clock"
            )

    @property
    def symbol(self) -> Tuple[str, EventType]:
        return (self.operation, self.event_type)

    @property
    def key(self) -> Tuple[int, int, str, EventType]:
        return (self.source, self.target, self.operation, self.event_type)

    @property
    def sort_key(self):
        return (self.source, self.operation, self.event_type.value, self.target)

    @cached_property
    def guard_groups(self) -> Tuple[Tuple[ClockId, Tuple[Guard, ...]], ...]:
        groups: Dict[ClockId, List[Guard]] = {}
        for guard in self.guards:
            groups.setdefault(guard.clock, []).append(guard)
        return tuple((clock, tuple(groups[clock])) for clock in sorted(groups))

    @property
    def sorted_resets(self) -> List[ClockId]:
        return sorted(self.resets)

    def label(self) -> str:
        return f"{self.operation}/{self.event_type.value}"


@dataclass(frozen=True)
class TimedAutomaton:
    states: FrozenSet[int]
    initial: int
    clocks: FrozenSet[ClockId]
    alphabet: FrozenSet[str]
    transitions: Tuple[Transition, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", frozenset(self.states))
        object.__setattr__(self, "clocks", frozenset(self.clocks))
        object.__setattr__(self, "alphabet", frozenset(self.alphabet))
        object.__setattr__(
            self,
            "transitions",
            tuple(sorted(self.transitions, key=lambda tr: tr.sort_key)),
        )
        self._check_invariants()

    def _check_invariants(self):
        if self.initial not in self.states:
            raise AutomatonError(f"initial state {self.initial} is not a state")
        absolute = [clock for clock in self.clocks if clock.is_absolute]
        if absolute != [ABSOLUTE_CLOCK]:
            raise AutomatonError("an automaton carries exactly one absolute clock t")
        for tr in self.transitions:
            if tr.source not in self.states or tr.target not in self.states:
                raise AutomatonError(f"transition {tr.key} leaves the state set")
            if tr.operation not in self.alphabet:
                raise AutomatonError(f"operation {tr.operation} not in alphabet")
            unknown = {g.clock for g in tr.guards} | set(tr.resets)
            unknown -= self.clocks
            if unknown:
                names = ", ".join(str(c) for c in sorted(unknown))
                raise AutomatonError(f"transition {tr.key} uses unknown clocks {names}")

    @cached_property
    def _outgoing(self) -> Dict[int, Tuple[Transition, ...]]:
        table: Dict[int, List[Transition]] = {state: [] for state in self.states}
        for tr in self.transitions:
            table[tr.source].append(tr)
        return {state: tuple(trs) for state, trs in table.items()}

    @cached_property
    def _by_symbol(self) -> Dict[Tuple[int, str, EventType], Tuple[Transition, ...]]:
        table: Dict[Tuple[int, str, EventType], List[Transition]] = {}
        for tr in self.transitions:
            table.setdefault((tr.source, tr.operation, tr.event_type), []).append(tr)
        return {key: tuple(trs) for key, trs in table.items()}

    def outgoing(self, state: int) -> Tuple[Transition, ...]:
        return self._outgoing.get(state, ())

    def successors(
        self, state: int, operation: str, event_type: EventType
    ) -> Tuple[Transition, ...]:
        return self._by_symbol.get((state, operation, event_type), ())

    @property
    def relative_clocks(self) -> List[ClockId]:
        return sorted(clock for clock in self.clocks if not clock.is_absolute)

    def summary(self) -> Dict[str, int]:
        return {
            "states": len(self.states),
            "transitions": len(self.transitions),
            "clocks": len(self.clocks),
        }

    def with_transitions(self, transitions: Iterable[Transition]) -> "TimedAutomaton":
        return replace(self, transitions=tuple(transitions))


def canonicalize(automaton: TimedAutomaton) -> TimedAutomaton:
    """
    Renumber states breadth-first from the initial state, visiting outgoing
    transitions ordered by (operation, event type, target). Unreachable
    states are dropped.
    """
    numbering: Dict[int, int] = {automaton.initial: 0}
    queue = deque([automaton.initial])
    while queue:
        state = queue.popleft()
        ordered = sorted(
            automaton.outgoing(state),
            key=lambda tr: (tr.operation, tr.event_type.value, tr.target),
        )
        for tr in ordered:
            if tr.target not in numbering:
                numbering[tr.target] = len(numbering)
                queue.append(tr.target)

    transitions = [
        replace(tr, source=numbering[tr.source], target=numbering[tr.target])
        for tr in automaton.transitions
        if tr.source in numbering
    ]
    return TimedAutomaton(
        states=frozenset(numbering.values()),
        initial=0,
        clocks=automaton.clocks,
        alphabet=automaton.alphabet,
        transitions=tuple(transitions),
    )


# Acceptance


class FailureReason(Enum):
    MISSING_TRANSITION = "missing-transition"
    GUARD_VIOLATION = "guard-violation"


@dataclass(frozen=True)
class FirstFailure:
    """Where the furthest-reaching path got stuck"""

    event_index: int
    event: TimedEvent
    state: int
    reason: FailureReason
    clock: Optional[ClockId] = None
    clock_value: Optional[int] = None
    guards: Tuple[Guard, ...] = ()

    def __str__(self) -> str:
        where = f"event {self.event_index} ({self.event}) at state {self.state}"
        if self.reason is FailureReason.MISSING_TRANSITION:
            return (
                f"{where}: no transition for "
                f"{self.event.operation}/{self.event.event_type.value}"
            )
        allowed = " | ".join(str(g) for g in self.guards)
        return (
            f"{where}: guard on {self.clock} violated, "
            f"{self.clock}={self.clock_value} outside {allowed}"
        )


@dataclass(frozen=True)
class AcceptResult:
    accepted: bool
    path: Optional[Tuple[Transition, ...]] = None
    failure: Optional[FirstFailure] = None

    def __bool__(self) -> bool:
        return self.accepted


@dataclass
class _Blocked:
    clock: ClockId
    value: int
    guards: Tuple[Guard, ...]


class _AcceptanceSearch:
    """
    Depth-first search over configurations (event index, state, last reset
    step of every clock). Visited configurations are memoized.
    """

    def __init__(self, automaton: TimedAutomaton, trace: TimedTrace, check_absolute: bool):
        self.automaton = automaton
        self.trace = trace
        self.check_absolute = check_absolute
        self.timestamps = trace.timestamps
        self.best_depth = -1
        self.failure: Optional[FirstFailure] = None

    def run(self) -> AcceptResult:
        n = len(self.trace)
        visited = set()
        # Stack entries: (index, state, resets, path cons-cell)
        stack = [(0, self.automaton.initial, frozenset(), None)]
        while stack:
            index, state, resets, path = stack.pop()
            if index == n:
                return AcceptResult(True, path=_unwind(path))
            event = self.trace[index]
            candidates = self.automaton.successors(state, event.operation, event.event_type)
            if not candidates:
                self._record(index, state, FailureReason.MISSING_TRANSITION)
                continue

            last_reset = dict(resets)
            children = []
            first_block: Optional[_Blocked] = None
            for tr in candidates:
                blocked = self._blocking_guard(tr, index, last_reset)
                if blocked is not None:
                    first_block = first_block or blocked
                    continue
                next_resets = self._apply_resets(tr, index, last_reset, resets)
                key = (index + 1, tr.target, next_resets)
                if key in visited:
                    continue
                visited.add(key)
                children.append((index + 1, tr.target, next_resets, (tr, path)))

            if not children and first_block is not None:
                self._record(index, state, FailureReason.GUARD_VIOLATION, first_block)
            stack.extend(reversed(children))

        return AcceptResult(False, failure=self.failure)

    def _record(self, index, state, reason, blocked: Optional[_Blocked] = None):
        if index <= self.best_depth:
            return
        self.best_depth = index
        self.failure = FirstFailure(
            event_index=index,
            event=self.trace[index],
            state=state,
            reason=reason,
            clock=blocked.clock if blocked else None,
            clock_value=blocked.value if blocked else None,
            guards=blocked.guards if blocked else (),
        )

    def _apply_resets(self, tr, index, last_reset, resets) -> FrozenSet:
        if not tr.resets:
            return resets
        updated = dict(last_reset)
        for clock in tr.resets:
            # The absolute clock measures time since the trace started
            if clock.is_absolute and index > 0:
                continue
            updated[clock] = index
        return frozenset(updated.items())

    def _blocking_guard(self, tr, index, last_reset) -> Optional[_Blocked]:
        """
        Absolute groups must all hold. Relative groups count only for clocks
        started by the paired Begin; one of them holding is enough.
        """
        event = self.trace[index]
        partner = self.trace.pairing[index] if event.event_type is EventType.END else None
        now = self.timestamps[index]
        relative_held = False
        relative_block: Optional[_Blocked] = None

        for clock, group in tr.guard_groups:
            reset_step = last_reset.get(clock)
            if reset_step is None:
                continue
            value = now - self.timestamps[reset_step]
            held = any(g.holds(value) for g in group)
            if clock.is_absolute:
                if self.check_absolute and not held:
                    return _Blocked(clock, value, group)
                continue
            if event.event_type is EventType.END and reset_step != partner:
                continue
            if held:
                relative_held = True
            elif relative_block is None:
                relative_block = _Blocked(clock, value, group)

        return None if relative_held else relative_block


def _unwind(path) -> Tuple[Transition, ...]:
    transitions = []
    while path is not None:
        tr, path = path
        transitions.append(tr)
    return tuple(reversed(transitions))


def accepts(
    automaton: TimedAutomaton,
    trace: TimedTrace,
    check_absolute: bool = True,
    allow_open: bool = False,
) -> AcceptResult:
    """
    Decide whether some path of the automaton consumes the whole trace with
    every guard satisfied. The trace is normalized before matching. With
    allow_open, Begin events whose End was not logged yet are tolerated.
    """
    if len(trace) == 0:
        raise MalformedTraceError("trace has no events")
    violations = [
        v
        for v in validate(trace)
        if not (
            allow_open
            and v.kind is ViolationKind.PAIRING
            and trace.pairing[v.index] is None
            and trace[v.index].event_type is EventType.BEGIN
        )
    ]
    if violations:
        raise MalformedTraceError(
            "trace is not well-formed: " + "; ".join(str(v) for v in violations[:3])
        )
    result = _AcceptanceSearch(automaton, normalize(trace), check_absolute).run()
    logger.debug(
        f"Checked trace of {len(trace)} events: "
        f"{'accepted' if result.accepted else result.failure}"
    )
    return result


# Model files


def _format_guard(guard: Guard) -> str:
    return str(guard)


def _parse_guard(token: str, line_number: int) -> Guard:
    try:
        if ":" in token:
            clock_token, bounds = token.split(":", 1)
            if not (bounds.startswith("[") and bounds.endswith("]")):
                raise ValueError(bounds)
            lo, hi = bounds[1:-1].split(",")
            return Guard.interval(parse_clock(clock_token), Fraction(lo), Fraction(hi))
        clock_token, value = token.split("=", 1)
        return Guard.equality(parse_clock(clock_token), int(value))
    except (ValueError, ZeroDivisionError, AutomatonError) as e:
        raise ModelFormatError(f"invalid guard {token!r} ({e})", line_number) from e


def format_model(automaton: TimedAutomaton) -> str:
    """
    Versioned text form:

        tkt-model 1
        initial <state>
        states <state>...
        clocks <clock>...
        alphabet <operation>...
        transition <src> <dst> <B|E> <operation> resets=<c,..|-> guards=<g;..|->

    Guards are `c=v` (equality) or `c:[lo,hi]` (interval, exact rationals).
    """
    lines = [
        MODEL_HEADER,
        f"initial {automaton.initial}",
        " ".join(["states"] + [str(s) for s in sorted(automaton.states)]),
        " ".join(["clocks"] + [str(c) for c in sorted(automaton.clocks)]),
        " ".join(["alphabet"] + sorted(automaton.alphabet)),
    ]
    for tr in automaton.transitions:
        resets = ",".join(str(c) for c in tr.sorted_resets) or "-"
        guards = ";".join(_format_guard(g) for g in tr.guards) or "-"
        lines.append(
            f"transition {tr.source} {tr.target} {tr.event_type.value} "
            f"{tr.operation} resets={resets} guards={guards}"
        )
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> TimedAutomaton:
    rows = [
        (number, line.strip())
        for number, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not rows or rows[0][1] != MODEL_HEADER:
        raise ModelFormatError(f"missing header {MODEL_HEADER!r}", rows[0][0] if rows else None)

    header: Dict[str, List[str]] = {}
    transitions: List[Transition] = []
    for number, line in rows[1:]:
        keyword, *rest = line.split()
        if keyword in ("initial", "states", "clocks", "alphabet"):
            if keyword in header:
                raise ModelFormatError(f"duplicate {keyword} line", number)
            header[keyword] = rest
        elif keyword == "transition":
            transitions.append(_parse_transition(rest, number))
        else:
            raise ModelFormatError(f"unknown keyword {keyword!r}", number)

    missing = [k for k in ("initial", "states", "clocks", "alphabet") if k not in header]
    if missing:
        raise ModelFormatError(f"missing {', '.join(missing)} line")
    try:
        if len(header["initial"]) != 1:
            raise ModelFormatError("initial takes exactly one state")
        return TimedAutomaton(
            states=frozenset(int(s) for s in header["states"]),
            initial=int(header["initial"][0]),
            clocks=frozenset(parse_clock(c) for c in header["clocks"]),
            alphabet=frozenset(header["alphabet"]),
            transitions=tuple(transitions),
        )
    except ModelFormatError:
        raise
    except (ValueError, AutomatonError) as e:
        raise ModelFormatError(str(e)) from e


def _parse_transition(fields: Sequence[str], line_number: int) -> Transition:
    if len(fields) != 6:
        raise ModelFormatError("transition needs 6 fields", line_number)
    source, target, kind, operation, resets, guards = fields
    if not resets.startswith("resets=") or not guards.startswith("guards="):
        raise ModelFormatError("expected resets=... guards=...", line_number)
    reset_tokens = resets[len("resets="):]
    guard_tokens = guards[len("guards="):]
    try:
        return Transition(
            source=int(source),
            target=int(target),
            operation=operation,
            event_type=EventType(kind),
            guards=tuple(
                _parse_guard(token, line_number)
                for token in guard_tokens.split(";")
                if guard_tokens != "-"
            ),
            resets=frozenset(
                parse_clock(token)
                for token in reset_tokens.split(",")
                if reset_tokens != "-"
            ),
        )
    except ModelFormatError:
        raise
    except (ValueError, AutomatonError) as e:
        raise ModelFormatError(str(e), line_number) from e


def save_model(automaton: TimedAutomaton, path: Union[str, Path]) -> None:
    Path(path).write_text(format_model(automaton), encoding="utf-8")
    logger.info(f"Model saved to {path}")


def load_model(path: Union[str, Path]) -> TimedAutomaton:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"cannot read model {path}: {e}") from e
    return parse_model(text)


# DOT export


def _gvquote(text: str) -> str:
    return '"{}"'.format(text.replace('"', r"\""))


def _dot_guard(guard: Guard) -> str:
    if guard.is_equality:
        return f"{guard.clock} = {guard.value}"
    return f"{guard.lo} ≤ {guard.clock} ≤ {guard.hi}"


def to_dot(automaton: TimedAutomaton) -> str:
    """Deterministic Graphviz digraph of the automaton"""
    lines = ['digraph "timed_automaton" {', "\trankdir=LR;", "\tnode [shape=circle];"]
    lines.append("\tstart [shape=point, style=invis];")
    for state in sorted(automaton.states):
        lines.append(f"\ts{state};")
    lines.append(f"\tstart -> s{automaton.initial};")
    for tr in automaton.transitions:
        parts = [tr.label()]
        if tr.guards:
            parts.append(", ".join(_dot_guard(g) for g in tr.guards))
        if tr.resets:
            parts.append("{" + ", ".join(f"{c} := 0" for c in tr.sorted_resets) + "}")
        label = "\\n".join(parts)
        lines.append(f"\ts{tr.source} -> s{tr.target} [label={_gvquote(label)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_dot(automaton: TimedAutomaton, path: Union[str, Path]) -> None:
    Path(path).write_text(to_dot(automaton), encoding="utf-8")
