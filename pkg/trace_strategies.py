"""
Hypothesis strategies for timed traces and small automata, shared by the test suites
"""

from typing import List, Sequence, Tuple

from hypothesis import strategies as st

from timed_automaton import ABSOLUTE_CLOCK, Guard, TimedAutomaton, Transition, relative_clock
from timed_trace import EventType, TimedEvent, TimedTrace

# One label pair per nesting level, so no operation ever runs inside itself
LEVEL_LABELS = (("a", "b"), ("c", "d"), ("e", "f"), ("g", "h"))

Call = Tuple[str, tuple]


@st.composite
def call_trees(draw, depth: int = 0, max_depth: int = 3, labels: Sequence[Sequence[str]] = LEVEL_LABELS) -> Call:
    label = draw(st.sampled_from(labels[min(depth, len(labels) - 1)]))
    children = ()
    if depth < max_depth:
        count = draw(st.integers(0, 3 if depth == 0 else 2))
        children = tuple(draw(call_trees(depth + 1, max_depth, labels)) for _ in range(count))
    return (label, children)


@st.composite
def timed_traces(
    draw,
    max_roots: int = 2,
    max_depth: int = 3,
    max_gap: int = 20,
    labels: Sequence[Sequence[str]] = LEVEL_LABELS,
) -> TimedTrace:
    roots = draw(st.lists(call_trees(0, max_depth, labels), min_size=1, max_size=max_roots))
    gaps = st.integers(0, max_gap)
    events: List[TimedEvent] = []
    now = draw(st.integers(0, 10**6))

    def emit(call: Call) -> None:
        nonlocal now
        label, children = call
        events.append(TimedEvent(EventType.BEGIN, label, now))
        for child in children:
            now += draw(gaps)
            emit(child)
        now += draw(gaps)
        events.append(TimedEvent(EventType.END, label, now))

    for root in roots:
        emit(root)
        now += draw(gaps)
    return TimedTrace.from_events(events)


def corpora(min_size: int = 1, max_size: int = 6, **trace_options):
    return st.lists(timed_traces(**trace_options), min_size=min_size, max_size=max_size)


@st.composite
def untimed_automata(draw, max_states: int = 6, operations: Sequence[str] = ("a", "b")) -> TimedAutomaton:
    """Guard-free automata; several transitions may share a source and symbol"""
    n = draw(st.integers(1, max_states))
    state = st.integers(0, n - 1)
    edges = draw(
        st.lists(
            st.tuples(state, state, st.sampled_from(operations), st.sampled_from(list(EventType))),
            max_size=4 * n,
            unique=True,
        )
    )
    transitions = [Transition(s, d, op, kind) for s, d, op, kind in edges]
    return TimedAutomaton(
        states=frozenset(range(n)),
        initial=0,
        clocks=frozenset({ABSOLUTE_CLOCK}),
        alphabet=frozenset(operations),
        transitions=tuple(transitions),
    )


@st.composite
def deterministic_automata(draw, max_states: int = 6, operations: Sequence[str] = ("a", "b")) -> TimedAutomaton:
    """
    At most one transition per (state, operation, type). Begin transitions
    reset one relative clock; End transitions may check one relative clock
    and the absolute clock. The initial state's Begin transitions reset t.
    """
    n = draw(st.integers(1, max_states))
    clocks = [relative_clock(i) for i in (1, 2)]
    bound = st.integers(0, 30)
    transitions = []
    for source in range(n):
        for op in operations:
            for kind in EventType:
                if not draw(st.booleans()):
                    continue
                target = draw(st.integers(0, n - 1))
                guards, resets = [], set()
                if kind is EventType.BEGIN:
                    resets.add(draw(st.sampled_from(clocks)))
                    if source == 0:
                        resets.add(ABSOLUTE_CLOCK)
                else:
                    if draw(st.booleans()):
                        lo = draw(bound)
                        guards.append(Guard.interval(draw(st.sampled_from(clocks)), lo, lo + draw(bound)))
                if draw(st.booleans()):
                    lo = draw(st.integers(0, 80))
                    guards.append(Guard.interval(ABSOLUTE_CLOCK, lo, lo + draw(st.integers(0, 80))))
                transitions.append(Transition(source, target, op, kind, tuple(guards), frozenset(resets)))
    return TimedAutomaton(
        states=frozenset(range(n)),
        initial=0,
        clocks=frozenset([ABSOLUTE_CLOCK, *clocks]),
        alphabet=frozenset(operations),
        transitions=tuple(transitions),
    )
