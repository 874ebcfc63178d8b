"""
Timed k-Tail Miner
Initial automaton construction, kFuture state merging, redundant transition
merging, clock refinement and the end-to-end mining pipeline
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from guard_policies import PolicyConfig, apply_policy, policy_config_from_id
from timed_automaton import (
    ABSOLUTE_CLOCK,
    ClockId,
    Guard,
    TimedAutomaton,
    Transition,
    canonicalize,
    relative_clock,
)
from timed_trace import EventType, TimedTrace, count_events, normalize, validate

logger = logging.getLogger(__name__)

Symbol = Tuple[str, EventType]
KFuture = FrozenSet[Tuple[Symbol, ...]]


class MiningError(Exception):
    """The corpus or an intermediate automaton cannot be mined"""


class RefinementError(MiningError):
    pass


class ConfigurationError(MiningError):
    pass


@dataclass(frozen=True)
class MinerConfig:
    k: int = 2
    absolute_clock: bool = True

    def __post_init__(self):
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ConfigurationError(f"k must be a positive integer, got {self.k!r}")


# Step 2: initial automaton


def _require_well_formed(traces: Sequence[TimedTrace]) -> None:
    if not traces:
        raise MiningError("no traces to mine")
    for number, trace in enumerate(traces, start=1):
        violations = validate(trace)
        if violations:
            raise MiningError(f"trace {number} is not well-formed: {violations[0]}")


def build_initial(traces: Sequence[TimedTrace], config: MinerConfig) -> TimedAutomaton:
    """
    One branch per trace, sharing only the initial state. Every Begin resets a
    fresh relative clock (plus t on a branch's first transition); every End is
    guarded by that clock's observed duration. With absolute_clock on, every
    transition also records t = timestamp.
    """
    _require_well_formed(traces)
    for number, trace in enumerate(traces, start=1):
        if trace[0].timestamp != 0:
            raise MiningError(f"trace {number} is not normalized")
    return _build_initial(traces, config)


def _build_initial(traces: Sequence[TimedTrace], config: MinerConfig) -> TimedAutomaton:
    transitions: List[Transition] = []
    clocks = {ABSOLUTE_CLOCK}
    alphabet = set()
    next_state, next_clock = 1, 1

    for trace in traces:
        started: Dict[int, ClockId] = {}
        previous = 0
        for index, event in enumerate(trace):
            state = next_state
            next_state += 1
            guards: List[Guard] = []
            resets = set()
            if config.absolute_clock:
                guards.append(Guard.equality(ABSOLUTE_CLOCK, event.timestamp))
            if event.event_type is EventType.BEGIN:
                clock = relative_clock(next_clock)
                next_clock += 1
                clocks.add(clock)
                started[index] = clock
                resets.add(clock)
                if index == 0:
                    resets.add(ABSOLUTE_CLOCK)
            else:
                begin = trace.pair(index)
                guards.append(
                    Guard.equality(started[begin], event.timestamp - trace[begin].timestamp)
                )
            transitions.append(
                Transition(previous, state, event.operation, event.event_type, tuple(guards), frozenset(resets))
            )
            alphabet.add(event.operation)
            previous = state

    automaton = TimedAutomaton(
        states=frozenset(range(next_state)),
        initial=0,
        clocks=frozenset(clocks),
        alphabet=frozenset(alphabet),
        transitions=tuple(transitions),
    )
    logger.info(f"Initial automaton: {automaton.summary()}")
    return canonicalize(automaton)


# Step 3: state merging


def _future(
    automaton: TimedAutomaton,
    state: int,
    depth: int,
    memo: Dict[Tuple[int, int], KFuture],
) -> KFuture:
    key = (state, depth)
    if key in memo:
        return memo[key]
    outgoing = automaton.outgoing(state)
    if depth == 0 or not outgoing:
        result: KFuture = frozenset({()})
    else:
        result = frozenset(
            (tr.symbol,) + tail
            for tr in outgoing
            for tail in _future(automaton, tr.target, depth - 1, memo)
        )
    memo[key] = result
    return result


def compute_kfuture(automaton: TimedAutomaton, state: int, k: int) -> KFuture:
    """
    Event sequences of the walks of length k from `state`, plus the shorter
    walks that stop at a state without outgoing transitions.
    """
    if state not in automaton.states:
        raise MiningError(f"state {state} is not part of the automaton")
    return _future(automaton, state, k, {})


def compute_all_kfutures(automaton: TimedAutomaton, k: int) -> Dict[int, KFuture]:
    memo: Dict[Tuple[int, int], KFuture] = {}
    return {state: _future(automaton, state, k, memo) for state in sorted(automaton.states)}


def merge_redundant_transitions(automaton: TimedAutomaton) -> TimedAutomaton:
    """Transitions sharing source, target, operation and type become one, accumulating guards and resets"""
    groups: Dict[Tuple, List[Transition]] = {}
    for tr in automaton.transitions:
        groups.setdefault(tr.key, []).append(tr)
    if all(len(group) == 1 for group in groups.values()):
        return automaton

    merged = []
    for group in groups.values():
        first = group[0]
        if len(group) == 1:
            merged.append(first)
            continue
        merged.append(
            replace(
                first,
                guards=tuple(guard for tr in group for guard in tr.guards),
                resets=frozenset().union(*(tr.resets for tr in group)),
            )
        )
    return automaton.with_transitions(merged)


def _collapse(automaton: TimedAutomaton, representative: Dict[int, int]) -> TimedAutomaton:
    transitions = [
        replace(tr, source=representative[tr.source], target=representative[tr.target])
        for tr in automaton.transitions
    ]
    collapsed = TimedAutomaton(
        states=frozenset(representative.values()),
        initial=representative[automaton.initial],
        clocks=automaton.clocks,
        alphabet=automaton.alphabet,
        transitions=tuple(transitions),
    )
    return canonicalize(merge_redundant_transitions(collapsed))


def merge_states(automaton: TimedAutomaton, k: int) -> TimedAutomaton:
    """
    Collapse every class of states with equal kFutures at once, merge the
    redundant transitions this creates, and repeat until no two states share
    a kFuture.
    """
    current = automaton
    passes = 0
    while True:
        futures = compute_all_kfutures(current, k)
        classes: Dict[KFuture, List[int]] = {}
        for state, future in futures.items():
            classes.setdefault(future, []).append(state)
        if all(len(members) == 1 for members in classes.values()):
            break
        representative = {
            state: members[0] for members in classes.values() for state in members
        }
        current = _collapse(current, representative)
        passes += 1
        logger.debug(f"Merge pass {passes}: {current.summary()}")

    logger.info(f"Merged automaton after {passes} passes: {current.summary()}")
    return current


# Step 4: clock refinement


def refine_clocks(automaton: TimedAutomaton) -> TimedAutomaton:
    """
    Relative clocks reset on the same transition and checked on the same
    transition are redundant; the lowest-indexed one survives and takes over
    the guards of the others. The absolute clock is left alone.
    """
    reset_sites: Dict[ClockId, List[int]] = {c: [] for c in automaton.relative_clocks}
    check_sites: Dict[ClockId, List[int]] = {c: [] for c in automaton.relative_clocks}
    for position, tr in enumerate(automaton.transitions):
        for clock in tr.resets:
            if not clock.is_absolute:
                reset_sites[clock].append(position)
        for clock, _ in tr.guard_groups:
            if not clock.is_absolute:
                check_sites[clock].append(position)

    groups: Dict[Tuple[int, int], List[ClockId]] = {}
    for clock in automaton.relative_clocks:
        resets, checks = reset_sites[clock], check_sites[clock]
        if len(resets) != 1 or len(checks) != 1:
            raise RefinementError(
                f"clock {clock} is reset on {len(resets)} and checked on "
                f"{len(checks)} transitions; refinement needs exactly one of each"
            )
        groups.setdefault((resets[0], checks[0]), []).append(clock)

    survivor: Dict[ClockId, ClockId] = {}
    for members in groups.values():
        best = min(members)
        survivor.update((clock, best) for clock in members)
    if all(survivor[clock] == clock for clock in survivor):
        return automaton

    transitions = [
        replace(
            tr,
            guards=tuple(
                guard if guard.clock.is_absolute else replace(guard, clock=survivor[guard.clock])
                for guard in tr.guards
            ),
            resets=frozenset(
                clock if clock.is_absolute else survivor[clock] for clock in tr.resets
            ),
        )
        for tr in automaton.transitions
    ]
    refined = replace(
        automaton,
        clocks=frozenset({ABSOLUTE_CLOCK} | set(survivor.values())),
        transitions=tuple(transitions),
    )
    logger.info(
        f"Clock refinement: {len(survivor)} relative clocks -> {len(groups)}"
    )
    return refined


# Pipeline


@dataclass
class MiningResult:
    """Final model plus the bookkeeping reported by the mine command"""

    model: TimedAutomaton
    traces: int
    events: int
    elapsed_ms: float
    stages: Dict[str, TimedAutomaton] = field(default_factory=dict)

    def summary(self) -> Dict[str, object]:
        return {
            "traces": self.traces,
            "events": self.events,
            **self.model.summary(),
            "elapsed_ms": round(self.elapsed_ms, 3),
        }


class TimedKTailMiner:
    """
    Runs the five mining steps: normalization, initial automaton, state
    merging, clock refinement and guard generation.
    """

    def __init__(
        self,
        miner_config: Optional[MinerConfig] = None,
        policy_config: Optional[PolicyConfig] = None,
        keep_stages: bool = False,
    ):
        self.miner_config = miner_config or MinerConfig()
        self.policy_config = policy_config or policy_config_from_id("M1")
        self.keep_stages = keep_stages

    def infer_structure(
        self, traces: Sequence[TimedTrace]
    ) -> Tuple[TimedAutomaton, float, Dict[str, TimedAutomaton]]:
        """Steps 1-4; returns the refined automaton, elapsed ms and stage snapshots"""
        _require_well_formed(traces)

        started = time.perf_counter()
        # Normalizing a well-formed trace keeps it well-formed
        normalized = [normalize(trace) for trace in traces]
        initial = _build_initial(normalized, self.miner_config)
        merged = merge_states(initial, self.miner_config.k)
        refined = refine_clocks(merged)
        elapsed_ms = (time.perf_counter() - started) * 1000.0

        stages = {}
        if self.keep_stages:
            stages = {"initial": initial, "merged": merged, "refined": refined}
        return refined, elapsed_ms, stages

    def generalize(self, refined: TimedAutomaton, policy_config: Optional[PolicyConfig] = None) -> Tuple[TimedAutomaton, float]:
        """Step 5 on an already refined automaton"""
        started = time.perf_counter()
        model = apply_policy(refined, policy_config or self.policy_config)
        return model, (time.perf_counter() - started) * 1000.0

    def mine(self, traces: Sequence[TimedTrace]) -> MiningResult:
        logger.info(
            f"Mining {len(traces)} traces with k={self.miner_config.k}, "
            f"{self.policy_config.describe()}"
        )
        refined, structure_ms, stages = self.infer_structure(traces)
        model, policy_ms = self.generalize(refined)
        result = MiningResult(
            model=model,
            traces=len(traces),
            events=count_events(traces),
            elapsed_ms=structure_ms + policy_ms,
            stages=stages,
        )
        logger.info(f"Mining finished: {result.summary()}")
        return result


def create_miner(
    settings: Optional[Dict] = None,
    policy_config: Optional[PolicyConfig] = None,
    keep_stages: Optional[bool] = None,
) -> TimedKTailMiner:
    """Factory function building a miner from the `mining` and `guards` settings"""
    settings = settings or {}
    mining = settings.get("mining", {})
    guards = settings.get("guards", {})
    miner_config = MinerConfig(
        k=mining.get("k", 2), absolute_clock=mining.get("absolute_clock", True)
    )
    if policy_config is None:
        policy_config = policy_config_from_id(guards.get("config_id", "M1"))
    if keep_stages is None:
        keep_stages = bool(mining.get("dump_stages", False))
    return TimedKTailMiner(miner_config, policy_config, keep_stages)
