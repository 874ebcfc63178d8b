"""
Guard Generation Policies
Turns the equality observations accumulated on each transition into interval guards
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import norm

from timed_automaton import ClockId, Guard, TimedAutomaton, Transition

logger = logging.getLogger(__name__)

# Interval endpoints are rounded outward onto this grid
ROUNDING_DENOMINATOR = 10**6

EPSILON_LEVELS = ("0.05", "0.10", "0.15", "0.20", "0.25", "0.50", "0.75", "1.00")
GAMMA_LEVELS = ("0.95", "0.99")

# Two-sided normal quantiles, fixed at six decimals (1.959964, 2.575829)
Z_SCORES: Dict[Fraction, float] = {
    Fraction(level): round(float(norm.ppf((1 + float(level)) / 2)), 6) for level in GAMMA_LEVELS
}


class PolicyError(Exception):
    """Invalid policy configuration or misuse of guard generation"""


class UnknownConfigurationError(PolicyError):
    pass


class PolicyKind(str, Enum):
    MIN_MAX_EPSILON = "minmax"
    GAMMA_CONFIDENCE = "gamma"


def _as_fraction(value: Union[str, int, float, Fraction]) -> Fraction:
    # str() first so that 0.05 becomes 1/20 instead of its binary expansion
    if isinstance(value, Fraction):
        return value
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError) as e:
        raise PolicyError(f"invalid policy parameter {value!r}") from e


@dataclass(frozen=True)
class PolicyConfig:
    """Guard generation policy, its parameter and whether absolute-time guards are kept"""

    policy: PolicyKind
    parameter: Fraction
    absolute_guards: bool = True
    config_id: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "policy", PolicyKind(self.policy))
        object.__setattr__(self, "parameter", _as_fraction(self.parameter))
        if self.policy is PolicyKind.MIN_MAX_EPSILON:
            if not 0 <= self.parameter <= 1:
                raise PolicyError(f"epsilon must lie in [0, 1], got {self.parameter}")
        elif self.parameter not in Z_SCORES:
            allowed = ", ".join(GAMMA_LEVELS)
            raise PolicyError(f"gamma must be one of {allowed}, got {self.parameter}")

    @classmethod
    def min_max(cls, epsilon, absolute_guards: bool = True) -> "PolicyConfig":
        return cls(PolicyKind.MIN_MAX_EPSILON, epsilon, absolute_guards)

    @classmethod
    def gamma(cls, gamma, absolute_guards: bool = True) -> "PolicyConfig":
        return cls(PolicyKind.GAMMA_CONFIDENCE, gamma, absolute_guards)

    @property
    def label(self) -> str:
        if self.config_id:
            return self.config_id
        absolute = "abs" if self.absolute_guards else "noabs"
        return f"{self.policy.value}-{float(self.parameter):g}-{absolute}"

    def describe(self) -> str:
        name = "min-max epsilon" if self.policy is PolicyKind.MIN_MAX_EPSILON else "gamma-confidence"
        absolute = "with" if self.absolute_guards else "without"
        return f"{self.label}: {name} {float(self.parameter):g}, {absolute} absolute clock"


def _build_configuration_matrix() -> Dict[str, PolicyConfig]:
    """Odd identifiers keep absolute-clock guards, even ones drop them"""
    matrix: Dict[str, PolicyConfig] = {}
    series = [("M", PolicyKind.MIN_MAX_EPSILON, EPSILON_LEVELS), ("G", PolicyKind.GAMMA_CONFIDENCE, GAMMA_LEVELS)]
    for prefix, policy, levels in series:
        for position, level in enumerate(levels):
            for offset, absolute in ((1, True), (2, False)):
                config_id = f"{prefix}{2 * position + offset}"
                matrix[config_id] = PolicyConfig(policy, Fraction(level), absolute, config_id)
    return matrix


CONFIGURATION_MATRIX: Dict[str, PolicyConfig] = _build_configuration_matrix()
CONFIGURATION_IDS: Tuple[str, ...] = tuple(CONFIGURATION_MATRIX)


def policy_config_from_id(config_id: str) -> PolicyConfig:
    key = config_id.strip().upper()
    if key not in CONFIGURATION_MATRIX:
        raise UnknownConfigurationError(
            f"unknown configuration {config_id!r}; expected one of M1..M16, G1..G4"
        )
    return CONFIGURATION_MATRIX[key]


def parse_config_list(text: str) -> List[PolicyConfig]:
    """'M1,M16,G1' -> configurations, in the given order"""
    ids = [token for token in text.split(",") if token.strip()]
    if not ids:
        raise UnknownConfigurationError("empty configuration list")
    return [policy_config_from_id(token) for token in ids]


@dataclass(frozen=True)
class ClockSamples:
    """Equality observations of one clock on one transition"""

    clock: ClockId
    values: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise PolicyError(f"no samples for clock {self.clock}")


def _floor_to_grid(value: Fraction) -> Fraction:
    return Fraction(math.floor(value * ROUNDING_DENOMINATOR), ROUNDING_DENOMINATOR)


def _ceil_to_grid(value: Fraction) -> Fraction:
    return Fraction(math.ceil(value * ROUNDING_DENOMINATOR), ROUNDING_DENOMINATOR)


def generate_guard(samples: ClockSamples, config: PolicyConfig) -> Optional[Guard]:
    """
    Interval guard covering the samples, or None when a single value was observed.

    min-max:  [(1 - eps) * min, (1 + eps) * max]
    gamma:    mean -/+ z * s (sample standard deviation), widened to the
              observed min/max and clamped at 0
    """
    values = samples.values
    if len(values) == 1:
        return None

    low, high = min(values), max(values)
    if config.policy is PolicyKind.MIN_MAX_EPSILON:
        lo = (1 - config.parameter) * low
        hi = (1 + config.parameter) * high
    else:
        data = np.asarray(values, dtype=float)
        mean = float(data.mean())
        spread = float(data.std(ddof=1))
        z = Z_SCORES[config.parameter]
        lo = min(Fraction(mean - z * spread), Fraction(low))
        hi = max(Fraction(mean + z * spread), Fraction(high))

    lo = max(_floor_to_grid(lo), Fraction(0))
    hi = _ceil_to_grid(hi)
    return Guard.interval(samples.clock, lo, hi)


def _transition_guards(tr: Transition, config: PolicyConfig) -> Tuple[Guard, ...]:
    guards: List[Guard] = []
    for clock, group in tr.guard_groups:
        if any(not guard.is_equality for guard in group):
            raise PolicyError(
                f"transition {tr.label()} {tr.source}->{tr.target} already carries "
                "interval guards; policies apply to equality observations only"
            )
        if clock.is_absolute and not config.absolute_guards:
            continue
        guard = generate_guard(ClockSamples(clock, tuple(g.value for g in group)), config)
        if guard is not None:
            guards.append(guard)
    return tuple(guards)


def apply_policy(automaton: TimedAutomaton, config: PolicyConfig) -> TimedAutomaton:
    """Replace every per-clock equality multiset with the policy's interval"""
    transitions = [replace(tr, guards=_transition_guards(tr, config)) for tr in automaton.transitions]
    result = automaton.with_transitions(transitions)
    logger.info(
        f"Guards generated with {config.describe()}: "
        f"{sum(len(tr.guards) for tr in result.transitions)} interval guards"
    )
    return result
