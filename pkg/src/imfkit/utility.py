"""Intent expectations and the utility math built on top of them.

An intent is a set of expectations over slice KPIs.  Each expectation carries a
target, a tolerated range, a penalty form and a priority weight.  Fulfillment
of the whole intent set is scored by a single scalar: the negated sum of
priority-weighted penalty costs over per-expectation deviations.  A perfectly
met intent set scores 0, everything else is negative.

Priorities and penalty forms are mutable at run time: operators re-weight and
re-shape expectations between simulator steps without retraining anything.
All functions here are pure, so swapping the intent set between calls is the
whole mutation story.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Mapping

# Log penalties are epsilon-offset so that cost is exactly 0 at zero deviation
# and finite everywhere; deviations at or below EPS count as fulfilled.
LOG_EPS = 1e-3


class Service(enum.Enum):
    """Slice service classes."""

    CV = "cv"
    URLLC = "urllc"
    MIOT = "miot"


class KpiKind(enum.Enum):
    """KPI families an expectation can target."""

    QOE = "qoe"
    PACKET_LOSS = "packet_loss"
    LATENCY = "latency"
    POWER = "power"


class Direction(enum.Enum):
    AT_LEAST = "at_least"
    AT_MOST = "at_most"


class UtilityForm(enum.Enum):
    LINEAR = "linear"
    LOG = "log"
    QUADRATIC = "quadratic"


class DeviationMode(enum.Enum):
    """How deviation treats the satisfied side of the target.

    SHORTFALL: only the unmet side counts; overshoot past an AT_LEAST target
    (or undershoot of an AT_MOST one) is deviation 0.
    ABSOLUTE: distance from the target counts on both sides.
    """

    SHORTFALL = "shortfall"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class Expectation:
    """One KPI expectation inside an intent set.

    range_lo/range_hi bound the values the KPI can sensibly take; the width
    normalizes features so percent-, millisecond- and score-valued KPIs are
    comparable.  The target must sit inside the range.
    """

    id: str
    service: Service
    kpi: KpiKind
    target: float
    direction: Direction
    range_lo: float
    range_hi: float
    form: UtilityForm = UtilityForm.LINEAR
    priority: float = 1.0

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("expectation id must be non-empty")
        if not self.range_lo < self.range_hi:
            raise ValueError(
                f"{self.id}: range must satisfy lo < hi, got [{self.range_lo}, {self.range_hi}]"
            )
        if not self.range_lo <= self.target <= self.range_hi:
            raise ValueError(
                f"{self.id}: target {self.target} outside range [{self.range_lo}, {self.range_hi}]"
            )
        if not self.priority > 0:
            raise ValueError(f"{self.id}: priority must be positive, got {self.priority}")

    @property
    def range_width(self) -> float:
        return self.range_hi - self.range_lo


class IntentSet:
    """Ordered collection of expectations with unique ids.

    Immutable; mutation helpers return a new set so an in-flight episode can
    atomically swap its reference at a step boundary.
    """

    def __init__(self, expectations: Iterable[Expectation]):
        self._items: tuple[Expectation, ...] = tuple(expectations)
        self._by_id = {e.id: e for e in self._items}
        if len(self._by_id) != len(self._items):
            seen: set[str] = set()
            for e in self._items:
                if e.id in seen:
                    raise ValueError(f"duplicate expectation id: {e.id}")
                seen.add(e.id)

    def __iter__(self) -> Iterator[Expectation]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, key: int | str) -> Expectation:
        if isinstance(key, str):
            try:
                return self._by_id[key]
            except KeyError:
                raise KeyError(f"no expectation with id {key!r}") from None
        return self._items[key]

    def __contains__(self, id_: str) -> bool:
        return id_ in self._by_id

    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self._items)

    def with_priority(self, id_: str, priority: float) -> "IntentSet":
        """New set with one expectation's priority replaced."""
        self._require(id_)
        return IntentSet(
            replace(e, priority=priority) if e.id == id_ else e for e in self._items
        )

    def with_form(self, id_: str, form: UtilityForm) -> "IntentSet":
        """New set with one expectation's penalty form replaced."""
        self._require(id_)
        return IntentSet(replace(e, form=form) if e.id == id_ else e for e in self._items)

    def with_all_forms(self, form: UtilityForm) -> "IntentSet":
        return IntentSet(replace(e, form=form) for e in self._items)

    def _require(self, id_: str) -> None:
        if id_ not in self._by_id:
            raise KeyError(f"no expectation with id {id_!r}")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, IntentSet) and self._items == other._items

    def __repr__(self) -> str:
        return f"IntentSet({list(self._items)!r})"


# A snapshot maps expectation id -> currently measured KPI value.
KpiSnapshot = Mapping[str, float]

# A feature vector maps expectation id -> run-time utility feature.
FeatureVector = Mapping[str, float]


def deviation(
    expectation: Expectation,
    value: float,
    mode: DeviationMode = DeviationMode.SHORTFALL,
) -> float:
    """Non-negative deviation of a measured KPI value from its target."""
    gap = value - expectation.target
    if mode is DeviationMode.ABSOLUTE:
        return abs(gap)
    if expectation.direction is Direction.AT_LEAST:
        return max(0.0, -gap)
    return max(0.0, gap)


def eval_form(form: UtilityForm, dev: float, priority: float) -> float:
    """Priority-weighted penalty cost of a deviation under one form.

    Costs are non-negative, zero at zero deviation, and non-decreasing in dev.
    The log form is offset by LOG_EPS so cost is 0 for dev <= LOG_EPS and the
    cost *difference* between two deviations above the offset matches the plain
    log of their ratio.
    """
    if dev < 0:
        raise ValueError(f"deviation must be non-negative, got {dev}")
    if not priority > 0:
        raise ValueError(f"priority must be positive, got {priority}")
    if form is UtilityForm.LINEAR:
        return priority * dev
    if form is UtilityForm.QUADRATIC:
        return priority * dev * dev
    if form is UtilityForm.LOG:
        if dev <= LOG_EPS:
            return 0.0
        return priority * math.log(dev / LOG_EPS)
    raise ValueError(f"unknown utility form: {form}")


def global_utility(
    intents: IntentSet,
    snapshot: KpiSnapshot,
    mode: DeviationMode = DeviationMode.SHORTFALL,
) -> float:
    """Scalar fulfillment score of an intent set against measured KPIs.

    Returns the negated sum of per-expectation costs; 0 iff every expectation
    is met (deviation 0 under the chosen mode), negative otherwise.
    """
    total = 0.0
    for e in intents:
        if e.id not in snapshot:
            raise KeyError(f"snapshot missing KPI value for expectation {e.id!r}")
        total += eval_form(e.form, deviation(e, snapshot[e.id], mode), e.priority)
    return -total


def step_reward(
    intents: IntentSet,
    snapshot: KpiSnapshot,
    mode: DeviationMode = DeviationMode.SHORTFALL,
) -> float:
    """Per-step training reward: the global utility of the post-step snapshot."""
    return global_utility(intents, snapshot, mode)


def feature_vector(
    intents: IntentSet,
    snapshot: KpiSnapshot,
    mode: DeviationMode = DeviationMode.SHORTFALL,
) -> dict[str, float]:
    """Run-time utility features, one per expectation.

    y_i = P_i * f(dev_i) / f(range width), with the form evaluated at unit
    priority in both numerator and denominator.  Dividing by the cost of a
    full-range deviation puts differently-scaled KPIs on a common footing, so
    a feature reads as "priority-weighted fraction of worst case".
    """
    out: dict[str, float] = {}
    for e in intents:
        if e.id not in snapshot:
            raise KeyError(f"snapshot missing KPI value for expectation {e.id!r}")
        if e.range_width <= LOG_EPS:
            raise ValueError(f"{e.id}: degenerate range width {e.range_width}")
        dev = deviation(e, snapshot[e.id], mode)
        denom = eval_form(e.form, e.range_width, 1.0)
        out[e.id] = e.priority * eval_form(e.form, dev, 1.0) / denom
    return out


# Urgency pseudo-scale.  Deviations are first normalized by range width so
# percent-valued and score-valued KPIs press comparably, then each penalty
# form curves that fraction over a shared span: quadratic fans out up to
# PRESSURE_SPAN (the stringent form), log compresses into 1/PRESSURE_SPAN of
# it (the tolerant form) and goes quiet once the remaining deviation is under
# PRESSURE_FLOOR of the range.
PRESSURE_SPAN = 10.0
PRESSURE_FLOOR = 0.01


def urgency(expectation: Expectation, dev: float) -> float:
    """Priority-weighted pressure an unmet expectation exerts at deviation dev.

    The deviation is normalized by the expectation's range width, so a KPI
    measured in percent and one measured in score units are comparable, then
    shaped by the penalty form: linear pressure grows in proportion to the
    normalized deviation, quadratic amplifies large deviations (stringent far
    from target), log stays audible close to the target but never shouts.
    Zero at zero deviation, and for the log form once the normalized deviation
    is at or under PRESSURE_FLOOR.
    """
    if dev < 0:
        raise ValueError(f"deviation must be non-negative, got {dev}")
    if dev == 0.0:
        return 0.0
    w = expectation.range_width
    if w <= LOG_EPS:
        raise ValueError(f"{expectation.id}: degenerate range width {w}")
    p, form = expectation.priority, expectation.form
    u = min(dev, w) / w
    if form is UtilityForm.LINEAR:
        return p * u
    if form is UtilityForm.QUADRATIC:
        return p * PRESSURE_SPAN * u * u
    if form is UtilityForm.LOG:
        if u <= PRESSURE_FLOOR:
            return 0.0
        return p * math.log(u / PRESSURE_FLOOR) / PRESSURE_SPAN
    raise ValueError(f"unknown utility form: {form}")
