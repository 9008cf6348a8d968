"""Deterministic fluid-flow simulator of one network slice.

Three service classes (connected-vehicle video, URLLC, massive IoT) share a
single airlink.  Traffic is fluid: each service offers ue_count * per_ue_demand
Mbps and the airlink hands out capacity by packet priority, strict between
levels and proportional-to-offered-load inside a level, with per-service MBR
caps.  Latency is placement plus compute: propagation of the serving site
weighted by UE placement, plus a compute term that shrinks with the pods the
autoscaler granted at that site.  Power follows the mIoT fleet's placement,
normalized to a configured worst case.

Everything is a pure function of (state, config): no hidden randomness, so a
trajectory replays bit-identically from its control sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .utility import KpiKind, Service

AUTOSCALE_LEVEL_NAMES = ("small", "medium", "large", "very_large")


@dataclass(frozen=True)
class SiteConfig:
    id: str
    kind: str  # "central" or "edge"
    propagation_latency_ms: float
    per_ue_power: float

    def __post_init__(self) -> None:
        if self.kind not in ("central", "edge"):
            raise ValueError(f"site {self.id}: kind must be central or edge, got {self.kind!r}")
        if self.propagation_latency_ms < 0 or self.per_ue_power < 0:
            raise ValueError(f"site {self.id}: latency and power must be non-negative")


@dataclass(frozen=True)
class ServiceConfig:
    ue_count: int
    per_ue_demand_mbps: float

    @property
    def offered_mbps(self) -> float:
        return self.ue_count * self.per_ue_demand_mbps


@dataclass(frozen=True)
class SliceConfig:
    airlink_capacity_mbps: float
    services: Mapping[Service, ServiceConfig]
    sites: tuple[SiteConfig, ...]
    autoscale_pods: tuple[int, ...] = (2, 4, 8, 16)
    compute_latency_base_ms: float = 160.0
    priority_levels: int = 4
    mbr_levels_mbps: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 12.0)
    max_power: float = 0.0  # normalization denominator; 0 means derive at reset

    def __post_init__(self) -> None:
        if self.airlink_capacity_mbps <= 0:
            raise ValueError("airlink capacity must be positive")
        if self.priority_levels < 2:
            raise ValueError("need at least two priority levels")
        if list(self.mbr_levels_mbps) != sorted(self.mbr_levels_mbps):
            raise ValueError("mbr levels must be ascending")
        if len(self.autoscale_pods) != len(AUTOSCALE_LEVEL_NAMES):
            raise ValueError(f"expected {len(AUTOSCALE_LEVEL_NAMES)} autoscale levels")
        if not self.sites:
            raise ValueError("need at least one site")

    def site(self, site_id: str) -> SiteConfig:
        for s in self.sites:
            if s.id == site_id:
                return s
        raise KeyError(f"unknown site {site_id!r}")

    def derived_max_power(self) -> float:
        """Worst case: the whole mIoT fleet parked at the most expensive site."""
        if self.max_power > 0:
            return self.max_power
        miot = self.services[Service.MIOT]
        return miot.ue_count * max(s.per_ue_power for s in self.sites)


def default_config(airlink_capacity_mbps: float = 20.0) -> SliceConfig:
    """The documented "desk" profile.

    Offered loads 8/6/6 Mbps for CV/URLLC/mIoT; a far central site with cheap
    power and two near edge sites with expensive power, so pushing mIoT toward
    the edge trades watts for milliseconds.  Capacity 20 is the ample regime
    (every throughput target reachable at once, with a little slack); at 10
    even the loss targets alone outstrip the airlink, so the scarce regime is
    a genuine three-way contest.
    """
    return SliceConfig(
        airlink_capacity_mbps=airlink_capacity_mbps,
        services={
            Service.CV: ServiceConfig(ue_count=4, per_ue_demand_mbps=2.0),
            Service.URLLC: ServiceConfig(ue_count=3, per_ue_demand_mbps=2.0),
            Service.MIOT: ServiceConfig(ue_count=8, per_ue_demand_mbps=0.75),
        },
        sites=(
            SiteConfig("central", "central", 100.0, 50.0),
            SiteConfig("edge1", "edge", 30.0, 60.0),
            SiteConfig("edge2", "edge", 40.0, 70.0),
        ),
    )


@dataclass(frozen=True)
class Move:
    """Shift a fraction of a service's UE mass between sites."""

    service: Service
    from_site: str
    to_site: str
    fraction: float = 0.1


@dataclass(frozen=True)
class AutoScaleAction:
    service: Service
    site: str
    level: int  # index into AUTOSCALE_LEVEL_NAMES


@dataclass(frozen=True)
class ControlInputs:
    """One step's worth of knob changes; omitted knobs keep their value."""

    priorities: Mapping[Service, int] = field(default_factory=dict)
    mbr: Mapping[Service, int] = field(default_factory=dict)
    moves: tuple[Move, ...] = ()
    autoscales: tuple[AutoScaleAction, ...] = ()


@dataclass
class SliceState:
    priorities: dict[Service, int]
    mbr_index: dict[Service, int]
    # placement[service][site_id] = fraction of that service's UEs at the site
    placement: dict[Service, dict[str, float]]
    # autoscale[(site_id, service)] = level index
    autoscale: dict[tuple[str, Service], int]
    step_counter: int = 0

    def copy(self) -> "SliceState":
        return SliceState(
            priorities=dict(self.priorities),
            mbr_index=dict(self.mbr_index),
            placement={s: dict(p) for s, p in self.placement.items()},
            autoscale=dict(self.autoscale),
            step_counter=self.step_counter,
        )


@dataclass(frozen=True)
class KpiVector:
    qoe_cv: float
    pl_urllc_pct: float
    pl_miot_pct: float
    latency_urllc_ms: float
    latency_miot_ms: float
    power_miot: float  # normalized to [0, 1]

    def value(self, service: Service, kind: KpiKind) -> float:
        key = (service, kind)
        table = {
            (Service.CV, KpiKind.QOE): self.qoe_cv,
            (Service.URLLC, KpiKind.PACKET_LOSS): self.pl_urllc_pct,
            (Service.MIOT, KpiKind.PACKET_LOSS): self.pl_miot_pct,
            (Service.URLLC, KpiKind.LATENCY): self.latency_urllc_ms,
            (Service.MIOT, KpiKind.LATENCY): self.latency_miot_ms,
            (Service.MIOT, KpiKind.POWER): self.power_miot,
        }
        if key not in table:
            raise KeyError(f"no KPI for ({service.value}, {kind.value})")
        return table[key]


def reset(config: SliceConfig, seed: int = 0) -> SliceState:
    """Initial state: equal priorities, middle MBR, everyone at central, small pods.

    Deterministic for a given config; the seed is accepted for interface
    symmetry with learned components and does not perturb the state.
    """
    del seed
    services = list(config.services)
    central = config.sites[0].id
    return SliceState(
        priorities={s: 1 for s in services},
        mbr_index={s: len(config.mbr_levels_mbps) // 2 for s in services},
        placement={
            s: {site.id: (1.0 if site.id == central else 0.0) for site in config.sites}
            for s in services
        },
        autoscale={(site.id, s): 0 for site in config.sites for s in services},
        step_counter=0,
    )


def cold_start(config: SliceConfig) -> SliceState:
    """Deliberately under-provisioned start: every MBR cap at its lowest level.

    Evaluation episodes and live sessions begin here so the closed loop has
    real work to do: with 2 Mbps caps all around, packet loss and QoE start
    outside every band and the controllers must open the slice back up.
    Deterministic, like reset.
    """
    state = reset(config)
    for s in config.services:
        state.priorities[s] = 0
        state.mbr_index[s] = 0
    return state


def apply(state: SliceState, controls: ControlInputs, config: SliceConfig) -> SliceState:
    """Apply one step's controls, returning a new state.

    Moves are applied in list order and clamp at the mass actually present at
    the source site; autoscale actions likewise apply in order.
    """
    new = state.copy()
    for service, level in controls.priorities.items():
        _require_service(config, service)
        if not 0 <= level < config.priority_levels:
            raise ValueError(f"priority level {level} out of range [0, {config.priority_levels})")
        new.priorities[service] = int(level)
    for service, idx in controls.mbr.items():
        _require_service(config, service)
        if not 0 <= idx < len(config.mbr_levels_mbps):
            raise ValueError(f"mbr index {idx} out of range [0, {len(config.mbr_levels_mbps)})")
        new.mbr_index[service] = int(idx)
    for mv in controls.moves:
        _require_service(config, mv.service)
        config.site(mv.from_site)
        config.site(mv.to_site)
        if mv.from_site == mv.to_site:
            raise ValueError(f"move needs distinct sites, got {mv.from_site!r} twice")
        if not 0.0 < mv.fraction <= 1.0:
            raise ValueError(f"move fraction must be in (0, 1], got {mv.fraction}")
        src = new.placement[mv.service]
        moved = min(mv.fraction, src[mv.from_site])
        src[mv.from_site] -= moved
        src[mv.to_site] += moved
    for ac in controls.autoscales:
        _require_service(config, ac.service)
        config.site(ac.site)
        if not 0 <= ac.level < len(config.autoscale_pods):
            raise ValueError(f"autoscale level {ac.level} out of range")
        new.autoscale[(ac.site, ac.service)] = int(ac.level)
    return new


def _require_service(config: SliceConfig, service: Service) -> None:
    if service not in config.services:
        raise KeyError(f"service {service.value!r} not in this slice")


def _allocate(state: SliceState, config: SliceConfig) -> dict[Service, float]:
    """Airlink capacity split: strict between priority levels, proportional inside.

    Within a level each service's quota is proportional to offered load,
    capped at min(offered, MBR); freed capacity from capped services
    redistributes among the rest of the level.
    """
    offered = {s: config.services[s].offered_mbps for s in config.services}
    cap = {
        s: min(offered[s], config.mbr_levels_mbps[state.mbr_index[s]]) for s in config.services
    }
    alloc = {s: 0.0 for s in config.services}
    remaining = config.airlink_capacity_mbps
    for level in sorted(set(state.priorities.values()), reverse=True):
        group = [s for s in config.services if state.priorities[s] == level and offered[s] > 0]
        if not group or remaining <= 0:
            continue
        if sum(cap[s] for s in group) <= remaining:
            for s in group:
                alloc[s] = cap[s]
        else:
            pool = remaining
            active = list(group)
            while active:
                total_offered = sum(offered[s] for s in active)
                share = {s: pool * offered[s] / total_offered for s in active}
                capped = [s for s in active if share[s] >= cap[s]]
                if not capped:
                    for s in active:
                        alloc[s] = share[s]
                    break
                for s in capped:
                    alloc[s] = cap[s]
                    pool -= cap[s]
                active = [s for s in active if s not in capped]
        remaining -= sum(alloc[s] for s in group)
    return alloc


def _latency_ms(state: SliceState, config: SliceConfig, service: Service) -> float:
    """Placement-weighted propagation plus per-site compute latency."""
    placement = state.placement[service]
    total = 0.0
    mass = 0.0
    for site in config.sites:
        frac = placement.get(site.id, 0.0)
        if frac <= 0:
            continue
        pods = config.autoscale_pods[state.autoscale[(site.id, service)]]
        total += frac * (site.propagation_latency_ms + config.compute_latency_base_ms / pods)
        mass += frac
    if mass <= 0:
        raise ValueError(f"service {service.value} has no UE placement mass")
    return total / mass


def kpis(state: SliceState, config: SliceConfig) -> KpiVector:
    """Measure the KPI vector of a state without advancing it."""
    alloc = _allocate(state, config)

    def loss_pct(service: Service) -> float:
        offered = config.services[service].offered_mbps
        if offered <= 0:
            return 0.0  # nothing offered, nothing lost
        return 100.0 * (1.0 - alloc[service] / offered)

    cv_offered = config.services[Service.CV].offered_mbps
    qoe = 5.0 if cv_offered <= 0 else 1.0 + 4.0 * (alloc[Service.CV] / cv_offered)

    miot = config.services[Service.MIOT]
    raw_power = sum(
        miot.ue_count * state.placement[Service.MIOT].get(site.id, 0.0) * site.per_ue_power
        for site in config.sites
    )
    power = min(1.0, raw_power / config.derived_max_power())

    return KpiVector(
        qoe_cv=qoe,
        pl_urllc_pct=loss_pct(Service.URLLC),
        pl_miot_pct=loss_pct(Service.MIOT),
        latency_urllc_ms=_latency_ms(state, config, Service.URLLC),
        latency_miot_ms=_latency_ms(state, config, Service.MIOT),
        power_miot=power,
    )


def step(state: SliceState, config: SliceConfig) -> tuple[SliceState, KpiVector]:
    """Advance one step: measure KPIs and bump the step counter."""
    measured = kpis(state, config)
    new = state.copy()
    new.step_counter += 1
    return new, measured


def snapshot_for(intents, vector: KpiVector) -> dict[str, float]:
    """KpiSnapshot for an intent set: expectation id -> measured value."""
    return {e.id: vector.value(e.service, e.kpi) for e in intents}
