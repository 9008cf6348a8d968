"""Goal-conditioned lower-level agents, one slice knob each.

Every agent owns a single control system (packet priority, MBR cap, UE-context
move, or pod autoscale), observes only its own KPI and knob, and is trained
solo with tabular one-step Q-learning to chase whatever sub-goal value it is
handed from an 8-level grid over its expectation's range.  After training the
tables freeze; the supervisor composes behavior purely by choosing goals.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import netsim
from .netsim import AutoScaleAction, ControlInputs, Move, SliceConfig, SliceState
from .utility import Expectation, IntentSet, KpiKind, Service

GOAL_LEVELS = 8
KPI_BUCKETS = 16
MOVE_FRACTION_STEP = 0.1
MAX_ARITY = 24


class AgentKind(enum.Enum):
    PRIORITY = "priority"
    MBR = "mbr"
    MOVE = "move"
    AUTOSCALE = "autoscale"


@dataclass(frozen=True)
class AgentSpec:
    name: str
    kind: AgentKind
    service: Service | None  # None: acts across services (autoscale)
    goal_expectation: str  # id of the expectation its sub-goals refer to
    arity: int

    def capability_vector(self) -> np.ndarray:
        """Fixed descriptor: one-hot kind, one-hot service scope, scaled arity."""
        kinds = list(AgentKind)
        kind_vec = [1.0 if self.kind is k else 0.0 for k in kinds]
        services = [Service.CV, Service.URLLC, Service.MIOT, None]
        svc_vec = [1.0 if self.service is s else 0.0 for s in services]
        return np.array(kind_vec + svc_vec + [self.arity / MAX_ARITY])


CAPABILITY_DIM = 9


def goal_grid(expectation: Expectation, levels: int = GOAL_LEVELS) -> np.ndarray:
    """Evenly spaced candidate goal values spanning the expectation's range."""
    return np.linspace(expectation.range_lo, expectation.range_hi, levels)


def kpi_bucket(expectation: Expectation, value: float, buckets: int = KPI_BUCKETS) -> int:
    """Discretize a KPI value into [0, buckets); clamps outside the range."""
    rel = (value - expectation.range_lo) / expectation.range_width
    return min(buckets - 1, max(0, int(rel * buckets)))


def goal_reward(expectation: Expectation, kpi_value: float, goal_value: float) -> float:
    """Tracking reward in [-1, 0]: negated range-normalized distance to goal."""
    return -abs(kpi_value - goal_value) / expectation.range_width


@dataclass(frozen=True)
class Observation:
    kpi_value: float
    bucket: int
    knob_code: int
    step_index: int


@dataclass(frozen=True)
class Transition:
    """One agent step as the supervisor sees it: s, a, g plus reward."""

    obs: Observation
    action: int
    goal_idx: int
    goal_value: float
    reward: float


def observe(
    state: SliceState,
    config: SliceConfig,
    spec: AgentSpec,
    expectation: Expectation,
    kpi_value: float,
    step_index: int,
) -> Observation:
    return Observation(
        kpi_value=kpi_value,
        bucket=kpi_bucket(expectation, kpi_value),
        knob_code=_knob_code(state, config, spec),
        step_index=step_index,
    )


def _knob_code(state: SliceState, config: SliceConfig, spec: AgentSpec) -> int:
    if spec.kind is AgentKind.PRIORITY:
        return state.priorities[spec.service]
    if spec.kind is AgentKind.MBR:
        return state.mbr_index[spec.service]
    if spec.kind is AgentKind.MOVE:
        central = config.sites[0].id
        return round(state.placement[spec.service][central] * 10)
    # autoscale: (site, level) of the site holding the most mIoT mass, packed
    # so the no-op fallback can reconstruct the exact action to re-apply
    placement = state.placement[Service.MIOT]
    best_idx = max(
        range(len(config.sites)),
        key=lambda i: (placement.get(config.sites[i].id, 0.0), -i),
    )
    level = state.autoscale[(config.sites[best_idx].id, Service.MIOT)]
    return best_idx * len(config.autoscale_pods) + level


def knob_code_range(spec: AgentSpec, config: SliceConfig) -> int:
    if spec.kind is AgentKind.PRIORITY:
        return config.priority_levels
    if spec.kind is AgentKind.MBR:
        return len(config.mbr_levels_mbps)
    if spec.kind is AgentKind.MOVE:
        return 11
    return len(config.sites) * len(config.autoscale_pods)


def noop_action(spec: AgentSpec, obs: Observation) -> int:
    """Action that leaves the knob where the observation found it."""
    if spec.kind in (AgentKind.PRIORITY, AgentKind.MBR):
        return obs.knob_code
    if spec.kind is AgentKind.MOVE:
        return 0
    # autoscale: re-apply the observed (site, level) for mIoT; knob_code packs
    # site_idx * n_levels + level and mIoT actions start at arity / 2
    per_service = spec.arity // 2
    return per_service + min(obs.knob_code, per_service - 1)


def controls_for(
    spec: AgentSpec, action: int, config: SliceConfig
) -> ControlInputs:
    """Translate a discrete action into simulator control inputs."""
    if not 0 <= action < spec.arity:
        raise ValueError(f"{spec.name}: action {action} outside arity {spec.arity}")
    if spec.kind is AgentKind.PRIORITY:
        return ControlInputs(priorities={spec.service: action})
    if spec.kind is AgentKind.MBR:
        return ControlInputs(mbr={spec.service: action})
    if spec.kind is AgentKind.MOVE:
        central = config.sites[0].id
        edges = [s.id for s in config.sites[1:]]
        moves = {
            1: Move(spec.service, central, edges[0], MOVE_FRACTION_STEP),
            2: Move(spec.service, edges[0], central, MOVE_FRACTION_STEP),
            3: Move(spec.service, central, edges[1], MOVE_FRACTION_STEP),
            4: Move(spec.service, edges[1], central, MOVE_FRACTION_STEP),
        }
        if action == 0:
            return ControlInputs()
        return ControlInputs(moves=(moves[action],))
    # autoscale: flatten (service, site, level)
    services = (Service.URLLC, Service.MIOT)
    per_service = len(config.sites) * len(config.autoscale_pods)
    svc = services[action // per_service]
    rest = action % per_service
    site = config.sites[rest // len(config.autoscale_pods)].id
    level = rest % len(config.autoscale_pods)
    return ControlInputs(autoscales=(AutoScaleAction(svc, site, level),))


def move_arity(config: SliceConfig) -> int:
    return 1 + 2 * (len(config.sites) - 1)


def autoscale_arity(config: SliceConfig) -> int:
    return 2 * len(config.sites) * len(config.autoscale_pods)


def derive_roster(intents: IntentSet, config: SliceConfig) -> list[AgentSpec]:
    """Agent roster implied by the intent set.

    Each service with a throughput-side expectation (QoE or packet loss) gets a
    priority agent and an MBR agent goal-conditioned on that expectation.
    A URLLC latency expectation adds a URLLC move agent; an mIoT power
    expectation adds an mIoT move agent goal-conditioned on power; an mIoT
    latency expectation adds the autoscale agent.
    """
    by_service_tp: dict[Service, Expectation] = {}
    latency: dict[Service, Expectation] = {}
    power: Expectation | None = None
    for e in intents:
        if e.kpi in (KpiKind.QOE, KpiKind.PACKET_LOSS):
            by_service_tp.setdefault(e.service, e)
        elif e.kpi is KpiKind.LATENCY:
            latency.setdefault(e.service, e)
        elif e.kpi is KpiKind.POWER:
            power = power or e
    roster: list[AgentSpec] = []
    order = (Service.CV, Service.URLLC, Service.MIOT)
    for svc in order:
        if svc in by_service_tp:
            e = by_service_tp[svc]
            roster.append(
                AgentSpec(f"priority_{svc.value}", AgentKind.PRIORITY, svc, e.id, config.priority_levels)
            )
    for svc in order:
        if svc in by_service_tp:
            e = by_service_tp[svc]
            roster.append(
                AgentSpec(f"mbr_{svc.value}", AgentKind.MBR, svc, e.id, len(config.mbr_levels_mbps))
            )
    if Service.URLLC in latency:
        roster.append(
            AgentSpec("move_urllc", AgentKind.MOVE, Service.URLLC, latency[Service.URLLC].id, move_arity(config))
        )
    if power is not None:
        roster.append(AgentSpec("move_miot", AgentKind.MOVE, Service.MIOT, power.id, move_arity(config)))
    if Service.MIOT in latency:
        roster.append(
            AgentSpec("autoscale", AgentKind.AUTOSCALE, None, latency[Service.MIOT].id, autoscale_arity(config))
        )
    return roster


class AgentPolicy:
    """Tabular goal-conditioned Q function for one agent."""

    def __init__(self, spec: AgentSpec):
        self.spec = spec
        self.q: dict[tuple[int, int, int], np.ndarray] = {}
        self.trained = False

    def _row(self, obs: Observation, goal_idx: int) -> np.ndarray:
        key = (obs.bucket, obs.knob_code, goal_idx)
        row = self.q.get(key)
        if row is None:
            row = np.zeros(self.spec.arity)
            self.q[key] = row
        return row

    def act(
        self, obs: Observation, goal_idx: int, explore_eps: float, rng: np.random.Generator
    ) -> int:
        """Epsilon-greedy action; ties break to the lowest action index.

        Reads never touch the table, so frozen policies stay bit-stable even
        when acting from states training never visited; those states fall back
        to leaving the knob alone.
        """
        if explore_eps > 0 and rng.random() < explore_eps:
            return int(rng.integers(self.spec.arity))
        row = self.q.get((obs.bucket, obs.knob_code, goal_idx))
        if row is None:
            return noop_action(self.spec, obs)
        return int(np.argmax(row))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.spec.name.encode())
        for key in sorted(self.q):
            digest.update(repr(key).encode())
            digest.update(np.ascontiguousarray(self.q[key], dtype="<f8").tobytes())
        return digest.hexdigest()


def roster_checksum(policies: Mapping[str, AgentPolicy]) -> str:
    digest = hashlib.sha256()
    for name in sorted(policies):
        digest.update(policies[name].checksum().encode())
    return digest.hexdigest()


@dataclass(frozen=True)
class LowerTrainConfig:
    episodes: int = 3000
    horizon: int = 40
    alpha: float = 0.2
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.05
    # start episodes from randomized knob settings so the tables cover the
    # joint-control states the supervisor will later drive through
    randomize_starts: bool = True


def randomized_start(config: SliceConfig, rng: np.random.Generator) -> SliceState:
    state = netsim.reset(config)
    central = config.sites[0].id
    for svc in config.services:
        state.priorities[svc] = int(rng.integers(config.priority_levels))
        state.mbr_index[svc] = int(rng.integers(len(config.mbr_levels_mbps)))
        k = int(rng.integers(0, 11))
        edge = config.sites[int(rng.integers(1, len(config.sites)))].id
        placement = {site.id: 0.0 for site in config.sites}
        placement[central] = k / 10
        placement[edge] += 1.0 - k / 10
        state.placement[svc] = placement
    for key in state.autoscale:
        state.autoscale[key] = int(rng.integers(len(config.autoscale_pods)))
    return state


def train_lower(
    config: SliceConfig,
    intents: IntentSet,
    roster: Sequence[AgentSpec],
    train_cfg: LowerTrainConfig = LowerTrainConfig(),
    seed: int = 0,
) -> dict[str, AgentPolicy]:
    """Train each agent solo against uniformly sampled goals, then freeze.

    While one agent trains, every other knob stays at its reset default, so the
    learned tables answer "what does this knob do to my KPI" in isolation.
    """
    policies: dict[str, AgentPolicy] = {}
    for idx, spec in enumerate(roster):
        expectation = intents[spec.goal_expectation]
        grid = goal_grid(expectation)
        rng = np.random.default_rng((seed, idx))
        policy = AgentPolicy(spec)
        for ep in range(train_cfg.episodes):
            frac = ep / max(1, train_cfg.episodes - 1)
            eps = train_cfg.eps_start + (train_cfg.eps_end - train_cfg.eps_start) * frac
            goal_idx = int(rng.integers(len(grid)))
            goal_value = float(grid[goal_idx])
            if train_cfg.randomize_starts:
                state = randomized_start(config, rng)
            else:
                state = netsim.reset(config)
            vec = netsim.kpis(state, config)
            obs = observe(
                state, config, spec, expectation, vec.value(expectation.service, expectation.kpi), 0
            )
            for t in range(train_cfg.horizon):
                action = policy.act(obs, goal_idx, eps, rng)
                state = netsim.apply(state, controls_for(spec, action, config), config)
                state, vec = netsim.step(state, config)
                kpi_value = vec.value(expectation.service, expectation.kpi)
                next_obs = observe(state, config, spec, expectation, kpi_value, t + 1)
                reward = goal_reward(expectation, kpi_value, goal_value)
                row = policy._row(obs, goal_idx)
                best_next = float(policy._row(next_obs, goal_idx).max())
                row[action] += train_cfg.alpha * (
                    reward + train_cfg.gamma * best_next - row[action]
                )
                obs = next_obs
        policy.trained = True
        policies[spec.name] = policy
    return policies


# ------------------------------------------------------------- serialization

AGENTS_FORMAT_VERSION = 1


def save_agents(path: str, policies: Mapping[str, AgentPolicy], meta: dict) -> None:
    """JSON dump of all Q tables; layout documented in docs/formats.md."""
    payload = {
        "version": AGENTS_FORMAT_VERSION,
        "meta": meta,
        "agents": {
            name: {
                "spec": {
                    "name": p.spec.name,
                    "kind": p.spec.kind.value,
                    "service": p.spec.service.value if p.spec.service else None,
                    "goal_expectation": p.spec.goal_expectation,
                    "arity": p.spec.arity,
                },
                "q": {
                    ",".join(map(str, key)): [float(v) for v in row]
                    for key, row in sorted(p.q.items())
                },
            }
            for name, p in policies.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)


def load_agents(path: str) -> tuple[dict, dict[str, AgentPolicy]]:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload["version"] != AGENTS_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported agents format version {payload['version']}")
    policies: dict[str, AgentPolicy] = {}
    for name, entry in payload["agents"].items():
        s = entry["spec"]
        spec = AgentSpec(
            name=s["name"],
            kind=AgentKind(s["kind"]),
            service=Service(s["service"]) if s["service"] else None,
            goal_expectation=s["goal_expectation"],
            arity=int(s["arity"]),
        )
        policy = AgentPolicy(spec)
        for key, row in entry["q"].items():
            b, k, g = (int(x) for x in key.split(","))
            policy.q[(b, k, g)] = np.array(row, dtype=np.float64)
        policy.trained = True
        policies[name] = policy
    return payload["meta"], policies
