"""Recurrent supervisor that steers the lower agents by assigning sub-goals.

Per step the supervisor digests four things: per-agent embeddings (what each
agent is, via its capability vector, and what it just did, via its last
transition), a pooled encoding of the intent targets, the previous step's
scalar reward, and a pooled run-time utility context computed from the current
feature vector.  A fused state feeds a two-layer GRU; per-agent softmax heads
pick one sub-goal each from the 8-level grid, and a detached critic scores the
state for one-step advantages.

Two pathways make run-time intent mutations visible.  The learned one is the
utility context.  The structural one is a goal prior added to each head's
logits: each expectation's pressure (priority times its form-curved,
range-normalized deviation) is log-compressed and centered against the mean,
so a head pressing above the pack is pulled toward the grid goal covering its
target while heads pressed well below the pack are pushed toward conceding
goals that free capacity.  Log compression keeps the response graded over the
whole 1..10 priority range; a dead zone keeps modest imbalance from conceding
anything, and concessions fade in over the first few steps so nothing yields
before contention is real.  The pull directions are fixed by construction,
only their occasion and strength follow the live utility definition.  With
the pathway disabled (the ablation baseline) the context is a zero vector and
the prior is off: the policy can still feel mutations faintly through the
reward observation, but it can never read priorities or penalty forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import netsim, nn
from .agents import (
    GOAL_LEVELS,
    AgentPolicy,
    AgentSpec,
    Observation,
    Transition,
    CAPABILITY_DIM,
    controls_for,
    goal_grid,
    goal_reward,
    knob_code_range,
    observe,
    randomized_start,
)
from .netsim import ControlInputs, SliceConfig
from .utility import (
    DeviationMode,
    Direction,
    IntentSet,
    KpiKind,
    UtilityForm,
    deviation,
    feature_vector,
    step_reward,
    urgency,
)

TRANSITION_DIM = 5  # kpi, knob, step, action, goal: all normalized to [0, 1]
GOAL_ENC_DIM = 6  # normalized target, direction sign, KPI-kind one-hot
CONTEXT_IN_DIM = 8  # feature value, KPI-kind one-hot, form one-hot
PRIOR_GAIN = 10.0  # weight of the goal prior on head logits
URGENCY_CLIP = 50.0  # a stringent form at top priority and full deviation
# presses 100; cap each term so one head cannot drown out the whole pack
OVERSHOOT_WEIGHT = 0.5  # discount on goals more ambitious than the target needs
# concessions (negative prior) fade in over the first few steps: yielding
# before contention has shown up only delays cheap wins
CONCESSION_WARMUP_STEPS = 4
# dead zone before conceding: a head yields only once it is pressed this far
# below the pack (in log-urgency units), and the yield deepens smoothly past
# the edge; modest imbalance on an uncontended slice concedes nothing
CONCESSION_THRESHOLD = 0.9
REWARD_OBS_SCALE = 50.0  # previous reward enters the observation divided by this
REWARD_OBS_CLIP = 5.0  # and clipped, so a catastrophic step cannot blow up the GRU

_KIND_ORDER = (KpiKind.QOE, KpiKind.PACKET_LOSS, KpiKind.LATENCY, KpiKind.POWER)
_FORM_ORDER = (UtilityForm.LINEAR, UtilityForm.LOG, UtilityForm.QUADRATIC)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    horizon: int = 40
    gamma: float = 0.95
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_weight: float = 0.01
    # Z mixes percent, millisecond and score units; rewards are divided by this
    # inside the loss only, so advantage magnitudes stay O(1).
    reward_scale: float = 50.0
    # frozen lower-level policies keep a small exploration floor during
    # supervisor rollouts and evaluation
    agent_eps: float = 0.05
    # fraction of training episodes that begin from a scrambled slice state
    # rather than the clean reset; widens deviation/feature coverage so the
    # context pathway sees more than the reset transient
    randomized_start_prob: float = 0.5
    seed: int = 0


class SupervisorModel:
    """Networks plus the roster/intent wiring they were built for."""

    def __init__(
        self,
        roster: Sequence[AgentSpec],
        intents: IntentSet,
        config: SliceConfig,
        use_utility_context: bool = True,
        hidden: int = 64,
        context_hidden: int = 32,
        seed: int = 0,
    ):
        self.roster = list(roster)
        self.config = config
        self.use_utility_context = use_utility_context
        self.hidden = hidden
        self.context_hidden = context_hidden
        self.seed = seed
        for spec in self.roster:
            if spec.goal_expectation not in intents:
                raise KeyError(
                    f"roster agent {spec.name} needs expectation {spec.goal_expectation!r}"
                )
        self.goal_grids = {
            spec.name: goal_grid(intents[spec.goal_expectation]) for spec in self.roster
        }
        rng = nn.seed_rng(seed)
        self.encoder = nn.DenseBlock("encoder", [CAPABILITY_DIM, hidden, hidden], rng)
        self.merger = nn.DenseBlock("merger", [hidden + TRANSITION_DIM, hidden, hidden], rng)
        # relu hidden + identity output: the context must keep responding as
        # priorities scale features well past the training range, and a tanh
        # stack would clamp every priority above ~2 to the same ceiling
        self.utility_net = nn.DenseBlock(
            "utility_net", [CONTEXT_IN_DIM, context_hidden, context_hidden], rng,
            out_activation="identity", hidden_activation="relu",
        )
        # +1: previous step's scaled reward rides along as an observation
        self.fusion = nn.DenseBlock(
            "fusion", [hidden + GOAL_ENC_DIM + 1 + context_hidden, hidden, hidden, hidden], rng
        )
        self.gru1 = nn.GruCell("gru1", hidden, hidden, rng)
        self.gru2 = nn.GruCell("gru2", hidden, hidden, rng)
        self.heads = [
            nn.DenseBlock(
                f"head_{spec.name}", [hidden, GOAL_LEVELS], rng,
                out_activation="identity",
            )
            for spec in self.roster
        ]
        self.critic = nn.DenseBlock("critic", [2 * hidden, hidden, 1], rng, out_activation="identity")
        # capability encodings never change; cache the input vectors
        self._caps = {spec.name: nn.const(spec.capability_vector()) for spec in self.roster}

    # -- parameter plumbing ------------------------------------------------

    def named_params(self) -> list[tuple[str, nn.Tensor]]:
        out: list[tuple[str, nn.Tensor]] = []
        for block in [self.encoder, self.merger, self.utility_net, self.fusion]:
            out.extend(block.named_params())
        out.extend(self.gru1.named_params())
        out.extend(self.gru2.named_params())
        for head in self.heads:
            out.extend(head.named_params())
        out.extend(self.critic.named_params())
        return out

    def actor_params(self) -> list[nn.Tensor]:
        return [p for name, p in self.named_params() if not name.startswith("critic.")]

    def critic_params(self) -> list[nn.Tensor]:
        return [p for name, p in self.named_params() if name.startswith("critic.")]

    def checksum(self) -> str:
        return nn.params_checksum([(n, p.data) for n, p in self.named_params()])

    # -- forward pieces ----------------------------------------------------

    def utility_embeddings(
        self, intents: IntentSet, features: Mapping[str, float]
    ) -> dict[str, nn.Tensor]:
        """Per-expectation run-time utility encodings; zero vectors when disabled.

        The raw feature is log-compressed on the way in: priorities multiply
        features, and log1p turns that into graded, non-saturating shifts over
        the whole 1..10 priority range.
        """
        if not self.use_utility_context:
            zero = nn.const(np.zeros(self.context_hidden))
            return {e.id: zero for e in intents}
        out: dict[str, nn.Tensor] = {}
        for e in intents:
            kind_vec = [1.0 if e.kpi is k else 0.0 for k in _KIND_ORDER]
            form_vec = [1.0 if e.form is f else 0.0 for f in _FORM_ORDER]
            x = nn.const(np.array([math.log1p(features[e.id])] + kind_vec + form_vec))
            out[e.id] = self.utility_net(x)
        return out

    def utility_context(self, intents: IntentSet, features: Mapping[str, float]) -> nn.Tensor:
        """Pooled run-time utility context; zero vector when disabled."""
        embs = self.utility_embeddings(intents, features)
        return nn.mean_vectors([embs[e.id] for e in intents])

    def goal_encoding(self, intents: IntentSet) -> nn.Tensor:
        """Pooled static description of what the intent set asks for."""
        rows = []
        for e in intents:
            t_norm = (e.target - e.range_lo) / e.range_width
            sign = 1.0 if e.direction is Direction.AT_LEAST else -1.0
            kind_vec = [1.0 if e.kpi is k else 0.0 for k in _KIND_ORDER]
            rows.append(np.array([t_norm, sign] + kind_vec))
        return nn.const(np.mean(rows, axis=0))

    def embed_agent(self, spec: AgentSpec, transition: Transition, horizon: int) -> nn.Tensor:
        """Merge who the agent is with what it last did."""
        e = self.encoder(self._caps[spec.name])
        exp_range = knob_code_range(spec, self.config)
        obs = transition.obs
        numeric = np.array(
            [
                obs.kpi_value,  # already normalized by the runner
                obs.knob_code / max(1, exp_range - 1),
                min(1.0, obs.step_index / max(1, horizon)),
                transition.action / max(1, spec.arity - 1),
                transition.goal_idx / (GOAL_LEVELS - 1),
            ]
        )
        return self.merger(nn.concat([e, nn.const(numeric)]))

    def fuse(
        self,
        embeddings: Sequence[nn.Tensor],
        goal_enc: nn.Tensor,
        context: nn.Tensor,
        reward_obs: float = 0.0,
    ) -> nn.Tensor:
        r = nn.const(np.array([reward_obs]))
        return self.fusion(nn.concat([nn.mean_vectors(embeddings), goal_enc, r, context]))

    def advance(
        self, fused: nn.Tensor, h1: nn.Tensor, h2: nn.Tensor
    ) -> tuple[nn.Tensor, nn.Tensor]:
        nh1 = self.gru1(fused, h1)
        nh2 = self.gru2(nh1, h2)
        return nh1, nh2

    def goal_prior(
        self, intents: IntentSet, deviations: Mapping[str, float], step_index: int = 0
    ) -> dict[str, np.ndarray]:
        """Per-agent logit bias from relative log-compressed pressure.

        Each expectation's pressure (its urgency: priority times the
        form-curved, range-normalized deviation) is log-compressed and
        centered against the mean over expectations.  Log compression makes
        the contrast roughly additive in log priority, so the response to
        raising a priority 1..10 stays graded instead of saturating at the
        first doubling.  A head whose expectation presses above the mean is
        pushed toward the grid goal covering its target; one pressed more
        than CONCESSION_THRESHOLD below the mean is pushed toward conceding
        goals, freeing capacity for the contested intents.  The threshold is
        a dead zone: modest imbalance concedes nothing, and past the edge the
        yield deepens smoothly.  Concessions also fade in over
        CONCESSION_WARMUP_STEPS so an expectation never yields before the
        contention is real; claims apply from step zero.  Satisfied
        expectations press zero, so the bias tracks the live deviation
        profile as much as the live priorities: whoever is furthest behind
        for its priority gets the pull.  Zero everywhere for the
        context-ablated baseline.
        """
        zeros = {spec.name: np.zeros(GOAL_LEVELS) for spec in self.roster}
        if not self.use_utility_context:
            return zeros
        pressure = {
            e.id: math.log1p(min(URGENCY_CLIP, urgency(e, deviations[e.id])))
            for e in intents
        }
        mean_pressure = sum(pressure.values()) / len(pressure)
        concede_scale = min(1.0, step_index / CONCESSION_WARMUP_STEPS)
        out: dict[str, np.ndarray] = {}
        for spec in self.roster:
            e = intents[spec.goal_expectation]
            contrast = pressure[e.id] - mean_pressure
            if contrast < 0.0:
                contrast = min(0.0, contrast + CONCESSION_THRESHOLD) * concede_scale
            grid = self.goal_grids[spec.name]
            # demand axis: 0 = least resource-hungry goal, 1 = most
            if e.direction is Direction.AT_LEAST:
                demand = (grid - e.range_lo) / e.range_width
                d_target = (e.target - e.range_lo) / e.range_width
            else:
                demand = (e.range_hi - grid) / e.range_width
                d_target = (e.range_hi - e.target) / e.range_width
            if d_target <= 0.0:
                out[spec.name] = np.zeros(GOAL_LEVELS)
                continue
            # snap up to the first grid goal that actually covers the target,
            # else quantization would rate every adequate goal as overshoot
            adequate = demand[demand >= d_target - 1e-12]
            d_target = float(adequate.min()) if adequate.size else 1.0
            approach = np.minimum(demand, d_target) / d_target
            bias = contrast * approach
            if contrast > 0.0:
                overshoot = np.maximum(demand - d_target, 0.0) / max(1.0 - d_target, 1e-9)
                bias = bias - OVERSHOOT_WEIGHT * contrast * overshoot
            out[spec.name] = PRIOR_GAIN * bias
        return out

    def head_logits(
        self,
        h2: nn.Tensor,
        intents: IntentSet,
        deviations: Mapping[str, float],
        step_index: int = 0,
    ) -> list[nn.Tensor]:
        prior = self.goal_prior(intents, deviations, step_index)
        return [
            nn.add(head(h2), nn.const(prior[spec.name]))
            for spec, head in zip(self.roster, self.heads)
        ]

    def value(self, fused: nn.Tensor, h2: nn.Tensor) -> nn.Tensor:
        # critic reads a detached copy: value-loss gradients stay inside the
        # critic block, the trunk trains through the actor path only
        state = np.concatenate([fused.data, h2.data])
        return nn.vsum(self.critic(nn.const(state)))


@dataclass(frozen=True)
class GoalDecision:
    goal_indices: dict[str, int]
    goal_values: dict[str, float]


def decide_goals(
    logits: Sequence[nn.Tensor],
    model: SupervisorModel,
    mode: str,
    rng: np.random.Generator | None,
) -> GoalDecision:
    """Pick one sub-goal per agent: sampled in training, argmax in evaluation.

    Argmax ties resolve to the lowest grid index.
    """
    indices: dict[str, int] = {}
    values: dict[str, float] = {}
    for spec, lg in zip(model.roster, logits):
        if mode == "train":
            probs = nn.softmax_probs(lg.data)
            idx = int(rng.choice(GOAL_LEVELS, p=probs))
        else:
            idx = int(np.argmax(lg.data))
        indices[spec.name] = idx
        values[spec.name] = float(model.goal_grids[spec.name][idx])
    return GoalDecision(indices, values)


# ------------------------------------------------------------------ episodes

@dataclass
class StepRecord:
    step: int
    kpis: netsim.KpiVector
    reward: float
    features: dict[str, float]
    deviations: dict[str, float]
    goal_indices: dict[str, int]
    goal_values: dict[str, float]
    actions: dict[str, int]
    priorities: dict[str, float]
    forms: dict[str, str]
    # True when a queued intent mutation landed at this step's boundary
    mutated: bool = False

    def behavior_key(self) -> tuple:
        """Everything the policy did and saw, minus utility telemetry."""
        return (
            self.step,
            tuple(sorted(self.goal_indices.items())),
            tuple(sorted(self.actions.items())),
            self.kpis,
        )


@dataclass
class EpisodeTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def kpi_series(self, pick: Callable[[netsim.KpiVector], float]) -> list[float]:
        return [pick(rec.kpis) for rec in self.steps]

    def rewards(self) -> list[float]:
        return [rec.reward for rec in self.steps]


class MutationError(ValueError):
    pass


class EpisodeRunner:
    """Drives one episode step by step; the gateway reuses it for sessions.

    Intent mutations are queued and applied atomically at the next step
    boundary, before features are computed, so a step never mixes two utility
    definitions.
    """

    def __init__(
        self,
        model: SupervisorModel,
        policies: Mapping[str, AgentPolicy],
        config: SliceConfig,
        intents: IntentSet,
        horizon: int,
        seed: int = 0,
        mode: str = "eval",
        deviation_mode: DeviationMode = DeviationMode.SHORTFALL,
        agent_eps: float = 0.05,
        schedule: Sequence[tuple[int, IntentSet]] = (),
        initial_state: netsim.SliceState | None = None,
    ):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        for spec in model.roster:
            if spec.name not in policies:
                raise KeyError(f"missing lower policy for agent {spec.name!r}")
        for at_step, _ in schedule:
            if not 0 <= at_step < horizon:
                raise MutationError(f"scheduled mutation step {at_step} outside horizon {horizon}")
        self.model = model
        self.policies = policies
        self.config = config
        self.intents = intents
        self.horizon = horizon
        self.mode = mode
        self.deviation_mode = deviation_mode
        self.agent_eps = agent_eps
        self._schedule = sorted(schedule, key=lambda pair: pair[0])
        self._pending: IntentSet | None = None
        seed_key = seed if isinstance(seed, tuple) else (seed,)
        self._goal_rng = np.random.default_rng((*seed_key, 0))
        self._agent_rng = np.random.default_rng((*seed_key, 1))
        self.state = initial_state.copy() if initial_state is not None else netsim.reset(config)
        self._vec = netsim.kpis(self.state, config)
        self.h1 = nn.const(np.zeros(model.hidden))
        self.h2 = nn.const(np.zeros(model.hidden))
        self._last_reward = 0.0
        self.t = 0
        self.trace = EpisodeTrace()
        # per-step graph nodes kept only in train mode
        self.graph: list[dict] = []
        self._last_transition: dict[str, Transition] = {}
        for spec in model.roster:
            exp = intents[spec.goal_expectation]
            kpi_value = self._vec.value(exp.service, exp.kpi)
            obs = observe(self.state, config, spec, exp, kpi_value, 0)
            mid = GOAL_LEVELS // 2
            self._last_transition[spec.name] = Transition(
                obs=Observation(
                    kpi_value=self._norm(exp, kpi_value),
                    bucket=obs.bucket,
                    knob_code=obs.knob_code,
                    step_index=0,
                ),
                action=0, goal_idx=mid,
                goal_value=float(goal_grid(exp)[mid]), reward=0.0,
            )

    @staticmethod
    def _norm(exp, value: float) -> float:
        rel = (value - exp.range_lo) / exp.range_width
        return min(1.0, max(0.0, rel))

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def queue_intents(self, intents: IntentSet) -> None:
        """Stage a replacement intent set; it lands at the next step boundary."""
        for spec in self.model.roster:
            if spec.goal_expectation not in intents:
                raise MutationError(
                    f"mutated intent set dropped expectation {spec.goal_expectation!r}"
                )
        self._pending = intents

    def step(self) -> StepRecord:
        if self.done:
            raise RuntimeError("episode already finished")
        for at_step, iset in self._schedule:
            if at_step == self.t:
                self.queue_intents(iset)
        applied_mutation = False
        if self._pending is not None:
            self.intents = self._pending
            self._pending = None
            applied_mutation = True

        intents = self.intents
        model = self.model
        snapshot = netsim.snapshot_for(intents, self._vec)
        features = feature_vector(intents, snapshot, self.deviation_mode)
        pre_devs = {
            e.id: deviation(e, snapshot[e.id], self.deviation_mode) for e in intents
        }
        context = model.utility_context(intents, features)
        goal_enc = model.goal_encoding(intents)
        embeddings = [
            model.embed_agent(spec, self._last_transition[spec.name], self.horizon)
            for spec in model.roster
        ]
        reward_obs = max(-REWARD_OBS_CLIP, self._last_reward / REWARD_OBS_SCALE)
        fused = model.fuse(embeddings, goal_enc, context, reward_obs)
        self.h1, self.h2 = model.advance(fused, self.h1, self.h2)
        logits = model.head_logits(self.h2, intents, pre_devs, self.t)
        decision = decide_goals(logits, model, self.mode, self._goal_rng)

        merged_priorities: dict = {}
        merged_mbr: dict = {}
        moves: list = []
        autoscales: list = []
        actions: dict[str, int] = {}
        observations: dict[str, Observation] = {}
        for spec in model.roster:
            exp = intents[spec.goal_expectation]
            kpi_value = self._vec.value(exp.service, exp.kpi)
            obs = observe(self.state, self.config, spec, exp, kpi_value, self.t)
            observations[spec.name] = obs
            action = self.policies[spec.name].act(
                obs, decision.goal_indices[spec.name], self.agent_eps, self._agent_rng
            )
            actions[spec.name] = action
            controls = controls_for(spec, action, self.config)
            merged_priorities.update(controls.priorities)
            merged_mbr.update(controls.mbr)
            moves.extend(controls.moves)
            autoscales.extend(controls.autoscales)

        self.state = netsim.apply(
            self.state,
            ControlInputs(
                priorities=merged_priorities,
                mbr=merged_mbr,
                moves=tuple(moves),
                autoscales=tuple(autoscales),
            ),
            self.config,
        )
        self.state, self._vec = netsim.step(self.state, self.config)

        post_snapshot = netsim.snapshot_for(intents, self._vec)
        reward = step_reward(intents, post_snapshot, self.deviation_mode)
        self._last_reward = reward

        for spec in model.roster:
            exp = intents[spec.goal_expectation]
            kpi_value = self._vec.value(exp.service, exp.kpi)
            gr = goal_reward(exp, kpi_value, decision.goal_values[spec.name])
            obs = observations[spec.name]
            self._last_transition[spec.name] = Transition(
                obs=Observation(
                    kpi_value=self._norm(exp, obs.kpi_value),
                    bucket=obs.bucket,
                    knob_code=obs.knob_code,
                    step_index=obs.step_index,
                ),
                action=actions[spec.name],
                goal_idx=decision.goal_indices[spec.name],
                goal_value=decision.goal_values[spec.name],
                reward=gr,
            )

        if self.mode == "train":
            value = model.value(fused, self.h2)
            self.graph.append(
                {
                    "logps": [nn.log_prob(lg, decision.goal_indices[spec.name])
                              for spec, lg in zip(model.roster, logits)],
                    "entropies": [nn.entropy(lg) for lg in logits],
                    "value": value,
                    "reward": reward,
                }
            )

        record = StepRecord(
            step=self.t,
            kpis=self._vec,
            reward=reward,
            features=dict(features),
            deviations={
                e.id: deviation(e, post_snapshot[e.id], self.deviation_mode) for e in intents
            },
            goal_indices=dict(decision.goal_indices),
            goal_values=dict(decision.goal_values),
            actions=actions,
            priorities={e.id: e.priority for e in intents},
            forms={e.id: e.form.value for e in intents},
            mutated=applied_mutation,
        )
        self.trace.steps.append(record)
        self.t += 1
        return record

    def run(self) -> EpisodeTrace:
        while not self.done:
            self.step()
        return self.trace


def run_episode(
    model: SupervisorModel,
    policies: Mapping[str, AgentPolicy],
    config: SliceConfig,
    intents: IntentSet,
    horizon: int = 20,
    seed: int = 0,
    schedule: Sequence[tuple[int, IntentSet]] = (),
    deviation_mode: DeviationMode = DeviationMode.SHORTFALL,
    agent_eps: float = 0.05,
    initial_state: netsim.SliceState | None = None,
) -> EpisodeTrace:
    """Evaluation rollout: argmax goals, frozen agents, optional mutations."""
    runner = EpisodeRunner(
        model, policies, config, intents, horizon, seed,
        mode="eval", deviation_mode=deviation_mode, agent_eps=agent_eps, schedule=schedule,
        initial_state=initial_state,
    )
    return runner.run()


def train_supervisor(
    model: SupervisorModel,
    policies: Mapping[str, AgentPolicy],
    config: SliceConfig,
    intents: IntentSet,
    train_cfg: TrainConfig = TrainConfig(),
    deviation_mode: DeviationMode = DeviationMode.SHORTFALL,
    progress: Callable[[int, float], None] | None = None,
    loss_log: list | None = None,
) -> list[float]:
    """A2C over whole episodes; returns the per-episode reward sums (unscaled).

    One optimizer step per episode: advantages come from the detached critic,
    the actor descends -logpi * advantage with an entropy bonus, the critic
    descends squared one-step TD error.  Gradients flow through the full
    recurrence (backprop through time over the episode).

    When loss_log is a list, a per-episode dict of loss terms is appended:
    actor surrogate, critic squared error, and mean head entropy.
    """
    frozen = {name: p.checksum() for name, p in policies.items()}
    adam_actor = nn.Adam(model.actor_params(), lr=train_cfg.actor_lr)
    adam_critic = nn.Adam(model.critic_params(), lr=train_cfg.critic_lr)
    returns: list[float] = []
    for episode in range(train_cfg.episodes):
        start_rng = np.random.default_rng((train_cfg.seed, episode + 1, 2))
        if start_rng.random() < train_cfg.randomized_start_prob:
            start = randomized_start(config, start_rng)
        else:
            # matches the evaluation convention: drive up from under-provisioned
            start = netsim.cold_start(config)
        runner = EpisodeRunner(
            model, policies, config, intents, train_cfg.horizon,
            seed=(train_cfg.seed, episode + 1),
            mode="train", deviation_mode=deviation_mode, agent_eps=train_cfg.agent_eps,
            initial_state=start,
        )
        runner.run()
        graph = runner.graph
        n = len(graph)
        values = [float(g["value"].data) for g in graph]
        rewards = [g["reward"] / train_cfg.reward_scale for g in graph]
        advantages = []
        targets = []
        for t in range(n):
            v_next = values[t + 1] if t + 1 < n else 0.0
            target = rewards[t] + train_cfg.gamma * v_next
            targets.append(target)
            advantages.append(target - values[t])

        loss_terms: list[nn.Tensor] = []
        for t, g in enumerate(graph):
            adv = advantages[t]
            for lp in g["logps"]:
                loss_terms.append(nn.scale(lp, -adv / n))
            for h in g["entropies"]:
                loss_terms.append(nn.scale(h, -train_cfg.entropy_weight / n))
            err = nn.add_const(g["value"], -targets[t])
            loss_terms.append(nn.scale(nn.mul(err, err), 1.0 / n))
        loss = loss_terms[0]
        for term in loss_terms[1:]:
            loss = nn.add(loss, term)
        if not np.all(np.isfinite(loss.data)):
            raise RuntimeError(
                f"non-finite training loss at episode {episode}: "
                f"loss={loss.data!r} return={sum(g['reward'] for g in graph):.3f}"
            )
        adam_actor.zero_grad()
        adam_critic.zero_grad()
        nn.backward(loss)
        adam_actor.step()
        adam_critic.step()
        adam_actor.zero_grad()
        adam_critic.zero_grad()

        ep_return = float(sum(g["reward"] for g in graph))
        returns.append(ep_return)
        if loss_log is not None:
            actor = sum(
                -advantages[t] / n * float(lp.data)
                for t, g in enumerate(graph) for lp in g["logps"]
            )
            critic = sum(
                (float(g["value"].data) - targets[t]) ** 2 / n
                for t, g in enumerate(graph)
            )
            ent = float(np.mean([float(h.data) for g in graph for h in g["entropies"]]))
            loss_log.append(
                {"actor": float(actor), "critic": float(critic), "entropy": ent}
            )
        if progress is not None:
            progress(episode, ep_return)
    for name, p in policies.items():
        if p.checksum() != frozen[name]:
            raise RuntimeError(f"lower policy {name} changed during supervisor training")
    return returns


# ---------------------------------------------------------------- save/load

def save_supervisor(path: str, model: SupervisorModel, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "supervisor",
        "use_utility_context": model.use_utility_context,
        "hidden": model.hidden,
        "context_hidden": model.context_hidden,
        "seed": model.seed,
        "roster": [spec.name for spec in model.roster],
    }
    if extra_meta:
        meta.update(extra_meta)
    nn.save_checkpoint(path, [(n, p.data) for n, p in model.named_params()], meta)


def load_supervisor(
    path: str,
    roster: Sequence[AgentSpec],
    intents: IntentSet,
    config: SliceConfig,
) -> SupervisorModel:
    meta, params = nn.load_checkpoint(path)
    if meta.get("kind") != "supervisor":
        raise ValueError(f"{path}: not a supervisor checkpoint")
    if meta["roster"] != [spec.name for spec in roster]:
        raise ValueError(
            f"{path}: checkpoint roster {meta['roster']} does not match scenario roster"
        )
    model = SupervisorModel(
        roster, intents, config,
        use_utility_context=meta["use_utility_context"],
        hidden=meta["hidden"], context_hidden=meta["context_hidden"], seed=meta["seed"],
    )
    for name, p in model.named_params():
        if name not in params:
            raise ValueError(f"{path}: checkpoint missing parameter {name}")
        if params[name].shape != p.data.shape:
            raise ValueError(f"{path}: parameter {name} has shape {params[name].shape}, "
                             f"expected {p.data.shape}")
        p.data = params[name]
    return model
