"""Supervisor model: priors, decisions, episode mechanics, training, formats."""

import math

import numpy as np
import pytest

from imfkit import nn
from imfkit.agents import LowerTrainConfig, derive_roster, train_lower
from imfkit.experiments import load_scenario, training_intents
from imfkit.netsim import cold_start
from imfkit.supervisor import (
    CONCESSION_THRESHOLD,
    CONCESSION_WARMUP_STEPS,
    GOAL_ENC_DIM,
    PRIOR_GAIN,
    URGENCY_CLIP,
    EpisodeRunner,
    MutationError,
    SupervisorModel,
    TrainConfig,
    decide_goals,
    load_supervisor,
    run_episode,
    save_supervisor,
    train_supervisor,
)
from imfkit.utility import UtilityForm


@pytest.fixture(scope="module")
def stack():
    sc = load_scenario("scenario1")
    ti = training_intents(sc)
    roster = derive_roster(sc.intents, sc.config)
    policies = train_lower(sc.config, ti, roster, LowerTrainConfig(episodes=30), seed=0)
    return sc, ti, roster, policies


def fresh_model(stack, ctx=True, seed=0):
    sc, ti, roster, _ = stack
    return SupervisorModel(roster, ti, sc.config, use_utility_context=ctx, seed=seed)


# --------------------------------------------------------------- goal prior

def test_goal_prior_balanced_pressure_is_neutral(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    # equal priorities at equal normalized deviations (1/4 of each range)
    # press identically, so every contrast cancels
    devs = {"qoe_cv": 1.0, "pl_urllc": 25.0, "pl_miot": 25.0}
    prior = model.goal_prior(ti, devs, step_index=10)
    assert all(not v.any() for v in prior.values())
    # and a fully satisfied system exerts nothing either
    sat = model.goal_prior(ti, {"qoe_cv": 0.0, "pl_urllc": 0.0, "pl_miot": 0.0},
                           step_index=10)
    assert all(not v.any() for v in sat.values())


def test_goal_prior_majority_head_pins_first_adequate_goal(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    # only qoe_cv unsatisfied, a quarter range out: pressures
    # (log1p 1/4, 0, 0), so its contrast is 2/3 log1p 1/4
    devs = {"qoe_cv": 1.0, "pl_urllc": 0.0, "pl_miot": 0.0}
    prior = model.goal_prior(ti, devs, step_index=10)
    p = prior["priority_cv"]
    c = PRIOR_GAIN * (2.0 / 3.0) * math.log1p(0.25)
    assert p[0] == pytest.approx(0.0, abs=1e-12)
    assert p[4] == pytest.approx(c)  # grid 3.286 covers target 3
    assert p[3] == pytest.approx(c * 0.75)  # approach 3/4
    assert int(np.argmax(p)) == 4
    assert p[4] > p[5] > p[7]  # overshoot discounted past the target
    # the satisfied heads sit only 1/3 log1p 1/4 = 0.07 below the pack: deep
    # inside the dead zone, so nothing is conceded for one modest shortfall
    assert not prior["priority_urllc"].any()
    assert not prior["priority_miot"].any()


def test_goal_prior_concessions_warm_up_but_claims_do_not(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    # a stringent head at top priority and full deviation presses 100, clips
    # at URGENCY_CLIP, and pushes the satisfied heads well past the dead zone
    hot = ti.with_form("qoe_cv", UtilityForm.QUADRATIC).with_priority("qoe_cv", 10.0)
    devs = {"qoe_cv": 4.0, "pl_urllc": 0.0, "pl_miot": 0.0}
    c = PRIOR_GAIN * (2.0 / 3.0) * math.log1p(URGENCY_CLIP)
    full = -PRIOR_GAIN * (math.log1p(URGENCY_CLIP) / 3.0 - CONCESSION_THRESHOLD)
    # step 0: the claim is already at full strength, the concession is off
    at0 = model.goal_prior(hot, devs, step_index=0)
    assert at0["priority_cv"][4] == pytest.approx(c)
    assert not at0["priority_urllc"].any()
    # half way through the warm-up the concession is at half strength
    at2 = model.goal_prior(hot, devs, step_index=2)
    assert at2["priority_urllc"][0] == pytest.approx(full * 2.0 / CONCESSION_WARMUP_STEPS)
    # past the warm-up it saturates at the overhang beyond the dead zone,
    # deepest on the most demanding goal and fading to nothing at the laxest
    at9 = model.goal_prior(hot, devs, step_index=9)
    assert at9["priority_urllc"][0] == pytest.approx(full)
    assert int(np.argmax(at9["priority_urllc"])) == 7


def test_goal_prior_priority_response_is_graded_not_saturating(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    devs = {"qoe_cv": 1.0, "pl_urllc": 25.0, "pl_miot": 25.0}
    boosted = model.goal_prior(ti.with_priority("qoe_cv", 9.0), devs, step_index=10)
    # all three sit a quarter range out: pressures (log1p 9/4, log1p 1/4,
    # log1p 1/4), so the boosted head claims 2/3 of the pressure gap
    gap = math.log1p(9.0 / 4.0) - math.log1p(0.25)
    want = PRIOR_GAIN * (2.0 / 3.0) * gap
    assert boosted["priority_cv"][4] == pytest.approx(want)
    # the others sit 1/3 of the gap = 0.32 below the pack: inside the dead zone
    assert not boosted["mbr_urllc"].any()
    # log compression: successive priority doublings keep adding bias instead
    # of saturating the way a raw-pressure share would
    gaps = []
    for lo, hi in [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]:
        a = model.goal_prior(ti.with_priority("qoe_cv", lo), devs, 10)["priority_cv"][4]
        b = model.goal_prior(ti.with_priority("qoe_cv", hi), devs, 10)["priority_cv"][4]
        gaps.append(b - a)
    assert gaps[0] == pytest.approx(
        PRIOR_GAIN * (2.0 / 3.0) * (math.log1p(0.5) - math.log1p(0.25))
    )
    assert gaps[0] < gaps[1] < gaps[2]  # no saturation over the sweep range


def test_goal_prior_clips_extreme_pressure(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    hot = ti.with_form("qoe_cv", UtilityForm.QUADRATIC).with_priority("qoe_cv", 10.0)
    devs = {"qoe_cv": 4.0, "pl_urllc": 25.0, "pl_miot": 25.0}
    p = model.goal_prior(hot, devs, step_index=10)["priority_cv"]
    # quadratic pressure at full deviation and priority 10 is 100, past the
    # clip; the linear others contribute 1/4 each
    want = PRIOR_GAIN * (2.0 / 3.0) * (math.log1p(URGENCY_CLIP) - math.log1p(0.25))
    assert p[4] == pytest.approx(want)


def test_goal_prior_satisfied_log_head_concedes(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    near = (
        ti.with_form("qoe_cv", UtilityForm.LOG)
        .with_priority("qoe_cv", 8.0)
        .with_priority("pl_urllc", 9.0)
        .with_priority("pl_miot", 9.0)
    )
    # within the relative floor the log form reports zero pressure, so even a
    # high-priority expectation stops defending its capacity once the rest of
    # the pack presses hard enough to clear the dead zone
    devs = {"qoe_cv": 5e-4, "pl_urllc": 90.0, "pl_miot": 90.0}
    p = model.goal_prior(near, devs, step_index=10)["priority_cv"]
    eff = 2.0 * math.log1p(9.0 * 0.9) / 3.0 - CONCESSION_THRESHOLD
    assert int(np.argmax(p)) == 0  # pushed to the least demanding goal
    assert p[4] == pytest.approx(-PRIOR_GAIN * eff)


def test_goal_prior_quantized_band_snaps_to_grid(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    # loss target 2% sits between grid goals 0 and 14.3: the only adequate
    # goal is 0, and it must not be discounted as overshoot
    devs = {"qoe_cv": 0.0, "pl_urllc": 31.33, "pl_miot": 0.0}
    p = model.goal_prior(ti, devs, step_index=10)["priority_urllc"]
    assert int(np.argmax(p)) == 0
    assert p[0] > p[1] > p[7]


def test_goal_prior_zero_for_the_ablated_model(stack):
    model = fresh_model(stack, ctx=False)
    sc, ti, roster, _ = stack
    devs = {"qoe_cv": 3.0, "pl_urllc": 50.0, "pl_miot": 50.0}
    prior = model.goal_prior(ti.with_priority("qoe_cv", 10.0), devs)
    assert all(not v.any() for v in prior.values())


# ------------------------------------------------------------ other encoders

def test_goal_encoding_pools_intents(stack):
    model = fresh_model(stack)
    sc, ti, roster, _ = stack
    enc = model.goal_encoding(ti)
    assert enc.data.shape == (GOAL_ENC_DIM,)
    want = [(0.5 + 0.02 + 0.04) / 3, -1.0 / 3, 1.0 / 3, 2.0 / 3, 0.0, 0.0]
    np.testing.assert_allclose(enc.data, want, atol=1e-12)


def test_utility_context_reacts_to_mutations(stack):
    sc, ti, roster, _ = stack
    model = fresh_model(stack)
    feats = {"qoe_cv": 0.25, "pl_urllc": 0.0, "pl_miot": 0.0}
    a = model.utility_context(ti, feats).data
    b = model.utility_context(ti.with_priority("qoe_cv", 8.0),
                              {**feats, "qoe_cv": 2.0}).data
    assert not np.allclose(a, b)
    blind = fresh_model(stack, ctx=False)
    za = blind.utility_context(ti, feats).data
    zb = blind.utility_context(ti.with_priority("qoe_cv", 8.0), {**feats, "qoe_cv": 2.0}).data
    assert not za.any() and not zb.any()


def test_model_rejects_roster_without_expectation(stack):
    sc, ti, roster, _ = stack
    from imfkit.utility import IntentSet

    missing = IntentSet([e for e in ti if e.id != "qoe_cv"])
    with pytest.raises(KeyError):
        SupervisorModel(roster, missing, sc.config)


# ----------------------------------------------------------------- decisions

def test_decide_goals_argmax_breaks_ties_low(stack):
    model = fresh_model(stack)
    logits = [nn.const(np.zeros(8)) for _ in model.roster]
    d = decide_goals(logits, model, "eval", None)
    assert all(idx == 0 for idx in d.goal_indices.values())
    spiked = [nn.const(np.eye(8)[3] * 5.0) for _ in model.roster]
    d = decide_goals(spiked, model, "eval", None)
    assert all(idx == 3 for idx in d.goal_indices.values())
    assert d.goal_values["priority_cv"] == pytest.approx(
        model.goal_grids["priority_cv"][3]
    )


def test_decide_goals_samples_in_train_mode(stack):
    model = fresh_model(stack)
    logits = [nn.const(np.zeros(8)) for _ in model.roster]
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(60):
        d = decide_goals(logits, model, "train", rng)
        seen.update(d.goal_indices.values())
    assert len(seen) == 8  # uniform logits explore the whole grid


# ------------------------------------------------------------------ episodes

def test_runner_respects_horizon_and_stops(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    runner = EpisodeRunner(model, policies, sc.config, sc.intents, horizon=4, seed=0)
    trace = runner.run()
    assert len(trace.steps) == 4
    assert [r.step for r in trace.steps] == [0, 1, 2, 3]
    with pytest.raises(RuntimeError):
        runner.step()


def test_runner_honors_initial_state(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    runner = EpisodeRunner(
        model, policies, sc.config, sc.intents, horizon=2, seed=0,
        initial_state=cold_start(sc.config),
    )
    assert all(v == 0 for v in runner.state.mbr_index.values())
    # the provided state is copied, not aliased
    seed_state = cold_start(sc.config)
    r2 = EpisodeRunner(model, policies, sc.config, sc.intents, horizon=2, seed=0,
                       initial_state=seed_state)
    r2.run()
    assert seed_state == cold_start(sc.config)


def test_runner_is_deterministic(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)

    def keys(seed):
        tr = run_episode(model, policies, sc.config, sc.intents, horizon=6, seed=seed)
        return [r.behavior_key() for r in tr.steps]

    assert keys((1, 2)) == keys((1, 2))
    assert keys((1, 2)) != keys((3, 4))


def test_eval_does_not_touch_model_or_policies(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    before = model.checksum()
    frozen = {n: p.checksum() for n, p in policies.items()}
    run_episode(model, policies, sc.config, sc.intents, horizon=5, seed=0)
    assert model.checksum() == before
    assert {n: p.checksum() for n, p in policies.items()} == frozen


def test_scheduled_mutation_lands_once_at_its_step(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    mutated = sc.intents.with_priority("qoe_cv", 8.0)
    trace = run_episode(
        model, policies, sc.config, sc.intents, horizon=6, seed=0,
        schedule=[(3, mutated)],
    )
    flags = [r.mutated for r in trace.steps]
    assert flags == [False, False, False, True, False, False]
    assert trace.steps[2].priorities["qoe_cv"] == 1.0
    assert trace.steps[3].priorities["qoe_cv"] == 8.0
    assert trace.steps[5].priorities["qoe_cv"] == 8.0


def test_mutation_validation(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    with pytest.raises(MutationError):
        EpisodeRunner(model, policies, sc.config, sc.intents, horizon=4, seed=0,
                      schedule=[(9, sc.intents)])
    runner = EpisodeRunner(model, policies, sc.config, sc.intents, horizon=4, seed=0)
    from imfkit.utility import IntentSet

    with pytest.raises(MutationError):
        runner.queue_intents(IntentSet([e for e in sc.intents if e.id != "qoe_cv"]))
    with pytest.raises(ValueError):
        EpisodeRunner(model, policies, sc.config, sc.intents, horizon=4, seed=0,
                      mode="dream")
    with pytest.raises(KeyError):
        EpisodeRunner(model, {}, sc.config, sc.intents, horizon=4, seed=0)


def test_mutation_changes_behavior_of_the_proposed_model(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    base = run_episode(model, policies, sc.config, sc.intents, horizon=6, seed=(5, 0))
    hot = sc.intents.with_priority("qoe_cv", 10.0).with_form("qoe_cv", UtilityForm.QUADRATIC)
    mut = run_episode(model, policies, sc.config, sc.intents, horizon=6, seed=(5, 0),
                      schedule=[(2, hot)])
    pre = [r.behavior_key() for r in base.steps[:2]]
    assert [r.behavior_key() for r in mut.steps[:2]] == pre
    assert [r.behavior_key() for r in mut.steps[2:]] != [r.behavior_key() for r in base.steps[2:]]


# ------------------------------------------------------------------ training

def test_training_smoke_and_freeze_guard(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    losses: list = []
    rets = train_supervisor(
        model, policies, sc.config, ti,
        TrainConfig(episodes=3, horizon=6), loss_log=losses,
    )
    assert len(rets) == 3 and all(np.isfinite(rets))
    assert len(losses) == 3
    assert set(losses[0]) == {"actor", "critic", "entropy"}
    assert all(p.trained for p in policies.values())


def test_training_moves_parameters(stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    before = model.checksum()
    train_supervisor(model, policies, sc.config, ti, TrainConfig(episodes=2, horizon=5))
    assert model.checksum() != before


# ---------------------------------------------------------------- save/load

def test_supervisor_checkpoint_roundtrip(tmp_path, stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    train_supervisor(model, policies, sc.config, ti, TrainConfig(episodes=2, horizon=4))
    path = tmp_path / "sup.ckpt"
    save_supervisor(str(path), model, {"label": "proposed"})
    loaded = load_supervisor(str(path), roster, ti, sc.config)
    assert loaded.checksum() == model.checksum()
    a = run_episode(model, policies, sc.config, sc.intents, horizon=5, seed=(2, 0))
    b = run_episode(loaded, policies, sc.config, sc.intents, horizon=5, seed=(2, 0))
    assert [r.behavior_key() for r in a.steps] == [r.behavior_key() for r in b.steps]


def test_supervisor_checkpoint_validation(tmp_path, stack):
    sc, ti, roster, policies = stack
    model = fresh_model(stack)
    path = tmp_path / "sup.ckpt"
    save_supervisor(str(path), model)
    with pytest.raises(ValueError):
        load_supervisor(str(path), roster[:3], ti, sc.config)
    nn.save_checkpoint(str(path), [("x", np.zeros(2))], {"kind": "agents"})
    with pytest.raises(ValueError):
        load_supervisor(str(path), roster, ti, sc.config)
