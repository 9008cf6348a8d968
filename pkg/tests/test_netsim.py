"""Slice simulator: allocation, KPIs, control application, invariants."""

import numpy as np
import pytest

from imfkit.netsim import (
    AutoScaleAction,
    ControlInputs,
    Move,
    SiteConfig,
    SliceConfig,
    SliceState,
    apply,
    cold_start,
    default_config,
    kpis,
    reset,
    snapshot_for,
    step,
)
from imfkit.utility import KpiKind, Service

CV, UR, MI = Service.CV, Service.URLLC, Service.MIOT


def scarce():
    return default_config(10.0)


# ------------------------------------------------------------------- reset

def test_reset_defaults():
    cfg = default_config()
    st = reset(cfg)
    assert st.priorities == {CV: 1, UR: 1, MI: 1}
    assert st.mbr_index == {CV: 2, UR: 2, MI: 2}  # middle of five levels
    for s in (CV, UR, MI):
        assert st.placement[s] == {"central": 1.0, "edge1": 0.0, "edge2": 0.0}
    assert all(v == 0 for v in st.autoscale.values())
    assert st.step_counter == 0


def test_reset_ample_kpis():
    # caps (6, 6, 6) all fit in 20: QoE 4, zero loss, 180 ms, power 400/560
    k = kpis(reset(default_config()), default_config())
    assert k.qoe_cv == pytest.approx(4.0)
    assert k.pl_urllc_pct == pytest.approx(0.0)
    assert k.pl_miot_pct == pytest.approx(0.0)
    assert k.latency_urllc_ms == pytest.approx(180.0)
    assert k.latency_miot_ms == pytest.approx(180.0)
    assert k.power_miot == pytest.approx(400.0 / 560.0)


def test_reset_scarce_kpis_proportional_share():
    # 10 Mbps over offered (8, 6, 6): everyone keeps half of demand
    k = kpis(reset(scarce()), scarce())
    assert k.qoe_cv == pytest.approx(3.0)
    assert k.pl_urllc_pct == pytest.approx(50.0)
    assert k.pl_miot_pct == pytest.approx(50.0)


def test_cold_start_is_tight():
    cfg = scarce()
    st = cold_start(cfg)
    assert all(v == 0 for v in st.priorities.values())
    assert all(v == 0 for v in st.mbr_index.values())
    k = kpis(st, cfg)
    # every cap at 2 Mbps: QoE 2, both loss services drop two thirds
    assert k.qoe_cv == pytest.approx(2.0)
    assert k.pl_urllc_pct == pytest.approx(200.0 / 3.0)
    assert k.pl_miot_pct == pytest.approx(200.0 / 3.0)
    # placements untouched, so latency and power match the clean reset
    assert k.latency_urllc_ms == pytest.approx(180.0)
    assert k.power_miot == pytest.approx(400.0 / 560.0)


# --------------------------------------------------------------- allocation

def test_strict_priority_preempts():
    cfg = scarce()
    st = apply(reset(cfg), ControlInputs(priorities={UR: 3, CV: 0, MI: 0}), cfg)
    k = kpis(st, cfg)
    assert k.pl_urllc_pct == pytest.approx(0.0)
    # leftovers split 4 over offered (8, 6)
    assert k.qoe_cv == pytest.approx(1.0 + 4.0 * (4.0 * 8.0 / 14.0) / 8.0)
    assert k.pl_miot_pct == pytest.approx(100.0 * (1.0 - (4.0 * 6.0 / 14.0) / 6.0))


def test_mbr_cap_frees_capacity_for_the_rest():
    # capacity 8, CV capped at 2: URLLC and mIoT re-split the freed pool and
    # both land at half of their demand
    cfg = default_config(8.0)
    st = apply(reset(cfg), ControlInputs(mbr={CV: 0, UR: 4, MI: 4}), cfg)
    k = kpis(st, cfg)
    assert k.qoe_cv == pytest.approx(2.0)
    assert k.pl_urllc_pct == pytest.approx(50.0)
    assert k.pl_miot_pct == pytest.approx(50.0)


def test_cap_redistribution_can_cascade():
    # capacity 11, caps (2, 4, 6): the CV cap frees enough that URLLC's share
    # rises past its own cap in the second round, and mIoT takes what is left
    cfg = default_config(11.0)
    st = apply(reset(cfg), ControlInputs(mbr={CV: 0, UR: 1, MI: 2}), cfg)
    k = kpis(st, cfg)
    assert k.qoe_cv == pytest.approx(2.0)
    assert k.pl_urllc_pct == pytest.approx(100.0 / 3.0)
    assert k.pl_miot_pct == pytest.approx(100.0 / 6.0)


def test_caps_bind_exactly_when_they_all_fit():
    cfg = default_config()
    st = apply(reset(cfg), ControlInputs(mbr={CV: 1, UR: 0, MI: 1}), cfg)
    k = kpis(st, cfg)
    # caps (4, 2, 4) under capacity 20: binding everywhere
    assert k.qoe_cv == pytest.approx(3.0)
    assert k.pl_urllc_pct == pytest.approx(200.0 / 3.0)
    assert k.pl_miot_pct == pytest.approx(100.0 / 3.0)


# ------------------------------------------------------- latency and power

def test_latency_follows_pods():
    cfg = default_config()
    st = reset(cfg)
    for level, want in ((0, 180.0), (1, 140.0), (2, 120.0), (3, 110.0)):
        st2 = apply(st, ControlInputs(autoscales=(AutoScaleAction(UR, "central", level),)), cfg)
        assert kpis(st2, cfg).latency_urllc_ms == pytest.approx(want)


def test_latency_mixes_placement():
    cfg = default_config()
    st = apply(reset(cfg), ControlInputs(moves=(Move(UR, "central", "edge1", 0.5),)), cfg)
    # half at central (180), half at edge1 (30 + 80)
    assert kpis(st, cfg).latency_urllc_ms == pytest.approx(145.0)


def test_power_tracks_miot_placement():
    cfg = default_config()
    st = apply(reset(cfg), ControlInputs(moves=(Move(MI, "central", "edge2", 1.0),)), cfg)
    assert kpis(st, cfg).power_miot == pytest.approx(1.0)
    st = apply(reset(cfg), ControlInputs(moves=(Move(MI, "central", "edge1", 0.5),)), cfg)
    assert kpis(st, cfg).power_miot == pytest.approx(440.0 / 560.0)


# ----------------------------------------------------------------- controls

def test_moves_clamp_at_available_mass():
    cfg = default_config()
    st = apply(reset(cfg), ControlInputs(moves=(Move(UR, "edge1", "edge2", 0.8),)), cfg)
    assert st.placement[UR] == reset(cfg).placement[UR]
    st = apply(
        reset(cfg),
        ControlInputs(moves=(Move(UR, "central", "edge1", 0.6), Move(UR, "central", "edge1", 0.6))),
        cfg,
    )
    assert st.placement[UR]["central"] == pytest.approx(0.0)
    assert st.placement[UR]["edge1"] == pytest.approx(1.0)


def test_apply_is_pure():
    cfg = default_config()
    before = reset(cfg)
    snap = before.copy()
    apply(before, ControlInputs(priorities={CV: 3}, mbr={MI: 0}), cfg)
    assert before == snap


def test_apply_rejects_bad_controls():
    cfg = default_config()
    st = reset(cfg)
    with pytest.raises(ValueError):
        apply(st, ControlInputs(priorities={CV: 4}), cfg)
    with pytest.raises(ValueError):
        apply(st, ControlInputs(mbr={CV: 5}), cfg)
    with pytest.raises(ValueError):
        apply(st, ControlInputs(moves=(Move(CV, "central", "central"),)), cfg)
    with pytest.raises(ValueError):
        apply(st, ControlInputs(moves=(Move(CV, "central", "edge1", 1.5),)), cfg)
    with pytest.raises(KeyError):
        apply(st, ControlInputs(moves=(Move(CV, "central", "nowhere"),)), cfg)
    with pytest.raises(ValueError):
        apply(st, ControlInputs(autoscales=(AutoScaleAction(CV, "central", 9),)), cfg)


def test_apply_rejects_service_outside_slice():
    cfg = default_config()
    two = SliceConfig(
        airlink_capacity_mbps=10.0,
        services={s: cfg.services[s] for s in (CV, UR)},
        sites=cfg.sites,
    )
    st = reset(two)
    with pytest.raises(KeyError):
        apply(st, ControlInputs(priorities={MI: 1}), two)


def test_step_only_bumps_the_counter():
    cfg = default_config()
    st = reset(cfg)
    st2, k = step(st, cfg)
    assert st2.step_counter == 1
    assert k == kpis(st, cfg)
    st2.step_counter = 0
    assert st2 == st


def test_kpi_vector_rejects_unknown_pair():
    k = kpis(reset(default_config()), default_config())
    with pytest.raises(KeyError):
        k.value(CV, KpiKind.LATENCY)


def test_config_validation():
    with pytest.raises(ValueError):
        default_config(0.0)
    with pytest.raises(ValueError):
        SiteConfig("x", "cloud", 10.0, 1.0)
    cfg = default_config()
    with pytest.raises(KeyError):
        cfg.site("nowhere")


# --------------------------------------------------------------- invariants

def random_state(cfg, rng):
    st = reset(cfg)
    controls = ControlInputs(
        priorities={s: int(rng.integers(cfg.priority_levels)) for s in cfg.services},
        mbr={s: int(rng.integers(len(cfg.mbr_levels_mbps))) for s in cfg.services},
        moves=tuple(
            Move(
                s,
                *(rng.choice([site.id for site in cfg.sites], size=2, replace=False)),
                float(rng.uniform(0.05, 1.0)),
            )
            for s in cfg.services
            if rng.random() < 0.7
        ),
        autoscales=tuple(
            AutoScaleAction(s, str(rng.choice([site.id for site in cfg.sites])),
                            int(rng.integers(len(cfg.autoscale_pods))))
            for s in cfg.services
            if rng.random() < 0.7
        ),
    )
    return apply(st, controls, cfg)


def test_kpi_invariants_hold_everywhere():
    rng = np.random.default_rng(11)
    for trial in range(1000):
        cfg = default_config(float(rng.choice([7.0, 10.0, 20.0])))
        st = random_state(cfg, rng)
        k = kpis(st, cfg)
        assert 1.0 <= k.qoe_cv <= 5.0
        assert 0.0 <= k.pl_urllc_pct <= 100.0
        assert 0.0 <= k.pl_miot_pct <= 100.0
        assert 0.0 <= k.power_miot <= 1.0
        # fastest possible: nearest site plus fully scaled compute
        floor = min(s.propagation_latency_ms for s in cfg.sites)
        floor += cfg.compute_latency_base_ms / max(cfg.autoscale_pods)
        assert k.latency_urllc_ms >= floor - 1e-9
        assert k.latency_miot_ms >= floor - 1e-9
        assert kpis(st.copy(), cfg) == k  # pure in the state


def test_allocation_conserves_capacity():
    rng = np.random.default_rng(13)
    from imfkit.netsim import _allocate

    for trial in range(1000):
        cfg = default_config(float(rng.choice([7.0, 10.0, 20.0])))
        st = random_state(cfg, rng)
        alloc = _allocate(st, cfg)
        total = sum(alloc.values())
        assert total <= cfg.airlink_capacity_mbps + 1e-9
        for s in cfg.services:
            cap = min(cfg.services[s].offered_mbps,
                      cfg.mbr_levels_mbps[st.mbr_index[s]])
            assert -1e-12 <= alloc[s] <= cap + 1e-9
        caps_total = sum(
            min(cfg.services[s].offered_mbps, cfg.mbr_levels_mbps[st.mbr_index[s]])
            for s in cfg.services
        )
        if caps_total <= cfg.airlink_capacity_mbps:
            assert total == pytest.approx(caps_total)


def test_priority_raise_never_hurts_the_raised_service():
    rng = np.random.default_rng(17)
    from imfkit.netsim import _allocate

    for trial in range(300):
        cfg = default_config(float(rng.choice([7.0, 10.0])))
        st = random_state(cfg, rng)
        svc = [CV, UR, MI][trial % 3]
        before = _allocate(st, cfg)[svc]
        raised = apply(
            st, ControlInputs(priorities={svc: cfg.priority_levels - 1}), cfg
        )
        if raised.priorities == st.priorities:
            continue
        assert _allocate(raised, cfg)[svc] >= before - 1e-9


def test_more_pods_never_slow_a_service_down():
    rng = np.random.default_rng(19)
    for trial in range(300):
        cfg = default_config()
        st = random_state(cfg, rng)
        svc = [UR, MI][trial % 2]
        before = kpis(st, cfg).value(svc, KpiKind.LATENCY)
        maxed = st
        for site in cfg.sites:
            maxed = apply(
                maxed,
                ControlInputs(autoscales=(AutoScaleAction(svc, site.id, len(cfg.autoscale_pods) - 1),)),
                cfg,
            )
        assert kpis(maxed, cfg).value(svc, KpiKind.LATENCY) <= before + 1e-9


def test_snapshot_for_maps_expectation_ids():
    from imfkit.experiments import load_scenario

    sc = load_scenario("exp5-table2")
    k = kpis(reset(sc.config), sc.config)
    snap = snapshot_for(sc.intents, k)
    assert set(snap) == {e.id for e in sc.intents}
    assert snap["qoe_cv"] == k.qoe_cv
    assert snap["power_miot"] == k.power_miot
