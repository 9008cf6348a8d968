"""Scenario loading, evaluation rollouts and the analysis that reads them.

A scenario is a TOML file with [slice], [[expectations]], optional [[sweep]]
and [[schedule]] sections: the slice profile, the intent set, priority sweeps
to run at evaluation time, and scripted mid-episode intent mutations.  The
shipped scenarios live next to this module and can be addressed by bare name.

Evaluation is reproducible end to end: every episode's RNG streams derive
from the scenario's noise key (slice profile + horizon, deliberately not the
intents) plus the seed.  The same scenario file always replays the same
traces, and two sweep points share their exploration noise exactly, so a
sweep is a paired comparison: differences come from the intent content, not
from luckier dice.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import netsim
from .agents import AgentPolicy, AgentSpec, derive_roster
from .netsim import ServiceConfig, SiteConfig, SliceConfig
from .supervisor import EpisodeTrace, SupervisorModel, run_episode
from .utility import (
    DeviationMode,
    Direction,
    Expectation,
    IntentSet,
    KpiKind,
    Service,
    UtilityForm,
    deviation,
)


# ------------------------------------------------------------------ loading

@dataclass(frozen=True)
class SweepSpec:
    """One evaluation-time priority sweep over a single expectation."""

    expectation: str
    priorities: tuple[float, ...] = (1.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    # form assignment applied to every expectation at evaluation time:
    # "as_declared" keeps the scenario's forms
    forms: str = "as_declared"


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SliceConfig
    intents: IntentSet
    horizon: int
    seeds: tuple[int, ...]
    deviation_mode: DeviationMode
    agent_eps: float
    sweeps: tuple[SweepSpec, ...] = ()
    schedule: tuple[tuple[int, IntentSet], ...] = ()

    def roster(self) -> list[AgentSpec]:
        return derive_roster(self.intents, self.config)

    def _config_payload(self) -> dict:
        return {
            "capacity": self.config.airlink_capacity_mbps,
            "compute": self.config.compute_latency_base_ms,
            "mbr": list(self.config.mbr_levels_mbps),
            "pods": list(self.config.autoscale_pods),
            "sites": [
                [s.id, s.kind, s.propagation_latency_ms, s.per_ue_power]
                for s in self.config.sites
            ],
            "services": {
                s.value: [c.ue_count, c.per_ue_demand_mbps]
                for s, c in self.config.services.items()
            },
            "horizon": self.horizon,
            "deviation_mode": self.deviation_mode.value,
        }

    def digest(self) -> int:
        """Stable content digest identifying the full scenario definition."""
        payload = self._config_payload()
        payload["expectations"] = [_expectation_payload(e) for e in self.intents]
        payload["schedule"] = [
            [step, [_expectation_payload(e) for e in iset]] for step, iset in self.schedule
        ]
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")

    def noise_key(self) -> int:
        """Digest of the simulation setup only, excluding the intent set.

        Evaluation RNG streams derive from this, so runs that differ only in
        priorities or penalty forms (sweep points, mutated variants) see
        identical exploration noise and compare as paired samples.
        """
        blob = json.dumps(self._config_payload(), sort_keys=True).encode("utf-8")
        return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")

    def with_intents(self, intents: IntentSet) -> "Scenario":
        return replace(self, intents=intents)


def _expectation_payload(e: Expectation) -> list:
    return [e.id, e.service.value, e.kpi.value, e.target, e.direction.value,
            e.range_lo, e.range_hi, e.form.value, e.priority]


def _parse_expectation(raw: Mapping) -> Expectation:
    lo, hi = raw["range"]
    return Expectation(
        id=raw["id"],
        service=Service(raw["service"]),
        kpi=KpiKind(raw["kpi"]),
        target=float(raw["target"]),
        direction=Direction(raw["direction"]),
        range_lo=float(lo),
        range_hi=float(hi),
        form=UtilityForm(raw.get("form", "linear")),
        priority=float(raw.get("priority", 1.0)),
    )


def _parse_slice(raw: Mapping) -> SliceConfig:
    base = netsim.default_config(float(raw["airlink_capacity_mbps"]))
    kwargs: dict = {}
    if "compute_latency_base_ms" in raw:
        kwargs["compute_latency_base_ms"] = float(raw["compute_latency_base_ms"])
    if "max_power" in raw:
        kwargs["max_power"] = float(raw["max_power"])
    if "priority_levels" in raw:
        kwargs["priority_levels"] = int(raw["priority_levels"])
    if "mbr_levels_mbps" in raw:
        kwargs["mbr_levels_mbps"] = tuple(float(v) for v in raw["mbr_levels_mbps"])
    if "autoscale_pods" in raw:
        kwargs["autoscale_pods"] = tuple(int(v) for v in raw["autoscale_pods"])
    if "services" in raw:
        services = dict(base.services)
        for name, sc in raw["services"].items():
            services[Service(name)] = ServiceConfig(
                ue_count=int(sc["ue_count"]),
                per_ue_demand_mbps=float(sc["per_ue_demand_mbps"]),
            )
        kwargs["services"] = services
    if "sites" in raw:
        kwargs["sites"] = tuple(
            SiteConfig(s["id"], s["kind"], float(s["propagation_latency_ms"]),
                       float(s["per_ue_power"]))
            for s in raw["sites"]
        )
    return replace(base, **kwargs) if kwargs else base


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Load a scenario by bare name (shipped) or by file path."""
    path = Path(name_or_path)
    if path.suffix == ".toml" and path.exists():
        text = path.read_text(encoding="utf-8")
        name = path.stem
    else:
        ref = resources.files("imfkit") / "scenarios" / f"{name_or_path}.toml"
        if not ref.is_file():
            raise FileNotFoundError(
                f"no scenario named {name_or_path!r}; shipped: {', '.join(shipped_scenarios())}"
            )
        text = ref.read_text(encoding="utf-8")
        name = str(name_or_path)
    raw = tomllib.loads(text)
    intents = IntentSet(_parse_expectation(e) for e in raw["expectations"])
    config = _parse_slice(raw["slice"])
    sweeps = tuple(
        SweepSpec(
            expectation=s["expectation"],
            priorities=tuple(float(p) for p in s.get("priorities", (1, 2, 4, 6, 8, 10))),
            forms=s.get("forms", "as_declared"),
        )
        for s in raw.get("sweep", ())
    )
    schedule: list[tuple[int, IntentSet]] = []
    running = intents
    for entry in raw.get("schedule", ()):
        step = int(entry["step"])
        for exp_id, value in entry.get("priorities", {}).items():
            running = running.with_priority(exp_id, float(value))
        for exp_id, value in entry.get("forms", {}).items():
            running = running.with_form(exp_id, UtilityForm(value))
        schedule.append((step, running))
    return Scenario(
        name=raw.get("name", name),
        config=config,
        intents=intents,
        horizon=int(raw.get("horizon", 20)),
        seeds=tuple(int(s) for s in raw.get("seeds", (0, 1, 2, 3, 4))),
        deviation_mode=DeviationMode(raw.get("deviation_mode", "shortfall")),
        agent_eps=float(raw.get("agent_eps", 0.05)),
        sweeps=sweeps,
        schedule=tuple(schedule),
    )


def shipped_scenarios() -> list[str]:
    root = resources.files("imfkit") / "scenarios"
    return sorted(p.name[: -len(".toml")] for p in root.iterdir() if p.name.endswith(".toml"))


def training_intents(scenario: Scenario) -> IntentSet:
    """The intent set models are trained against: linear form, priority 1.

    Declared forms and priorities in the scenario file are evaluation-time
    mutations; training always uses the canonical definition so run-time
    changes are genuinely unseen.
    """
    return IntentSet(
        replace(e, form=UtilityForm.LINEAR, priority=1.0) for e in scenario.intents
    )


# ----------------------------------------------------------------- analysis

def iae(series: Sequence[float], target: float) -> float:
    """Mean per-step absolute deviation relative to the target.

    Needs a non-zero target; aspirational zero targets (power) are scored with
    normalized_mean_abs_dev instead.
    """
    if not series:
        raise ValueError("iae needs a non-empty series")
    if target == 0:
        raise ValueError("iae is undefined for a zero target; use normalized_mean_abs_dev")
    return float(np.mean([abs(v - target) / abs(target) for v in series]))


def normalized_mean_abs_dev(series: Sequence[float], expectation: Expectation) -> float:
    """Mean absolute deviation from target, normalized by the range width."""
    if not series:
        raise ValueError("needs a non-empty series")
    return float(
        np.mean([abs(v - expectation.target) for v in series]) / expectation.range_width
    )


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation; nan when either side has zero rank variance."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("spearman needs two equal-length series of >= 2 points")
    rx = _ranks(xs)
    ry = _ranks(ys)
    sx, sy = np.std(rx), np.std(ry)
    if sx == 0 or sy == 0:
        return float("nan")
    return float(np.corrcoef(rx, ry)[0, 1])


def _ranks(values: Sequence[float]) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = np.asarray(values)[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg = (i + j) / 2 + 1  # average rank, 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def in_band(expectation: Expectation, value: float) -> bool:
    """One-sided band check: the shortfall deviation is zero."""
    return deviation(expectation, value, DeviationMode.SHORTFALL) == 0.0


def bounded_expectations(intents: IntentSet) -> list[Expectation]:
    """Expectations whose band is actually reachable (skips zero-target power)."""
    return [
        e
        for e in intents
        if not (e.kpi is KpiKind.POWER and e.target <= e.range_lo)
    ]


def first_step_in_band(trace: EpisodeTrace, expectation: Expectation) -> int | None:
    for rec in trace.steps:
        if in_band(expectation, rec.kpis.value(expectation.service, expectation.kpi)):
            return rec.step
    return None


# ------------------------------------------------------------------ reports

@dataclass
class ScenarioReport:
    scenario: str
    model_label: str
    seeds: tuple[int, ...]
    traces: list[EpisodeTrace]
    # expectation id -> IAE (or normalized MAD for zero-target power), averaged
    # over seeds
    scores: dict[str, float]
    # expectation id -> per-seed first step inside the band (None: never)
    first_in_band: dict[str, list[int | None]]
    # per-seed flag: every bounded expectation in band at the final step
    final_all_in_band: list[bool]


def run_scenario(
    scenario: Scenario,
    model: SupervisorModel,
    policies: Mapping[str, AgentPolicy],
    model_label: str = "proposed",
) -> ScenarioReport:
    """Evaluate a model on a scenario across its seed list.

    Episodes start from the under-provisioned cold state and draw exploration
    noise from the intent-independent noise key, so sweep points that differ
    only in priorities or penalty forms are compared under common random
    numbers.
    """
    noise = scenario.noise_key()
    start = netsim.cold_start(scenario.config)
    traces: list[EpisodeTrace] = []
    for seed in scenario.seeds:
        traces.append(
            run_episode(
                model,
                policies,
                scenario.config,
                scenario.intents,
                horizon=scenario.horizon,
                seed=(noise, seed),
                schedule=scenario.schedule,
                deviation_mode=scenario.deviation_mode,
                agent_eps=scenario.agent_eps,
                initial_state=start,
            )
        )
    scores: dict[str, float] = {}
    first: dict[str, list[int | None]] = {}
    for e in scenario.intents:
        series_per_seed = [
            [rec.kpis.value(e.service, e.kpi) for rec in tr.steps] for tr in traces
        ]
        if e.kpi is KpiKind.POWER and e.target <= e.range_lo:
            vals = [normalized_mean_abs_dev(s, e) for s in series_per_seed]
        else:
            vals = [iae(s, e.target) for s in series_per_seed]
        scores[e.id] = float(np.mean(vals))
        first[e.id] = [first_step_in_band(tr, e) for tr in traces]
    bounded = bounded_expectations(scenario.intents)
    final_flags = [
        all(
            in_band(e, tr.steps[-1].kpis.value(e.service, e.kpi))
            for e in bounded
        )
        for tr in traces
    ]
    return ScenarioReport(
        scenario=scenario.name,
        model_label=model_label,
        seeds=scenario.seeds,
        traces=traces,
        scores=scores,
        first_in_band=first,
        final_all_in_band=final_flags,
    )


@dataclass
class SweepPoint:
    priority: float
    score: float


@dataclass
class SweepReport:
    scenario: str
    model_label: str
    expectation: str
    forms: str
    points: list[SweepPoint]

    def priorities(self) -> list[float]:
        return [p.priority for p in self.points]

    def scores(self) -> list[float]:
        return [p.score for p in self.points]

    def trend(self) -> float:
        """Spearman rank correlation of score against priority."""
        return spearman(self.priorities(), self.scores())


def _apply_forms(intents: IntentSet, forms: str) -> IntentSet:
    if forms == "as_declared":
        return intents
    return intents.with_all_forms(UtilityForm(forms))


def priority_sweep(
    scenario: Scenario,
    sweep: SweepSpec,
    model: SupervisorModel,
    policies: Mapping[str, AgentPolicy],
    model_label: str = "proposed",
) -> SweepReport:
    """Run the scenario once per sweep point with the swept priority applied.

    Forms and priorities are evaluation-time mutations only: the model is
    never retrained, each point just sees a different intent set.
    """
    if sweep.expectation not in scenario.intents:
        raise KeyError(f"sweep expectation {sweep.expectation!r} not in scenario")
    points: list[SweepPoint] = []
    base = _apply_forms(scenario.intents, sweep.forms)
    target_exp = scenario.intents[sweep.expectation]
    for priority in sweep.priorities:
        intents = base.with_priority(sweep.expectation, float(priority))
        report = run_scenario(scenario.with_intents(intents), model, policies, model_label)
        points.append(SweepPoint(priority=float(priority), score=report.scores[target_exp.id]))
    return SweepReport(
        scenario=scenario.name,
        model_label=model_label,
        expectation=sweep.expectation,
        forms=sweep.forms,
        points=points,
    )


# ------------------------------------------------------------------- export

def sweep_csv(reports: Sequence[SweepReport], seed_count: int) -> str:
    """CSV with one row per sweep point; stable field order and formatting."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "model", "expectation", "forms", "priority", "score", "seed_count"])
    for rep in reports:
        for pt in rep.points:
            writer.writerow(
                [rep.scenario, rep.model_label, rep.expectation, rep.forms,
                 _fmt(pt.priority), _fmt(pt.score), seed_count]
            )
    return buf.getvalue()


def trace_csv(report: ScenarioReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["scenario", "model", "seed", "step", "qoe_cv", "pl_urllc_pct", "pl_miot_pct",
         "latency_urllc_ms", "latency_miot_ms", "power_miot", "reward"]
    )
    for seed, tr in zip(report.seeds, report.traces):
        for rec in tr.steps:
            k = rec.kpis
            writer.writerow(
                [report.scenario, report.model_label, seed, rec.step,
                 _fmt(k.qoe_cv), _fmt(k.pl_urllc_pct), _fmt(k.pl_miot_pct),
                 _fmt(k.latency_urllc_ms), _fmt(k.latency_miot_ms), _fmt(k.power_miot),
                 _fmt(rec.reward)]
            )
    return buf.getvalue()


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{value:.10g}"


def export(
    outdir: str | Path,
    scenario_reports: Sequence[ScenarioReport] = (),
    sweep_reports: Sequence[SweepReport] = (),
    seed_count: int = 5,
    plots: bool = True,
) -> list[Path]:
    """Write CSVs (and plots) for a batch of reports; returns written paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if sweep_reports:
        path = out / "sweeps.csv"
        path.write_text(sweep_csv(sweep_reports, seed_count), encoding="utf-8")
        written.append(path)
    for rep in scenario_reports:
        path = out / f"trace_{rep.scenario}_{rep.model_label}.csv"
        path.write_text(trace_csv(rep), encoding="utf-8")
        written.append(path)
    if plots:
        written.extend(_write_plots(out, scenario_reports, sweep_reports))
    return written


def _write_plots(
    out: Path,
    scenario_reports: Sequence[ScenarioReport],
    sweep_reports: Sequence[SweepReport],
) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[Path] = []
    by_key: dict[tuple[str, str, str], list[SweepReport]] = {}
    for rep in sweep_reports:
        by_key.setdefault((rep.scenario, rep.expectation, rep.forms), []).append(rep)
    for (scen, exp_id, forms), reps in by_key.items():
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for rep in reps:
            ax.plot(rep.priorities(), rep.scores(), marker="o", label=rep.model_label)
        ax.set_xlabel("priority")
        ax.set_ylabel("score")
        ax.set_title(f"{scen}: {exp_id} ({forms})")
        ax.legend()
        fig.tight_layout()
        path = out / f"sweep_{scen}_{exp_id}_{forms}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    for rep in scenario_reports:
        fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
        series = [
            ("qoe_cv", lambda k: k.qoe_cv),
            ("pl_urllc_pct", lambda k: k.pl_urllc_pct),
            ("pl_miot_pct", lambda k: k.pl_miot_pct),
        ]
        for ax, (label, pick) in zip(axes, series):
            for seed, tr in zip(rep.seeds, rep.traces):
                ax.plot(tr.kpi_series(pick), alpha=0.6, label=f"seed {seed}")
            ax.set_ylabel(label)
        axes[-1].set_xlabel("step")
        axes[0].set_title(f"{rep.scenario} ({rep.model_label})")
        fig.tight_layout()
        path = out / f"kpis_{rep.scenario}_{rep.model_label}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written
