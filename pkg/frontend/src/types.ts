/** Wire types for the gateway API (schema_version 1). */

export const SCHEMA_VERSION = 1;

export type ServiceName = "cv" | "urllc" | "miot";
export type KpiName = "qoe" | "packet_loss" | "latency" | "power";
export type DirectionName = "at_least" | "at_most";
export type FormName = "linear" | "log" | "quadratic";

export const FORMS: readonly FormName[] = ["linear", "log", "quadratic"];

export interface ExpectationWire {
  id: string;
  service: ServiceName;
  kpi: KpiName;
  target: number;
  direction: DirectionName;
  range: [number, number];
  form: FormName;
  priority: number;
}

export interface KpiVectorWire {
  qoe_cv: number;
  pl_urllc_pct: number;
  pl_miot_pct: number;
  latency_urllc_ms: number;
  latency_miot_ms: number;
  power_miot: number;
}

export interface TelemetryFrame {
  schema_version: number;
  step: number;
  kpis: KpiVectorWire;
  deviations: Record<string, number>;
  features: Record<string, number>;
  utility: number;
  goals: { indices: Record<string, number>; values: Record<string, number> };
  intents: ExpectationWire[];
  mutated: boolean;
}

export type SessionStatus = "paused" | "running" | "finished";

export interface SessionSnapshot {
  id: string;
  scenario: string;
  model: string;
  seed: number;
  status: SessionStatus;
  step: number;
  horizon: number;
  frames_emitted: number;
  intents: ExpectationWire[];
  pending_mutation: boolean;
  model_checksum: string;
}

export interface PatchAck {
  acknowledged: boolean;
  noop: boolean;
  effective_step: number | null;
  intents: ExpectationWire[];
}

export interface IntentPatch {
  [expectationId: string]: { priority?: number; form?: FormName };
}

/** Which column of the KPI vector an expectation's chart reads. */
export function kpiColumn(e: {
  service: ServiceName;
  kpi: KpiName;
}): keyof KpiVectorWire {
  const key = `${e.service}:${e.kpi}`;
  const table: Record<string, keyof KpiVectorWire> = {
    "cv:qoe": "qoe_cv",
    "urllc:packet_loss": "pl_urllc_pct",
    "miot:packet_loss": "pl_miot_pct",
    "urllc:latency": "latency_urllc_ms",
    "miot:latency": "latency_miot_ms",
    "miot:power": "power_miot",
  };
  const col = table[key];
  if (col === undefined) {
    throw new Error(`no KPI column for expectation on ${key}`);
  }
  return col;
}

export function isTelemetryFrame(x: unknown): x is TelemetryFrame {
  if (typeof x !== "object" || x === null) return false;
  const f = x as Record<string, unknown>;
  return (
    typeof f.step === "number" &&
    typeof f.schema_version === "number" &&
    typeof f.utility === "number" &&
    typeof f.mutated === "boolean" &&
    typeof f.kpis === "object" &&
    f.kpis !== null &&
    Array.isArray(f.intents)
  );
}
