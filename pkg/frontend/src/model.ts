/** Client-side session state: a pure fold over snapshots, frames, and acks.

The console keeps no experiment state of its own.  Chart series mirror the
frame log exactly, and the intent editor mirrors whatever the server last
acknowledged (snapshot or patch ack) - never optimistic local edits.  All
reducers return fresh state objects so the view layer can diff cheaply and
tests can replay sequences.
*/

import {
  ExpectationWire,
  IntentPatch,
  PatchAck,
  SessionSnapshot,
  TelemetryFrame,
  kpiColumn,
} from "./types.js";

export interface MutationEntry {
  effectiveStep: number | null;
  changes: IntentPatch;
  noop: boolean;
}

export interface ConsoleState {
  session: SessionSnapshot | null;
  frames: TelemetryFrame[];
  /** Server-acknowledged intent set; the editor renders exactly this. */
  intents: ExpectationWire[];
  mutations: MutationEntry[];
  warnings: string[];
}

export function initialState(): ConsoleState {
  return { session: null, frames: [], intents: [], mutations: [], warnings: [] };
}

export function applySnapshot(
  state: ConsoleState,
  snap: SessionSnapshot,
): ConsoleState {
  return { ...state, session: snap, intents: snap.intents };
}

/** Append the next frame; anything out of order is discarded with a warning.

Frames are dense and zero-indexed, so the only acceptable next step is
`frames.length`.  A lower step is a replayed duplicate, a higher one a gap;
neither may silently corrupt the series (charts mirror frames exactly).
*/
export function applyFrame(
  state: ConsoleState,
  frame: TelemetryFrame,
): ConsoleState {
  const expected = state.frames.length;
  if (frame.step === expected) {
    return { ...state, frames: [...state.frames, frame] };
  }
  const kind = frame.step < expected ? "duplicate" : "gap";
  const warning =
    `discarded out-of-order frame: got step ${frame.step}, ` +
    `expected ${expected} (${kind})`;
  return { ...state, warnings: [...state.warnings, warning] };
}

/** Record a patch acknowledgment: log entry plus server-authoritative intents. */
export function applyAck(
  state: ConsoleState,
  ack: PatchAck,
  changes: IntentPatch,
): ConsoleState {
  const entry: MutationEntry = {
    effectiveStep: ack.effective_step,
    changes,
    noop: ack.noop,
  };
  return {
    ...state,
    intents: ack.intents,
    mutations: [...state.mutations, entry],
  };
}

export function clearWarnings(state: ConsoleState): ConsoleState {
  return { ...state, warnings: [] };
}

// -- selectors ---------------------------------------------------------

/** KPI values for one expectation, one point per received frame. */
export function kpiSeries(
  state: ConsoleState,
  e: Pick<ExpectationWire, "service" | "kpi">,
): number[] {
  const col = kpiColumn(e);
  return state.frames.map((f) => f.kpis[col]);
}

export function utilitySeries(state: ConsoleState): number[] {
  return state.frames.map((f) => f.utility);
}

/** Steps that should carry a mutation marker.

Acked effective steps cover mutations submitted from this console; the
`mutated` flag on frames covers everything else (other clients, or this
session before a reload), so a rebuilt view keeps its markers.
*/
export function markerSteps(state: ConsoleState): number[] {
  const steps = new Set<number>();
  for (const f of state.frames) {
    if (f.mutated) steps.add(f.step);
  }
  for (const m of state.mutations) {
    if (!m.noop && m.effectiveStep !== null) steps.add(m.effectiveStep);
  }
  return [...steps].sort((a, b) => a - b);
}

/** Fields in `edited` that differ from the acknowledged set: the patch body. */
export function diffAgainstAcked(
  state: ConsoleState,
  expectationId: string,
  edited: { priority?: number; form?: ExpectationWire["form"] },
): IntentPatch {
  const current = state.intents.find((e) => e.id === expectationId);
  if (current === undefined) {
    throw new Error(`unknown expectation ${expectationId}`);
  }
  const fields: { priority?: number; form?: ExpectationWire["form"] } = {};
  if (edited.priority !== undefined && edited.priority !== current.priority) {
    fields.priority = edited.priority;
  }
  if (edited.form !== undefined && edited.form !== current.form) {
    fields.form = edited.form;
  }
  if (Object.keys(fields).length === 0) return {};
  return { [expectationId]: fields };
}
