/** Console entry point: wires the gateway client, the state fold, and the
charts to a static DOM skeleton.  Reload-safe: with ?session= in the URL the
whole view is rebuilt from the session snapshot plus a replay of the frame
stream, nothing else. */

import { GatewayClient, GatewayError } from "./api.js";
import { autoDomain, bandFor, drawChart } from "./charts.js";
import {
  ConsoleState,
  applyAck,
  applyFrame,
  applySnapshot,
  diffAgainstAcked,
  initialState,
  kpiSeries,
  markerSteps,
  utilitySeries,
} from "./model.js";
import {
  ExpectationWire,
  FORMS,
  FormName,
  SessionSnapshot,
} from "./types.js";

const params = new URLSearchParams(location.search);
// served from a static host while the gateway runs on its own port, so the
// base URL is a query parameter; same-origin when opened through the gateway
const base =
  params.get("gateway") ??
  (location.protocol.startsWith("http") ? "" : "http://127.0.0.1:8470");
const client = new GatewayClient(base);

let state: ConsoleState = initialState();
let streamAbort: AbortController | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function make<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

// -- error banner ------------------------------------------------------

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  el<HTMLSpanElement>("error-text").textContent = message;
  banner.hidden = false;
}

function clearError(): void {
  el<HTMLDivElement>("error-banner").hidden = true;
}

function describe(err: unknown): string {
  if (err instanceof GatewayError) return err.detail;
  if (err instanceof Error) return err.message;
  return String(err);
}

// -- charts ------------------------------------------------------------

interface ChartSlot {
  expectation: ExpectationWire | null; // null for the utility chart
  canvas: HTMLCanvasElement;
}

const chartSlots: ChartSlot[] = [];

function buildCharts(snap: SessionSnapshot): void {
  const grid = el<HTMLDivElement>("charts");
  grid.textContent = "";
  chartSlots.length = 0;
  for (const e of snap.intents) {
    const card = make("div", "chart-card");
    card.append(
      make("h3", "", `${e.id} (${e.direction.replace("_", " ")} ${e.target})`),
    );
    const canvas = make("canvas", "chart");
    card.append(canvas);
    grid.append(card);
    chartSlots.push({ expectation: e, canvas });
  }
  const card = make("div", "chart-card");
  card.append(make("h3", "", "utility"));
  const canvas = make("canvas", "chart");
  card.append(canvas);
  grid.append(card);
  chartSlots.push({ expectation: null, canvas });
}

function renderCharts(): void {
  const horizon = state.session?.horizon ?? 20;
  const markers = markerSteps(state);
  for (const slot of chartSlots) {
    if (slot.expectation !== null) {
      const e = slot.expectation;
      drawChart(slot.canvas, {
        values: kpiSeries(state, e),
        horizon,
        domain: e.range,
        band: bandFor(e),
        target: e.target,
        markers,
      });
    } else {
      const values = utilitySeries(state);
      drawChart(slot.canvas, {
        values,
        horizon,
        domain: autoDomain(values, [-1, 1]),
        band: null,
        target: null,
        markers,
        color: "#c792ea",
      });
    }
  }
}

// -- intent editor -----------------------------------------------------

interface EditorRow {
  id: string;
  slider: HTMLInputElement;
  sliderLabel: HTMLSpanElement;
  formSelect: HTMLSelectElement;
  acked: HTMLSpanElement;
}

const editorRows: EditorRow[] = [];

function buildEditor(snap: SessionSnapshot): void {
  const panel = el<HTMLDivElement>("intents");
  panel.textContent = "";
  editorRows.length = 0;
  for (const e of snap.intents) {
    const row = make("div", "intent-row");
    const head = make("div", "intent-head");
    head.append(make("strong", "", e.id));
    head.append(make("span", "dim", ` ${e.service}/${e.kpi}`));
    const acked = make("span", "acked");
    head.append(acked);
    row.append(head);

    const controls = make("div", "intent-controls");
    const slider = make("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = "1";
    slider.max = "10";
    slider.step = "1";
    const sliderLabel = make("span", "slider-label");
    slider.addEventListener("input", () => {
      sliderLabel.textContent = `P${slider.value}`;
    });
    const formSelect = make("select") as HTMLSelectElement;
    for (const f of FORMS) {
      const opt = make("option", "", f) as HTMLOptionElement;
      opt.value = f;
      formSelect.append(opt);
    }
    const apply = make("button", "", "apply") as HTMLButtonElement;
    apply.addEventListener("click", () => void submitMutation(e.id));
    controls.append(
      make("label", "dim", "priority"),
      slider,
      sliderLabel,
      make("label", "dim", "form"),
      formSelect,
      apply,
    );
    row.append(controls);
    panel.append(row);
    editorRows.push({ id: e.id, slider, sliderLabel, formSelect, acked });
  }
  renderEditor();
}

/** Push the server-acknowledged set into the editor controls. */
function renderEditor(): void {
  for (const row of editorRows) {
    const e = state.intents.find((x) => x.id === row.id);
    if (e === undefined) continue;
    const active = document.activeElement;
    if (active !== row.slider) {
      row.slider.value = String(Math.round(e.priority));
      row.sliderLabel.textContent = `P${Math.round(e.priority)}`;
    }
    if (active !== row.formSelect) {
      row.formSelect.value = e.form;
    }
    row.acked.textContent = `acked: P${e.priority} ${e.form}`;
  }
}

async function submitMutation(expectationId: string): Promise<void> {
  const session = state.session;
  const row = editorRows.find((r) => r.id === expectationId);
  if (session === null || row === undefined) return;
  const changes = diffAgainstAcked(state, expectationId, {
    priority: Number(row.slider.value),
    form: row.formSelect.value as FormName,
  });
  if (Object.keys(changes).length === 0) return;
  try {
    const ack = await client.patchIntents(session.id, changes);
    state = applyAck(state, ack, changes);
    clearError();
    renderEditor();
    renderLog();
    renderCharts();
  } catch (err) {
    // editor stays on the acked set; the rejection is shown as-is
    showError(describe(err));
    renderEditor();
  }
}

function renderLog(): void {
  const list = el<HTMLUListElement>("mutation-log");
  list.textContent = "";
  for (const m of state.mutations) {
    const parts = Object.entries(m.changes).map(([id, fields]) => {
      const bits: string[] = [];
      if (fields.priority !== undefined) bits.push(`priority=${fields.priority}`);
      if (fields.form !== undefined) bits.push(`form=${fields.form}`);
      return `${id}: ${bits.join(", ")}`;
    });
    const where = m.noop
      ? "no-op"
      : `effective step ${m.effectiveStep ?? "?"}`;
    list.append(make("li", "", `${parts.join("; ") || "(empty)"} - ${where}`));
  }
}

function renderWarnings(): void {
  const box = el<HTMLDivElement>("warnings");
  box.textContent = "";
  box.hidden = state.warnings.length === 0;
  for (const w of state.warnings) {
    box.append(make("div", "warning", w));
  }
}

// -- status / controls -------------------------------------------------

function renderStatus(): void {
  const s = state.session;
  if (s === null) return;
  el<HTMLSpanElement>("status-pill").textContent = s.status;
  el<HTMLSpanElement>("status-pill").dataset.status = s.status;
  el<HTMLSpanElement>("session-meta").textContent =
    `${s.scenario} / ${s.model} / seed ${s.seed} / ` +
    `model ${s.model_checksum.slice(0, 10)}`;
  el<HTMLSpanElement>("step-meta").textContent =
    `step ${state.frames.length}/${s.horizon}` +
    (s.pending_mutation ? " (mutation queued)" : "");
}

async function refreshSnapshot(): Promise<void> {
  if (state.session === null) return;
  const snap = await client.getSession(state.session.id);
  state = applySnapshot(state, snap);
  renderStatus();
  renderEditor();
}

function wireControls(): void {
  el<HTMLButtonElement>("advance-1").addEventListener("click", () =>
    void doAdvance(1),
  );
  el<HTMLButtonElement>("advance-5").addEventListener("click", () =>
    void doAdvance(5),
  );
  el<HTMLSelectElement>("rate").addEventListener("change", (ev) => {
    const rate = Number((ev.target as HTMLSelectElement).value);
    void doSetRate(rate);
  });
  el<HTMLButtonElement>("error-dismiss").addEventListener("click", clearError);
}

async function doAdvance(steps: number): Promise<void> {
  if (state.session === null) return;
  try {
    const snap = await client.advance(state.session.id, steps);
    state = applySnapshot(state, snap);
    clearError();
    renderStatus();
    renderEditor();
  } catch (err) {
    showError(describe(err));
  }
}

async function doSetRate(rate: number): Promise<void> {
  if (state.session === null) return;
  try {
    const snap = await client.setRate(state.session.id, rate);
    state = applySnapshot(state, snap);
    clearError();
    renderStatus();
  } catch (err) {
    showError(describe(err));
  }
}

// -- streaming ---------------------------------------------------------

function startStream(): void {
  streamAbort?.abort();
  streamAbort = new AbortController();
  const signal = streamAbort.signal;
  void (async () => {
    const session = state.session;
    if (session === null) return;
    try {
      for await (const frame of client.streamFrames(
        session.id,
        state.frames.length,
        signal,
      )) {
        state = applyFrame(state, frame);
        renderCharts();
        renderStatus();
        renderWarnings();
      }
      // server closes the stream once the episode is finished
      await refreshSnapshot();
    } catch (err) {
      if (!signal.aborted) {
        showError(`stream lost: ${describe(err)}`);
      }
    }
  })();
}

// -- boot --------------------------------------------------------------

function attach(snap: SessionSnapshot): void {
  state = applySnapshot(initialState(), snap);
  el<HTMLDivElement>("setup").hidden = true;
  el<HTMLDivElement>("session-view").hidden = false;
  buildCharts(snap);
  buildEditor(snap);
  renderStatus();
  renderLog();
  renderCharts();
  const url = new URL(location.href);
  url.searchParams.set("session", snap.id);
  history.replaceState(null, "", url.toString());
}

async function bootSetup(): Promise<void> {
  const info = await client.listScenarios();
  const scenarioInput = el<HTMLInputElement>("setup-scenario");
  scenarioInput.value = info.default;
  const modelSelect = el<HTMLSelectElement>("setup-model");
  modelSelect.textContent = "";
  for (const label of info.models) {
    const opt = make("option", "", label) as HTMLOptionElement;
    opt.value = label;
    modelSelect.append(opt);
  }
  el<HTMLButtonElement>("setup-start").addEventListener("click", () => {
    void (async () => {
      try {
        const snap = await client.createSession({
          scenario: scenarioInput.value,
          model: modelSelect.value,
          seed: Number(el<HTMLInputElement>("setup-seed").value) || 0,
        });
        clearError();
        attach(snap);
        startStream();
      } catch (err) {
        showError(describe(err));
      }
    })();
  });
}

async function boot(): Promise<void> {
  wireControls();
  const sessionId = params.get("session");
  try {
    if (sessionId !== null) {
      const snap = await client.getSession(sessionId);
      attach(snap);
      startStream();
    } else {
      await bootSetup();
    }
  } catch (err) {
    showError(describe(err));
    if (sessionId !== null) {
      // stale session id in the URL: fall back to the setup form
      el<HTMLDivElement>("setup").hidden = false;
      await bootSetup().catch((e: unknown) => showError(describe(e)));
    }
  }
}

void boot();
