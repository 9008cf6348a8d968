/** Hand-rolled canvas line charts: KPI trace, satisfied band, target line,
and vertical markers at mutation steps.  No charting dependency; the series
are short (one point per simulator step) and the band/marker semantics are
specific enough that a library would mostly be in the way. */

import { DirectionName } from "./types.js";

export type Scale = (v: number) => number;

/** Affine map from [d0, d1] to [r0, r1]; a degenerate domain maps to r0. */
export function makeScale(
  d0: number,
  d1: number,
  r0: number,
  r1: number,
): Scale {
  const span = d1 - d0;
  if (span === 0) return () => r0;
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

/** KPI interval where the expectation is satisfied, within its range. */
export function bandFor(e: {
  target: number;
  direction: DirectionName;
  range: [number, number];
}): [number, number] {
  const [lo, hi] = e.range;
  return e.direction === "at_least" ? [e.target, hi] : [lo, e.target];
}

/** Padded y-domain covering the values; fallback when there are none. */
export function autoDomain(
  values: number[],
  fallback: [number, number] = [0, 1],
): [number, number] {
  if (values.length === 0) return fallback;
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const pad = 0.08 * (hi - lo);
  return [lo - pad, hi + pad];
}

export interface ChartInput {
  values: number[];
  horizon: number;
  domain: [number, number];
  band: [number, number] | null;
  target: number | null;
  markers: number[];
  color?: string;
}

const PAD = { left: 44, right: 10, top: 8, bottom: 20 };

function tickLabel(v: number): string {
  const a = Math.abs(v);
  if (a >= 100) return v.toFixed(0);
  if (a >= 1) return v.toFixed(1);
  return v.toFixed(2);
}

export function drawChart(canvas: HTMLCanvasElement, input: ChartInput): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  const dpr = typeof devicePixelRatio === "number" ? devicePixelRatio : 1;
  const cssW = canvas.clientWidth || 320;
  const cssH = canvas.clientHeight || 150;
  if (canvas.width !== cssW * dpr || canvas.height !== cssH * dpr) {
    canvas.width = cssW * dpr;
    canvas.height = cssH * dpr;
  }
  ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
  ctx.clearRect(0, 0, cssW, cssH);

  const [dLo, dHi] = input.domain;
  const xMax = Math.max(input.horizon - 1, 1);
  const x = makeScale(0, xMax, PAD.left, cssW - PAD.right);
  const y = makeScale(dLo, dHi, cssH - PAD.bottom, PAD.top);
  const plotW = cssW - PAD.left - PAD.right;
  const plotH = cssH - PAD.top - PAD.bottom;

  if (input.band !== null) {
    const [bLo, bHi] = input.band;
    const top = y(Math.min(bHi, dHi));
    const bot = y(Math.max(bLo, dLo));
    ctx.fillStyle = "rgba(80, 200, 120, 0.12)";
    ctx.fillRect(PAD.left, top, plotW, bot - top);
  }

  ctx.strokeStyle = "rgba(128, 128, 128, 0.25)";
  ctx.fillStyle = "rgba(160, 160, 160, 0.9)";
  ctx.lineWidth = 1;
  ctx.font = "10px system-ui, sans-serif";
  ctx.textAlign = "right";
  ctx.textBaseline = "middle";
  for (let i = 0; i <= 4; i++) {
    const v = dLo + ((dHi - dLo) * i) / 4;
    const py = y(v);
    ctx.beginPath();
    ctx.moveTo(PAD.left, py);
    ctx.lineTo(cssW - PAD.right, py);
    ctx.stroke();
    ctx.fillText(tickLabel(v), PAD.left - 4, py);
  }
  ctx.textAlign = "center";
  ctx.textBaseline = "top";
  const xTicks = Math.min(xMax, 5);
  for (let i = 0; i <= xTicks; i++) {
    const s = Math.round((xMax * i) / xTicks);
    ctx.fillText(String(s), x(s), cssH - PAD.bottom + 4);
  }

  if (input.target !== null && input.target >= dLo && input.target <= dHi) {
    ctx.strokeStyle = "rgba(80, 200, 120, 0.8)";
    ctx.setLineDash([5, 4]);
    ctx.beginPath();
    ctx.moveTo(PAD.left, y(input.target));
    ctx.lineTo(cssW - PAD.right, y(input.target));
    ctx.stroke();
    ctx.setLineDash([]);
  }

  for (const step of input.markers) {
    if (step < 0 || step > xMax) continue;
    ctx.strokeStyle = "rgba(240, 160, 60, 0.85)";
    ctx.setLineDash([3, 3]);
    ctx.beginPath();
    ctx.moveTo(x(step), PAD.top);
    ctx.lineTo(x(step), PAD.top + plotH);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  if (input.values.length > 0) {
    ctx.strokeStyle = input.color ?? "#4ea3f0";
    ctx.lineWidth = 1.8;
    ctx.beginPath();
    input.values.forEach((v, i) => {
      const px = x(i);
      const py = y(Math.min(Math.max(v, dLo), dHi));
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    const last = input.values[input.values.length - 1];
    if (last !== undefined) {
      ctx.fillStyle = input.color ?? "#4ea3f0";
      ctx.beginPath();
      ctx.arc(
        x(input.values.length - 1),
        y(Math.min(Math.max(last, dLo), dHi)),
        2.5,
        0,
        2 * Math.PI,
      );
      ctx.fill();
    }
  }
}
