/** Typed client for the gateway endpoints plus NDJSON stream decoding. */

import {
  IntentPatch,
  PatchAck,
  SessionSnapshot,
  TelemetryFrame,
  isTelemetryFrame,
} from "./types.js";

export class GatewayError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`gateway ${status}: ${detail}`);
    this.name = "GatewayError";
  }
}

async function errorDetail(res: Response): Promise<string> {
  // FastAPI error bodies are {"detail": ...}; surface that text verbatim
  try {
    const body: unknown = await res.json();
    if (body !== null && typeof body === "object" && "detail" in body) {
      const d = (body as { detail: unknown }).detail;
      return typeof d === "string" ? d : JSON.stringify(d);
    }
    return JSON.stringify(body);
  } catch {
    return res.statusText || `http ${res.status}`;
  }
}

export class GatewayClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      throw new GatewayError(res.status, await errorDetail(res));
    }
    return (await res.json()) as T;
  }

  listScenarios(): Promise<{ default: string; models: string[] }> {
    return this.request("/scenarios");
  }

  createSession(
    opts: { scenario?: string; model?: string; seed?: number } = {},
  ): Promise<SessionSnapshot> {
    return this.request("/sessions", {
      method: "POST",
      body: JSON.stringify(opts),
    });
  }

  getSession(id: string): Promise<SessionSnapshot> {
    return this.request(`/sessions/${encodeURIComponent(id)}`);
  }

  advance(id: string, steps = 1): Promise<SessionSnapshot> {
    return this.request(`/sessions/${encodeURIComponent(id)}/advance`, {
      method: "POST",
      body: JSON.stringify({ steps }),
    });
  }

  setRate(id: string, stepsPerSecond: number): Promise<SessionSnapshot> {
    return this.request(`/sessions/${encodeURIComponent(id)}/rate`, {
      method: "POST",
      body: JSON.stringify({ steps_per_second: stepsPerSecond }),
    });
  }

  patchIntents(id: string, changes: IntentPatch): Promise<PatchAck> {
    return this.request(`/sessions/${encodeURIComponent(id)}/intents`, {
      method: "PATCH",
      body: JSON.stringify({ changes }),
    });
  }

  /** Subscribe to the session's frame stream starting at `fromStep`. */
  async *streamFrames(
    id: string,
    fromStep = 0,
    signal?: AbortSignal,
  ): AsyncGenerator<TelemetryFrame> {
    const url =
      `${this.baseUrl}/sessions/${encodeURIComponent(id)}/stream` +
      `?from_step=${fromStep}`;
    const res = await fetch(url, { signal });
    if (!res.ok) {
      throw new GatewayError(res.status, await errorDetail(res));
    }
    if (!res.body) {
      throw new GatewayError(res.status, "stream response has no body");
    }
    yield* ndjsonFrames(res.body);
  }
}

/** Decode an NDJSON byte stream into validated telemetry frames.

Chunks may split a line anywhere, so bytes are buffered until a newline
lands; a non-empty tail after end-of-stream is parsed as a final line. */
export async function* ndjsonFrames(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<TelemetryFrame> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let nl: number;
      while ((nl = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, nl).trim();
        buffer = buffer.slice(nl + 1);
        if (line) yield parseFrameLine(line);
      }
    }
    buffer += decoder.decode();
    const tail = buffer.trim();
    if (tail) yield parseFrameLine(tail);
  } finally {
    reader.releaseLock();
  }
}

function parseFrameLine(line: string): TelemetryFrame {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch {
    throw new Error(`stream line is not JSON: ${line.slice(0, 120)}`);
  }
  if (!isTelemetryFrame(parsed)) {
    throw new Error(`stream line is not a telemetry frame: ${line.slice(0, 120)}`);
  }
  return parsed;
}
