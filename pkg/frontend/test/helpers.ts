/** Shared test doubles: scripted fetch and a controllable EventSource. */
import { vi } from "vitest";
import { Api } from "../src/api.js";
import { ConsoleState } from "../src/state.js";
import { AlertRecord, StreamEvent } from "../src/types.js";

export interface Call {
  method: string;
  path: string;
  body: unknown;
}

export function scriptedFetch(routes: Record<string, unknown>,
                              calls: Call[] = []) {
  const impl = vi.fn(async (url: string, init?: RequestInit) => {
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    calls.push({ method, path,
                 body: init?.body ? JSON.parse(init.body as string) : undefined });
    const key = `${method} ${path.split("?")[0]}`;
    const hit = routes[key] ?? routes[`${method} ${path}`];
    if (hit === undefined) {
      return new Response(JSON.stringify(
        { error: { code: "NOT_FOUND", message: `no stub for ${key}`, path } }),
        { status: 404 });
    }
    if (hit instanceof Response) return hit;
    if (typeof hit === "string") {
      return new Response(hit, { status: 200, headers: { "content-type": "text/csv" } });
    }
    return new Response(JSON.stringify(hit), { status: 200 });
  });
  vi.stubGlobal("fetch", impl);
  return { impl, calls };
}

export class FakeEventSource {
  static instances: FakeEventSource[] = [];
  listeners = new Map<string, ((e: MessageEvent) => void)[]>();
  closed = false;

  constructor(public url: string) {
    FakeEventSource.instances.push(this);
  }

  addEventListener(kind: string, fn: (e: MessageEvent) => void): void {
    const list = this.listeners.get(kind) ?? [];
    list.push(fn);
    this.listeners.set(kind, list);
  }

  emit(kind: string, data: unknown): void {
    for (const fn of this.listeners.get(kind) ?? []) {
      fn({ data: JSON.stringify(data) } as MessageEvent);
    }
  }

  close(): void {
    this.closed = true;
  }
}

export function record(overrides: Partial<AlertRecord> = {}): AlertRecord {
  return {
    record_id: 1, path: "gas/plc00/flow/actual", severity: "ERROR",
    value_at_came: 42.0, came_at: 1_700_000_000_000, went_at: null,
    ack_required: true, acknowledged_at: null, acknowledged_by: null,
    active: true, requires_attention: true, ...overrides,
  };
}

export async function startedState(routes: Record<string, unknown> = {},
                                   calls: Call[] = []) {
  scriptedFetch({
    "GET /api/summary": { summary: {} },
    "GET /api/alerts": { alerts: [] },
    ...routes,
  }, calls);
  const api = new Api("");
  api.token = "tok";
  const state = new ConsoleState(api);
  let source: FakeEventSource | null = null;
  await state.start((url) => {
    source = new FakeEventSource(url);
    return source as unknown as EventSource;
  });
  return { api, state, source: source! as FakeEventSource, calls };
}

export function alertEvent(rec: AlertRecord, event = "CAME"): StreamEvent {
  return { type: "alert", event, path: rec.path, severity: rec.severity,
           record_id: rec.record_id, ts: rec.came_at, record: rec };
}
