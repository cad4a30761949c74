/** Typed client for the supervisor API. The console holds no truth of its
 * own: every displayed value comes from these calls or the event stream,
 * and every mutating click maps to exactly one call here. Authorization
 * decisions live server-side; 401 AUTH_EXPIRED sends the user back to the
 * login screen via the onAuthExpired hook. */
import { AlertRecord, HealthReply, LoginReply, StreamEvent, SummaryEntry,
         TrendSeries, ValueEntry } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string,
              public extra: Record<string, unknown> = {}) {
    super(message);
  }
}

export class Api {
  token: string | null = null;
  onAuthExpired: (() => void) | null = null;

  constructor(public base: string = "") {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await fetch(this.base + path, {
      method, headers, body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let code = "HTTP_" + resp.status;
      let message = resp.statusText;
      let extra: Record<string, unknown> = {};
      try {
        const payload = await resp.json();
        code = payload.error?.code ?? code;
        message = payload.error?.message ?? message;
        extra = payload.error ?? {};
      } catch { /* non-JSON error body */ }
      if (code === "AUTH_EXPIRED" && this.onAuthExpired) this.onAuthExpired();
      throw new ApiError(resp.status, code, message, extra);
    }
    return resp.json() as Promise<T>;
  }

  async login(user: string, password: string): Promise<LoginReply> {
    const reply = await this.call<LoginReply>("POST", "/api/login", { user, password });
    this.token = reply.token;
    return reply;
  }

  async logout(): Promise<void> {
    await this.call("POST", "/api/logout", {});
    this.token = null;
  }

  health(): Promise<HealthReply> {
    return this.call("GET", "/api/health");
  }

  tree(path: string): Promise<{ path: string; children: ValueEntry[] & { leaf?: boolean }[] }> {
    return this.call("GET", `/api/tree?path=${encodeURIComponent(path)}`);
  }

  values(paths: string[]): Promise<{ values: ValueEntry[] }> {
    return this.call("GET", `/api/values?paths=${encodeURIComponent(paths.join(","))}`);
  }

  aliases(prefix: string): Promise<{ aliases: Record<string, string> }> {
    return this.call("GET", `/api/aliases?prefix=${encodeURIComponent(prefix)}`);
  }

  summary(): Promise<{ summary: Record<string, SummaryEntry> }> {
    return this.call("GET", "/api/summary");
  }

  alerts(scope: "active" | "attention"): Promise<{ alerts: AlertRecord[] }> {
    return this.call("GET", `/api/alerts?scope=${scope}`);
  }

  ack(recordId: number): Promise<{ record: AlertRecord }> {
    return this.call("POST", `/api/alerts/${recordId}/ack`, {});
  }

  trend(paths: string[], t0: number, t1: number, maxPoints?: number):
      Promise<{ series: TrendSeries[] }> {
    const cap = maxPoints ? `&max_points=${maxPoints}` : "";
    return this.call("GET",
      `/api/trend?paths=${encodeURIComponent(paths.join(","))}&t0=${t0}&t1=${t1}${cap}`);
  }

  /** URL of the CSV export for the same query (byte-equal to the server's
   * trend export; the UI never re-serializes samples itself). */
  exportCsvUrl(paths: string[], t0: number, t1: number): string {
    return `${this.base}/api/export.csv?paths=${encodeURIComponent(paths.join(","))}` +
           `&t0=${t0}&t1=${t1}&token=${this.token ?? ""}`;
  }

  async exportCsv(paths: string[], t0: number, t1: number): Promise<string> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const resp = await fetch(
      `${this.base}/api/export.csv?paths=${encodeURIComponent(paths.join(","))}&t0=${t0}&t1=${t1}`,
      { headers });
    if (!resp.ok) throw new ApiError(resp.status, "EXPORT_FAILED", resp.statusText);
    return resp.text();
  }

  hvCommand(target: string, item: string, value: number | boolean):
      Promise<{ ok: boolean; message: string }> {
    return this.call("POST", "/api/hv/command", { target, item, value });
  }

  recipes(): Promise<{ recipes: Record<string, number[]>; active: [string, number] | null }> {
    return this.call("GET", "/api/recipes");
  }

  commitRecipe(name: string, version?: number): Promise<{ applied: number }> {
    return this.call("POST", `/api/recipes/${encodeURIComponent(name)}/commit`,
                     version === undefined ? {} : { version });
  }

  hvrefFiles(): Promise<{ files: string[] }> {
    return this.call("GET", "/api/hvref");
  }

  loadHvref(name: string): Promise<{ report: { target: string; status: string }[] }> {
    return this.call("POST", `/api/hvref/${encodeURIComponent(name)}/load`, { strict: true });
  }

  interlocks(): Promise<{ rules: { id: string; armed: boolean; trigger: string }[] }> {
    return this.call("GET", "/api/interlocks");
  }

  /** Server-push stream. EventSource cannot set headers, so the token rides
   * in the query string. Returns a closer. */
  openStream(onEvent: (e: StreamEvent) => void,
             factory?: (url: string) => EventSource): () => void {
    const url = `${this.base}/api/stream?token=${this.token ?? ""}`;
    const es = factory ? factory(url) : new EventSource(url);
    for (const kind of ["hello", "values", "alert", "health"]) {
      es.addEventListener(kind, (e) => {
        onEvent(JSON.parse((e as MessageEvent).data) as StreamEvent);
      });
    }
    return () => es.close();
  }
}
