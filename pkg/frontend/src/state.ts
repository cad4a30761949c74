/** Console-side cache of live values, alerts and the summary rollup, fed by
 * the SSE stream. Reloading the page rebuilds identical state from the API
 * alone (the cache never invents values). */
import { Api } from "./api.js";
import { AlertRecord, StreamEvent, StreamValueItem, SummaryEntry } from "./types.js";

export type Listener = () => void;

export class ConsoleState {
  values = new Map<string, StreamValueItem>();
  alerts = new Map<number, AlertRecord>();
  summary: Record<string, SummaryEntry> = {};
  monitorsDown = new Set<string>();
  connected = false;

  private listeners = new Set<Listener>();
  private closeStream: (() => void) | null = null;
  onCame: ((record: AlertRecord | null) => void) | null = null;

  constructor(public api: Api) {}

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  /** Initial snapshot from the API, then attach the push stream. */
  async start(streamFactory?: (url: string) => EventSource): Promise<void> {
    const [summary, alerts] = await Promise.all([
      this.api.summary(), this.api.alerts("attention")]);
    this.summary = summary.summary;
    this.alerts.clear();
    for (const record of alerts.alerts) this.alerts.set(record.record_id, record);
    this.closeStream = this.api.openStream((e) => this.apply(e), streamFactory);
    this.connected = true;
    this.emit();
  }

  stop(): void {
    this.closeStream?.();
    this.closeStream = null;
    this.connected = false;
  }

  apply(event: StreamEvent): void {
    switch (event.type) {
      case "hello":
        this.summary = event.summary;
        break;
      case "values":
        for (const item of event.items) this.values.set(item.path, item);
        break;
      case "alert": {
        if (event.record) {
          this.alerts.set(event.record.record_id, event.record);
          if (!event.record.requires_attention) {
            this.alerts.delete(event.record.record_id);
          }
        }
        if (event.event === "CAME" && this.onCame) this.onCame(event.record);
        this.refreshSummaryFromAlerts();
        break;
      }
      case "health":
        if (event.alive) this.monitorsDown.delete(event.monitor);
        else this.monitorsDown.add(event.monitor);
        break;
    }
    this.emit();
  }

  /** Attention-ordered alert rows: severity first, newest first inside. */
  alertRows(): AlertRecord[] {
    const order = { FATAL: 3, ERROR: 2, WARNING: 1, OK: 0 } as Record<string, number>;
    return [...this.alerts.values()].sort((a, b) =>
      order[b.severity] - order[a.severity] || b.came_at - a.came_at);
  }

  private refreshSummaryFromAlerts(): void {
    // incremental hint only; the server summary arrives with the next hello
    const counts: Record<string, { severity: string; active: number }> = {};
    for (const record of this.alerts.values()) {
      if (!record.active) continue;
      const det = record.path.split("/")[0];
      const entry = counts[det] ?? { severity: "OK", active: 0 };
      entry.active += 1;
      const order = { FATAL: 3, ERROR: 2, WARNING: 1, OK: 0 } as Record<string, number>;
      if (order[record.severity] > order[entry.severity]) entry.severity = record.severity;
      counts[det] = entry;
    }
    for (const [det, entry] of Object.entries(counts)) {
      this.summary[det] = entry as SummaryEntry;
    }
  }
}
