/** The alert table: severity colors, acknowledgment, audible cue on CAME.
 * Rows stay listed while they require attention (active, or awaiting ack).
 * The ack button renders only for roles the server will accept anyway; the
 * server remains the authority. */
import { Api } from "./api.js";
import { ConsoleState } from "./state.js";
import { AlertRecord, SEVERITY_COLORS, Severity } from "./types.js";

export type SortKey = "severity" | "time";

export function sortRows(rows: AlertRecord[], key: SortKey): AlertRecord[] {
  const order = { FATAL: 3, ERROR: 2, WARNING: 1, OK: 0 } as Record<Severity, number>;
  return [...rows].sort((a, b) =>
    key === "severity"
      ? order[b.severity] - order[a.severity] || b.came_at - a.came_at
      : b.came_at - a.came_at);
}

export function rowColor(record: AlertRecord): string {
  if (!record.active) return "#57606a";  // gone, awaiting acknowledgment
  return SEVERITY_COLORS[record.severity];
}

export class AlarmTable {
  sortKey: SortKey = "severity";
  canAck: boolean;
  /** render window for very large alarm loads (virtualized table) */
  windowStart = 0;
  windowSize = 200;

  constructor(private api: Api, private state: ConsoleState,
              private root: HTMLElement, role: string) {
    this.canAck = role !== "guest";
    state.subscribe(() => this.render());
  }

  rows(): AlertRecord[] {
    return sortRows(this.state.alertRows(), this.sortKey);
  }

  async ackClicked(recordId: number): Promise<string> {
    // no optimistic update: the row changes only once the server confirms
    try {
      const reply = await this.api.ack(recordId);
      this.state.alerts.set(reply.record.record_id, reply.record);
      this.render();
      return "acknowledged";
    } catch (err) {
      const e = err as { code?: string; extra?: { acknowledged_by?: string } };
      if (e.code === "ALREADY_ACKED") {
        return `already acknowledged by ${e.extra?.acknowledged_by ?? "someone else"}`;
      }
      throw err;
    }
  }

  render(): void {
    const rows = this.rows();
    const slice = rows.slice(this.windowStart, this.windowStart + this.windowSize);
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();
    const table = doc.createElement("table");
    table.className = "alarm-table";
    const head = doc.createElement("tr");
    for (const [label, key] of [["severity", "severity"], ["time", "time"]] as const) {
      const th = doc.createElement("th");
      th.textContent = label;
      th.dataset.sort = key;
      th.onclick = () => { this.sortKey = key; this.render(); };
      head.appendChild(th);
    }
    for (const label of ["path", "value", "status", ""]) {
      const th = doc.createElement("th");
      th.textContent = label;
      head.appendChild(th);
    }
    table.appendChild(head);
    for (const record of slice) {
      const tr = doc.createElement("tr");
      tr.dataset.recordId = String(record.record_id);
      tr.style.color = rowColor(record);
      if (record.severity === "FATAL" && record.active) tr.classList.add("flashing");
      const cells = [
        record.severity,
        new Date(record.came_at).toISOString().slice(11, 19),
        record.path,
        String(record.value_at_came),
        record.active ? "active" : "gone",
      ];
      for (const text of cells) {
        const td = doc.createElement("td");
        td.textContent = text;
        tr.appendChild(td);
      }
      const td = doc.createElement("td");
      if (record.ack_required && record.acknowledged_at === null && this.canAck) {
        const btn = doc.createElement("button");
        btn.textContent = "ack";
        btn.className = "ack-btn";
        btn.onclick = () => void this.ackClicked(record.record_id);
        td.appendChild(btn);
      } else if (record.acknowledged_by) {
        td.textContent = `ack: ${record.acknowledged_by}`;
      }
      tr.appendChild(td);
      table.appendChild(tr);
    }
    this.root.appendChild(table);
    if (rows.length > this.windowSize) {
      const note = doc.createElement("div");
      note.className = "window-note";
      note.textContent =
        `${this.windowStart + 1}-${Math.min(this.windowStart + this.windowSize, rows.length)} ` +
        `of ${rows.length}`;
      this.root.appendChild(note);
    }
  }
}
