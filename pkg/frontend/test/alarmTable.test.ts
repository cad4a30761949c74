import { afterEach, describe, expect, it, vi } from "vitest";
import { AlarmTable, rowColor, sortRows } from "../src/alarmTable.js";
import { alertEvent, record, startedState } from "./helpers.js";

afterEach(() => vi.unstubAllGlobals());

function mountTable(state: Awaited<ReturnType<typeof startedState>>, role = "shift") {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const table = new AlarmTable(state.api, state.state, root, role);
  table.render();
  return { root, table };
}

describe("alarm table", () => {
  it("shows a red row and plays the sound once on CAME", async () => {
    const world = await startedState();
    const { root } = mountTable(world);
    const sounds: number[] = [];
    world.state.onCame = () => sounds.push(1);
    world.source.emit("alert", alertEvent(record()));
    const row = root.querySelector("tr[data-record-id='1']") as HTMLElement;
    expect(row).not.toBeNull();
    expect(row.style.color).toBe("#cf222e");  // ERROR is red
    expect(sounds.length).toBe(1);
  });

  it("ack marks the row and keeps it listed until WENT", async () => {
    const world = await startedState({
      "POST /api/alerts/1/ack": {
        record: record({ acknowledged_at: 1, acknowledged_by: "shift" }),
      },
    });
    const { root, table } = mountTable(world);
    world.source.emit("alert", alertEvent(record()));
    await table.ackClicked(1);
    expect(root.textContent).toContain("ack: shift");
    expect(root.querySelector("tr[data-record-id='1']")).not.toBeNull();
    // WENT while acknowledged: no longer requires attention, row leaves
    world.source.emit("alert", alertEvent(record({
      acknowledged_at: 1, acknowledged_by: "shift", went_at: 2,
      active: false, requires_attention: false }), "WENT"));
    expect(root.querySelector("tr[data-record-id='1']")).toBeNull();
  });

  it("racing ack surfaces the winner instead of flipping the row", async () => {
    const world = await startedState({
      "POST /api/alerts/1/ack": new Response(JSON.stringify({
        error: { code: "ALREADY_ACKED", message: "already acknowledged by alice",
                 path: "/api/alerts/1/ack", acknowledged_by: "alice" } }),
        { status: 409 }),
    });
    const { table } = mountTable(world);
    world.source.emit("alert", alertEvent(record()));
    const outcome = await table.ackClicked(1);
    expect(outcome).toContain("alice");
  });

  it("guests get no ack buttons", async () => {
    const world = await startedState();
    const { root } = mountTable(world, "guest");
    world.source.emit("alert", alertEvent(record()));
    expect(root.querySelector(".ack-btn")).toBeNull();
  });

  it("handles a 500-alert load with a render window and sorting", async () => {
    const world = await startedState();
    const { root, table } = mountTable(world);
    for (let i = 0; i < 500; i++) {
      world.state.alerts.set(i, record({
        record_id: i, path: `det/ch${i}`, came_at: 1_700_000_000_000 + i,
        severity: i % 3 === 0 ? "WARNING" : "ERROR",
      }));
    }
    const start = performance.now();
    table.render();
    const elapsed = performance.now() - start;
    expect(root.querySelectorAll("tr").length).toBeLessThanOrEqual(201); // windowed
    expect(root.textContent).toContain("of 500");
    expect(elapsed).toBeLessThan(1000);
    const rows = table.rows();
    expect(rows[0].severity).toBe("ERROR");  // severity sort default
    table.sortKey = "time";
    const byTime = table.rows();
    expect(byTime[0].came_at).toBeGreaterThanOrEqual(byTime[1].came_at);
  });

  it("sorting and colors are stable pure helpers", () => {
    const rows = [record({ record_id: 1, severity: "WARNING", came_at: 5 }),
                  record({ record_id: 2, severity: "FATAL", came_at: 1 })];
    expect(sortRows(rows, "severity")[0].record_id).toBe(2);
    expect(rowColor(record({ active: false }))).toBe("#57606a");
  });
});
