import { afterEach, describe, expect, it, vi } from "vitest";
import { AlarmSound, BURST_WINDOW_MS } from "../src/audio.js";
import { HVGrid } from "../src/hvGrid.js";
import { DEFAULT_LAYOUT, LayoutError, breadcrumbs, parseLayout } from "../src/panels.js";
import { record, startedState } from "./helpers.js";

afterEach(() => vi.unstubAllGlobals());

describe("alarm audio", () => {
  it("plays once per burst window", () => {
    let t = 0;
    const plays: number[] = [];
    const sound = new AlarmSound(() => plays.push(t), () => t);
    expect(sound.onCame()).toBe(true);
    t += 3000;
    expect(sound.onCame()).toBe(false);   // deduplicated inside 10 s
    t += BURST_WINDOW_MS;
    expect(sound.onCame()).toBe(true);
    expect(plays).toEqual([0, 13_000]);
  });
});

describe("panel layout", () => {
  it("parses the shipped layout into a tree", () => {
    const layout = parseLayout(DEFAULT_LAYOUT);
    expect(layout.root).toBe("main");
    expect(breadcrumbs(layout, "ecal2").map((p) => p.id)).toEqual(["main", "ecal2"]);
  });

  it("rejects unattached panels and cycles", () => {
    expect(() => parseLayout({ root: "main", panels: [
      { id: "main", title: "m", parent: null },
      { id: "orphan", title: "o", parent: "missing" }] })).toThrow(LayoutError);
    expect(() => parseLayout({ root: "main", panels: [
      { id: "main", title: "m", parent: null },
      { id: "a", title: "a", parent: "b" },
      { id: "b", title: "b", parent: "a" }] })).toThrow(LayoutError);
  });
});

describe("console state", () => {
  it("reload rebuilds identical state from the API alone", async () => {
    const routes = {
      "GET /api/summary": { summary: { gas: { severity: "ERROR", active: 1 } } },
      "GET /api/alerts": { alerts: [record()] },
    };
    const first = await startedState(routes);
    const second = await startedState(routes);
    expect(second.state.summary).toEqual(first.state.summary);
    expect([...second.state.alerts.keys()]).toEqual([...first.state.alerts.keys()]);
  });

  it("stream events update values and health", async () => {
    const world = await startedState();
    world.source.emit("values", { type: "values", ts: 1, items: [
      { path: "a/b", value: 3.5, ts: 1, quality: "valid" }] });
    expect(world.state.values.get("a/b")!.value).toBe(3.5);
    world.source.emit("health", { type: "health", monitor: "gas/plc00",
                                  alive: false, ts: 2 });
    expect(world.state.monitorsDown.has("gas/plc00")).toBe(true);
  });
});

describe("hv grid", () => {
  async function grid(role: string, channels = 4) {
    const aliases: Record<string, string> = {};
    for (let i = 0; i < channels; i++) {
      aliases[`ecal1/hv/ch${String(i).padStart(3, "0")}`] = `caen/crate00/ch${String(i).padStart(3, "0")}`;
    }
    const world = await startedState({
      "GET /api/aliases": { aliases },
      "POST /api/hv/command": { ok: true, message: "OK" },
    });
    for (const hw of Object.values(aliases)) {
      world.state.values.set(`${hw}/vmon`, { path: `${hw}/vmon`, value: 1500, ts: 1, quality: "valid" });
      world.state.values.set(`${hw}/imon`, { path: `${hw}/imon`, value: 3.1, ts: 1, quality: "valid" });
      world.state.values.set(`${hw}/status`, { path: `${hw}/status`, value: 2, ts: 1, quality: "valid" });
    }
    const root = document.createElement("div");
    document.body.appendChild(root);
    const g = new HVGrid(world.api, world.state, root, "ecal1", role);
    await g.load();
    return { g, root, world };
  }

  it("guest sees a read-only grid", async () => {
    const { root } = await grid("guest");
    expect(root.querySelectorAll(".hv-cell").length).toBe(4);
    expect(root.querySelector("button")).toBeNull();
  });

  it("switch-off is exactly one API call with no optimistic flip", async () => {
    const { g, root, world } = await grid("shift");
    const before = world.calls.filter((c) => c.path.startsWith("/api/hv/command")).length;
    await g.switchChannel("ecal1/hv/ch000", false);
    const after = world.calls.filter((c) => c.path.startsWith("/api/hv/command")).length;
    expect(after - before).toBe(1);
    // the tile still shows ON until the server pushes a new status value
    expect(root.querySelector(".hv-cell")!.className).toContain("on");
    world.state.values.set("caen/crate00/ch000/status",
                           { path: "caen/crate00/ch000/status", value: 3, ts: 2, quality: "valid" });
    g.render();
    expect(root.querySelector(".hv-cell")!.className).toContain("ramping");
  });

  it("a 3000-channel grid renders and re-renders within budget", async () => {
    const { g, root } = await grid("guest", 3000);
    expect(root.querySelectorAll(".hv-cell").length).toBe(3000);
    const start = performance.now();
    g.render();
    expect(performance.now() - start).toBeLessThan(3000);
  });
});
