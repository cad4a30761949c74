/** Panel layouts: the synoptic navigation tree, driven by a layout file so
 * no detector geometry is hardcoded. Panels form a tree rooted at "main". */

export type WidgetKind = "value" | "alarm-table" | "trend" | "hv-grid" | "rollup";

export interface Widget {
  kind: WidgetKind;
  title: string;
  items: string[];          // datapoint paths/aliases or detector names
}

export interface Panel {
  id: string;
  title: string;
  parent: string | null;
  widgets: Widget[];
  hotspots: { panel: string; label: string; x: number; y: number }[];
}

export interface PanelLayout {
  root: string;
  panels: Map<string, Panel>;
}

export class LayoutError extends Error {}

export function parseLayout(doc: unknown): PanelLayout {
  const spec = doc as { root?: string; panels?: Panel[] };
  if (!spec.root || !Array.isArray(spec.panels)) {
    throw new LayoutError("layout needs {root, panels[]}");
  }
  const panels = new Map<string, Panel>();
  for (const p of spec.panels) {
    if (panels.has(p.id)) throw new LayoutError(`duplicate panel id ${p.id}`);
    panels.set(p.id, { id: p.id, title: p.title, parent: p.parent ?? null,
                       widgets: p.widgets ?? [], hotspots: p.hotspots ?? [] });
  }
  if (!panels.has(spec.root)) throw new LayoutError(`root panel ${spec.root} missing`);
  // must form a tree rooted at root: every non-root panel's parent chain ends there
  for (const p of panels.values()) {
    if (p.id === spec.root) continue;
    const seen: Set<string> = new Set([p.id]);
    let cursor: string | null = p.parent;
    while (cursor !== null) {
      if (seen.has(cursor)) throw new LayoutError(`panel cycle at ${cursor}`);
      seen.add(cursor);
      if (cursor === spec.root) break;
      const next = panels.get(cursor);
      if (!next) throw new LayoutError(`panel ${p.id}: unknown parent ${cursor}`);
      cursor = next.parent;
    }
    if (cursor === null) throw new LayoutError(`panel ${p.id} is not attached to the root`);
  }
  return { root: spec.root, panels };
}

export function breadcrumbs(layout: PanelLayout, id: string): Panel[] {
  const out: Panel[] = [];
  let cursor: string | null = id;
  while (cursor !== null) {
    const p = layout.panels.get(cursor);
    if (!p) break;
    out.unshift(p);
    cursor = p.parent;
  }
  return out;
}

/** The shipped illustrative layout for the mini fleet: summary rows are
 * grouped by subsystem (documented as illustrative, not a fixed contract). */
export const DEFAULT_LAYOUT = {
  root: "main",
  panels: [
    { id: "main", title: "Experiment", parent: null,
      widgets: [{ kind: "alarm-table", title: "Alerts", items: [] },
                { kind: "rollup", title: "Summary status", items: [] }],
      hotspots: [
        { panel: "ecal1", label: "ECAL1", x: 20, y: 40 },
        { panel: "ecal2", label: "ECAL2", x: 45, y: 40 },
        { panel: "gas", label: "Gas systems", x: 70, y: 30 },
        { panel: "beamline", label: "Beamline", x: 10, y: 70 },
      ] },
    { id: "ecal1", title: "ECAL1", parent: "main",
      widgets: [{ kind: "hv-grid", title: "High voltage", items: ["ecal1"] },
                { kind: "trend", title: "Temperatures", items: ["elmb/tb00/ch00/value"] }],
      hotspots: [] },
    { id: "ecal2", title: "ECAL2", parent: "main",
      widgets: [{ kind: "hv-grid", title: "High voltage", items: ["ecal2"] }],
      hotspots: [] },
    { id: "gas", title: "Gas systems", parent: "main",
      widgets: [{ kind: "value", title: "Flows",
                  items: ["gas/plc00/flow/actual", "gas/plc00/mix/actual",
                          "gas/plc01/flow/actual", "gas/plc01/mix/actual"] }],
      hotspots: [] },
    { id: "beamline", title: "Beamline", parent: "main",
      widgets: [{ kind: "value", title: "Magnets",
                  items: ["magnets/SM1/field", "magnets/SM2/field", "magnets/Bend6/field"] },
                { kind: "value", title: "CEDAR",
                  items: ["cedar/cedar1/gas_density", "cedar/cedar2/gas_density"] }],
      hotspots: [] },
  ],
};
