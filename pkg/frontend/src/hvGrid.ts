/** High-voltage control grid: one tile per channel with vmon/imon/status,
 * switch on/off and load-reference actions. Guests see a read-only grid;
 * commands wait for the server ack (no optimistic flips for safety actions). */
import { Api } from "./api.js";
import { ConsoleState } from "./state.js";

export const STATUS_NAMES: Record<number, string> = {
  0: "OFF", 1: "RAMPING_UP", 2: "ON", 3: "RAMPING_DOWN", 4: "TRIPPED",
};

export const STATUS_CLASS: Record<number, string> = {
  0: "off", 1: "ramping", 2: "on", 3: "ramping", 4: "tripped",
};

export interface ChannelTile {
  alias: string;
  vmon: number | null;
  imon: number | null;
  status: number | null;
}

export class HVGrid {
  channels: string[] = [];
  lastMessage = "";

  constructor(private api: Api, private state: ConsoleState,
              private root: HTMLElement, public detector: string,
              private role: string) {
    state.subscribe(() => this.render());
  }

  get commandsEnabled(): boolean {
    return this.role !== "guest";
  }

  /** alias -> hardware channel path, from the alias endpoint */
  hardware = new Map<string, string>();

  async load(): Promise<void> {
    const reply = await this.api.aliases(`${this.detector}/hv`);
    this.hardware = new Map(Object.entries(reply.aliases));
    this.channels = [...this.hardware.keys()].sort();
    this.render();
  }

  tile(alias: string): ChannelTile {
    const hw = this.hardware.get(alias) ?? alias;
    const read = (leaf: string): number | null => {
      const v = this.state.values.get(`${hw}/${leaf}`)?.value;
      return typeof v === "number" ? v : null;
    };
    return { alias, vmon: read("vmon"), imon: read("imon"), status: read("status") };
  }

  async switchChannel(alias: string, on: boolean): Promise<void> {
    const reply = await this.api.hvCommand(alias, "power", on);
    this.lastMessage = reply.ok ? `${alias}: ${reply.message}`
                                : `${alias} DENIED: ${reply.message}`;
    this.render();
  }

  async loadReference(name: string): Promise<void> {
    const reply = await this.api.loadHvref(name);
    const bad = reply.report.filter((r) => r.status !== "OK").length;
    this.lastMessage = bad ? `reference ${name}: ${bad} failures`
                           : `reference ${name} loaded`;
    this.render();
  }

  render(): void {
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();
    const grid = doc.createElement("div");
    grid.className = "hv-grid";
    for (const alias of this.channels) {
      const t = this.tile(alias);
      const cell = doc.createElement("div");
      cell.className = `hv-cell ${STATUS_CLASS[t.status ?? 0] ?? "off"}`;
      cell.dataset.alias = alias;
      const name = doc.createElement("div");
      name.className = "hv-name";
      name.textContent = alias.split("/").pop() ?? alias;
      const vals = doc.createElement("div");
      vals.className = "hv-vals";
      vals.textContent = `${t.vmon?.toFixed(0) ?? "?"} V  ${t.imon?.toFixed(2) ?? "?"} uA`;
      const status = doc.createElement("div");
      status.className = "hv-status";
      status.textContent = STATUS_NAMES[t.status ?? -1] ?? "?";
      cell.append(name, vals, status);
      if (this.commandsEnabled) {
        const on = doc.createElement("button");
        on.textContent = "on";
        on.onclick = () => void this.switchChannel(alias, true);
        const off = doc.createElement("button");
        off.textContent = "off";
        off.onclick = () => void this.switchChannel(alias, false);
        cell.append(on, off);
      }
      grid.appendChild(cell);
    }
    this.root.appendChild(grid);
    if (this.lastMessage) {
      const note = doc.createElement("div");
      note.className = "hv-message";
      note.textContent = this.lastMessage;
      this.root.appendChild(note);
    }
  }
}
