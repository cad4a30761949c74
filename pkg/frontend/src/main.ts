/** Console wiring: login, synoptic navigation, alarm table, trends, HV. */
import { Api, ApiError } from "./api.js";
import { AlarmSound } from "./audio.js";
import { AlarmTable } from "./alarmTable.js";
import { HVGrid } from "./hvGrid.js";
import { DEFAULT_LAYOUT, Panel, PanelLayout, breadcrumbs, parseLayout } from "./panels.js";
import { ConsoleState } from "./state.js";
import { TrendTemplate, TrendView } from "./trend.js";
import { LoginReply, SEVERITY_COLORS, Severity } from "./types.js";

const TEMPLATES: TrendTemplate[] = [
  { name: "Gas flows", items: ["gas/plc00/flow/actual", "gas/plc01/flow/actual"] },
  { name: "Magnet fields", items: ["magnets/SM1/field", "magnets/SM2/field"],
    y: { min: 0, max: 1.2 } },
  { name: "Card temperatures", items: ["elmb/tb00/ch00/value", "elmb/tb00/ch03/value"] },
];

class ConsoleApp {
  api = new Api("");
  state = new ConsoleState(this.api);
  sound = new AlarmSound();
  session: LoginReply | null = null;
  layout: PanelLayout = parseLayout(DEFAULT_LAYOUT);
  current = this.layout.root;
  trend: TrendView | null = null;

  constructor(private root: HTMLElement) {
    this.api.onAuthExpired = () => this.showLogin("session expired, log in again");
    this.state.onCame = () => this.sound.onCame();
  }

  start(): void {
    this.showLogin("");
  }

  // -- login ----------------------------------------------------------------

  showLogin(notice: string): void {
    this.state.stop();
    this.session = null;
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();
    const box = doc.createElement("div");
    box.className = "login-box";
    box.innerHTML = `
      <h1>slow control console</h1>
      <p class="notice">${notice}</p>
      <label>user <input id="user" value="shift"></label>
      <label>password <input id="password" type="password" value="shift"></label>
      <button id="login-btn">log in</button>
      <p class="login-error" id="login-error"></p>`;
    this.root.appendChild(box);
    const btn = doc.getElementById("login-btn") as HTMLButtonElement;
    btn.onclick = () => void this.doLogin();
  }

  async doLogin(): Promise<void> {
    const doc = this.root.ownerDocument;
    const user = (doc.getElementById("user") as HTMLInputElement).value;
    const password = (doc.getElementById("password") as HTMLInputElement).value;
    try {
      this.session = await this.api.login(user, password);
    } catch (err) {
      const el = doc.getElementById("login-error");
      if (el) el.textContent = err instanceof ApiError ? err.message : String(err);
      return;
    }
    await this.state.start();
    this.showPanel(this.layout.root);
  }

  // -- panels ------------------------------------------------------------------

  showPanel(id: string): void {
    this.current = id;
    const panel = this.layout.panels.get(id);
    if (!panel || !this.session) return;
    const doc = this.root.ownerDocument;
    this.root.replaceChildren();

    const bar = doc.createElement("div");
    bar.className = "topbar";
    const crumbs = doc.createElement("span");
    for (const p of breadcrumbs(this.layout, id)) {
      const a = doc.createElement("a");
      a.textContent = p.title;
      a.href = "#";
      a.onclick = (e) => { e.preventDefault(); this.showPanel(p.id); };
      crumbs.append(a, doc.createTextNode(" / "));
    }
    const who = doc.createElement("span");
    who.className = "who";
    who.textContent = `${this.session.user} (${this.session.role})`;
    const out = doc.createElement("button");
    out.textContent = "log out";
    out.onclick = () => void this.api.logout().then(() => this.showLogin("logged out"));
    bar.append(crumbs, who, out);
    this.root.appendChild(bar);

    const body = doc.createElement("div");
    body.className = "panel-body";
    this.root.appendChild(body);

    for (const hotspot of panel.hotspots) {
      const b = doc.createElement("button");
      b.className = "hotspot";
      b.textContent = hotspot.label;
      b.style.left = `${hotspot.x}%`;
      b.style.top = `${hotspot.y}%`;
      const rollup = this.state.summary[hotspot.panel];
      b.style.borderColor = SEVERITY_COLORS[(rollup?.severity ?? "OK") as Severity];
      b.onclick = () => this.showPanel(hotspot.panel);
      body.appendChild(b);
    }

    for (const widget of panel.widgets) {
      const box = doc.createElement("section");
      const h = doc.createElement("h2");
      h.textContent = widget.title;
      box.appendChild(h);
      const mount = doc.createElement("div");
      box.appendChild(mount);
      body.appendChild(box);
      if (widget.kind === "alarm-table") {
        new AlarmTable(this.api, this.state, mount, this.session.role).render();
      } else if (widget.kind === "rollup") {
        this.renderRollup(mount);
      } else if (widget.kind === "hv-grid") {
        const grid = new HVGrid(this.api, this.state, mount, widget.items[0],
                                this.session.role);
        void grid.load();
      } else if (widget.kind === "trend") {
        this.mountTrend(mount, widget.items);
      } else if (widget.kind === "value") {
        this.renderValues(mount, widget.items);
      }
    }
  }

  renderRollup(mount: HTMLElement): void {
    const doc = mount.ownerDocument;
    const render = () => {
      mount.replaceChildren();
      const table = doc.createElement("table");
      table.className = "rollup";
      for (const [det, entry] of Object.entries(this.state.summary).sort()) {
        const tr = doc.createElement("tr");
        const name = doc.createElement("td");
        name.textContent = det;
        const sev = doc.createElement("td");
        sev.textContent = `${entry.severity} (${entry.active})`;
        sev.style.color = SEVERITY_COLORS[entry.severity];
        tr.append(name, sev);
        table.appendChild(tr);
      }
      mount.appendChild(table);
    };
    this.state.subscribe(render);
    render();
  }

  renderValues(mount: HTMLElement, items: string[]): void {
    const doc = mount.ownerDocument;
    const render = () => {
      mount.replaceChildren();
      const list = doc.createElement("dl");
      for (const path of items) {
        const dt = doc.createElement("dt");
        dt.textContent = path;
        const dd = doc.createElement("dd");
        const entry = this.state.values.get(path);
        dd.textContent = entry ? `${entry.value} [${entry.quality}]` : "...";
        if (entry && entry.quality !== "valid") dd.classList.add("degraded");
        list.append(dt, dd);
      }
      mount.appendChild(list);
    };
    this.state.subscribe(render);
    render();
    void this.api.values(items).then((reply) => {
      for (const v of reply.values) {
        if (!v.error && v.ts !== undefined) {
          this.state.values.set(v.path, { path: v.path, value: v.value ?? null,
                                          ts: v.ts, quality: v.quality ?? "valid" });
        }
      }
      render();
    });
  }

  mountTrend(mount: HTMLElement, items: string[]): void {
    const doc = mount.ownerDocument;
    const canvas = doc.createElement("canvas");
    canvas.width = 800;
    canvas.height = 300;
    mount.appendChild(canvas);
    const controls = doc.createElement("div");
    controls.className = "trend-controls";
    const input = doc.createElement("input");
    input.placeholder = "add item (path or alias)";
    const add = doc.createElement("button");
    add.textContent = "add";
    const reset = doc.createElement("button");
    reset.textContent = "reset zoom";
    const csv = doc.createElement("a");
    csv.textContent = "export CSV";
    const png = doc.createElement("a");
    png.textContent = "export PNG";
    const tplSelect = doc.createElement("select");
    for (const tpl of TEMPLATES) {
      const opt = doc.createElement("option");
      opt.textContent = tpl.name;
      tplSelect.appendChild(opt);
    }
    const tplOpen = doc.createElement("button");
    tplOpen.textContent = "open template";
    controls.append(input, add, reset, csv, png, tplSelect, tplOpen);
    mount.appendChild(controls);
    const notice = doc.createElement("div");
    notice.className = "trend-notice";
    mount.appendChild(notice);

    this.trend = new TrendView(this.api, canvas);
    const view = this.trend;
    add.onclick = () => void view.addItem(input.value).then(() => {
      notice.textContent = view.notice;
    });
    reset.onclick = () => view.resetZoom();
    csv.onclick = (e) => {
      e.preventDefault();
      (doc.defaultView ?? window).open(view.csvUrl(), "_blank");
    };
    png.onclick = (e) => {
      e.preventDefault();
      const a = doc.createElement("a");
      a.href = view.pngDataUrl();
      a.download = "trend.png";
      a.click();
    };
    tplOpen.onclick = () => {
      const tpl = TEMPLATES[tplSelect.selectedIndex];
      void view.openTemplate(tpl).then(() => { notice.textContent = view.notice; });
    };
    for (const item of items) void view.addItem(item);
  }
}

export function mount(root: HTMLElement): ConsoleApp {
  const app = new ConsoleApp(root);
  app.start();
  return app;
}

declare global {
  interface Window { slowctlConsole?: ConsoleApp }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  window.slowctlConsole = mount(document.getElementById("app") as HTMLElement);
}
