/** Trending: values over time with mouse zooming and export.
 *
 * Scale arithmetic and zoom gestures are pure functions so they are testable
 * without a rendering context; the canvas drawing is a thin layer on top.
 * Wheel zooming scales the hovered axis; dragging a rectangle zooms both
 * axes to exactly the selection. CSV export defers to the server endpoint
 * (byte-equal to the API export); PNG export snapshots the canvas.
 */
import { Api } from "./api.js";
import { TrendSeries } from "./types.js";

export interface Range {
  min: number;
  max: number;
}

export interface ViewBox {
  x: Range;  // time, ms
  y: Range;  // value units
}

export interface TrendTemplate {
  name: string;
  items: string[];
  x?: Range;
  y?: Range;
}

export const SERIES_COLORS = ["#1f6feb", "#cf222e", "#2da44e", "#d4a72c",
                              "#8250df", "#bf3989", "#57606a"];

export function dataBounds(series: TrendSeries[]): ViewBox | null {
  let tMin = Infinity, tMax = -Infinity, vMin = Infinity, vMax = -Infinity;
  for (const s of series) {
    for (const p of s.samples) {
      if (p.v === null || typeof p.v !== "number") continue;
      tMin = Math.min(tMin, p.t);
      tMax = Math.max(tMax, p.t);
      vMin = Math.min(vMin, p.v);
      vMax = Math.max(vMax, p.v);
    }
  }
  if (!isFinite(tMin) || !isFinite(vMin)) return null;
  if (tMin === tMax) { tMin -= 500; tMax += 500; }
  if (vMin === vMax) { vMin -= 0.5; vMax += 0.5; }
  const pad = (vMax - vMin) * 0.05;
  return { x: { min: tMin, max: tMax }, y: { min: vMin - pad, max: vMax + pad } };
}

/** One wheel step over an axis: scale around the cursor's fraction. */
export function zoomRange(r: Range, fraction: number, factor: number): Range {
  const span = r.max - r.min;
  const anchor = r.min + span * fraction;
  const next = span * factor;
  return { min: anchor - next * fraction, max: anchor + next * (1 - fraction) };
}

/** Rectangle selection in pixel space to the exact data-space box. */
export function rectToBox(view: ViewBox, width: number, height: number,
                          x0: number, y0: number, x1: number, y1: number): ViewBox {
  const [pa, pb] = x0 < x1 ? [x0, x1] : [x1, x0];
  const [qa, qb] = y0 < y1 ? [y0, y1] : [y1, y0];
  const tx = (px: number) => view.x.min + (view.x.max - view.x.min) * (px / width);
  const ty = (py: number) => view.y.max - (view.y.max - view.y.min) * (py / height);
  return { x: { min: tx(pa), max: tx(pb) }, y: { min: ty(qb), max: ty(qa) } };
}

export function toPixel(view: ViewBox, width: number, height: number,
                        t: number, v: number): [number, number] {
  const px = (t - view.x.min) / (view.x.max - view.x.min) * width;
  const py = (1 - (v - view.y.min) / (view.y.max - view.y.min)) * height;
  return [px, py];
}

export class TrendView {
  items: string[] = [];
  view: ViewBox | null = null;
  series: TrendSeries[] = [];
  private selecting: { x: number; y: number } | null = null;
  notice = "";

  constructor(private api: Api, public canvas: HTMLCanvasElement,
              private windowMs: number = 3_600_000) {
    canvas.addEventListener("wheel", (e) => this.onWheel(e as WheelEvent));
    canvas.addEventListener("mousedown", (e) => this.onDown(e as MouseEvent));
    canvas.addEventListener("mouseup", (e) => this.onUp(e as MouseEvent));
  }

  async addItem(path: string): Promise<void> {
    if (!this.items.includes(path)) this.items.push(path);
    await this.refresh();
  }

  async openTemplate(tpl: TrendTemplate): Promise<void> {
    this.items = [...tpl.items];
    await this.refresh();
    if (this.view && tpl.x) this.view.x = { ...tpl.x };
    if (this.view && tpl.y) this.view.y = { ...tpl.y };
    this.draw();
  }

  async refresh(now: number = Date.now()): Promise<void> {
    if (this.items.length === 0) return;
    const t0 = this.view?.x.min ?? now - this.windowMs;
    const t1 = this.view?.x.max ?? now;
    const reply = await this.api.trend(this.items, Math.floor(t0), Math.ceil(t1), 2000);
    this.series = reply.series;
    const missing = reply.series.filter((s) => s.unknown_path).map((s) => s.path);
    this.notice = missing.length ? `not archived: ${missing.join(", ")}` : "";
    if (!this.view) this.view = dataBounds(this.series);
    this.draw();
  }

  onWheel(e: WheelEvent): void {
    if (!this.view) return;
    e.preventDefault();
    const rect = this.canvas.getBoundingClientRect();
    const factor = e.deltaY > 0 ? 1.25 : 0.8;
    if (e.shiftKey) {
      const fy = 1 - (e.clientY - rect.top) / rect.height;
      this.view.y = zoomRange(this.view.y, fy, factor);
    } else {
      const fx = (e.clientX - rect.left) / rect.width;
      this.view.x = zoomRange(this.view.x, fx, factor);
    }
    this.draw();
  }

  onDown(e: MouseEvent): void {
    const rect = this.canvas.getBoundingClientRect();
    this.selecting = { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  onUp(e: MouseEvent): void {
    if (!this.selecting || !this.view) { this.selecting = null; return; }
    const rect = this.canvas.getBoundingClientRect();
    const x1 = e.clientX - rect.left;
    const y1 = e.clientY - rect.top;
    const { x: x0, y: y0 } = this.selecting;
    this.selecting = null;
    if (Math.abs(x1 - x0) < 5 || Math.abs(y1 - y0) < 5) return; // a click, not a box
    this.view = rectToBox(this.view, rect.width, rect.height, x0, y0, x1, y1);
    void this.refresh();
  }

  resetZoom(): void {
    this.view = dataBounds(this.series);
    this.draw();
  }

  csvUrl(): string {
    const t0 = Math.floor(this.view?.x.min ?? 0);
    const t1 = Math.ceil(this.view?.x.max ?? Date.now());
    return this.api.exportCsvUrl(this.items, t0, t1);
  }

  pngDataUrl(): string {
    return this.canvas.toDataURL("image/png");
  }

  draw(): void {
    const ctx = this.canvas.getContext?.("2d");
    if (!ctx || !this.view) return;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#ffffff";
    ctx.fillRect(0, 0, width, height);
    ctx.strokeStyle = "#d0d7de";
    ctx.strokeRect(0.5, 0.5, width - 1, height - 1);
    this.drawGrid(ctx, width, height);
    this.series.forEach((s, i) => {
      ctx.strokeStyle = SERIES_COLORS[i % SERIES_COLORS.length];
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      let pen = false;
      for (const p of s.samples) {
        if (p.v === null || typeof p.v !== "number" || p.q !== "valid") {
          pen = false;  // outages break the line
          continue;
        }
        const [px, py] = toPixel(this.view!, width, height, p.t, p.v);
        if (pen) ctx.lineTo(px, py);
        else ctx.moveTo(px, py);
        pen = true;
      }
      ctx.stroke();
    });
  }

  private drawGrid(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    ctx.strokeStyle = "#eaeef2";
    ctx.fillStyle = "#57606a";
    ctx.font = "10px sans-serif";
    for (let i = 1; i < 5; i++) {
      const y = (height / 5) * i;
      ctx.beginPath();
      ctx.moveTo(0, y);
      ctx.lineTo(width, y);
      ctx.stroke();
      const v = this.view!.y.max - (this.view!.y.max - this.view!.y.min) * (i / 5);
      ctx.fillText(v.toPrecision(5), 4, y - 2);
    }
    for (let i = 1; i < 6; i++) {
      const x = (width / 6) * i;
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, height);
      ctx.stroke();
      const t = this.view!.x.min + (this.view!.x.max - this.view!.x.min) * (i / 6);
      ctx.fillText(new Date(t).toISOString().slice(11, 19), x + 2, height - 4);
    }
  }
}
