/**
 * Application wiring: file loading, mouse interactions, service calls, and
 * the toolbar.  State lives in Session; geometry edits live in polygon.ts;
 * this file only glues DOM events to those operations.
 */

import { ServiceClient, ServiceUnavailableError, ServiceRequestError } from "./api.js";
import { AnnotationCanvas } from "./canvas.js";
import { hitTestVertex, hitTestEdge } from "./polygon.js";
import { REGION_CLASSES, type RegionClass } from "./schema.js";
import { Session, type Box } from "./session.js";

const SERVICE_URL = (window as { POLYREFINE_SERVICE_URL?: string }).POLYREFINE_SERVICE_URL ?? "http://127.0.0.1:8008";
const HANDLE_RADIUS_PX = 6;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

type Mode =
  | { kind: "idle" }
  | { kind: "drawing"; start: [number, number]; box: Box }
  | { kind: "dragging"; ann: number; vertex: number; lastX: number; lastY: number };

class App {
  private session = new Session(SERVICE_URL);
  private client = new ServiceClient(SERVICE_URL);
  private canvas: AnnotationCanvas;
  private image: HTMLImageElement | null = null;
  private selected = -1;
  private mode: Mode = { kind: "idle" };
  private pendingBox: Box | null = null; // kept on service failure for retry
  private busy = false;

  constructor(private readonly canvasEl: HTMLCanvasElement) {
    this.canvas = new AnnotationCanvas(canvasEl);
    this.bindToolbar();
    this.bindMouse();
    this.populateClassSelect();
    this.redraw();
  }

  private bindToolbar(): void {
    el<HTMLInputElement>("file-input").addEventListener("change", (ev) => {
      const input = ev.target as HTMLInputElement;
      const file = input.files?.[0];
      if (file) {
        void this.loadImageFile(file);
      }
    });
    el<HTMLButtonElement>("undo-btn").addEventListener("click", () => {
      if (this.session.undo()) {
        this.selected = Math.min(this.selected, this.session.annotations.length - 1);
        this.redraw();
      }
    });
    el<HTMLButtonElement>("refine-btn").addEventListener("click", () => void this.refineSelected());
    el<HTMLButtonElement>("delete-btn").addEventListener("click", () => {
      if (this.selected >= 0) {
        this.session.deleteAnnotation(this.selected);
        this.selected = -1;
        this.redraw();
      }
    });
    el<HTMLButtonElement>("export-btn").addEventListener("click", () => this.exportFile());
    el<HTMLInputElement>("import-input").addEventListener("change", (ev) => {
      const input = ev.target as HTMLInputElement;
      const file = input.files?.[0];
      if (file) {
        void this.importFile(file);
      }
    });
    el<HTMLSelectElement>("class-select").addEventListener("change", (ev) => {
      if (this.selected >= 0) {
        const value = (ev.target as HTMLSelectElement).value as RegionClass;
        this.session.setRegionClass(this.selected, value);
        this.redraw();
      }
    });
  }

  private populateClassSelect(): void {
    const select = el<HTMLSelectElement>("class-select");
    for (const name of REGION_CLASSES) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      select.appendChild(opt);
    }
  }

  private setError(message: string | null): void {
    const banner = el<HTMLDivElement>("error-banner");
    banner.textContent = message ?? "";
    banner.style.display = message ? "block" : "none";
  }

  private setStatus(message: string): void {
    el<HTMLSpanElement>("status").textContent = message;
  }

  private async loadImageFile(file: File): Promise<void> {
    const url = URL.createObjectURL(file);
    const image = new Image();
    await new Promise<void>((resolve, reject) => {
      image.onload = () => resolve();
      image.onerror = () => reject(new Error("could not decode image"));
      image.src = url;
    });
    this.image = image;
    this.session.imageId = file.name;
    this.canvas.fitTo(image.naturalWidth, image.naturalHeight, 1100);
    this.setStatus(`${file.name} (${image.naturalWidth}x${image.naturalHeight})`);
    this.redraw();
  }

  private bindMouse(): void {
    this.canvasEl.addEventListener("mousedown", (ev) => this.onMouseDown(ev));
    this.canvasEl.addEventListener("mousemove", (ev) => this.onMouseMove(ev));
    window.addEventListener("mouseup", (ev) => void this.onMouseUp(ev));
    this.canvasEl.addEventListener("dblclick", (ev) => this.onDoubleClick(ev));
    window.addEventListener("keydown", (ev) => {
      if (ev.key === "Delete" || ev.key === "Backspace") {
        this.onDeleteKey(ev);
      }
    });
  }

  private onMouseDown(ev: MouseEvent): void {
    if (!this.image || this.busy) {
      return;
    }
    const [x, y] = this.canvas.toImage(ev);
    const radius = HANDLE_RADIUS_PX / this.canvas.view.scale;
    if (this.selected >= 0) {
      const ann = this.session.annotations[this.selected];
      const v = hitTestVertex(ann.polygon, x, y, radius);
      if (v >= 0) {
        this.mode = { kind: "dragging", ann: this.selected, vertex: v, lastX: x, lastY: y };
        return;
      }
    }
    const hit = this.session.annotations.findIndex(
      (ann) => hitTestVertex(ann.polygon, x, y, radius * 2) >= 0,
    );
    if (hit >= 0) {
      this.selected = hit;
      this.syncClassSelect();
      this.redraw();
      return;
    }
    this.mode = { kind: "drawing", start: [x, y], box: { x, y, w: 0, h: 0 } };
  }

  private onMouseMove(ev: MouseEvent): void {
    if (this.mode.kind === "drawing") {
      const [x, y] = this.canvas.toImage(ev);
      const [sx, sy] = this.mode.start;
      this.mode.box = {
        x: Math.min(sx, x),
        y: Math.min(sy, y),
        w: Math.abs(x - sx),
        h: Math.abs(y - sy),
      };
      this.pendingBox = this.mode.box;
      this.redraw();
    } else if (this.mode.kind === "dragging") {
      const [x, y] = this.canvas.toImage(ev);
      this.session.dragVertex(
        this.mode.ann,
        this.mode.vertex,
        x - this.mode.lastX,
        y - this.mode.lastY,
      );
      this.mode.lastX = x;
      this.mode.lastY = y;
      this.redraw();
    }
  }

  private async onMouseUp(_ev: MouseEvent): Promise<void> {
    if (this.mode.kind === "drawing") {
      const box = this.mode.box;
      this.mode = { kind: "idle" };
      if (box.w >= 8 && box.h >= 8) {
        await this.requestContour(box);
      } else {
        this.pendingBox = null;
        this.redraw();
      }
    } else if (this.mode.kind === "dragging") {
      this.mode = { kind: "idle" };
    }
  }

  private onDoubleClick(ev: MouseEvent): void {
    if (this.selected < 0) {
      return;
    }
    const [x, y] = this.canvas.toImage(ev);
    const radius = HANDLE_RADIUS_PX / this.canvas.view.scale;
    const ann = this.session.annotations[this.selected];
    const edge = hitTestEdge(ann.polygon, x, y, radius);
    if (edge >= 0) {
      this.session.insertVertex(this.selected, edge);
      this.redraw();
    }
  }

  private onDeleteKey(ev: KeyboardEvent): void {
    if (this.selected < 0 || this.busy || !(ev.target instanceof HTMLBodyElement)) {
      return;
    }
    const ann = this.session.annotations[this.selected];
    const last = ann.polygon.length - 1;
    try {
      this.session.deleteVertex(this.selected, last);
      this.redraw();
    } catch (e) {
      this.setError((e as Error).message);
    }
  }

  private cropToBase64(box: Box): string {
    if (!this.image) {
      throw new Error("no image loaded");
    }
    const crop = document.createElement("canvas");
    crop.width = Math.round(box.w);
    crop.height = Math.round(box.h);
    const ctx = crop.getContext("2d");
    if (!ctx) {
      throw new Error("2d context unavailable");
    }
    ctx.drawImage(
      this.image,
      Math.round(box.x),
      Math.round(box.y),
      crop.width,
      crop.height,
      0,
      0,
      crop.width,
      crop.height,
    );
    return crop.toDataURL("image/png").split(",", 2)[1];
  }

  private async requestContour(box: Box): Promise<void> {
    const rounded: Box = {
      x: Math.round(box.x),
      y: Math.round(box.y),
      w: Math.round(box.w),
      h: Math.round(box.h),
    };
    this.busy = true;
    this.setStatus("inferring contour...");
    try {
      const result = await this.client.infer(this.cropToBase64(rounded));
      this.session.addFromService(rounded, result.polygon, result.initial_polygon, result.region_class);
      this.selected = this.session.annotations.length - 1;
      this.pendingBox = null;
      this.setError(null);
      this.syncClassSelect();
      this.setStatus(`contour received (${result.region_class})`);
    } catch (e) {
      // keep the drawn box so the user can retry without redrawing
      this.pendingBox = rounded;
      if (e instanceof ServiceUnavailableError) {
        this.setError("annotation service unreachable; box kept, retry when it is back");
      } else if (e instanceof ServiceRequestError) {
        this.setError(`service rejected the crop: ${e.message}`);
      } else {
        this.setError((e as Error).message);
      }
    } finally {
      this.busy = false;
      this.redraw();
    }
  }

  private async refineSelected(): Promise<void> {
    if (this.selected < 0 || this.busy) {
      return;
    }
    const ann = this.session.annotations[this.selected];
    const [bx, by, bw, bh] = ann.bbox;
    const cropPolygon = ann.polygon.map(([x, y]) => [x - bx, y - by] as [number, number]);
    this.busy = true;
    this.setStatus("refining...");
    try {
      const result = await this.client.refine(
        this.cropToBase64({ x: bx, y: by, w: bw, h: bh }),
        cropPolygon,
      );
      this.session.applyRefined(this.selected, result.polygon);
      this.setError(null);
      this.setStatus("refined");
    } catch (e) {
      // refine failure leaves the user's edits intact
      this.setError(`refine failed: ${(e as Error).message}`);
    } finally {
      this.busy = false;
      this.redraw();
    }
  }

  private exportFile(): void {
    const blob = new Blob([this.session.exportJson()], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "annotations.json";
    a.click();
    URL.revokeObjectURL(a.href);
  }

  private async importFile(file: File): Promise<void> {
    try {
      this.session.importJson(await file.text());
      this.selected = -1;
      this.setError(null);
      this.setStatus(`imported ${this.session.annotations.length} annotations`);
    } catch (e) {
      this.setError(`import failed: ${(e as Error).message}`);
    }
    this.redraw();
  }

  private syncClassSelect(): void {
    if (this.selected >= 0) {
      el<HTMLSelectElement>("class-select").value =
        this.session.annotations[this.selected].region_class;
    }
  }

  private redraw(): void {
    this.canvas.render(this.image, this.session.annotations, this.selected, this.pendingBox);
    el<HTMLButtonElement>("undo-btn").disabled = !this.session.canUndo;
  }
}

window.addEventListener("DOMContentLoaded", () => {
  new App(el<HTMLCanvasElement>("annotation-canvas"));
});
