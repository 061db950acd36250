/**
 * Canvas rendering, device-pixel-ratio aware.  Page coordinates map to CSS
 * pixels through a single scale factor so exported coordinates always refer
 * to the underlying image pixels, never to screen pixels.
 */

import type { Point } from "./schema.js";
import type { Box, SessionAnnotation } from "./session.js";

export interface ViewTransform {
  scale: number; // CSS px per image px
}

export class AnnotationCanvas {
  private ctx: CanvasRenderingContext2D;
  view: ViewTransform = { scale: 1 };

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) {
      throw new Error("2d canvas context unavailable");
    }
    this.ctx = ctx;
  }

  /** Size the backing store for the image at the current DPR. */
  fitTo(imageWidth: number, imageHeight: number, maxCssWidth: number): void {
    const dpr = window.devicePixelRatio || 1;
    this.view.scale = Math.min(1, maxCssWidth / imageWidth);
    const cssW = imageWidth * this.view.scale;
    const cssH = imageHeight * this.view.scale;
    this.canvas.style.width = `${cssW}px`;
    this.canvas.style.height = `${cssH}px`;
    this.canvas.width = Math.round(cssW * dpr);
    this.canvas.height = Math.round(cssH * dpr);
    this.ctx.setTransform(dpr * this.view.scale, 0, 0, dpr * this.view.scale, 0, 0);
  }

  /** Mouse event position in image pixel coordinates. */
  toImage(ev: MouseEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return [(ev.clientX - rect.left) / this.view.scale, (ev.clientY - rect.top) / this.view.scale];
  }

  render(
    image: HTMLImageElement | null,
    annotations: SessionAnnotation[],
    selected: number,
    pendingBox: Box | null,
  ): void {
    const { ctx } = this;
    ctx.save();
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.restore();
    if (image) {
      ctx.drawImage(image, 0, 0);
    }
    annotations.forEach((ann, i) => {
      if (ann.initial_polygon) {
        this.drawPolygon(ann.initial_polygon, "rgba(255, 165, 0, 0.9)", 1, [4, 3]);
      }
      this.drawPolygon(ann.polygon, i === selected ? "#d6244f" : "#1f77b4", 2, []);
      if (i === selected) {
        this.drawHandles(ann.polygon);
      }
      const [bx, by] = ann.bbox;
      ctx.fillStyle = "rgba(0,0,0,0.65)";
      ctx.font = `${12 / this.view.scale}px sans-serif`;
      ctx.fillText(ann.region_class, bx + 2, Math.max(by - 3, 10));
    });
    if (pendingBox) {
      ctx.strokeStyle = "#2ca02c";
      ctx.lineWidth = 1.5 / this.view.scale;
      ctx.setLineDash([6, 4]);
      ctx.strokeRect(pendingBox.x, pendingBox.y, pendingBox.w, pendingBox.h);
      ctx.setLineDash([]);
    }
  }

  private drawPolygon(points: Point[], color: string, width: number, dash: number[]): void {
    if (points.length < 2) {
      return;
    }
    const { ctx } = this;
    ctx.strokeStyle = color;
    ctx.lineWidth = width / this.view.scale;
    ctx.setLineDash(dash.map((d) => d / this.view.scale));
    ctx.beginPath();
    ctx.moveTo(points[0][0], points[0][1]);
    for (const [x, y] of points.slice(1)) {
      ctx.lineTo(x, y);
    }
    ctx.closePath();
    ctx.stroke();
    ctx.setLineDash([]);
  }

  private drawHandles(points: Point[]): void {
    const { ctx } = this;
    const r = 3 / this.view.scale;
    ctx.fillStyle = "#ffffff";
    ctx.strokeStyle = "#d6244f";
    ctx.lineWidth = 1 / this.view.scale;
    for (const [x, y] of points) {
      ctx.beginPath();
      ctx.arc(x, y, r, 0, 2 * Math.PI);
      ctx.fill();
      ctx.stroke();
    }
  }
}
