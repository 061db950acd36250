/**
 * Annotation session state: the loaded image, the annotation list, and an
 * undo stack.  Every mutating action snapshots the prior state, so undo is
 * an exact restore.  No DOM access here; the canvas layer renders whatever
 * this state holds.
 */

import type { Point, RegionAnnotation, RegionClass, AnnotationSource } from "./schema.js";
import { parseDocument, serializeDocument } from "./schema.js";
import { dragVertex, insertVertex, deleteVertex } from "./polygon.js";
import { translatePolygon } from "./polygon.js";

export interface Box {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface SessionAnnotation extends RegionAnnotation {
  /** Pre-refinement contour in page coordinates, kept for visual diffing. */
  initial_polygon?: Point[];
}

function cloneAnnotation(a: SessionAnnotation): SessionAnnotation {
  return {
    image_id: a.image_id,
    bbox: [...a.bbox] as [number, number, number, number],
    polygon: a.polygon.map((p) => [...p] as Point),
    region_class: a.region_class,
    source: a.source,
    initial_polygon: a.initial_polygon?.map((p) => [...p] as Point),
  };
}

export class Session {
  readonly annotations: SessionAnnotation[] = [];
  private undoStack: SessionAnnotation[][] = [];
  imageId = "";

  constructor(public readonly serviceUrl: string = "") {}

  private snapshot(): void {
    this.undoStack.push(this.annotations.map(cloneAnnotation));
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) {
      return false;
    }
    this.annotations.splice(0, this.annotations.length, ...prev);
    return true;
  }

  /**
   * Record a service response for a drawn box.  The service works in crop
   * coordinates; polygons are translated back into page space here.
   */
  addFromService(
    box: Box,
    cropPolygon: Point[],
    cropInitial: Point[],
    regionClass: string,
    source: AnnotationSource = "predicted",
  ): SessionAnnotation {
    this.snapshot();
    const ann: SessionAnnotation = {
      image_id: this.imageId || "page",
      bbox: [box.x, box.y, box.w, box.h],
      polygon: translatePolygon(cropPolygon, box.x, box.y),
      initial_polygon: translatePolygon(cropInitial, box.x, box.y),
      region_class: regionClass as RegionClass,
      source,
    };
    this.annotations.push(ann);
    return ann;
  }

  dragVertex(annIndex: number, vertexIndex: number, dx: number, dy: number): void {
    this.snapshot();
    const ann = this.annotations[annIndex];
    ann.polygon = dragVertex(ann.polygon, vertexIndex, dx, dy);
    ann.source = "human_corrected";
  }

  insertVertex(annIndex: number, edgeIndex: number): void {
    this.snapshot();
    const ann = this.annotations[annIndex];
    ann.polygon = insertVertex(ann.polygon, edgeIndex);
    ann.source = "human_corrected";
  }

  /** Deleting below the 3-vertex minimum throws and leaves state intact. */
  deleteVertex(annIndex: number, vertexIndex: number): void {
    const ann = this.annotations[annIndex];
    const edited = deleteVertex(ann.polygon, vertexIndex); // may throw before snapshot
    this.snapshot();
    ann.polygon = edited;
    ann.source = "human_corrected";
  }

  setRegionClass(annIndex: number, regionClass: RegionClass): void {
    this.snapshot();
    this.annotations[annIndex].region_class = regionClass;
    this.annotations[annIndex].source = "human_corrected";
  }

  deleteAnnotation(annIndex: number): void {
    this.snapshot();
    this.annotations.splice(annIndex, 1);
  }

  /** Replace exactly one annotation's polygon with a refine response. */
  applyRefined(annIndex: number, cropPolygon: Point[]): void {
    this.snapshot();
    const ann = this.annotations[annIndex];
    const [bx, by] = ann.bbox;
    ann.polygon = translatePolygon(cropPolygon, bx, by);
    ann.source = "predicted";
  }

  exportJson(): string {
    return serializeDocument(this.annotations);
  }

  importJson(text: string): void {
    const doc = parseDocument(text);
    this.snapshot();
    this.annotations.splice(
      0,
      this.annotations.length,
      ...doc.annotations.map((a) => cloneAnnotation(a)),
    );
  }
}
