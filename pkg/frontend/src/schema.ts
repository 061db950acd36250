/**
 * Annotation document schema shared with the inference engine.
 *
 * The exported JSON shape is identical to the engine's annotation files:
 * {"version": 1, "annotations": [{image_id, bbox, polygon, region_class,
 * source}]} so ground-truth files render directly and exports feed straight
 * back into evaluation.
 */

export type Point = [number, number];

export const REGION_CLASSES = [
  "Hole",
  "Line Segment",
  "Degradation",
  "Character",
  "Picture",
  "Decorator",
  "Library Marker",
  "Boundary Line",
] as const;

export type RegionClass = (typeof REGION_CLASSES)[number];

export const ANNOTATION_SOURCES = ["ground_truth", "predicted", "human_corrected"] as const;

export type AnnotationSource = (typeof ANNOTATION_SOURCES)[number];

export interface RegionAnnotation {
  image_id: string;
  bbox: [number, number, number, number]; // x, y, w, h in page coordinates
  polygon: Point[]; // page coordinates
  region_class: RegionClass;
  source: AnnotationSource;
}

export interface AnnotationDocument {
  version: 1;
  annotations: RegionAnnotation[];
}

export class SchemaError extends Error {
  constructor(public readonly field: string, message: string) {
    super(`${field}: ${message}`);
    this.name = "SchemaError";
  }
}

const BBOX_TOLERANCE_PX = 5;

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

export function validateAnnotation(obj: unknown, where: string): RegionAnnotation {
  if (typeof obj !== "object" || obj === null) {
    throw new SchemaError(where, "expected an object");
  }
  const rec = obj as Record<string, unknown>;
  for (const field of ["image_id", "bbox", "polygon", "region_class"]) {
    if (!(field in rec)) {
      throw new SchemaError(`${where}.${field}`, "missing field");
    }
  }
  if (typeof rec.image_id !== "string" || rec.image_id.length === 0) {
    throw new SchemaError(`${where}.image_id`, "must be a non-empty string");
  }
  const bbox = rec.bbox;
  if (!Array.isArray(bbox) || bbox.length !== 4 || !bbox.every(isFiniteNumber)) {
    throw new SchemaError(`${where}.bbox`, "expected [x, y, w, h] numbers");
  }
  const [bx, by, bw, bh] = bbox as [number, number, number, number];
  if (bw <= 0 || bh <= 0) {
    throw new SchemaError(`${where}.bbox`, "width and height must be positive");
  }
  const polygon = rec.polygon;
  if (!Array.isArray(polygon) || polygon.length < 3) {
    throw new SchemaError(`${where}.polygon`, "needs at least 3 points");
  }
  const points: Point[] = polygon.map((p, i) => {
    if (!Array.isArray(p) || p.length !== 2 || !p.every(isFiniteNumber)) {
      throw new SchemaError(`${where}.polygon[${i}]`, "expected an [x, y] pair");
    }
    return [p[0], p[1]];
  });
  const t = BBOX_TOLERANCE_PX;
  for (const [x, y] of points) {
    if (x < bx - t || x > bx + bw + t || y < by - t || y > by + bh + t) {
      throw new SchemaError(`${where}.polygon`, `points outside bbox (tolerance ${t} px)`);
    }
  }
  const regionClass = rec.region_class;
  if (!REGION_CLASSES.includes(regionClass as RegionClass)) {
    throw new SchemaError(
      `${where}.region_class`,
      `unknown class ${JSON.stringify(regionClass)}; expected one of ${REGION_CLASSES.join(", ")}`,
    );
  }
  const source = rec.source ?? "predicted";
  if (!ANNOTATION_SOURCES.includes(source as AnnotationSource)) {
    throw new SchemaError(`${where}.source`, `unknown source ${JSON.stringify(source)}`);
  }
  return {
    image_id: rec.image_id,
    bbox: [bx, by, bw, bh],
    polygon: points,
    region_class: regionClass as RegionClass,
    source: source as AnnotationSource,
  };
}

export function parseDocument(text: string): AnnotationDocument {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (e) {
    throw new SchemaError("document", `not valid JSON: ${(e as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null) {
    throw new SchemaError("document", "expected a JSON object");
  }
  const rec = doc as Record<string, unknown>;
  if (rec.version !== 1) {
    throw new SchemaError("version", "expected 1");
  }
  if (!Array.isArray(rec.annotations)) {
    throw new SchemaError("annotations", "expected a list");
  }
  return {
    version: 1,
    annotations: rec.annotations.map((a, i) => validateAnnotation(a, `annotations[${i}]`)),
  };
}

export function serializeDocument(annotations: RegionAnnotation[]): string {
  const doc: AnnotationDocument = {
    version: 1,
    annotations: annotations.map((a) => ({
      image_id: a.image_id,
      bbox: [...a.bbox] as [number, number, number, number],
      polygon: a.polygon.map((p) => [...p] as Point),
      region_class: a.region_class,
      source: a.source,
    })),
  };
  return JSON.stringify(doc, null, 2) + "\n";
}
