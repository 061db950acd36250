/**
 * Client for the inference service.  The fetch implementation is injectable
 * so tests can stub the network; all payloads match the service's JSON
 * contract exactly.
 */

import type { Point } from "./schema.js";

export interface InferResult {
  polygon: Point[];
  initial_polygon: Point[];
  region_class: string;
  class_probs: number[];
  model: string;
}

export interface RefineResult {
  polygon: Point[];
  model: string;
}

export class ServiceUnavailableError extends Error {}

export class ServiceRequestError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = "ServiceRequestError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async post(path: string, body: unknown): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (e) {
      throw new ServiceUnavailableError(`service unreachable: ${(e as Error).message}`);
    }
    const text = await response.text();
    if (!response.ok) {
      let reason = text;
      try {
        reason = (JSON.parse(text) as { error?: string }).error ?? text;
      } catch {
        // non-JSON error body; report it raw
      }
      throw new ServiceRequestError(response.status, reason);
    }
    return JSON.parse(text);
  }

  async health(): Promise<{ status: string; model: string }> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}/health`);
    } catch (e) {
      throw new ServiceUnavailableError(`service unreachable: ${(e as Error).message}`);
    }
    if (!response.ok) {
      throw new ServiceRequestError(response.status, await response.text());
    }
    return (await response.json()) as { status: string; model: string };
  }

  async infer(imageBase64: string, knownClass?: string): Promise<InferResult> {
    const body: Record<string, unknown> = { image_base64: imageBase64 };
    if (knownClass !== undefined) {
      body.known_class = knownClass;
    }
    return (await this.post("/infer", body)) as InferResult;
  }

  async refine(imageBase64: string, polygon: Point[]): Promise<RefineResult> {
    return (await this.post("/refine", {
      image_base64: imageBase64,
      polygon,
    })) as RefineResult;
  }
}
