/**
 * Typed API client. All requests go through here: responses are validated
 * against the zod schemas and failures come back as structured errors, so
 * views can always render something. Every request is appended to `log`.
 */

import { z } from "zod";
import {
  errorSchema,
  healthSchema,
  relatedDiseasesSchema,
  relatedDrugsSchema,
  replacementsSchema,
  searchSchema,
} from "./schemas.js";
import type { SearchResponse } from "./schemas.js";

export interface ApiError {
  kind: "http" | "schema" | "network";
  status?: number;
  code?: string;
  message: string;
}

export type ApiResult<T> = { ok: true; data: T } | { ok: false; error: ApiError };

export interface RequestLogEntry {
  url: string;
  status: number | null; // null when the request never completed
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  readonly log: RequestLogEntry[] = [];
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly base: string = "",
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  search(q: string, offset = 0, limit = 10): Promise<ApiResult<SearchResponse>> {
    return this.get("/search", { q, offset: String(offset), limit: String(limit) }, searchSchema);
  }

  replacements(keywords: string, k = 5) {
    return this.get("/bio-api/replacements", { keywords, k: String(k) }, replacementsSchema);
  }

  relatedDrugs(keywords: string) {
    return this.get("/bio-api/drugs", { keywords }, relatedDrugsSchema);
  }

  relatedDiseases(keywords: string) {
    return this.get("/bio-api/diseases", { keywords }, relatedDiseasesSchema);
  }

  health() {
    return this.get("/healthz", {}, healthSchema);
  }

  private async get<S extends z.ZodType>(
    path: string,
    params: Record<string, string>,
    schema: S,
  ): Promise<ApiResult<z.infer<S>>> {
    const pairs = Object.entries(params);
    const query = pairs.length
      ? "?" + pairs.map(([k, v]) => `${k}=${encodeURIComponent(v)}`).join("&")
      : "";
    const url = `${this.base}${path}${query}`;
    const entry: RequestLogEntry = { url, status: null };
    this.log.push(entry);

    let response: Response;
    try {
      response = await this.fetchImpl(url);
    } catch (cause) {
      const message = cause instanceof Error ? cause.message : String(cause);
      return { ok: false, error: { kind: "network", message } };
    }
    entry.status = response.status;

    let body: unknown;
    try {
      body = await response.json();
    } catch {
      return {
        ok: false,
        error: { kind: "schema", status: response.status, message: "response is not JSON" },
      };
    }

    if (!response.ok) {
      const parsed = errorSchema.safeParse(body);
      return {
        ok: false,
        error: parsed.success
          ? {
              kind: "http",
              status: response.status,
              code: parsed.data.error,
              message: parsed.data.message,
            }
          : { kind: "http", status: response.status, message: `HTTP ${response.status}` },
      };
    }

    const parsed = schema.safeParse(body);
    if (!parsed.success) {
      return {
        ok: false,
        error: {
          kind: "schema",
          status: response.status,
          message: `unexpected response shape for ${path}`,
        },
      };
    }
    return { ok: true, data: parsed.data };
  }
}
