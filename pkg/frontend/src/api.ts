/** HTTP client for the engine service.
 *
 * Every response body is kept verbatim in `rawBody`: the UI displays and
 * exports those exact bytes and never recomputes or reformats what the
 * engine said.  Network failures come back as values, not exceptions, so
 * an offline engine can never crash the page.
 */

import type {
  ExplainOptions,
  ExplainPayload,
  HealthPayload,
  ScorePayload,
} from "./types.js";

export interface ApiSuccess<T> {
  ok: true;
  status: number;
  /** The exact response body text as served. */
  rawBody: string;
  payload: T;
}

export interface ApiFailure {
  ok: false;
  /** HTTP status, or null when the request never reached the engine. */
  status: number | null;
  message: string;
  rawBody: string | null;
}

export type ApiResult<T> = ApiSuccess<T> | ApiFailure;

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function describeNetworkError(err: unknown): string {
  const detail = err instanceof Error ? err.message : String(err);
  return `cannot reach the engine: ${detail}`;
}

function failureMessage(status: number, rawBody: string): string {
  try {
    const parsed = JSON.parse(rawBody) as { detail?: unknown };
    if (typeof parsed.detail === "string" && parsed.detail) {
      return parsed.detail;
    }
  } catch {
    // not JSON; fall through to the generic message
  }
  return `engine returned HTTP ${status}`;
}

export class EngineClient {
  private readonly fetchFn: FetchLike;

  constructor(
    public baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<ApiResult<T>> {
    let response: Response;
    try {
      response = await this.fetchFn(this.url(path), init);
    } catch (err) {
      return { ok: false, status: null, message: describeNetworkError(err), rawBody: null };
    }
    let rawBody: string;
    try {
      rawBody = await response.text();
    } catch (err) {
      return { ok: false, status: response.status, message: describeNetworkError(err), rawBody: null };
    }
    if (!response.ok) {
      return {
        ok: false,
        status: response.status,
        message: failureMessage(response.status, rawBody),
        rawBody,
      };
    }
    try {
      const payload = JSON.parse(rawBody) as T;
      return { ok: true, status: response.status, rawBody, payload };
    } catch {
      return {
        ok: false,
        status: response.status,
        message: "engine response was not valid JSON",
        rawBody,
      };
    }
  }

  health(): Promise<ApiResult<HealthPayload>> {
    return this.request<HealthPayload>("/health");
  }

  explain(
    image: Blob,
    imageName: string,
    text: string,
    options: ExplainOptions = {},
  ): Promise<ApiResult<ExplainPayload>> {
    const form = new FormData();
    form.append("image", image, imageName);
    form.append("text", text);
    if (options.method !== undefined) form.append("method", options.method);
    if (options.lam_mode !== undefined) form.append("lam_mode", options.lam_mode);
    if (options.layers !== undefined && options.layers !== "") {
      form.append("layers", options.layers);
    }
    if (options.upsample !== undefined) form.append("upsample", options.upsample);
    if (options.include_text_saliency !== undefined) {
      form.append("include_text_saliency", String(options.include_text_saliency));
    }
    return this.request<ExplainPayload>("/explain", { method: "POST", body: form });
  }

  score(image: Blob, imageName: string, text: string): Promise<ApiResult<ScorePayload>> {
    const form = new FormData();
    form.append("image", image, imageName);
    form.append("text", text);
    return this.request<ScorePayload>("/score", { method: "POST", body: form });
  }
}
