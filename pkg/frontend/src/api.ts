/** Thin typed client for the gateway HTTP API. */

import type {
  BatchResponse,
  ConceptRequest,
  CreateSessionResponse,
  HealthResponse,
  ItemRef,
  MetricsRow,
  RatingsResponse,
  SessionConfigOverrides,
  SessionSummary,
  Snapshot,
  StartedResponse,
  Vote,
} from "./types.js";

/**
 * A failed gateway call. `status` is the HTTP status (0 when the request
 * never reached the server), `code` the machine-readable error from the
 * response body ("busy", "phase_violation", ...), and `phase` the server's
 * phase when the error was a phase violation.
 */
export class ApiError extends Error {
  readonly status: number;
  readonly code: string;
  readonly phase: string | null;

  constructor(status: number, code: string, message: string, phase: string | null = null) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
    this.phase = phase;
  }
}

export function isRetryable(err: unknown): boolean {
  return err instanceof ApiError && (err.status === 0 || err.code === "busy");
}

/** The surface the session controller needs; `ApiClient` is the live one. */
export interface Api {
  health(): Promise<HealthResponse>;
  listSessions(): Promise<SessionSummary[]>;
  createSession(
    concept: ConceptRequest,
    config: SessionConfigOverrides,
  ): Promise<CreateSessionResponse>;
  snapshot(sessionId: string): Promise<Snapshot>;
  expand(sessionId: string): Promise<unknown>;
  batch(sessionId: string, raterId: string): Promise<BatchResponse>;
  submitRatings(
    sessionId: string,
    raterId: string,
    votes: Vote[],
    idempotencyKey: string,
  ): Promise<RatingsResponse>;
  train(sessionId: string): Promise<StartedResponse>;
  select(sessionId: string): Promise<StartedResponse>;
  metrics(sessionId: string): Promise<MetricsRow[]>;
}

export interface ApiClientOptions {
  /** Origin prefix, e.g. "http://127.0.0.1:8031"; empty for same-origin. */
  baseUrl?: string;
  fetchFn?: typeof fetch;
}

export class ApiClient implements Api {
  readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;

  constructor(options: ApiClientOptions = {}) {
    this.baseUrl = options.baseUrl ?? "";
    this.fetchFn = options.fetchFn ?? ((...args) => fetch(...args));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, "network", `request failed: ${String(err)}`);
    }
    if (!response.ok) {
      throw await toApiError(response);
    }
    return (await response.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  async listSessions(): Promise<SessionSummary[]> {
    const body = await this.request<{ sessions: SessionSummary[] }>("GET", "/sessions");
    return body.sessions;
  }

  createSession(
    concept: ConceptRequest,
    config: SessionConfigOverrides = {},
  ): Promise<CreateSessionResponse> {
    const body =
      Object.keys(config).length > 0 ? { concept, config } : { concept };
    return this.request("POST", "/sessions", body);
  }

  snapshot(sessionId: string): Promise<Snapshot> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  expand(sessionId: string): Promise<unknown> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/expand`);
  }

  batch(sessionId: string, raterId: string): Promise<BatchResponse> {
    const qs = new URLSearchParams({ rater_id: raterId });
    return this.request(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/batch?${qs.toString()}`,
    );
  }

  submitRatings(
    sessionId: string,
    raterId: string,
    votes: Vote[],
    idempotencyKey: string,
  ): Promise<RatingsResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/ratings`, {
      rater_id: raterId,
      votes,
      idempotency_key: idempotencyKey,
    });
  }

  train(sessionId: string): Promise<StartedResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/train`);
  }

  select(sessionId: string): Promise<StartedResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(sessionId)}/select`, {});
  }

  async metrics(sessionId: string): Promise<MetricsRow[]> {
    const body = await this.request<{ rows: MetricsRow[] }>(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/metrics`,
    );
    return body.rows;
  }

  metricsCsvUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/metrics?format=csv`;
  }

  imageUrl(item: ItemRef): string {
    return this.baseUrl + item.image_path;
  }
}

async function toApiError(response: Response): Promise<ApiError> {
  let payload: unknown = null;
  try {
    payload = await response.json();
  } catch {
    // Non-JSON error body; fall through to the generic mapping.
  }
  if (payload && typeof payload === "object") {
    const body = payload as Record<string, unknown>;
    if (typeof body.error === "string") {
      return new ApiError(
        response.status,
        body.error,
        typeof body.message === "string" ? body.message : body.error,
        typeof body.phase === "string" ? body.phase : null,
      );
    }
    if ("detail" in body) {
      // FastAPI request-validation failures (malformed JSON bodies).
      return new ApiError(response.status, "invalid_body", JSON.stringify(body.detail));
    }
  }
  return new ApiError(response.status, `http_${response.status}`, response.statusText);
}
