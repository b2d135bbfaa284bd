/** Thin typed client over fetch; every user action maps to one call here. */

import type {
  History,
  ObservationResult,
  Recommendation,
  SessionSummary,
} from "./types.js";

export class ApiRequestError extends Error {
  code: string;
  status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SessionApi {
  private base: string;
  private fetchImpl: FetchLike;

  constructor(base = "", fetchImpl?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    if (!resp.ok) {
      const err = (body ?? {}) as { code?: string; message?: string };
      throw new ApiRequestError(
        resp.status,
        err.code ?? "unknown",
        err.message ?? `request failed with status ${resp.status}`,
      );
    }
    return body as T;
  }

  listSessions(): Promise<string[]> {
    return this.request<string[]>("/sessions");
  }

  getSession(id: string): Promise<SessionSummary> {
    return this.request<SessionSummary>(`/sessions/${id}`);
  }

  getRecommendation(id: string): Promise<Recommendation> {
    return this.request<Recommendation>(`/sessions/${id}/recommendation`);
  }

  getHistory(id: string): Promise<History> {
    return this.request<History>(`/sessions/${id}/history`);
  }

  submitObservation(
    id: string,
    filterId: string,
    count: number,
  ): Promise<ObservationResult> {
    return this.request<ObservationResult>(`/sessions/${id}/observations`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ filter_id: filterId, count }),
    });
  }
}
