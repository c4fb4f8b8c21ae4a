import {
  EstimateResponse,
  LabelAck,
  MeasureSpec,
  PoolsResponse,
  Progress,
  QueriesResponse,
  SessionConfigInput,
  SessionMeta,
} from "./types.js";

/** Error raised for non-2xx responses. `code` comes from the service's
 * structured detail payload when present ("conflict", "unknown_query", ...). */
export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.code = code;
  }
}

export function isConflict(err: unknown): boolean {
  return err instanceof ApiError && err.status === 409 && err.code === "conflict";
}

export function isSessionClosed(err: unknown): boolean {
  return err instanceof ApiError && err.status === 409 && err.code.startsWith("session_");
}

async function parseError(resp: Response): Promise<ApiError> {
  let code = `http_${resp.status}`;
  let message = resp.statusText || `request failed with ${resp.status}`;
  try {
    const body = await resp.json();
    const detail = body?.detail;
    if (detail && typeof detail === "object") {
      code = detail.code ?? code;
      message = detail.message ?? message;
    } else if (typeof detail === "string") {
      message = detail;
    }
  } catch {
    // non-JSON error body, keep the status text
  }
  return new ApiError(resp.status, code, message);
}

export class ServiceClient {
  base: string;

  constructor(base = "") {
    // trailing slash would double up when paths are appended
    this.base = base.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.base + path, init);
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  private async requestText(path: string): Promise<string> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) throw await parseError(resp);
    return resp.text();
  }

  listPools(): Promise<PoolsResponse> {
    return this.request<PoolsResponse>("/pools");
  }

  createSession(
    poolId: string,
    measure: MeasureSpec,
    config: SessionConfigInput = {},
  ): Promise<SessionMeta> {
    return this.request<SessionMeta>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ pool_id: poolId, measure, config }),
    });
  }

  sessionMeta(sessionId: string): Promise<SessionMeta> {
    return this.request<SessionMeta>(`/sessions/${sessionId}`);
  }

  nextQueries(sessionId: string, count: number, annotator: string): Promise<QueriesResponse> {
    const qs = new URLSearchParams({ count: String(count), annotator });
    return this.request<QueriesResponse>(`/sessions/${sessionId}/queries?${qs}`);
  }

  submitLabel(sessionId: string, queryId: string, label: number, annotator: string): Promise<LabelAck> {
    return this.request<LabelAck>(`/sessions/${sessionId}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query_id: queryId, label, annotator }),
    });
  }

  fetchEstimate(sessionId: string): Promise<EstimateResponse> {
    return this.request<EstimateResponse>(`/sessions/${sessionId}/estimate`);
  }

  fetchExport(sessionId: string): Promise<string> {
    return this.requestText(`/sessions/${sessionId}/export`);
  }

  forceAdvance(sessionId: string): Promise<Progress & { stage: number }> {
    return this.request<Progress & { stage: number }>(`/sessions/${sessionId}/advance`, {
      method: "POST",
    });
  }
}
