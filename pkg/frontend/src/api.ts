import type {
  CorrelationPayload,
  ErrorsPayload,
  Mode,
  RecoveryPayload,
  ReplayRequest,
  ServerState,
} from "./types.js";

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export type AdjudicateResult =
  | { kind: "ok"; mode: Mode }
  | { kind: "conflict"; error: string }
  | { kind: "error"; status: number; error: string };

export type ReplayResult =
  | { kind: "ok"; started: Record<string, unknown> }
  | { kind: "busy"; error: string }
  | { kind: "error"; status: number; error: string };

async function bodyError(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { error?: string };
    return body.error ?? `http ${res.status}`;
  } catch {
    return `http ${res.status}`;
  }
}

/** Thin typed client for the service endpoints. Reads never mutate detector state. */
export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path);
    if (!res.ok) {
      throw new Error(`GET ${path} failed: ${await bodyError(res)}`);
    }
    return (await res.json()) as T;
  }

  state(): Promise<ServerState> {
    return this.getJson<ServerState>("/api/state");
  }

  errors(from: number): Promise<ErrorsPayload> {
    return this.getJson<ErrorsPayload>(`/api/errors?from=${from}`);
  }

  correlation(): Promise<CorrelationPayload> {
    return this.getJson<CorrelationPayload>("/api/correlation");
  }

  /** Recovery report, or null while the service has none to offer. */
  async recovery(): Promise<RecoveryPayload | null> {
    const res = await this.fetchImpl(this.baseUrl + "/api/recovery");
    if (res.status === 404) {
      await res.arrayBuffer();
      return null;
    }
    if (!res.ok) {
      throw new Error(`GET /api/recovery failed: ${await bodyError(res)}`);
    }
    return (await res.json()) as RecoveryPayload;
  }

  async replay(request: ReplayRequest): Promise<ReplayResult> {
    const res = await this.fetchImpl(this.baseUrl + "/api/replay", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (res.ok) {
      const body = (await res.json()) as { started: Record<string, unknown> };
      return { kind: "ok", started: body.started };
    }
    const error = await bodyError(res);
    if (res.status === 409) {
      return { kind: "busy", error };
    }
    return { kind: "error", status: res.status, error };
  }

  async adjudicate(approve: boolean): Promise<AdjudicateResult> {
    const res = await this.fetchImpl(this.baseUrl + "/api/adjudicate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ approve }),
    });
    if (res.ok) {
      const body = (await res.json()) as { mode: Mode };
      return { kind: "ok", mode: body.mode };
    }
    const error = await bodyError(res);
    if (res.status === 409) {
      return { kind: "conflict", error };
    }
    return { kind: "error", status: res.status, error };
  }
}
