// Thin typed client for the diagd HTTP API. All payloads cross the wire as
// lowercase hex strings; the client never re-derives protocol semantics —
// status/decode fields are passed through verbatim.

export interface RequestResult {
  request_hex: string;
  status: "positive" | "negative" | "suppressed" | "error";
  response_hex: string | null;
  decode: string;
}

export interface SessionState {
  session: string;
  unlocked_levels: number[];
  s3_deadline_ns: number | null;
  lockout_until_ns: number | null;
  dtc_count: number;
  now_ns: number;
}

export interface DtcEntry {
  code: string;
  raw: string;
  status: number;
  snapshot: Record<string, string>;
}

export interface PollEntry {
  did: string;
  period_ms: number;
}

export interface FuzzSummary {
  report_id: string;
  passed: number;
  total: number;
}

export interface FuzzReport {
  id: string;
  total: number;
  passed: number;
  failed: number;
  results: Array<Record<string, unknown>>;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class DiagdClient {
  constructor(
    private base: string,
    private fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const doc = await resp.json();
        if (doc && doc.detail) detail = String(doc.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  listEcus(): Promise<{ ecus: string[] }> {
    return this.call("GET", "/ecus");
  }

  createSession(ecu = "default", gateway?: boolean): Promise<{ id: string }> {
    return this.call("POST", "/sessions", { ecu, gateway });
  }

  request(sessionId: string, hex: string): Promise<RequestResult> {
    return this.call("POST", `/sessions/${sessionId}/request`, { hex });
  }

  sessionControl(sessionId: string, target: string | number): Promise<RequestResult> {
    return this.call("POST", `/sessions/${sessionId}/session-control`, { target });
  }

  unlock(sessionId: string, level = 1): Promise<{ status: string; decode?: string }> {
    return this.call("POST", `/sessions/${sessionId}/unlock`, { level });
  }

  getState(sessionId: string): Promise<SessionState> {
    return this.call("GET", `/sessions/${sessionId}/state`);
  }

  getDtcs(sessionId: string): Promise<{ dtcs: DtcEntry[] }> {
    return this.call("GET", `/sessions/${sessionId}/dtcs`);
  }

  clearDtcs(sessionId: string, group = "0xFFFFFF"): Promise<RequestResult> {
    return this.call("POST", `/sessions/${sessionId}/dtc/clear`, { group });
  }

  injectFault(sessionId: string, dtc: string, status = 9): Promise<unknown> {
    return this.call("POST", `/sessions/${sessionId}/fault-inject`, { dtc, status });
  }

  getPollList(sessionId: string): Promise<{ entries: PollEntry[] }> {
    return this.call("GET", `/sessions/${sessionId}/poll-list`);
  }

  setPollList(sessionId: string, entries: PollEntry[]): Promise<{ count: number }> {
    return this.call("POST", `/sessions/${sessionId}/poll-list`, { entries });
  }

  keepAlive(sessionId: string, enabled: boolean): Promise<{ enabled: boolean }> {
    return this.call("POST", `/sessions/${sessionId}/keep-alive`, { enabled });
  }

  advance(sessionId: string, ms: number): Promise<{ now_ns: number }> {
    return this.call("POST", `/sessions/${sessionId}/advance`, { ms });
  }

  runFuzz(sessionId: string): Promise<FuzzSummary> {
    return this.call("POST", `/sessions/${sessionId}/fuzz`);
  }

  getReport(reportId: string): Promise<FuzzReport> {
    return this.call("GET", `/reports/${reportId}`);
  }
}
