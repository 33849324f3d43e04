// WebSocket event stream for one diagd session: auto-reconnect with capped
// backoff and sequence-number dedup, so a resumed connection never re-delivers
// rows the UI has already shown.

export interface StreamEvent {
  seq: number;
  type: "trace" | "state" | "sample";
  [key: string]: unknown;
}

export interface WebSocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  close(): void;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface StreamOptions {
  factory?: WebSocketFactory;
  /** setTimeout-compatible scheduler (injectable for tests). */
  schedule?: (fn: () => void, ms: number) => unknown;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
}

export class SessionStream {
  private ws: WebSocketLike | null = null;
  private closed = false;
  private lastSeq = -1;
  private backoffMs: number;
  connected = false;
  onEvent: ((event: StreamEvent) => void) | null = null;
  onStatus: ((connected: boolean) => void) | null = null;

  private readonly factory: WebSocketFactory;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;

  constructor(
    private url: string,
    opts: StreamOptions = {},
  ) {
    this.factory = opts.factory ?? ((u) => new WebSocket(u) as unknown as WebSocketLike);
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.initialBackoffMs = opts.initialBackoffMs ?? 500;
    this.maxBackoffMs = opts.maxBackoffMs ?? 8000;
    this.backoffMs = this.initialBackoffMs;
    this.open();
  }

  private open(): void {
    const ws = this.factory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = this.initialBackoffMs;
      this.connected = true;
      this.onStatus?.(true);
    };
    ws.onmessage = (ev) => {
      let event: StreamEvent;
      try {
        event = JSON.parse(ev.data);
      } catch {
        return; // tolerate non-JSON keepalive noise
      }
      if (typeof event.seq !== "number") return;
      if (event.seq <= this.lastSeq) return; // replayed after reconnect
      this.lastSeq = event.seq;
      this.onEvent?.(event);
    };
    ws.onclose = () => {
      this.connected = false;
      this.onStatus?.(false);
      if (!this.closed) {
        this.schedule(() => this.open(), this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
      }
    };
    ws.onerror = () => {
      // onclose drives the reconnect
    };
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
