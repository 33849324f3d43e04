// Client-side session store. The UI never computes protocol truth: every
// chip value below is copied verbatim from server "state" events, and every
// trace row from server "trace" events. Ingest is synchronous and bounded.

import { RingBuffer } from "./ringbuffer.js";
import { StreamEvent } from "./stream.js";

export interface TraceRow {
  seq: number;
  record_seq: number;
  t_ns: number;
  dir: string;
  id_hex: string;
  dlc: number;
  data_hex: string;
  decode_kind: string;
  decode_text: string;
}

export interface SampleRow {
  t_ns: number;
  did: string;
  raw_hex: string | null;
  scaled: number | null;
  unit: string;
  error: string | null;
}

export interface Chips {
  connection: "connected" | "disconnected";
  session: string;
  security: "locked" | "unlocked";
  unlockedLevels: number[];
  dtcCount: number;
  s3DeadlineNs: number | null;
  nowNs: number;
}

export interface TraceFilter {
  idHex?: string;
  /** substring match on the decoded text, e.g. "ReadDTCInformation" */
  decode?: string;
}

const DEFAULT_TRACE_CAPACITY = 10_000;

export class ConsoleStore {
  readonly trace: RingBuffer<TraceRow>;
  readonly samples = new Map<string, RingBuffer<SampleRow>>();
  chips: Chips = {
    connection: "disconnected",
    session: "unknown",
    security: "locked",
    unlockedLevels: [],
    dtcCount: 0,
    s3DeadlineNs: null,
    nowNs: 0,
  };
  paused = false;
  filter: TraceFilter = {};
  onChange: (() => void) | null = null;

  constructor(traceCapacity = DEFAULT_TRACE_CAPACITY, private sampleCapacity = 20_000) {
    this.trace = new RingBuffer<TraceRow>(traceCapacity);
  }

  setConnected(connected: boolean): void {
    this.chips = {
      ...this.chips,
      connection: connected ? "connected" : "disconnected",
    };
    this.onChange?.();
  }

  ingest(event: StreamEvent): void {
    switch (event.type) {
      case "trace":
        if (!this.paused) this.trace.push(event as unknown as TraceRow);
        break;
      case "sample": {
        const row = event as unknown as SampleRow;
        let ring = this.samples.get(row.did);
        if (!ring) {
          ring = new RingBuffer<SampleRow>(this.sampleCapacity);
          this.samples.set(row.did, ring);
        }
        ring.push(row);
        break;
      }
      case "state": {
        const snap = event as unknown as {
          session: string;
          unlocked_levels: number[];
          s3_deadline_ns: number | null;
          dtc_count: number;
          now_ns: number;
        };
        this.chips = {
          ...this.chips,
          session: snap.session,
          security: snap.unlocked_levels.length > 0 ? "unlocked" : "locked",
          unlockedLevels: snap.unlocked_levels,
          dtcCount: snap.dtc_count,
          s3DeadlineNs: snap.s3_deadline_ns,
          nowNs: snap.now_ns,
        };
        break;
      }
    }
    this.onChange?.();
  }

  visibleTrace(): TraceRow[] {
    const { idHex, decode } = this.filter;
    let rows = this.trace.toArray();
    if (idHex) rows = rows.filter((r) => r.id_hex === idHex.toLowerCase().replace(/^0x/, ""));
    if (decode) rows = rows.filter((r) => r.decode_text.includes(decode));
    return rows;
  }
}

/** Plain-language hints for common negative response codes. */
export function nrcHint(decode: string): string | null {
  if (decode.includes("securityAccessDenied")) return "unlock first (SecurityAccess)";
  if (decode.includes("serviceNotSupportedInActiveSession"))
    return "switch to a session that allows this service";
  if (decode.includes("requiredTimeDelayNotExpired"))
    return "security lockout active — wait for the delay to expire";
  if (decode.includes("exceededNumberOfAttempts"))
    return "too many wrong keys — lockout engaged";
  if (decode.includes("incorrectMessageLengthOrInvalidFormat"))
    return "check the request length/format";
  if (decode.includes("requestOutOfRange")) return "unknown identifier or group";
  return null;
}
