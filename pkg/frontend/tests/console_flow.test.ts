// Scripted console flow: connect -> extended session -> unlock -> read DTCs
// -> clear -> verify empty, with the state chips mirroring server events at
// every step (the client never invents state).

import { describe, expect, it } from "vitest";

import { DiagdClient } from "../src/api";
import { ConsoleStore } from "../src/state";
import { SessionStream, StreamEvent } from "../src/stream";
import { FakeDiagd } from "./fake_diagd";

function lastStateEvent(server: FakeDiagd): StreamEvent {
  const states = server.events.filter((e) => e.type === "state");
  return states[states.length - 1];
}

function expectChipsMirrorServer(store: ConsoleStore, server: FakeDiagd): void {
  const snap = lastStateEvent(server) as unknown as {
    session: string;
    unlocked_levels: number[];
    dtc_count: number;
  };
  expect(store.chips.session).toBe(snap.session);
  expect(store.chips.unlockedLevels).toEqual(snap.unlocked_levels);
  expect(store.chips.security).toBe(snap.unlocked_levels.length ? "unlocked" : "locked");
  expect(store.chips.dtcCount).toBe(snap.dtc_count);
}

async function settle(): Promise<void> {
  await new Promise((r) => setTimeout(r, 0));
}

describe("console flow", () => {
  it("connect -> extended -> unlock -> read DTC -> clear -> verify empty", async () => {
    const server = new FakeDiagd();
    const client = new DiagdClient("http://fake", server.fetch);
    const store = new ConsoleStore();

    // connect
    const { id } = await client.createSession("default");
    const stream = new SessionStream(`ws://fake/sessions/${id}/stream`, {
      factory: server.socketFactory,
      schedule: (fn, ms) => setTimeout(fn, ms),
    });
    stream.onEvent = (ev) => store.ingest(ev);
    stream.onStatus = (up) => store.setConnected(up);
    await settle();
    expect(store.chips.connection).toBe("connected");
    // the session-created state event was emitted before the socket opened;
    // replay it the way the real server's stream tap does
    server.sockets[0].deliver(server.events[0]);
    expectChipsMirrorServer(store, server);
    expect(store.chips.session).toBe("default");
    expect(store.chips.security).toBe("locked");

    // extended session
    const sc = await client.sessionControl(id, "extended");
    expect(sc.status).toBe("positive");
    expectChipsMirrorServer(store, server);
    expect(store.chips.session).toBe("extended");

    // unlock
    const unlock = await client.unlock(id, 1);
    expect(unlock.status).toBe("unlocked");
    expectChipsMirrorServer(store, server);
    expect(store.chips.security).toBe("unlocked");

    // read DTCs
    const before = await client.getDtcs(id);
    expect(before.dtcs.map((d) => d.code)).toEqual(["P0123-45"]);
    expect(store.chips.dtcCount).toBe(1);

    // clear
    const clear = await client.clearDtcs(id);
    expect(clear.status).toBe("positive");
    expectChipsMirrorServer(store, server);
    expect(store.chips.dtcCount).toBe(0);

    // verify empty
    const after = await client.getDtcs(id);
    expect(after.dtcs).toEqual([]);

    // the trace window saw the request/response rows for each step
    const decodes = store.trace.toArray().map((r) => r.decode_text);
    expect(decodes.some((d) => d.includes("DiagnosticSessionControl"))).toBe(true);
    expect(decodes.some((d) => d.includes("SecurityAccess"))).toBe(true);
    expect(decodes.some((d) => d.includes("ClearDiagnosticInformation"))).toBe(true);

    stream.close();
  });

  it("reconnect resumes without duplicating rows (seq dedup)", async () => {
    const server = new FakeDiagd();
    const store = new ConsoleStore();
    const stream = new SessionStream("ws://fake/stream", {
      factory: server.socketFactory,
      schedule: (fn) => setTimeout(fn, 0), // immediate reconnect in tests
    });
    stream.onEvent = (ev) => store.ingest(ev);
    await settle();

    server.emitTrace("7e0", "023e00aaaaaaaaaa", "TesterPresent request");
    server.emitTrace("7e8", "027e00aaaaaaaaaa", "TesterPresent positive");
    expect(store.trace.length).toBe(2);

    // connection drops; on reconnect the server replays its whole buffer
    server.sockets[0].drop();
    await settle();
    await settle();
    expect(server.sockets.length).toBe(2);
    for (const ev of server.events) server.sockets[1].deliver(ev);
    expect(store.trace.length).toBe(2); // no duplicates

    // and new rows still arrive
    server.emitTrace("7e0", "021003aaaaaaaaaa", "DiagnosticSessionControl request");
    expect(store.trace.length).toBe(3);
    stream.close();
  });

  it("ignores malformed stream payloads", async () => {
    const server = new FakeDiagd();
    const store = new ConsoleStore();
    const stream = new SessionStream("ws://fake/stream", {
      factory: server.socketFactory,
    });
    stream.onEvent = (ev) => store.ingest(ev);
    await settle();
    server.sockets[0].deliverRaw("not json");
    server.sockets[0].deliverRaw('{"no_seq": true}');
    server.emitTrace("7e0", "023e00aaaaaaaaaa", "TesterPresent request");
    expect(store.trace.length).toBe(1);
    stream.close();
  });
});
