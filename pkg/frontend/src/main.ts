// Bootstrap: create a session against diagd, open the event stream, and
// mount the panels in the persisted layout order.

import { DiagdClient } from "./api.js";
import { loadLayout, PanelKind, saveLayout } from "./layout.js";
import {
  DtcTablePanel,
  FuzzReportPanel,
  ServiceConsolePanel,
  SessionStatusPanel,
  SignalPlotPanel,
  TraceWindowPanel,
} from "./panels.js";
import { ConsoleStore } from "./state.js";
import { SessionStream } from "./stream.js";

const PANEL_TITLES: Record<PanelKind, string> = {
  status: "Session",
  console: "Service console",
  trace: "Trace window",
  plot: "Signals",
  dtc: "Trouble codes",
  fuzz: "Conformance",
};

interface Renderable {
  render(): void;
}

export async function boot(rootId = "app", base = ""): Promise<void> {
  const root = document.getElementById(rootId);
  if (!root) throw new Error(`missing #${rootId}`);
  const apiBase = base || window.location.origin;
  const client = new DiagdClient(apiBase);
  const { id: sessionId } = await client.createSession("default");
  const store = new ConsoleStore();

  const wsBase = apiBase.replace(/^http/, "ws");
  const stream = new SessionStream(`${wsBase}/sessions/${sessionId}/stream`);
  stream.onEvent = (ev) => store.ingest(ev);
  stream.onStatus = (up) => store.setConnected(up);

  const layout = loadLayout(sessionId);
  const panels: Renderable[] = [];
  for (const kind of layout.order) {
    const section = document.createElement("section");
    section.className = `panel panel-${kind}`;
    const header = document.createElement("h2");
    header.textContent = PANEL_TITLES[kind];
    header.onclick = () => {
      layout.collapsed[kind] = !layout.collapsed[kind];
      section.classList.toggle("collapsed", !!layout.collapsed[kind]);
      saveLayout(sessionId, layout);
    };
    const body = document.createElement("div");
    body.className = "panel-body";
    section.append(header, body);
    if (layout.collapsed[kind]) section.classList.add("collapsed");
    root.append(section);
    switch (kind) {
      case "status":
        panels.push(new SessionStatusPanel(body, store, client, sessionId));
        break;
      case "trace":
        panels.push(new TraceWindowPanel(body, store));
        break;
      case "console":
        panels.push(new ServiceConsolePanel(body, store, client, sessionId));
        break;
      case "plot":
        panels.push(new SignalPlotPanel(body, store));
        break;
      case "dtc":
        panels.push(new DtcTablePanel(body, client, sessionId));
        break;
      case "fuzz":
        panels.push(new FuzzReportPanel(body, client, sessionId));
        break;
    }
  }

  // Rendering is frame-driven and decoupled from ingest: the store only
  // flags dirtiness, panels repaint at most once per animation frame.
  let dirty = true;
  store.onChange = () => {
    dirty = true;
  };
  const repaint = () => {
    if (dirty) {
      dirty = false;
      for (const p of panels) p.render();
    }
    requestAnimationFrame(repaint);
  };
  requestAnimationFrame(repaint);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot();
}
