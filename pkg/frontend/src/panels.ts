// DOM panels. Each panel owns one container element and re-renders from the
// store on change; ingest stays decoupled from rendering (the store buffers,
// panels repaint on animation frames).

import { DiagdClient } from "./api.js";
import { DECIMATION_THRESHOLD, decimateMinMax, splitOnGaps } from "./decimate.js";
import { downloadCanvasPng, downloadText, samplesToCsv, traceToCsv } from "./export.js";
import { ConsoleStore, nrcHint } from "./state.js";

function el(tag: string, cls?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class SessionStatusPanel {
  constructor(
    private root: HTMLElement,
    private store: ConsoleStore,
    private client: DiagdClient,
    private sessionId: string,
  ) {
    this.render();
  }

  render(): void {
    const c = this.store.chips;
    this.root.innerHTML = "";
    const chips = el("div", "chips");
    for (const [label, value] of [
      ["link", c.connection],
      ["session", c.session],
      ["security", c.security],
      ["dtcs", String(c.dtcCount)],
    ] as const) {
      const chip = el("span", `chip chip-${label} chip-${value}`);
      chip.append(el("b", undefined, label + ": "), el("span", undefined, value));
      chips.append(chip);
    }
    if (c.s3DeadlineNs !== null) {
      const remainMs = Math.max(0, (c.s3DeadlineNs - c.nowNs) / 1e6);
      chips.append(el("span", "chip chip-s3", `S3 in ${remainMs.toFixed(0)} ms`));
    }
    const keepAlive = el("label", "keep-alive") as HTMLLabelElement;
    const box = el("input") as HTMLInputElement;
    box.type = "checkbox";
    box.onchange = () => void this.client.keepAlive(this.sessionId, box.checked);
    keepAlive.append(box, document.createTextNode(" keep-alive"));
    this.root.append(chips, keepAlive);
  }
}

export class TraceWindowPanel {
  private pauseBtn: HTMLButtonElement;
  private filterBox: HTMLInputElement;
  private table: HTMLElement;

  constructor(
    root: HTMLElement,
    private store: ConsoleStore,
  ) {
    const bar = el("div", "toolbar");
    this.pauseBtn = el("button", undefined, "pause") as HTMLButtonElement;
    this.pauseBtn.onclick = () => {
      this.store.paused = !this.store.paused;
      this.pauseBtn.textContent = this.store.paused ? "resume" : "pause";
    };
    this.filterBox = el("input") as HTMLInputElement;
    this.filterBox.placeholder = "filter: id hex or decode text";
    this.filterBox.oninput = () => {
      const v = this.filterBox.value.trim();
      this.store.filter = /^(0x)?[0-9a-fA-F]{1,8}$/.test(v)
        ? { idHex: v }
        : v
          ? { decode: v }
          : {};
      this.render();
    };
    const exportBtn = el("button", undefined, "export csv") as HTMLButtonElement;
    exportBtn.onclick = () => downloadText("trace.csv", traceToCsv(this.store.visibleTrace()));
    bar.append(this.pauseBtn, this.filterBox, exportBtn);
    this.table = el("div", "trace-rows");
    root.append(bar, this.table);
  }

  render(): void {
    const rows = this.store.visibleTrace().slice(-500); // viewport slice
    this.table.innerHTML = "";
    for (const r of rows) {
      const line = el("div", `trace-row dir-${r.dir.replace(/[^a-z]/g, "-")}`);
      line.textContent =
        `${(r.t_ns / 1e6).toFixed(3).padStart(10)} ms  ${r.id_hex.padStart(3)}  ` +
        `${r.data_hex.padEnd(16)}  ${r.decode_text}`;
      this.table.append(line);
    }
    const dropped = this.store.trace.dropped;
    if (dropped > 0) {
      this.table.prepend(el("div", "notice", `${dropped} oldest rows dropped`));
    }
  }
}

export class ServiceConsolePanel {
  private log: HTMLElement;

  constructor(
    root: HTMLElement,
    private store: ConsoleStore,
    private client: DiagdClient,
    private sessionId: string,
  ) {
    const form = el("div", "console-form");
    const hexBox = el("input") as HTMLInputElement;
    hexBox.placeholder = "raw request hex, e.g. 22f190";
    const sendBtn = el("button", undefined, "send") as HTMLButtonElement;
    sendBtn.onclick = () => void this.send(() => this.client.request(this.sessionId, hexBox.value.trim()));
    const extBtn = el("button", undefined, "extended session") as HTMLButtonElement;
    extBtn.onclick = () => void this.send(() => this.client.sessionControl(this.sessionId, "extended"));
    const unlockBtn = el("button", undefined, "unlock") as HTMLButtonElement;
    unlockBtn.onclick = () =>
      void this.client
        .unlock(this.sessionId)
        .then((r) => this.append(`unlock: ${r.status}${r.decode ? " — " + r.decode : ""}`))
        .catch((e) => this.append(`unlock failed: ${e.message}`));
    const clearBtn = el("button", undefined, "clear DTCs") as HTMLButtonElement;
    clearBtn.onclick = () => void this.send(() => this.client.clearDtcs(this.sessionId));
    form.append(hexBox, sendBtn, extBtn, unlockBtn, clearBtn);
    this.log = el("div", "console-log");
    root.append(form, this.log);
  }

  private async send(op: () => Promise<{ status: string; response_hex?: string | null; decode: string }>) {
    try {
      const r = await op();
      let line = `${r.status}: ${r.response_hex ?? ""} ${r.decode}`.trim();
      const hint = r.status === "negative" ? nrcHint(r.decode) : null;
      if (hint) line += `  (hint: ${hint})`;
      this.append(line);
    } catch (e) {
      this.append(`request failed: ${(e as Error).message}`);
    }
  }

  private append(text: string): void {
    this.log.prepend(el("div", "console-line", text));
  }

  render(): void {
    // stateless between updates; the log is append-only
    void this.store;
  }
}

export class SignalPlotPanel {
  private canvas: HTMLCanvasElement;
  private legend: HTMLElement;
  paused = false;

  constructor(
    root: HTMLElement,
    private store: ConsoleStore,
  ) {
    const bar = el("div", "toolbar");
    const pauseBtn = el("button", undefined, "pause") as HTMLButtonElement;
    pauseBtn.onclick = () => {
      this.paused = !this.paused;
      pauseBtn.textContent = this.paused ? "resume" : "pause";
    };
    const csvBtn = el("button", undefined, "export csv") as HTMLButtonElement;
    csvBtn.onclick = () => {
      const rows = [...this.store.samples.values()].flatMap((r) => r.toArray());
      rows.sort((a, b) => a.t_ns - b.t_ns);
      downloadText("samples.csv", samplesToCsv(rows));
    };
    const pngBtn = el("button", undefined, "export png") as HTMLButtonElement;
    pngBtn.onclick = () => downloadCanvasPng("plot.png", this.canvas);
    bar.append(pauseBtn, csvBtn, pngBtn);
    this.canvas = el("canvas", "plot") as HTMLCanvasElement;
    this.canvas.width = 800;
    this.canvas.height = 240;
    this.legend = el("div", "legend");
    root.append(bar, this.canvas, this.legend);
  }

  render(): void {
    if (this.paused) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    this.legend.innerHTML = "";
    const channels = [...this.store.samples.entries()];
    if (channels.length === 0) {
      ctx.fillText("no poll list active — set one to see live signals", 20, 120);
      return;
    }
    const palette = ["#4ea1ff", "#ffb347", "#7ed37e", "#ff6f91", "#b39ddb"];
    channels.forEach(([did, ring], idx) => {
      const rows = ring.toArray().filter((s) => s.scaled !== null);
      if (rows.length === 0) return;
      const unit = rows[rows.length - 1].unit;
      this.legend.append(el("span", "legend-item", `${did} [${unit}]`));
      const points = rows.map((s) => ({ t: s.t_ns, v: s.scaled as number }));
      const deci = decimateMinMax(points, DECIMATION_THRESHOLD);
      const t0 = deci[0].t;
      const t1 = deci[deci.length - 1].t || t0 + 1;
      const vMin = Math.min(...deci.map((p) => p.v));
      const vMax = Math.max(...deci.map((p) => p.v));
      const span = vMax - vMin || 1;
      ctx.strokeStyle = palette[idx % palette.length];
      const avgGap = (t1 - t0) / Math.max(1, deci.length - 1);
      for (const segment of splitOnGaps(deci, avgGap * 5)) {
        ctx.beginPath();
        segment.forEach((p, i) => {
          const x = ((p.t - t0) / (t1 - t0 || 1)) * this.canvas.width;
          const y = this.canvas.height - ((p.v - vMin) / span) * (this.canvas.height - 10) - 5;
          if (i === 0) ctx.moveTo(x, y);
          else ctx.lineTo(x, y);
        });
        ctx.stroke();
      }
    });
  }
}

export class DtcTablePanel {
  constructor(
    private root: HTMLElement,
    private client: DiagdClient,
    private sessionId: string,
  ) {
    void this.refresh();
  }

  async refresh(): Promise<void> {
    const { dtcs } = await this.client.getDtcs(this.sessionId);
    this.root.innerHTML = "";
    const bar = el("div", "toolbar");
    const reload = el("button", undefined, "reload") as HTMLButtonElement;
    reload.onclick = () => void this.refresh();
    bar.append(reload);
    this.root.append(bar);
    if (dtcs.length === 0) {
      this.root.append(el("div", "empty", "no stored trouble codes"));
      return;
    }
    for (const d of dtcs) {
      const row = el("div", "dtc-row");
      row.append(el("b", undefined, d.code), el("span", undefined, ` status=0x${d.status.toString(16)}`));
      const snap = Object.entries(d.snapshot)
        .map(([did, hex]) => `${did}=${hex}`)
        .join("  ");
      if (snap) row.append(el("div", "snapshot", `snapshot: ${snap}`));
      this.root.append(row);
    }
  }

  render(): void {
    // refreshed on demand via REST, not from the stream
  }
}

export class FuzzReportPanel {
  private out: HTMLElement;

  constructor(
    root: HTMLElement,
    private client: DiagdClient,
    private sessionId: string,
  ) {
    const runBtn = el("button", undefined, "run conformance matrix") as HTMLButtonElement;
    runBtn.onclick = () => void this.run();
    this.out = el("div", "fuzz-out");
    root.append(runBtn, this.out);
  }

  private async run(): Promise<void> {
    this.out.textContent = "running…";
    const summary = await this.client.runFuzz(this.sessionId);
    const report = await this.client.getReport(summary.report_id);
    this.out.innerHTML = "";
    this.out.append(
      el("div", "fuzz-summary", `${report.passed}/${report.total} passed, ${report.failed} failed`),
    );
    for (const r of report.results.filter((x) => !(x as { pass: boolean }).pass)) {
      this.out.append(el("div", "fuzz-fail", JSON.stringify(r)));
    }
  }

  render(): void {}
}
