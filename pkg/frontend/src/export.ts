// CSV/PNG export of the visible plot window and trace rows.

import { SampleRow, TraceRow } from "./state.js";

function csvEscape(value: string): string {
  return /[",\n]/.test(value) ? '"' + value.replace(/"/g, '""') + '"' : value;
}

export function samplesToCsv(rows: SampleRow[]): string {
  const header = "t_ns,did,raw_hex,scaled,unit,error";
  const lines = rows.map((s) =>
    [
      s.t_ns,
      s.did,
      s.raw_hex ?? "",
      s.scaled ?? "",
      csvEscape(s.unit),
      csvEscape(s.error ?? ""),
    ].join(","),
  );
  return [header, ...lines].join("\n") + "\n";
}

export function traceToCsv(rows: TraceRow[]): string {
  const header = "t_ns,seq,dir,id_hex,dlc,data_hex,decode_kind,decode_text";
  const lines = rows.map((r) =>
    [
      r.t_ns,
      r.record_seq,
      csvEscape(r.dir),
      r.id_hex,
      r.dlc,
      r.data_hex,
      csvEscape(r.decode_kind),
      csvEscape(r.decode_text),
    ].join(","),
  );
  return [header, ...lines].join("\n") + "\n";
}

export function downloadText(filename: string, text: string, mime = "text/csv"): void {
  const blob = new Blob([text], { type: mime });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}

export function downloadCanvasPng(filename: string, canvas: HTMLCanvasElement): void {
  const a = document.createElement("a");
  a.href = canvas.toDataURL("image/png");
  a.download = filename;
  a.click();
}
