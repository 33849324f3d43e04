// Panel layout persistence: which panels are open and in what order, kept in
// browser local storage keyed by session id, so arrangements survive reloads
// with zero server state.

export type PanelKind =
  | "trace"
  | "console"
  | "plot"
  | "dtc"
  | "status"
  | "fuzz";

export interface PanelLayout {
  order: PanelKind[];
  collapsed: Partial<Record<PanelKind, boolean>>;
}

export const DEFAULT_LAYOUT: PanelLayout = {
  order: ["status", "console", "trace", "plot", "dtc", "fuzz"],
  collapsed: {},
};

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const KEY_PREFIX = "udsim-console.layout.";

export function loadLayout(
  sessionId: string,
  storage: StorageLike = localStorage,
): PanelLayout {
  const raw = storage.getItem(KEY_PREFIX + sessionId);
  if (!raw) return { ...DEFAULT_LAYOUT, collapsed: {} };
  try {
    const doc = JSON.parse(raw) as PanelLayout;
    if (!Array.isArray(doc.order)) throw new Error("bad layout");
    return doc;
  } catch {
    return { ...DEFAULT_LAYOUT, collapsed: {} };
  }
}

export function saveLayout(
  sessionId: string,
  layout: PanelLayout,
  storage: StorageLike = localStorage,
): void {
  storage.setItem(KEY_PREFIX + sessionId, JSON.stringify(layout));
}
