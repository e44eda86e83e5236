// Browser-side auditor capture: listeners are attached only for the task's
// configured auditors and never throw into the page.

import type { CaptureConfig, WireEvent } from "./types";

export const MAX_SELECTOR_LEN = 256;
const MAX_SELECTOR_DEPTH = 5;

export interface CaptureHandle {
  /** Drain everything buffered so far. */
  drain(): WireEvent[];
  /** Buffered event count. */
  size(): number;
  /** Append one event on behalf of a custom auditor script. */
  record(kind: string, data: Record<string, unknown>): void;
  detach(): void;
}

export interface CaptureTarget {
  doc: Document;
  win: Window & typeof globalThis;
}

/** Short CSS-selector-like path for a click target, depth <= 5, <= 256 chars. */
export function selectorPath(target: EventTarget | null): string {
  let node = target instanceof Element ? target : null;
  const parts: string[] = [];
  while (node && parts.length < MAX_SELECTOR_DEPTH) {
    let part = node.tagName.toLowerCase();
    if (node.id) {
      part += `#${node.id}`;
      parts.unshift(part);
      break;
    }
    const cls = (node.getAttribute("class") ?? "").trim().split(/\s+/)[0];
    if (cls) part += `.${cls}`;
    parts.unshift(part);
    node = node.parentElement;
  }
  return parts.join(" > ").slice(0, MAX_SELECTOR_LEN);
}

export function attachCapture(
  target: CaptureTarget,
  kinds: Set<string>,
  config: CaptureConfig,
  now: () => number,
): CaptureHandle {
  const buffer: WireEvent[] = [];
  const detachers: (() => void)[] = [];
  let lastMouseSampleAt = -Infinity;
  let lastFocusState: "focus" | "blur" = "focus";

  const push = (kind: string, data: Record<string, unknown>) => {
    try {
      buffer.push({ kind, t_ms: Math.max(0, Math.round(now())), data });
    } catch {
      // Capture must never break the page.
    }
  };

  const listen = (
    node: Document | Window,
    type: string,
    handler: (ev: Event) => void,
  ) => {
    const safe = (ev: Event) => {
      try {
        handler(ev);
      } catch {
        /* swallow */
      }
    };
    node.addEventListener(type, safe, true);
    detachers.push(() => node.removeEventListener(type, safe, true));
  };

  if (kinds.has("mouse_movement")) {
    listen(target.doc, "mousemove", (ev) => {
      const t = now();
      if (t - lastMouseSampleAt < config.mouseSampleMinIntervalMs) return;
      lastMouseSampleAt = t;
      const mouse = ev as MouseEvent;
      push("mouse_movement", {
        x_px: Math.max(0, Math.round(mouse.clientX)),
        y_px: Math.max(0, Math.round(mouse.clientY)),
      });
    });
  }

  if (kinds.has("clicks_total")) {
    listen(target.doc, "click", (ev) => {
      const mouse = ev as MouseEvent;
      push("clicks_total", {
        x_px: Math.max(0, Math.round(mouse.clientX)),
        y_px: Math.max(0, Math.round(mouse.clientY)),
        target: selectorPath(ev.target),
      });
    });
  }

  if (kinds.has("keypresses_total")) {
    // Count only; key identity is deliberately not captured.
    listen(target.doc, "keydown", () => push("keypresses_total", {}));
  }

  if (kinds.has("resizes_total")) {
    listen(target.win, "resize", () => {
      push("resizes_total", {
        width_px: Math.max(1, target.win.innerWidth),
        height_px: Math.max(1, target.win.innerHeight),
      });
    });
  }

  if (kinds.has("focus_changes")) {
    const transition = (state: "focus" | "blur") => {
      if (state === lastFocusState) return;
      lastFocusState = state;
      push("focus_changes", { state });
    };
    // visibilitychange is the primary signal; window blur/focus the fallback.
    listen(target.doc, "visibilitychange", () => {
      transition(target.doc.visibilityState === "hidden" ? "blur" : "focus");
    });
    listen(target.win, "blur", () => transition("blur"));
    listen(target.win, "focus", () => transition("focus"));
  }

  return {
    drain: () => buffer.splice(0, buffer.length),
    size: () => buffer.length,
    record: push,
    detach: () => {
      for (const undo of detachers) undo();
      detachers.length = 0;
    },
  };
}
