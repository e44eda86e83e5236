// Worker task runner: handshake, bundle fetch, step rendering, auditor
// capture with batched delivery, and the external submit redirect.

import { WorkerApi } from "../api";
import { BatchSender, startFlushLoop } from "../batching";
import { attachCapture, selectorPath, type CaptureHandle } from "../capture";
import { parseHandshake } from "../handshake";
import { renderSteps } from "../steps";
import { completionPanel, performRedirect } from "../submitFlow";
import { DEFAULT_CAPTURE_CONFIG, type TaskBundle, type WireEvent } from "../types";

const BUILTIN_AUDITORS = new Set([
  "clicks_total",
  "mouse_movement",
  "focus_changes",
  "keypresses_total",
  "resizes_total",
]);

function banner(doc: Document, kind: string, text: string): HTMLElement {
  const el = doc.createElement("div");
  el.className = `runner-banner runner-banner-${kind}`;
  el.textContent = text;
  return el;
}

export async function bootRunner(
  root: HTMLElement,
  doc: Document = document,
  win: Window & typeof globalThis = window,
  api: WorkerApi = new WorkerApi(),
): Promise<void> {
  const handshake = parseHandshake(win.location.href);
  let bundle: TaskBundle;
  try {
    bundle = await api.getBundle(win.location.pathname + win.location.search);
  } catch (err) {
    root.appendChild(banner(doc, "error", `Could not load the task: ${String(err)}`));
    return;
  }

  const title = doc.createElement("h1");
  title.textContent = bundle.name;
  root.appendChild(title);
  if (bundle.description) {
    const desc = doc.createElement("p");
    desc.className = "task-description";
    desc.textContent = bundle.description;
    root.appendChild(desc);
  }

  if (handshake.mode === "preview") {
    root.appendChild(
      banner(doc, "preview", "Preview only — accept the HIT to begin working."),
    );
  } else if (handshake.mode === "standalone") {
    root.appendChild(
      banner(doc, "warning", "Standalone test mode: not connected to Mechanical Turk."),
    );
  }

  const fetchAsset = (url: string) =>
    win.fetch(url).then((resp) => {
      if (!resp.ok) throw new Error(`asset fetch failed (${resp.status})`);
      return resp.text();
    });
  const steps = renderSteps(doc, bundle.steps, handshake.mode === "preview" ? undefined : fetchAsset);
  root.appendChild(steps.container);

  const submitButton = doc.createElement("button");
  submitButton.className = "runner-submit";
  submitButton.textContent = "Submit";
  root.appendChild(submitButton);

  if (handshake.mode === "preview") {
    // Preview makes no calls to /events or /submit and records nothing.
    submitButton.disabled = true;
    return;
  }

  const startedAt = win.performance.now();
  const now = () => win.performance.now() - startedAt;
  const kinds = new Set(bundle.auditors.map((a) => a.kind));
  const capture = attachCapture({ doc, win }, kinds, DEFAULT_CAPTURE_CONFIG, now);
  exposeCustomAuditorApi(win, capture, kinds, now);
  loadCustomAuditorScripts(doc, bundle);

  const sender = new BatchSender(
    (seq, events) => api.postEvents(bundle.session_token, seq, events),
    DEFAULT_CAPTURE_CONFIG.flushMaxEvents,
  );
  sender.onDegraded = () => {
    root.appendChild(
      banner(
        doc,
        "warning",
        "Event delivery is failing; your work is kept locally and sent on submit.",
      ),
    );
  };
  const loop = startFlushLoop(
    () => capture.drain(),
    () => capture.size(),
    sender,
    DEFAULT_CAPTURE_CONFIG.flushIntervalMs,
    win,
  );

  submitButton.addEventListener("click", async () => {
    const blockers = steps.blockers();
    if (blockers.length) {
      showBlockerMessage(doc, root, blockers);
      return;
    }
    submitButton.disabled = true;
    loop.stop();
    await sender.finalFlush();
    const trailing: WireEvent[] = [...sender.drainUnsent(), ...capture.drain()];
    try {
      const result = await api.postSubmit(
        bundle.session_token,
        steps.collectAnswers(),
        trailing,
        Math.round(now()),
      );
      capture.detach();
      if (handshake.mode === "live" && result.redirect.url) {
        performRedirect(doc, result.redirect);
      } else {
        root.appendChild(completionPanel(doc, result.response_pk));
        submitButton.remove();
      }
    } catch (err) {
      root.appendChild(banner(doc, "error", `Submit failed: ${String(err)}. Please retry.`));
      submitButton.disabled = false;
    }
  });
}

function showBlockerMessage(doc: Document, root: HTMLElement, blockers: string[]): void {
  let note = root.querySelector<HTMLElement>(".runner-blockers");
  if (!note) {
    note = doc.createElement("div");
    note.className = "runner-banner runner-banner-error runner-blockers";
    root.appendChild(note);
  }
  note.textContent = `Please complete the required steps: ${blockers.join(", ")}`;
}

/** window.TurkeyAudit: the hook surface custom auditor scripts record through. */
function exposeCustomAuditorApi(
  win: Window & typeof globalThis,
  capture: CaptureHandle,
  kinds: Set<string>,
  now: () => number,
): void {
  const lastThrottled = new Map<string, number>();
  const record = (kind: string, data: Record<string, unknown>) => {
    if (!kinds.has(kind) || BUILTIN_AUDITORS.has(kind)) return;
    capture.record(kind, data);
  };
  (win as unknown as Record<string, unknown>).TurkeyAudit = {
    record,
    recordThrottled: (kind: string, data: Record<string, unknown>) => {
      const t = now();
      const last = lastThrottled.get(kind) ?? -Infinity;
      if (t - last < DEFAULT_CAPTURE_CONFIG.mouseSampleMinIntervalMs) return;
      lastThrottled.set(kind, t);
      record(kind, data);
    },
    selectorPath,
  };
}

function loadCustomAuditorScripts(doc: Document, bundle: TaskBundle): void {
  for (const auditor of bundle.auditors) {
    if (BUILTIN_AUDITORS.has(auditor.kind)) continue;
    const script = doc.createElement("script");
    script.src = auditor.script;
    doc.head.appendChild(script);
  }
}

const rootElement = typeof document !== "undefined" ? document.getElementById("turkey-runner") : null;
if (rootElement) {
  void bootRunner(rootElement);
}
