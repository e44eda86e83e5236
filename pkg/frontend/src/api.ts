// Thin client over the public HTTP API. The fetch function is injectable so
// tests can assert exactly which requests happen.

import type { BatchAck, SubmitResult, TaskBundle, TaskRow, WireEvent } from "./types";

export type FetchLike = typeof fetch;

export class ApiError extends Error {
  status: number;
  body: unknown;

  constructor(status: number, body: unknown) {
    const detail =
      body && typeof body === "object" && "detail" in (body as Record<string, unknown>)
        ? String((body as Record<string, unknown>).detail)
        : `HTTP ${status}`;
    super(detail);
    this.status = status;
    this.body = body;
  }
}

async function asJson(resp: Response): Promise<unknown> {
  let body: unknown = null;
  try {
    body = await resp.json();
  } catch {
    body = null;
  }
  if (!resp.ok) throw new ApiError(resp.status, body);
  return body;
}

export class WorkerApi {
  constructor(private doFetch: FetchLike = fetch.bind(globalThis)) {}

  async getBundle(pageUrl: string): Promise<TaskBundle> {
    const resp = await this.doFetch(pageUrl, { headers: { Accept: "application/json" } });
    return (await asJson(resp)) as TaskBundle;
  }

  async postEvents(token: string, batchSeq: number, events: WireEvent[]): Promise<BatchAck> {
    const resp = await this.doFetch(`/api/v1/sessions/${token}/events`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ batch_seq: batchSeq, events }),
    });
    return (await asJson(resp)) as BatchAck;
  }

  async postSubmit(
    token: string,
    answers: { step_id: string; value: unknown }[],
    trailingEvents: WireEvent[],
    endMs: number,
  ): Promise<SubmitResult> {
    const resp = await this.doFetch(`/api/v1/sessions/${token}/submit`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ answers, events: trailingEvents, end_ms: endMs }),
    });
    return (await asJson(resp)) as SubmitResult;
  }
}

export class AdminApi {
  constructor(
    private token: string,
    private doFetch: FetchLike = fetch.bind(globalThis),
  ) {}

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return { Authorization: `Bearer ${this.token}`, ...extra };
  }

  async listTasks(): Promise<TaskRow[]> {
    const resp = await this.doFetch("/api/v1/tasks", { headers: this.headers() });
    return (await asJson(resp)) as TaskRow[];
  }

  async createTask(spec: unknown): Promise<{ task_id: string }> {
    const resp = await this.doFetch("/api/v1/tasks", {
      method: "POST",
      headers: this.headers({ "Content-Type": "application/json" }),
      body: JSON.stringify(spec),
    });
    return (await asJson(resp)) as { task_id: string };
  }

  async setStatus(taskId: string, action: "publish" | "close"): Promise<void> {
    const resp = await this.doFetch(`/api/v1/tasks/${taskId}/${action}`, {
      method: "POST",
      headers: this.headers(),
    });
    await asJson(resp);
  }

  async registry(): Promise<{ auditors: { kind: string }[]; step_kinds: string[] }> {
    const resp = await this.doFetch("/api/v1/registry", { headers: this.headers() });
    return (await asJson(resp)) as { auditors: { kind: string }[]; step_kinds: string[] };
  }

  /** Raw export bytes, kept verbatim so downloads equal the API response. */
  async exportXml(taskId: string): Promise<string> {
    const resp = await this.doFetch(`/api/v1/tasks/${taskId}/export.xml`, {
      headers: this.headers(),
    });
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
    return await resp.text();
  }
}
