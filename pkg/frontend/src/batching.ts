// Event batch delivery: periodic and size-triggered flushes, retries that
// reuse the original batch_seq (the server dedups), and a final awaited
// flush before submit. After too many consecutive failures the sender backs
// off; everything unsent still reaches the server via submit's trailing
// events.

import type { BatchAck, WireEvent } from "./types";

export const MAX_CONSECUTIVE_FAILURES = 5;

export type SendFn = (batchSeq: number, events: WireEvent[]) => Promise<BatchAck>;

interface PendingBatch {
  seq: number;
  events: WireEvent[];
}

export class BatchSender {
  private nextSeq = 1;
  private queue: PendingBatch[] = [];
  private consecutiveFailures = 0;
  private degraded = false;
  private inFlight: Promise<void> | null = null;
  public onDegraded: (() => void) | null = null;

  constructor(
    private send: SendFn,
    private maxEvents: number,
  ) {}

  get isDegraded(): boolean {
    return this.degraded;
  }

  /** Number of batches waiting for a successful ack. */
  pendingBatches(): number {
    return this.queue.length;
  }

  /** Events cut into batches but not yet acked; used as trailing events. */
  drainUnsent(): WireEvent[] {
    const out: WireEvent[] = [];
    for (const batch of this.queue) out.push(...batch.events);
    this.queue = [];
    return out;
  }

  /** Cut a batch from the buffer and schedule delivery. */
  enqueue(events: WireEvent[]): void {
    if (!events.length) return;
    for (let i = 0; i < events.length; i += this.maxEvents) {
      this.queue.push({ seq: this.nextSeq++, events: events.slice(i, i + this.maxEvents) });
    }
    void this.pump();
  }

  shouldFlushBySize(buffered: number): boolean {
    return buffered >= this.maxEvents;
  }

  /** Deliver queued batches in order; resolves when the queue drains or
   * delivery degrades. Retries keep the original seq. */
  async pump(): Promise<void> {
    if (this.inFlight) return this.inFlight;
    this.inFlight = (async () => {
      while (this.queue.length && !this.degraded) {
        const batch = this.queue[0];
        try {
          await this.send(batch.seq, batch.events);
          this.queue.shift();
          this.consecutiveFailures = 0;
        } catch {
          this.consecutiveFailures += 1;
          if (this.consecutiveFailures >= MAX_CONSECUTIVE_FAILURES) {
            this.degraded = true;
            this.onDegraded?.();
          }
          break;
        }
      }
    })();
    try {
      await this.inFlight;
    } finally {
      this.inFlight = null;
    }
  }

  /** One more delivery attempt for everything queued (used before submit). */
  async finalFlush(): Promise<void> {
    this.degraded = false;
    this.consecutiveFailures = 0;
    await this.pump();
  }
}

export interface FlushLoop {
  stop(): void;
}

/** Wire a capture buffer to a sender: timer flushes plus size flushes. */
export function startFlushLoop(
  drain: () => WireEvent[],
  size: () => number,
  sender: BatchSender,
  intervalMs: number,
  win: { setInterval: typeof setInterval; clearInterval: typeof clearInterval },
): FlushLoop {
  const tick = () => {
    if (size() > 0) sender.enqueue(drain());
  };
  const timer = win.setInterval(() => {
    tick();
  }, intervalMs);
  return {
    stop: () => win.clearInterval(timer),
  };
}
