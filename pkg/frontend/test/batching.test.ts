import { describe, expect, it, vi } from "vitest";

import { BatchSender, MAX_CONSECUTIVE_FAILURES, startFlushLoop } from "../src/batching";
import type { WireEvent } from "../src/types";

function events(n: number, kind = "keypresses_total"): WireEvent[] {
  return Array.from({ length: n }, (_, i) => ({ kind, t_ms: i * 10, data: {} }));
}

function okSend() {
  const calls: { seq: number; count: number }[] = [];
  const send = vi.fn(async (seq: number, batch: WireEvent[]) => {
    calls.push({ seq, count: batch.length });
    return { accepted: batch.length, rejected: [] };
  });
  return { send, calls };
}

describe("BatchSender", () => {
  it("assigns strictly increasing batch_seq values", async () => {
    const { send, calls } = okSend();
    const sender = new BatchSender(send, 200);
    sender.enqueue(events(3));
    sender.enqueue(events(2));
    await sender.pump();
    expect(calls.map((c) => c.seq)).toEqual([1, 2]);
  });

  it("splits oversized buffers at the max batch size", async () => {
    const { send, calls } = okSend();
    const sender = new BatchSender(send, 200);
    sender.enqueue(events(450));
    await sender.pump();
    expect(calls.map((c) => c.count)).toEqual([200, 200, 50]);
  });

  it("signals a size flush at the threshold", () => {
    const sender = new BatchSender(okSend().send, 200);
    expect(sender.shouldFlushBySize(199)).toBe(false);
    expect(sender.shouldFlushBySize(200)).toBe(true);
  });

  it("retries a failed batch with the same seq", async () => {
    const seqs: number[] = [];
    let failures = 1;
    const send = vi.fn(async (seq: number, batch: WireEvent[]) => {
      seqs.push(seq);
      if (failures > 0) {
        failures -= 1;
        throw new Error("network down");
      }
      return { accepted: batch.length, rejected: [] };
    });
    const sender = new BatchSender(send, 200);
    sender.enqueue(events(5));
    await sender.pump(); // fails once
    await sender.pump(); // retry succeeds
    expect(seqs).toEqual([1, 1]);
    expect(sender.pendingBatches()).toBe(0);
  });

  it("degrades after five consecutive failures and keeps events for submit", async () => {
    const send = vi.fn(async () => {
      throw new Error("offline");
    });
    const sender = new BatchSender(send, 200);
    const warned = vi.fn();
    sender.onDegraded = warned;
    sender.enqueue(events(7));
    for (let i = 0; i < MAX_CONSECUTIVE_FAILURES; i++) await sender.pump();
    expect(sender.isDegraded).toBe(true);
    expect(warned).toHaveBeenCalledTimes(1);
    const unsent = sender.drainUnsent();
    expect(unsent).toHaveLength(7);
  });

  it("finalFlush re-attempts the queue after degradation", async () => {
    let offline = true;
    const send = vi.fn(async (_seq: number, batch: WireEvent[]) => {
      if (offline) throw new Error("offline");
      return { accepted: batch.length, rejected: [] };
    });
    const sender = new BatchSender(send, 200);
    sender.enqueue(events(4));
    for (let i = 0; i < MAX_CONSECUTIVE_FAILURES; i++) await sender.pump();
    expect(sender.isDegraded).toBe(true);
    offline = false;
    await sender.finalFlush();
    expect(sender.pendingBatches()).toBe(0);
  });
});

describe("startFlushLoop", () => {
  it("flushes on the timer only when the buffer is nonempty", async () => {
    vi.useFakeTimers();
    try {
      const { send, calls } = okSend();
      const sender = new BatchSender(send, 200);
      let buffer = events(3);
      const loop = startFlushLoop(
        () => buffer.splice(0, buffer.length),
        () => buffer.length,
        sender,
        2000,
        window,
      );
      await vi.advanceTimersByTimeAsync(1999);
      expect(calls).toHaveLength(0);
      await vi.advanceTimersByTimeAsync(2);
      expect(calls).toEqual([{ seq: 1, count: 3 }]);
      await vi.advanceTimersByTimeAsync(6000); // empty buffer: no new batches
      expect(calls).toHaveLength(1);
      buffer = events(2);
      await vi.advanceTimersByTimeAsync(2000);
      expect(calls).toEqual([
        { seq: 1, count: 3 },
        { seq: 2, count: 2 },
      ]);
      loop.stop();
    } finally {
      vi.useRealTimers();
    }
  });
});
