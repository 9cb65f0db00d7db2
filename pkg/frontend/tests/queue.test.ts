import { describe, expect, it } from "vitest";

import { SerialQueue } from "../src/queue.js";

function deferred<T>(): { promise: Promise<T>; resolve: (v: T) => void; reject: (e: unknown) => void } {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("SerialQueue", () => {
  it("runs at most one task at a time, in submission order", async () => {
    const queue = new SerialQueue();
    const events: string[] = [];
    const gate1 = deferred<void>();
    const gate2 = deferred<void>();

    const t1 = queue.run(async () => {
      events.push("start1");
      await gate1.promise;
      events.push("end1");
    });
    const t2 = queue.run(async () => {
      events.push("start2");
      await gate2.promise;
      events.push("end2");
    });

    await Promise.resolve();
    expect(events).toEqual(["start1"]);
    expect(queue.busy).toBe(true);
    expect(queue.pending).toBe(1);

    gate1.resolve();
    await t1;
    gate2.resolve();
    await t2;
    expect(events).toEqual(["start1", "end1", "start2", "end2"]);
    expect(queue.busy).toBe(false);
    expect(queue.pending).toBe(0);
  });

  it("keeps serving after a task fails", async () => {
    const queue = new SerialQueue();
    const failing = queue.run(async () => {
      throw new Error("boom");
    });
    await expect(failing).rejects.toThrow("boom");
    const value = await queue.run(async () => 42);
    expect(value).toBe(42);
  });

  it("returns each task's own result", async () => {
    const queue = new SerialQueue();
    const [a, b, c] = await Promise.all([
      queue.run(async () => "a"),
      queue.run(async () => "b"),
      queue.run(async () => "c"),
    ]);
    expect([a, b, c]).toEqual(["a", "b", "c"]);
  });
});
