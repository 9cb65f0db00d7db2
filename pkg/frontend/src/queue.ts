/** Client-side request serialization: at most one task runs at a time;
 * later submissions wait their turn in FIFO order.  A failed task never
 * blocks the ones behind it. */

export class SerialQueue {
  private chain: Promise<void> = Promise.resolve();
  private waiting = 0;
  private running = false;

  /** Number of tasks queued but not yet started. */
  get pending(): number {
    return this.waiting;
  }

  /** Whether a task is executing right now. */
  get busy(): boolean {
    return this.running;
  }

  run<T>(task: () => Promise<T>): Promise<T> {
    this.waiting += 1;
    const result = this.chain.then(async () => {
      this.waiting -= 1;
      this.running = true;
      try {
        return await task();
      } finally {
        this.running = false;
      }
    });
    this.chain = result.then(
      () => undefined,
      () => undefined,
    );
    return result;
  }
}
