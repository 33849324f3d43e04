// Bounded ring buffer: push is O(1) and never blocks; when full, the oldest
// entry is dropped. Rendering reads snapshots; ingest never waits on it.

export class RingBuffer<T> {
  private items: T[] = [];
  private droppedCount = 0;

  constructor(readonly capacity: number) {
    if (capacity <= 0) throw new Error("ring capacity must be positive");
  }

  push(item: T): void {
    this.items.push(item);
    if (this.items.length > this.capacity) {
      // drop oldest; batch-trim so repeated pushes stay cheap
      const excess = this.items.length - this.capacity;
      this.items.splice(0, excess);
      this.droppedCount += excess;
    }
  }

  get length(): number {
    return this.items.length;
  }

  get dropped(): number {
    return this.droppedCount;
  }

  /** Snapshot of current contents, oldest first. */
  toArray(): T[] {
    return this.items.slice();
  }

  last(): T | undefined {
    return this.items[this.items.length - 1];
  }

  clear(): void {
    this.items.length = 0;
  }
}
