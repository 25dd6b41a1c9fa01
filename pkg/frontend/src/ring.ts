// Fixed-capacity history buffer for metric events. Old entries fall off
// the front; the chart only ever wants the most recent few hundred.

export class Ring<T> {
  private buf: T[] = [];
  private head = 0; // index of the oldest entry once full
  private filled = false;

  constructor(readonly capacity: number) {
    if (capacity <= 0) throw new Error(`capacity must be positive, got ${capacity}`);
  }

  push(item: T): void {
    if (!this.filled) {
      this.buf.push(item);
      if (this.buf.length === this.capacity) this.filled = true;
      return;
    }
    this.buf[this.head] = item;
    this.head = (this.head + 1) % this.capacity;
  }

  get length(): number {
    return this.buf.length;
  }

  get latest(): T | undefined {
    if (this.buf.length === 0) return undefined;
    const i = this.filled ? (this.head + this.capacity - 1) % this.capacity
                          : this.buf.length - 1;
    return this.buf[i];
  }

  // oldest-first snapshot of the most recent n entries (all by default)
  last(n: number = this.capacity): T[] {
    const ordered = this.filled
      ? [...this.buf.slice(this.head), ...this.buf.slice(0, this.head)]
      : [...this.buf];
    return ordered.slice(Math.max(0, ordered.length - n));
  }
}
