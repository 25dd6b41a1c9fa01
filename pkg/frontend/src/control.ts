// Request/reply bookkeeping over the control plane. Every request gets
// a fresh correlation id; the matching reply resolves the promise, a
// missing reply rejects it after ackTimeoutMs (the service promises
// acknowledgement within 2 s).

import { controlRequest, Reply } from "./protocol";

export class ControlError extends Error {
  constructor(readonly code: string, message: string) {
    super(`${code}: ${message}`);
  }
}

interface Pending {
  resolve: (reply: Reply) => void;
  reject: (err: Error) => void;
  timer: ReturnType<typeof setTimeout>;
}

export class ControlChannel {
  private nextId = 1;
  private pending = new Map<number, Pending>();

  constructor(
    private send: (text: string) => void,
    readonly ackTimeoutMs = 2000,
  ) {}

  get pendingCount(): number {
    return this.pending.size;
  }

  request(type: string, extra: object = {}): Promise<Reply> {
    const id = this.nextId++;
    return new Promise<Reply>((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(id);
        reject(new ControlError("AckTimeout",
          `no reply to ${type} (id ${id}) within ${this.ackTimeoutMs} ms`));
      }, this.ackTimeoutMs);
      this.pending.set(id, { resolve, reject, timer });
      this.send(controlRequest(id, type, extra));
    });
  }

  // Feed every reply here; unknown correlation ids are ignored (e.g.
  // replies that raced a timeout).
  handleReply(reply: Reply): void {
    if (reply.re === null || reply.re === undefined) return;
    const entry = this.pending.get(reply.re);
    if (!entry) return;
    this.pending.delete(reply.re);
    clearTimeout(entry.timer);
    if (reply.ok) {
      entry.resolve(reply);
    } else {
      entry.reject(new ControlError(
        String(reply.error ?? "Error"), String(reply.message ?? "")));
    }
  }

  // Drop everything (connection closed).
  abort(reason: string): void {
    for (const [, entry] of this.pending) {
      clearTimeout(entry.timer);
      entry.reject(new ControlError("Aborted", reason));
    }
    this.pending.clear();
  }
}
