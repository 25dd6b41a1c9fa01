// Client-side view of one service connection: latest frame per stream,
// rolling metric history, and the flags the widgets bind to.

import { ControlChannel } from "./control";
import { ServerEvent, StreamId, WireFrame, parseServerText } from "./protocol";
import { Ring } from "./ring";

export const METRIC_HISTORY = 300;

export interface MetricSample {
  index: number;
  bundle_ts_us: number;
  msd: number | null;
  hausdorff: number | null;
  audio_rms: number | null;
  us_held: boolean;
  [key: string]: unknown;
}

export class SessionView {
  frames = new Map<StreamId, WireFrame>();
  metrics = new Ring<MetricSample>(METRIC_HISTORY);
  frozen = false;
  recording: string | null = null; // directory while recording
  weights: [number, number, number] = [0.9, 0.4, 1.0];
  ended = false;
  endDetail: string | null = null;
  lastError: string | null = null;
  onFrame?: (frame: WireFrame) => void;

  ingestBinary(frame: WireFrame): void {
    this.frames.set(frame.stream, frame);
    if (this.onFrame) this.onFrame(frame);
  }

  // Route one text message; replies go to the control channel, events
  // land here.
  ingestText(text: string, control: ControlChannel): void {
    const parsed = parseServerText(text);
    if (parsed.kind === "reply") {
      control.handleReply(parsed.reply);
      return;
    }
    this.ingestEvent(parsed.event);
  }

  ingestEvent(ev: ServerEvent): void {
    if (ev.type === "metrics") {
      this.metrics.push(ev as unknown as MetricSample);
    } else if (ev.type === "status") {
      if (ev.event === "end" || ev.event === "source_stalled") {
        this.ended = true;
        this.endDetail = ev.event === "source_stalled"
          ? `source stalled: ${ev.detail}` : null;
      }
    } else if (ev.type === "error") {
      this.lastError = String(ev.message ?? "unknown error");
      console.warn("service error:", this.lastError);
    }
  }

  latest(stream: StreamId): WireFrame | undefined {
    return this.frames.get(stream);
  }
}
