// Wire protocol: binary frame messages + JSON control envelopes.
// Mirrors the service side byte for byte -- header is 21 bytes, network
// byte order:
//   magic "UF" | version u8=1 | stream u8 | timestamp_us u64 |
//   width u16 | height u16 | pixel_format u8 | payload length u32

export const MAGIC = [0x55, 0x46]; // "UF"
export const VERSION = 1;
export const HEADER_SIZE = 21;

export enum StreamId {
  RGB = 0,
  US = 1,
  PRED = 2,
  COMPOSITE = 3,
  REF = 4,
}

export enum PixelFormat {
  GRAY8 = 0,
  RGB8 = 1,
}

export const CONTROL_TYPES = [
  "set_weights", "start_record", "stop_record", "freeze",
  "unfreeze", "select_reference", "get_metrics", "get_status",
] as const;

export function channels(fmt: PixelFormat): number {
  return fmt === PixelFormat.GRAY8 ? 1 : 3;
}

export interface WireFrame {
  stream: StreamId;
  timestampUs: bigint;
  width: number;
  height: number;
  format: PixelFormat;
  payload: Uint8Array;
}

export class ProtocolError extends Error {}

export function decodeFrame(data: ArrayBuffer | Uint8Array): WireFrame {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (bytes.length < HEADER_SIZE) {
    throw new ProtocolError(`frame message too short (${bytes.length} bytes)`);
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (bytes[0] !== MAGIC[0] || bytes[1] !== MAGIC[1]) {
    throw new ProtocolError(`bad magic 0x${bytes[0].toString(16)}${bytes[1].toString(16)}`);
  }
  const version = view.getUint8(2);
  if (version !== VERSION) {
    throw new ProtocolError(`unsupported protocol version ${version}`);
  }
  const stream = view.getUint8(3);
  if (!(stream in StreamId)) {
    throw new ProtocolError(`unknown stream id ${stream}`);
  }
  const timestampUs = view.getBigUint64(4);
  const width = view.getUint16(12);
  const height = view.getUint16(14);
  const format = view.getUint8(16);
  if (!(format in PixelFormat)) {
    throw new ProtocolError(`unknown pixel format ${format}`);
  }
  const length = view.getUint32(17);
  const payload = bytes.subarray(HEADER_SIZE);
  if (payload.length !== length) {
    throw new ProtocolError(`declared payload ${length} bytes, got ${payload.length}`);
  }
  if (length !== width * height * channels(format)) {
    throw new ProtocolError(
      `payload ${length} bytes does not cover ${width}x${height} ${PixelFormat[format]}`);
  }
  return { stream, timestampUs, width, height, format, payload };
}

export function encodeFrame(frame: WireFrame): Uint8Array {
  const out = new Uint8Array(HEADER_SIZE + frame.payload.length);
  const view = new DataView(out.buffer);
  out[0] = MAGIC[0];
  out[1] = MAGIC[1];
  view.setUint8(2, VERSION);
  view.setUint8(3, frame.stream);
  view.setBigUint64(4, frame.timestampUs);
  view.setUint16(12, frame.width);
  view.setUint16(14, frame.height);
  view.setUint8(16, frame.format);
  view.setUint32(17, frame.payload.length);
  out.set(frame.payload, HEADER_SIZE);
  return out;
}

export function controlRequest(id: number, type: string, extra: object = {}): string {
  return JSON.stringify({ id, type, ...extra });
}

// Text messages from the service are either replies ({re: id, ok: bool})
// or server-initiated events ({type: "metrics" | "status" | "error"}).
export interface Reply {
  re: number | null;
  ok: boolean;
  [key: string]: unknown;
}

export interface ServerEvent {
  type: string;
  [key: string]: unknown;
}

export type ServerText =
  | { kind: "reply"; reply: Reply }
  | { kind: "event"; event: ServerEvent };

export function parseServerText(text: string): ServerText {
  let msg: Record<string, unknown>;
  try {
    msg = JSON.parse(text);
  } catch (e) {
    throw new ProtocolError(`server text is not JSON: ${e}`);
  }
  if (msg === null || typeof msg !== "object" || Array.isArray(msg)) {
    throw new ProtocolError("server text must be a JSON object");
  }
  if ("re" in msg) {
    return { kind: "reply", reply: msg as unknown as Reply };
  }
  if (typeof msg.type === "string") {
    return { kind: "event", event: msg as unknown as ServerEvent };
  }
  throw new ProtocolError("server text is neither a reply nor an event");
}
