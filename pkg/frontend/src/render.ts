// Pixel helpers kept free of canvas/DOM so they run under node tests.

import { PixelFormat, WireFrame } from "./protocol";

// Expand a wire payload to RGBA for ImageData.
export function toRGBA(frame: WireFrame): Uint8ClampedArray<ArrayBuffer> {
  const n = frame.width * frame.height;
  const out = new Uint8ClampedArray(n * 4);
  const p = frame.payload;
  if (frame.format === PixelFormat.GRAY8) {
    for (let i = 0; i < n; i++) {
      const v = p[i];
      out[i * 4] = v;
      out[i * 4 + 1] = v;
      out[i * 4 + 2] = v;
      out[i * 4 + 3] = 255;
    }
  } else {
    for (let i = 0; i < n; i++) {
      out[i * 4] = p[i * 3];
      out[i * 4 + 1] = p[i * 3 + 1];
      out[i * 4 + 2] = p[i * 3 + 2];
      out[i * 4 + 3] = 255;
    }
  }
  return out;
}

// Average brightness in [0, 255]; the live test uses this to see a
// weight change actually land in the received composite.
export function meanLuma(frame: WireFrame): number {
  const p = frame.payload;
  if (p.length === 0) return 0;
  if (frame.format === PixelFormat.GRAY8) {
    let sum = 0;
    for (let i = 0; i < p.length; i++) sum += p[i];
    return sum / p.length;
  }
  let sum = 0;
  const n = p.length / 3;
  for (let i = 0; i < n; i++) {
    sum += 0.299 * p[i * 3] + 0.587 * p[i * 3 + 1] + 0.114 * p[i * 3 + 2];
  }
  return sum / n;
}
