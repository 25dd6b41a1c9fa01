// End-to-end against a real service process: spawn the pipeline with a
// paced synthetic config, drive it exactly the way the page does
// (SessionView + ControlChannel over one socket) and check the user-
// visible behaviors: live composites arrive, a weight change shows up
// in the next frames, freeze/record round-trip within the 2 s ack
// budget.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ControlChannel } from "../src/control";
import { StreamId, WireFrame, decodeFrame } from "../src/protocol";
import { meanLuma, toRGBA } from "../src/render";
import { SessionView } from "../src/state";

const REPO_ROOT = join(fileURLToPath(new URL(".", import.meta.url)), "..", "..");

let child: ChildProcess;
let tmp: string;
let ws: WebSocket;
let view: SessionView;
let control: ControlChannel;
const composites: WireFrame[] = [];

function sleep(ms: number) {
  return new Promise((r) => setTimeout(r, ms));
}

async function waitFor(cond: () => boolean, what: string, timeoutMs = 10000) {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > timeoutMs) throw new Error(`timed out waiting for ${what}`);
    await sleep(25);
  }
}

beforeAll(async () => {
  tmp = mkdtempSync(join(tmpdir(), "sonotrainer-ui-"));
  const cfgPath = join(tmp, "config.json");
  writeFileSync(cfgPath, JSON.stringify({
    sources: {
      rgb: "synthetic:rgb,frames=600,fps=30,width=160,height=120,seed=7",
      us: "synthetic:us,frames=600,fps=30,width=64,height=64,seed=11",
      audio: "synthetic:audio,frames=600,fps=30,rate=16000,seed=5",
    },
    pace: true,
    guideline: false,
  }));

  child = spawn("python3", ["-m", "sonotrainer.cli", "run",
                            "--config", cfgPath, "--listen", "127.0.0.1:0"],
                { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] });
  let stderr = "";
  child.stderr!.on("data", (d) => { stderr += d; });

  const url = await new Promise<string>((resolve, reject) => {
    let out = "";
    const timer = setTimeout(
      () => reject(new Error(`service never bound; stderr:\n${stderr}`)), 20000);
    child.stdout!.on("data", (d) => {
      out += d;
      const m = out.match(/listening on (ws:\/\/\S+)/);
      if (m) { clearTimeout(timer); resolve(m[1]); }
    });
    child.on("exit", (code) =>
      reject(new Error(`service exited early (${code}); stderr:\n${stderr}`)));
  });
  console.log("service at", url);

  ws = new WebSocket(url);
  view = new SessionView();
  control = new ControlChannel((text) => ws.send(text));
  view.onFrame = (f) => { if (f.stream === StreamId.COMPOSITE) composites.push(f); };
  ws.on("message", (data, isBinary) => {
    if (isBinary) {
      view.ingestBinary(decodeFrame(new Uint8Array(data as Buffer)));
    } else {
      view.ingestText(data.toString(), control);
    }
  });
  await new Promise<void>((resolve, reject) => {
    ws.once("open", () => resolve());
    ws.once("error", reject);
  });
}, 40000);

afterAll(() => {
  try { ws?.close(); } catch { /* already closed */ }
  try { child?.kill(); } catch { /* already gone */ }
  rmSync(tmp, { recursive: true, force: true });
});

describe("live service", () => {
  it("streams decodable composites with metrics", async () => {
    await waitFor(() => composites.length >= 3, "3 composite frames");
    const f = composites[composites.length - 1];
    expect(f.width).toBe(160);
    expect(f.height).toBe(120);
    const rgba = toRGBA(f);
    expect(rgba.length).toBe(160 * 120 * 4);
    expect(meanLuma(f)).toBeGreaterThan(10); // scene is lit at default weights
    await waitFor(() => view.metrics.length >= 1, "a metrics event");
    expect(view.metrics.latest!.bundle_ts_us).toBeGreaterThanOrEqual(0);
  }, 15000);

  it("a weight change shows up in the received composite", async () => {
    await waitFor(() => composites.length >= 1, "a baseline composite");
    const before = meanLuma(composites[composites.length - 1]);

    const t0 = Date.now();
    const reply = await control.request("set_weights", { weights: [0, 0, 0] });
    expect(Date.now() - t0).toBeLessThan(2000);
    expect(reply.weights).toEqual([0, 0, 0]);

    // the very next bundles must go black (guideline is off)
    const mark = composites.length;
    await waitFor(() => composites.length > mark + 2, "post-change composites");
    const after = meanLuma(composites[composites.length - 1]);
    expect(after).toBeLessThan(1);
    expect(after).toBeLessThan(before / 4);

    await control.request("set_weights", { weights: [0.9, 0.4, 1.0] });
    const mark2 = composites.length;
    await waitFor(() => composites.length > mark2 + 2, "restored composites");
    expect(meanLuma(composites[composites.length - 1])).toBeGreaterThan(10);
  }, 15000);

  it("freeze pins the composite timestamp until unfreeze", async () => {
    const t0 = Date.now();
    const reply = await control.request("freeze");
    expect(Date.now() - t0).toBeLessThan(2000);
    expect(reply.frozen).toBe(true);

    const mark = composites.length;
    await waitFor(() => composites.length >= mark + 5, "frozen composites");
    const ts = composites.slice(mark).map((f) => f.timestampUs);
    const repeats = ts.filter((t, i) => i > 0 && t === ts[i - 1]).length;
    expect(repeats).toBeGreaterThan(0);

    const un = await control.request("unfreeze");
    expect(un.frozen).toBe(false);
    const mark2 = composites.length;
    await waitFor(() => composites.length >= mark2 + 3, "live composites again");
    const fresh = composites.slice(mark2).map((f) => f.timestampUs);
    expect(new Set(fresh).size).toBeGreaterThan(1);
  }, 15000);

  it("record round-trips within the ack budget", async () => {
    const dir = join(tmp, "ui-session");
    const t0 = Date.now();
    const start = await control.request("start_record", { directory: dir });
    expect(Date.now() - t0).toBeLessThan(2000);
    expect(String(start.directory)).toContain("ui-session");

    await sleep(400); // let a few bundles hit the disk

    const t1 = Date.now();
    const stop = await control.request("stop_record");
    expect(Date.now() - t1).toBeLessThan(2000);
    const frames = stop.frames as Record<string, number>;
    expect(frames.COMPOSITE).toBeGreaterThan(0);
  }, 15000);

  it("rejects malformed weights with an error reply, not a dead socket", async () => {
    const err = await control.request("set_weights", { weights: [2, 0] })
      .catch((e) => e);
    expect(err.code).not.toBe("AckTimeout"); // a real reply, not silence
    expect(String(err)).toMatch(/3 values/);
    // and the connection still answers afterwards
    const status = await control.request("get_status");
    expect(status.ok).toBe(true);
  }, 15000);
});
