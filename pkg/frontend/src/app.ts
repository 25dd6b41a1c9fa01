// Browser entry point: connect, paint composites, wire the controls.

import { ControlChannel } from "./control";
import { StreamId, decodeFrame } from "./protocol";
import { toRGBA } from "./render";
import { SessionView } from "./state";

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function setStatus(text: string) {
  $("status").textContent = text;
}

export function start(url: string): void {
  const canvas = $("composite") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const view = new SessionView();

  const ws = new WebSocket(url);
  ws.binaryType = "arraybuffer";
  const control = new ControlChannel((text) => ws.send(text));

  view.onFrame = (frame) => {
    if (frame.stream !== StreamId.COMPOSITE) return;
    if (canvas.width !== frame.width || canvas.height !== frame.height) {
      canvas.width = frame.width;
      canvas.height = frame.height;
    }
    ctx.putImageData(new ImageData(toRGBA(frame), frame.width, frame.height), 0, 0);
    const m = view.metrics.latest;
    if (m) {
      $("metrics").textContent =
        `bundle ${m.index}  msd ${m.msd === null ? "-" : m.msd.toFixed(2)} px` +
        `  audio ${m.audio_rms === null ? "-" : Math.round(m.audio_rms)}` +
        (m.us_held ? "  [held]" : "");
    }
  };

  ws.onopen = () => setStatus(`connected to ${url}`);
  ws.onclose = () => {
    setStatus("disconnected");
    control.abort("connection closed");
  };
  ws.onerror = () => setStatus("socket error");
  ws.onmessage = (msg) => {
    if (typeof msg.data === "string") {
      view.ingestText(msg.data, control);
      if (view.ended) setStatus(view.endDetail ?? "stream ended");
      if (view.lastError) setStatus(`error: ${view.lastError}`);
    } else {
      view.ingestBinary(decodeFrame(msg.data as ArrayBuffer));
    }
  };

  const sendWeights = () => {
    const w: [number, number, number] = [
      Number(($("w-rgb") as HTMLInputElement).value),
      Number(($("w-us") as HTMLInputElement).value),
      Number(($("w-pred") as HTMLInputElement).value),
    ];
    control.request("set_weights", { weights: w }).then((r) => {
      view.weights = w;
      console.log("weights ack", r.weights);
    }).catch((e) => setStatus(String(e)));
  };
  for (const id of ["w-rgb", "w-us", "w-pred"]) {
    $(id).addEventListener("change", sendWeights);
  }

  $("freeze").addEventListener("click", () => {
    const type = view.frozen ? "unfreeze" : "freeze";
    control.request(type).then(() => {
      view.frozen = !view.frozen;
      $("freeze").textContent = view.frozen ? "Unfreeze" : "Freeze";
      setStatus(view.frozen ? "frozen" : "live");
    }).catch((e) => setStatus(String(e)));
  });

  $("record").addEventListener("click", () => {
    if (view.recording === null) {
      const dir = ($("record-dir") as HTMLInputElement).value || "session-ui";
      control.request("start_record", { directory: dir }).then((r) => {
        view.recording = String(r.directory);
        $("record").textContent = "Stop recording";
        setStatus(`recording to ${view.recording}`);
      }).catch((e) => setStatus(String(e)));
    } else {
      control.request("stop_record").then((r) => {
        view.recording = null;
        $("record").textContent = "Record";
        setStatus(`recorded ${JSON.stringify(r.frames)}`);
      }).catch((e) => setStatus(String(e)));
    }
  });
}

// Auto-start when loaded in a page; ?service=ws://host:port overrides.
if (typeof document !== "undefined" && document.getElementById("composite")) {
  const params = new URLSearchParams(window.location.search);
  start(params.get("service") ?? "ws://127.0.0.1:8765");
}
