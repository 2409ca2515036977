/**
 * DOM wiring for the query console.
 *
 * All pixel math lives in compositing.ts and all state transitions in
 * state.ts; this file only moves data between the DOM, the service
 * client, and those pure modules.
 */

import { ApiClient, ApiError } from "./api";
import { renderOverlay } from "./compositing";
import {
  SessionState,
  appendQuery,
  chipModels,
  displayedHeat,
  initialState,
  lastResponse,
  selectCombined,
  selectToken,
  setOpacity,
  setThreshold,
  withImage,
} from "./state";

const client = new ApiClient("");

let state: SessionState = initialState();
// Original pixels at served size, captured once per upload so every
// re-render starts from identical bytes.
let basePixels: Uint8ClampedArray | null = null;
// Monotonic submission counter: a response only lands if no newer query
// was issued while it was in flight (last-write-wins).
let querySeq = 0;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("canvas");
const statusLine = el<HTMLDivElement>("status");
const chipsRow = el<HTMLDivElement>("chips");
const historyList = el<HTMLUListElement>("history-list");

function setStatus(text: string, isError = false): void {
  statusLine.textContent = text;
  statusLine.className = isError ? "status error" : "status";
}


function draw(): void {
  if (!state.image || !basePixels) return;
  const res = lastResponse(state);
  const { width, height, grid_h, grid_w } = state.image;
  const heat = displayedHeat(state);
  const gh = res ? res.grid_h : grid_h;
  const gw = res ? res.grid_w : grid_w;
  const out = renderOverlay(
    basePixels, width, height, heat, gh, gw, state.threshold, state.opacity,
  );
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(out, width, height), 0, 0);
}

function syncChips(): void {
  chipsRow.textContent = "";
  for (const model of chipModels(state)) {
    const chip = document.createElement("button");
    chip.textContent = model.label;
    chip.className = model.active ? "chip active" : "chip";
    if (!model.hasMap) chip.classList.add("no-map");
    chip.title = model.tokenId === null ? "no heatmap" : `token ${model.tokenId}`;
    chip.addEventListener("click", () => {
      state = model.kind === "combined" ? selectCombined(state) : selectToken(state, model.index!);
      sync();
    });
    chipsRow.appendChild(chip);
  }
}

function syncHistory(): void {
  historyList.textContent = "";
  for (const entry of state.history) {
    const item = document.createElement("li");
    const when = new Date(entry.timestamp).toLocaleTimeString();
    item.textContent = `${when}  ${entry.text === " " ? "␣" : entry.text}`;
    historyList.appendChild(item);
  }
  el<HTMLButtonElement>("replay-btn").disabled = state.history.length === 0;
}

function sync(): void {
  el<HTMLSpanElement>("threshold-val").textContent = state.threshold.toFixed(2);
  el<HTMLSpanElement>("opacity-val").textContent = state.opacity.toFixed(2);
  syncChips();
  syncHistory();
  draw();
}

async function upload(file: File): Promise<void> {
  try {
    const info = await client.uploadImage(await file.arrayBuffer());
    state = withImage(state, info);
    canvas.width = info.width;
    canvas.height = info.height;
    const bitmap = await createImageBitmap(file);
    const ctx = canvas.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0, info.width, info.height);
    basePixels = ctx.getImageData(0, 0, info.width, info.height).data.slice();
    bitmap.close();
    setStatus(`image ${info.image_id} at ${info.width}x${info.height}, grid ${info.grid_h}x${info.grid_w}`);
    sync();
  } catch (err) {
    setStatus(errorText(err), true);
  }
}

function errorText(err: unknown): string {
  if (err instanceof ApiError) return `${err.slug}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

async function submit(text: string): Promise<void> {
  if (!state.image) {
    setStatus("upload an image first", true);
    return;
  }
  const seq = ++querySeq;
  setStatus("querying…");
  try {
    const res = await client.query(state.image.image_id, text);
    if (seq !== querySeq) return; // a newer query superseded this one
    state = appendQuery(state, text, Date.now(), res);
    setStatus(`${res.tokens.length} token(s), checkpoint ${res.checkpoint}`);
    sync();
  } catch (err) {
    if (seq !== querySeq) return;
    setStatus(errorText(err), true); // history stays as it was
  }
}

/**
 * Re-render every stored query in order from its saved response. Pure
 * replay: no network, final pixels must match the original run.
 */
function replay(): void {
  const entries = state.history;
  if (!state.image || entries.length === 0) return;
  let replayed: SessionState = { ...state, history: [] };
  for (const entry of entries) {
    replayed = appendQuery(replayed, entry.text, entry.timestamp, entry.response);
    state = replayed;
    sync();
  }
  setStatus(`replayed ${entries.length} quer${entries.length === 1 ? "y" : "ies"}`);
}

function init(): void {
  el<HTMLInputElement>("file-input").addEventListener("change", (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void upload(file);
  });
  const textInput = el<HTMLInputElement>("query-text");
  el<HTMLButtonElement>("query-btn").addEventListener("click", () => {
    if (textInput.value) void submit(textInput.value);
  });
  textInput.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter" && textInput.value) void submit(textInput.value);
  });
  // the background probe always sends exactly one space
  el<HTMLButtonElement>("space-btn").addEventListener("click", () => void submit(" "));
  el<HTMLInputElement>("threshold").addEventListener("input", (ev) => {
    state = setThreshold(state, Number((ev.target as HTMLInputElement).value));
    sync();
  });
  el<HTMLInputElement>("opacity").addEventListener("input", (ev) => {
    state = setOpacity(state, Number((ev.target as HTMLInputElement).value));
    sync();
  });
  el<HTMLButtonElement>("replay-btn").addEventListener("click", replay);
  client
    .health()
    .then((h) => el<HTMLSpanElement>("health").textContent = `checkpoint ${h.checkpoint}`)
    .catch(() => setStatus("service unreachable", true));
  sync();
}

init();
