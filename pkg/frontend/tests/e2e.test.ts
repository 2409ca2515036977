/**
 * End-to-end checks against a running service.
 *
 * Start one with a demo checkpoint, then `npm run e2e`:
 *
 *     tokenforge demo-data /tmp/demo
 *     tokenforge serve --checkpoint /tmp/demo/model/final.ckpt
 *
 * Point TOKENFORGE_URL elsewhere if the service is not on the default
 * port. The whole suite skips (rather than fails) when no service is
 * reachable, so the unit suite stays self-contained.
 */

import { readFileSync } from "node:fs";

import { beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError, UploadInfo } from "../src/api";
import { renderOverlay, tintedPixelCount } from "../src/compositing";
import {
  SessionState,
  appendQuery,
  displayedHeat,
  initialState,
  lastResponse,
  withImage,
} from "../src/state";

const BASE = process.env.TOKENFORGE_URL ?? "http://127.0.0.1:8321";

const reachable = await fetch(`${BASE}/health`)
  .then((r) => r.ok)
  .catch(() => false);
if (!reachable) {
  console.info(`no service at ${BASE}; skipping end-to-end suite`);
}

const demoPng = readFileSync(new URL("../demo/demo.png", import.meta.url));
const demoRaw = readFileSync(new URL("../demo/demo.rgba", import.meta.url));
const dims = JSON.parse(readFileSync(new URL("../demo/demo.json", import.meta.url), "utf8"));
const basePixels = new Uint8ClampedArray(demoRaw.buffer, demoRaw.byteOffset, demoRaw.length);

// glyphs actually drawn in the bundled demo image
const GLYPH_QUERIES = ["X", "H", "#"];

describe.skipIf(!reachable)("ui end-to-end", () => {
  const client = new ApiClient(BASE);
  let info: UploadInfo;

  function render(state: SessionState): Uint8ClampedArray {
    const res = lastResponse(state);
    return renderOverlay(
      basePixels,
      info.width,
      info.height,
      displayedHeat(state),
      res ? res.grid_h : info.grid_h,
      res ? res.grid_w : info.grid_w,
      state.threshold,
      state.opacity,
    );
  }

  beforeAll(async () => {
    info = await client.uploadImage(demoPng);
    // the raw sidecar only matches if the service serves the image unscaled
    expect(info.width).toBe(dims.width);
    expect(info.height).toBe(dims.height);
    expect(info.grid_h).toBeGreaterThan(0);
    expect(info.grid_w).toBeGreaterThan(0);
  });

  it("renders a non-empty overlay for a glyph query", async () => {
    let state = withImage(initialState(), info);
    const res = await client.query(info.image_id, GLYPH_QUERIES[0]);
    expect(res.tokens).toHaveLength(1);
    expect(res.tokens[0].heatmap).not.toBeNull();
    expect(res.tokens[0].heatmap).toHaveLength(res.grid_h * res.grid_w);
    state = appendQuery(state, GLYPH_QUERIES[0], Date.now(), res);
    const composited = render(state);
    expect(tintedPixelCount(basePixels, composited)).toBeGreaterThan(0);
  });

  it("accepts the single-space background probe verbatim", async () => {
    const res = await client.query(info.image_id, " ");
    expect(res.tokens).toHaveLength(1);
    expect(res.tokens[0].text).toBe(" ");
    expect(res.combined).not.toBeNull();
    for (const v of res.combined!) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(1);
    }
  });

  it("reproduces identical canvas pixels when replaying a 3-query history", async () => {
    const texts = [...GLYPH_QUERIES.slice(0, 2), " "];
    let state = withImage(initialState(), info);
    const frames: Uint8ClampedArray[] = [];
    for (const text of texts) {
      state = appendQuery(state, text, Date.now(), await client.query(info.image_id, text));
      frames.push(render(state));
    }
    expect(state.history.map((h) => h.text)).toEqual(texts);

    // pure replay from the stored history, no network
    let replayed = withImage(initialState(), info);
    state.history.forEach((entry, i) => {
      replayed = appendQuery(replayed, entry.text, entry.timestamp, entry.response);
      expect(Buffer.from(render(replayed)).equals(Buffer.from(frames[i]))).toBe(true);
    });

    // re-issuing the same queries hits the same responses byte for byte
    let requeried = withImage(initialState(), info);
    for (let i = 0; i < texts.length; i++) {
      const res = await client.query(info.image_id, texts[i]);
      requeried = appendQuery(requeried, texts[i], Date.now(), res);
      expect(Buffer.from(render(requeried)).equals(Buffer.from(frames[i]))).toBe(true);
    }
  });

  it("surfaces a 404 for an unknown image without touching history", async () => {
    let state = withImage(initialState(), info);
    state = appendQuery(state, "X", 1, await client.query(info.image_id, "X"));
    const before = state.history;
    const err = await client.query("0000000000000000", "X").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    // the submit path only adopts new state on success
    expect(state.history).toBe(before);
    expect(state.history).toHaveLength(1);
  });
});
