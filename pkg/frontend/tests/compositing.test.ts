import { describe, expect, it } from "vitest";

import {
  TINT,
  clamp01,
  renderOverlay,
  tintedPixelCount,
  upsampleBilinear,
} from "../src/compositing";

// deterministic RGBA checkerboard-ish base, alpha 255
function makeBase(width: number, height: number): Uint8ClampedArray {
  const base = new Uint8ClampedArray(width * height * 4);
  for (let p = 0; p < width * height; p++) {
    base[p * 4] = (p * 37) % 256;
    base[p * 4 + 1] = (p * 101) % 256;
    base[p * 4 + 2] = (p * 13) % 256;
    base[p * 4 + 3] = 255;
  }
  return base;
}

describe("clamp01", () => {
  it("pins values into [0, 1]", () => {
    expect(clamp01(-3)).toBe(0);
    expect(clamp01(0.25)).toBe(0.25);
    expect(clamp01(9)).toBe(1);
  });
});

describe("upsampleBilinear", () => {
  it("is the identity at equal sizes", () => {
    const heat = [0.1, 0.9, 0.4, 0.2, 0.7, 0.3];
    const out = upsampleBilinear(heat, 2, 3, 2, 3);
    expect(Array.from(out)).toEqual(heat.map((v) => Math.fround(v)));
  });

  it("broadcasts a 1x1 map to a constant", () => {
    const out = upsampleBilinear([0.42], 1, 1, 5, 7);
    for (const v of out) expect(v).toBeCloseTo(0.42, 6);
  });

  it("stays inside the input range", () => {
    const heat = [0, 1, 0.5, 0.25];
    const out = upsampleBilinear(heat, 2, 2, 9, 9);
    for (const v of out) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(1);
    }
  });

  it("rejects a heatmap that does not match its grid dims", () => {
    expect(() => upsampleBilinear([1, 2, 3], 2, 2, 4, 4)).toThrow(/does not match/);
  });
});

describe("renderOverlay", () => {
  const W = 8;
  const H = 6;

  it("passes the raw image through at threshold 1.01", () => {
    const base = makeBase(W, H);
    const heat = new Array(4).fill(1);
    const out = renderOverlay(base, W, H, heat, 2, 2, 1.01, 0.8);
    expect(Array.from(out)).toEqual(Array.from(base));
  });

  it("tints every pixel at threshold 0, opacity 1", () => {
    const base = makeBase(W, H);
    const heat = [0.2, 0.4, 0.6, 0.8];
    const out = renderOverlay(base, W, H, heat, 2, 2, 0, 1);
    for (let p = 0; p < W * H; p++) {
      expect(out[p * 4]).toBe(TINT[0]);
      expect(out[p * 4 + 1]).toBe(TINT[1]);
      expect(out[p * 4 + 2]).toBe(TINT[2]);
      expect(out[p * 4 + 3]).toBe(255);
    }
    expect(tintedPixelCount(base, out)).toBe(W * H);
  });

  it("leaves an all-zero heatmap untouched at threshold 0.5", () => {
    const base = makeBase(W, H);
    const out = renderOverlay(base, W, H, new Array(6).fill(0), 2, 3, 0.5, 1);
    expect(Array.from(out)).toEqual(Array.from(base));
    expect(tintedPixelCount(base, out)).toBe(0);
  });

  it("renders the placeholder (raw image) when the heatmap is missing", () => {
    const base = makeBase(W, H);
    const out = renderOverlay(base, W, H, null, 2, 2, 0.5, 0.7);
    expect(Array.from(out)).toEqual(Array.from(base));
    expect(out).not.toBe(base);
  });

  it("tints some but not all pixels for a single hot cell", () => {
    const base = makeBase(W, H);
    const heat = [1, 0, 0, 0, 0, 0];
    const out = renderOverlay(base, W, H, heat, 2, 3, 0.6, 0.5);
    const n = tintedPixelCount(base, out);
    expect(n).toBeGreaterThan(0);
    expect(n).toBeLessThan(W * H);
  });

  it("never mutates the base and is byte-deterministic", () => {
    const base = makeBase(W, H);
    const snapshot = Array.from(base);
    const heat = [0.9, 0.1, 0.5, 0.3, 0.8, 0.2];
    const a = renderOverlay(base, W, H, heat, 2, 3, 0.4, 0.33);
    const b = renderOverlay(base, W, H, heat, 2, 3, 0.4, 0.33);
    expect(Array.from(base)).toEqual(snapshot);
    expect(Array.from(a)).toEqual(Array.from(b));
  });

  it("rejects a base buffer of the wrong size", () => {
    expect(() => renderOverlay(new Uint8ClampedArray(10), 2, 2, [1], 1, 1, 0.5, 1)).toThrow(
      /does not match/,
    );
  });
});
