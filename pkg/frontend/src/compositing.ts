/**
 * Pure pixel pipeline: heatmap upsampling and overlay tinting.
 *
 * Everything here works on plain typed arrays so the exact same code
 * runs in the browser (feeding ImageData) and in node tests. All
 * functions are deterministic; given identical inputs they produce
 * byte-identical outputs, which is what makes query-history replay
 * reproducible.
 */

/** Fixed single-hue ramp: below threshold untouched, above tinted amber. */
export const TINT: [number, number, number] = [255, 160, 0];

export function clamp01(x: number): number {
  return x < 0 ? 0 : x > 1 ? 1 : x;
}

/**
 * Bilinear upsample of a row-major (gh x gw) heatmap to (outH x outW).
 *
 * Sample centers sit at (i + 0.5) of the output span; edge samples
 * clamp. Matches the resampling convention the service uses on masks,
 * so a full-grid heatmap lands on the image without drift.
 */
export function upsampleBilinear(
  heat: Float32Array | number[],
  gh: number,
  gw: number,
  outH: number,
  outW: number,
): Float32Array {
  if (gh < 1 || gw < 1 || heat.length !== gh * gw) {
    throw new Error(`heatmap length ${heat.length} does not match ${gh}x${gw}`);
  }
  const out = new Float32Array(outH * outW);
  const ry = gh / outH;
  const rx = gw / outW;
  for (let i = 0; i < outH; i++) {
    let sy = (i + 0.5) * ry - 0.5;
    sy = Math.min(Math.max(sy, 0), gh - 1);
    const y0 = Math.min(Math.floor(sy), gh - 1);
    const y1 = Math.min(y0 + 1, gh - 1);
    const fy = sy - y0;
    for (let j = 0; j < outW; j++) {
      let sx = (j + 0.5) * rx - 0.5;
      sx = Math.min(Math.max(sx, 0), gw - 1);
      const x0 = Math.min(Math.floor(sx), gw - 1);
      const x1 = Math.min(x0 + 1, gw - 1);
      const fx = sx - x0;
      const top = (1 - fx) * (heat[y0 * gw + x0] as number) + fx * (heat[y0 * gw + x1] as number);
      const bot = (1 - fx) * (heat[y1 * gw + x0] as number) + fx * (heat[y1 * gw + x1] as number);
      out[i * outW + j] = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

/**
 * Composite a heatmap over RGBA pixels.
 *
 * Cells whose upsampled value >= threshold are alpha-blended toward the
 * fixed tint with the given opacity; everything below threshold is
 * left untouched. Returns a new buffer; the base is never mutated.
 */
export function renderOverlay(
  base: Uint8ClampedArray,
  width: number,
  height: number,
  heat: Float32Array | number[] | null,
  gridH: number,
  gridW: number,
  threshold: number,
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (base.length !== width * height * 4) {
    throw new Error(`base length ${base.length} does not match ${width}x${height} RGBA`);
  }
  const out = new Uint8ClampedArray(base);
  if (heat === null) {
    return out; // placeholder state: raw image
  }
  // threshold is compared as given (1.01 legitimately passes nothing);
  // opacity outside [0,1] has no meaning, so it is clamped
  const a = clamp01(opacity);
  const up = upsampleBilinear(heat, gridH, gridW, height, width);
  for (let p = 0; p < width * height; p++) {
    if (up[p] >= threshold) {
      const o = p * 4;
      out[o] = Math.round(out[o] + (TINT[0] - out[o]) * a);
      out[o + 1] = Math.round(out[o + 1] + (TINT[1] - out[o + 1]) * a);
      out[o + 2] = Math.round(out[o + 2] + (TINT[2] - out[o + 2]) * a);
    }
  }
  return out;
}

/** Count pixels the overlay changed; a quick "did anything light up". */
export function tintedPixelCount(base: Uint8ClampedArray, composited: Uint8ClampedArray): number {
  let n = 0;
  for (let p = 0; p < base.length; p += 4) {
    if (base[p] !== composited[p] || base[p + 1] !== composited[p + 1] || base[p + 2] !== composited[p + 2]) {
      n++;
    }
  }
  return n;
}
