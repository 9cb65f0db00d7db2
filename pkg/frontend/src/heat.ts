/** Decoding and rendering of heat-map grids as served by the engine.
 *
 * The grid arrives as base64 little-endian float32 values in [0, 1]; the
 * UI only turns those numbers into pixels — it never recomputes them. */

import type { HeatmapRecord } from "./types.js";

export function decodeHeatGrid(rec: HeatmapRecord): Float32Array {
  if (rec.dtype !== "f32") {
    throw new Error(`unsupported heat-map dtype ${JSON.stringify(rec.dtype)}`);
  }
  const binary = atob(rec.data);
  const expected = rec.width * rec.height * 4;
  if (binary.length !== expected) {
    throw new Error(
      `heat-map data is ${binary.length} bytes, expected ${expected} ` +
        `for ${rec.width}x${rec.height} float32`,
    );
  }
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    bytes[i] = binary.charCodeAt(i);
  }
  const view = new DataView(bytes.buffer);
  const out = new Float32Array(rec.width * rec.height);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

/** Classic blue->cyan->yellow->red ramp for a value in [0, 1]. */
export function heatColor(v: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, v));
  const r = Math.min(1, Math.max(0, 1.5 - Math.abs(4 * x - 3)));
  const g = Math.min(1, Math.max(0, 1.5 - Math.abs(4 * x - 2)));
  const b = Math.min(1, Math.max(0, 1.5 - Math.abs(4 * x - 1)));
  return [Math.round(r * 255), Math.round(g * 255), Math.round(b * 255)];
}

/** RGBA pixel buffer for the heat grid; opacity scales with the value so
 * cold regions stay transparent over the photo. */
export function heatToRgba(
  values: Float32Array,
  width: number,
  height: number,
  maxAlpha = 0.6,
) {
  if (values.length !== width * height) {
    throw new Error(`got ${values.length} values for a ${width}x${height} grid`);
  }
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < values.length; i++) {
    const v = Math.min(1, Math.max(0, values[i] ?? 0));
    const [r, g, b] = heatColor(v);
    rgba[i * 4] = r;
    rgba[i * 4 + 1] = g;
    rgba[i * 4 + 2] = b;
    rgba[i * 4 + 3] = Math.round(255 * maxAlpha * v);
  }
  return rgba;
}
