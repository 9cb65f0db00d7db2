/** Shared test fixtures: a fake engine serving fixed byte-exact responses. */

import type { FetchLike } from "../src/api.js";
import type { ExplainPayload } from "../src/types.js";

export function encodeHeatBase64(values: number[]): string {
  const bytes = new Uint8Array(values.length * 4);
  const view = new DataView(bytes.buffer);
  values.forEach((v, i) => view.setFloat32(i * 4, v, true));
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return btoa(binary);
}

export function samplePayload(): ExplainPayload {
  return {
    method: "grad-eclip",
    lam_mode: "loosened",
    text: "a red circle",
    score: 0.125,
    heatmap: {
      width: 2,
      height: 2,
      dtype: "f32",
      data: encodeHeatBase64([0.0, 0.25, 0.5, 1.0]),
    },
    text_saliency: [
      { word: "a", importance: 0.0 },
      { word: "red", importance: 0.5 },
      { word: "circle", importance: 1.0 },
    ],
  };
}

export interface RecordedRequest {
  url: string;
  init: RequestInit | undefined;
}

/** Fetch stub that always serves `body` with `status`, recording requests. */
export function fixedFetch(
  body: string,
  status = 200,
  requests?: RecordedRequest[],
): FetchLike {
  return async (url, init) => {
    requests?.push({ url, init });
    return new Response(body, {
      status,
      headers: { "content-type": "application/json" },
    });
  };
}

/** Fetch stub that fails like an unreachable host. */
export function offlineFetch(): FetchLike {
  return async () => {
    throw new TypeError("fetch failed");
  };
}
