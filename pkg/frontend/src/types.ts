/** Shapes of the engine service's JSON payloads, as received on the wire. */

export interface HeatmapRecord {
  width: number;
  height: number;
  dtype: string;
  /** base64 of little-endian float32 values, row-major. */
  data: string;
}

export interface WordImportance {
  word: string;
  importance: number;
}

export interface ExplainPayload {
  method: string;
  lam_mode: string;
  text: string;
  score: number;
  heatmap: HeatmapRecord;
  text_saliency: WordImportance[] | null;
}

export interface ScorePayload {
  score: number;
  text: string;
}

export interface HealthPayload {
  status: string;
  version: string;
  kernel_backend: string;
}

/** Optional form fields for POST /explain; omitted fields use the engine's
 * defaults (last layer for images, last 8 layers for text, loosened
 * spatial weights). */
export interface ExplainOptions {
  method?: string;
  lam_mode?: string;
  layers?: string;
  upsample?: string;
  include_text_saliency?: boolean;
}

export const METHODS = ["grad-eclip", "raw-attention", "rollout", "grad-cam"] as const;
export const LAM_MODES = ["loosened", "softmax", "ones"] as const;
