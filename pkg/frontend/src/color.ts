/** Word-importance coloring: green whose opacity is an affine map of the
 * importance — importance 1 paints at full intensity, importance 0 paints
 * nothing at all. */

export function clamp01(x: number): number {
  if (Number.isNaN(x)) return 0;
  return Math.min(1, Math.max(0, x));
}

const GREEN = "34, 139, 34";

/** CSS background for one word given its importance in [0, 1]. */
export function wordHighlight(importance: number): string {
  return `rgba(${GREEN}, ${clamp01(importance)})`;
}

/** Opacity used by wordHighlight, exposed for tests and tooltips. */
export function wordOpacity(importance: number): number {
  return clamp01(importance);
}
