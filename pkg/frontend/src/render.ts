/** DOM builders for history cards, word coloring, and comparison panels.
 * Pure functions from state to elements; `main.ts` wires them to events.
 *
 * Numeric text comes from the raw response bytes (see rawjson.ts), never
 * from re-serialized parsed values. */

import { wordHighlight, wordOpacity } from "./color.js";
import type { CompareView } from "./compare.js";
import { decodeHeatGrid, heatToRgba } from "./heat.js";
import { rawJsonNumber, rawJsonNumbers } from "./rawjson.js";
import type { HistoryEntry } from "./session.js";
import type { HeatmapRecord, WordImportance } from "./types.js";

export interface EntryHandlers {
  onRetry?: (id: number) => void;
  onToggleCompare?: (id: number) => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** One span per word, green with opacity equal to the word's importance.
 * rawTokens, when given, carry the exact importance spellings from the
 * response body for the tooltip. */
export function renderWordRow(
  saliency: readonly WordImportance[],
  rawTokens?: readonly string[],
): HTMLElement {
  const row = el("div", "word-row");
  saliency.forEach((item, i) => {
    const span = el("span", "word", item.word);
    span.style.backgroundColor = wordHighlight(item.importance);
    span.dataset.opacity = String(wordOpacity(item.importance));
    const token = rawTokens?.[i];
    span.title = `importance ${token ?? String(item.importance)}`;
    row.appendChild(span);
  });
  return row;
}

/** Paint the heat grid over the photo on a canvas.  Degrades to a no-op
 * when 2D contexts are unavailable (e.g. non-browser test DOMs). */
export function drawOverlay(
  canvas: HTMLCanvasElement,
  photo: CanvasImageSource | null,
  rec: HeatmapRecord,
): void {
  canvas.width = rec.width;
  canvas.height = rec.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  if (photo) {
    ctx.drawImage(photo, 0, 0, rec.width, rec.height);
  }
  const rgba = heatToRgba(decodeHeatGrid(rec), rec.width, rec.height);
  const heatCanvas = document.createElement("canvas");
  heatCanvas.width = rec.width;
  heatCanvas.height = rec.height;
  const heatCtx = heatCanvas.getContext("2d");
  if (!heatCtx) return;
  heatCtx.putImageData(new ImageData(rgba, rec.width, rec.height), 0, 0);
  ctx.drawImage(heatCanvas, 0, 0);
}

function methodBadge(entry: HistoryEntry): HTMLElement {
  const method = entry.payload?.method ?? entry.options.method ?? "grad-eclip";
  return el("span", "badge method-badge", method);
}

function scoreLine(entry: HistoryEntry): HTMLElement {
  const token =
    entry.rawBody !== null ? rawJsonNumber(entry.rawBody, "score") : null;
  return el("span", "score", token !== null ? `score ${token}` : "score –");
}

/** Body shared by history cards and comparison panels: badge, score,
 * overlay canvas, word coloring. */
function renderEntryBody(entry: HistoryEntry, photo: CanvasImageSource | null): HTMLElement {
  const body = el("div", "entry-body");
  const meta = el("div", "entry-meta");
  meta.appendChild(methodBadge(entry));
  meta.appendChild(scoreLine(entry));
  body.appendChild(meta);
  if (entry.payload) {
    const canvas = el("canvas", "overlay");
    drawOverlay(canvas, photo, entry.payload.heatmap);
    body.appendChild(canvas);
    if (entry.payload.text_saliency) {
      const tokens = entry.rawBody !== null
        ? rawJsonNumbers(entry.rawBody, "importance")
        : undefined;
      body.appendChild(renderWordRow(entry.payload.text_saliency, tokens));
    }
  }
  return body;
}

export function renderEntryCard(
  entry: HistoryEntry,
  photo: CanvasImageSource | null,
  handlers: EntryHandlers = {},
): HTMLElement {
  const card = el("article", `entry entry-${entry.status}`);
  card.dataset.entryId = String(entry.id);

  const head = el("header", "entry-head");
  head.appendChild(el("span", "prompt", entry.prompt));
  head.appendChild(el("span", "status", entry.status));
  card.appendChild(head);

  if (entry.status === "done") {
    card.appendChild(renderEntryBody(entry, photo));
    if (handlers.onToggleCompare) {
      const label = el("label", "compare-toggle");
      const box = el("input");
      box.type = "checkbox";
      box.className = "compare-box";
      box.addEventListener("change", () => handlers.onToggleCompare?.(entry.id));
      label.appendChild(box);
      label.appendChild(document.createTextNode(" compare"));
      card.appendChild(label);
    }
    if (entry.rawBody !== null) {
      const details = el("details", "payload");
      details.appendChild(el("summary", undefined, "response payload"));
      const pre = el("pre", "raw-body");
      pre.textContent = entry.rawBody;
      details.appendChild(pre);
      card.appendChild(details);
    }
  } else if (entry.status === "failed") {
    card.appendChild(el("p", "error", entry.error ?? "request failed"));
    if (handlers.onRetry) {
      const retry = el("button", "retry", "retry");
      retry.type = "button";
      retry.addEventListener("click", () => handlers.onRetry?.(entry.id));
      card.appendChild(retry);
    }
  } else {
    card.appendChild(el("p", "pending", "waiting for the engine…"));
  }
  return card;
}

export function renderComparePanels(
  view: CompareView,
  photo: CanvasImageSource | null,
): HTMLElement {
  const section = el("div", "compare-view");
  for (const warning of view.warnings) {
    section.appendChild(el("p", "warning", warning));
  }
  const grid = el("div", "compare-grid");
  grid.dataset.panels = String(view.panels.length);
  for (const entry of view.panels) {
    const panel = el("div", "compare-panel");
    panel.dataset.entryId = String(entry.id);
    panel.appendChild(el("div", "prompt", entry.prompt));
    panel.appendChild(renderEntryBody(entry, photo));
    grid.appendChild(panel);
  }
  section.appendChild(grid);
  return section;
}
