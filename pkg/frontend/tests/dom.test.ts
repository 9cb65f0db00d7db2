import { describe, expect, it } from "vitest";

import { buildCompareView } from "../src/compare.js";
import { drawOverlay, renderComparePanels, renderEntryCard, renderWordRow } from "../src/render.js";
import { Session, type HistoryEntry } from "../src/session.js";
import type { ExplainPayload } from "../src/types.js";
import { encodeHeatBase64, samplePayload } from "./helpers.js";

function makeEntry(
  status: HistoryEntry["status"],
  payload: ExplainPayload | null,
  rawBody: string | null,
  error: string | null = null,
  id = 1,
): HistoryEntry {
  return {
    id,
    prompt: "a red circle on sand",
    options: {},
    createdAt: "2026-08-17T00:00:00.000Z",
    status,
    payload,
    rawBody,
    error,
  };
}

function doneEntry(id = 1): HistoryEntry {
  const payload = samplePayload();
  return makeEntry("done", payload, JSON.stringify(payload), null, id);
}

describe("renderWordRow", () => {
  it("colors each word green with opacity equal to its importance", () => {
    const row = renderWordRow([
      { word: "a", importance: 0 },
      { word: "red", importance: 0.5 },
      { word: "circle", importance: 1 },
    ]);
    const spans = Array.from(row.querySelectorAll("span.word")) as HTMLSpanElement[];
    expect(spans.map((s) => s.textContent)).toEqual(["a", "red", "circle"]);
    expect(spans[0]!.style.backgroundColor).toBe("rgba(34, 139, 34, 0)");
    expect(spans[1]!.style.backgroundColor).toBe("rgba(34, 139, 34, 0.5)");
    expect(spans[2]!.style.backgroundColor).toBe("rgba(34, 139, 34, 1)");
    expect(spans.map((s) => s.dataset.opacity)).toEqual(["0", "0.5", "1"]);
  });

  it("clamps out-of-range importances into [0, 1]", () => {
    const row = renderWordRow([
      { word: "low", importance: -3 },
      { word: "high", importance: 7 },
    ]);
    const spans = Array.from(row.querySelectorAll("span.word")) as HTMLSpanElement[];
    expect(spans[0]!.style.backgroundColor).toBe("rgba(34, 139, 34, 0)");
    expect(spans[1]!.style.backgroundColor).toBe("rgba(34, 139, 34, 1)");
  });

  it("puts the exact wire spelling in the tooltip when raw tokens are given", () => {
    const row = renderWordRow([{ word: "dim", importance: 1e-7 }], ["1e-07"]);
    const span = row.querySelector("span.word") as HTMLSpanElement;
    expect(span.title).toBe("importance 1e-07");
  });
});

describe("renderEntryCard", () => {
  it("renders a done entry with badge, raw score, words, and verbatim payload", () => {
    const payload = samplePayload();
    const rawBody = JSON.stringify(payload).replace('"score":0.125', '"score":1.25e-01');
    const entry = makeEntry("done", payload, rawBody);
    const card = renderEntryCard(entry, null);

    expect(card.className).toContain("entry-done");
    expect(card.dataset.entryId).toBe("1");
    expect(card.querySelector(".prompt")?.textContent).toBe("a red circle on sand");
    expect(card.querySelector(".method-badge")?.textContent).toBe("grad-eclip");
    expect(card.querySelector(".score")?.textContent).toBe("score 1.25e-01");
    expect(card.querySelectorAll("span.word")).toHaveLength(3);
    expect(card.querySelector("pre.raw-body")?.textContent).toBe(rawBody);
  });

  it("invokes onToggleCompare with the entry id when the checkbox changes", () => {
    const entry = doneEntry(9);
    const toggled: number[] = [];
    const card = renderEntryCard(entry, null, { onToggleCompare: (id) => toggled.push(id) });
    const box = card.querySelector("input.compare-box") as HTMLInputElement;
    box.dispatchEvent(new Event("change"));
    expect(toggled).toEqual([9]);
  });

  it("renders a failed entry with its error and a working retry button", () => {
    const entry = makeEntry("failed", null, null, "cannot reach the engine: fetch failed", 4);
    const retried: number[] = [];
    const card = renderEntryCard(entry, null, { onRetry: (id) => retried.push(id) });

    expect(card.className).toContain("entry-failed");
    expect(card.querySelector("p.error")?.textContent).toContain("cannot reach the engine");
    const button = card.querySelector("button.retry") as HTMLButtonElement;
    button.click();
    expect(retried).toEqual([4]);
  });

  it("renders a waiting note for pending entries", () => {
    const card = renderEntryCard(makeEntry("pending", null, null), null);
    expect(card.className).toContain("entry-pending");
    expect(card.querySelector("p.pending")?.textContent).toContain("waiting");
  });
});

describe("drawOverlay", () => {
  it("sizes the canvas to the heat grid even without a 2D context", () => {
    const canvas = document.createElement("canvas");
    drawOverlay(canvas, null, {
      width: 3,
      height: 2,
      dtype: "f32",
      data: encodeHeatBase64([0, 0.2, 0.4, 0.6, 0.8, 1]),
    });
    expect(canvas.width).toBe(3);
    expect(canvas.height).toBe(2);
  });
});

describe("renderComparePanels", () => {
  function sessionWithTwoDone(): Session {
    const session = new Session();
    session.selectImage(new Blob([new Uint8Array([1])]), "photo.png");
    for (const method of ["grad-eclip", "rollout"]) {
      const payload = { ...samplePayload(), method };
      const entry = session.beginEntry(`via ${method}`);
      session.completeEntry(entry.id, {
        ok: true,
        status: 200,
        rawBody: JSON.stringify(payload),
        payload,
      });
    }
    return session;
  }

  it("renders one panel per selected entry with its own method badge", () => {
    const session = sessionWithTwoDone();
    const ids = session.history.map((e) => e.id);
    const section = renderComparePanels(buildCompareView(session, ids), null);

    const grid = section.querySelector(".compare-grid") as HTMLElement;
    expect(grid.dataset.panels).toBe("2");
    const panels = Array.from(section.querySelectorAll(".compare-panel"));
    expect(panels).toHaveLength(2);
    const badges = panels.map((p) => p.querySelector(".method-badge")?.textContent);
    expect(badges).toEqual(["grad-eclip", "rollout"]);
    expect(section.querySelectorAll("p.warning")).toHaveLength(0);
  });

  it("shows warnings for dropped selections", () => {
    const session = sessionWithTwoDone();
    const ids = [...session.history.map((e) => e.id), 555];
    const section = renderComparePanels(buildCompareView(session, ids), null);
    const warnings = Array.from(section.querySelectorAll("p.warning")).map(
      (node) => node.textContent,
    );
    expect(warnings.some((w) => w?.includes("555"))).toBe(true);
  });
});
