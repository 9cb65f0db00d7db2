import { describe, expect, it } from "vitest";

import { EngineClient } from "../src/api.js";
import { buildCompareView } from "../src/compare.js";
import { Session } from "../src/session.js";
import { fixedFetch, samplePayload } from "./helpers.js";

const IMAGE = new Blob([new Uint8Array([1])], { type: "image/png" });

async function sessionWithDone(n: number, methods?: string[]): Promise<Session> {
  const session = new Session();
  session.selectImage(IMAGE, "photo.png");
  for (let i = 0; i < n; i++) {
    const method = methods?.[i] ?? "grad-eclip";
    const body = JSON.stringify({ ...samplePayload(), method });
    const client = new EngineClient("http://x", fixedFetch(body));
    const entry = session.beginEntry(`prompt ${i}`, { method });
    session.completeEntry(entry.id, await client.explain(IMAGE, "p", `prompt ${i}`));
  }
  return session;
}

describe("buildCompareView", () => {
  it("two ids give two panels", async () => {
    const session = await sessionWithDone(2);
    const ids = session.history.map((e) => e.id);
    const view = buildCompareView(session, ids);
    expect(view.panels).toHaveLength(2);
    expect(view.warnings).toEqual([]);
  });

  it("five ids give four panels plus a warning", async () => {
    const session = await sessionWithDone(5);
    const ids = session.history.map((e) => e.id);
    const view = buildCompareView(session, ids);
    expect(view.panels).toHaveLength(4);
    expect(view.warnings.some((w) => w.includes("first 4"))).toBe(true);
  });

  it("ignores invalid ids with a warning", async () => {
    const session = await sessionWithDone(2);
    const ids = session.history.map((e) => e.id);
    const view = buildCompareView(session, [ids[0]!, 424242, ids[1]!]);
    expect(view.panels).toHaveLength(2);
    expect(view.warnings.some((w) => w.includes("424242"))).toBe(true);
  });

  it("excludes entries that are not done", async () => {
    const session = await sessionWithDone(2);
    const pending = session.beginEntry("still running");
    const ids = [...session.history.map((e) => e.id)];
    const view = buildCompareView(session, ids);
    expect(view.panels).toHaveLength(2);
    expect(view.warnings.some((w) => w.includes(String(pending.id)))).toBe(true);
  });

  it("keeps each panel's own method for the badge", async () => {
    const session = await sessionWithDone(2, ["grad-eclip", "rollout"]);
    const ids = session.history.map((e) => e.id);
    const view = buildCompareView(session, ids);
    expect(view.panels.map((p) => p.payload?.method)).toEqual(["grad-eclip", "rollout"]);
  });

  it("asks for at least two valid entries", async () => {
    const session = await sessionWithDone(1);
    const view = buildCompareView(session, [session.history[0]!.id]);
    expect(view.panels).toHaveLength(1);
    expect(view.warnings.some((w) => w.includes("at least two"))).toBe(true);
  });
});
