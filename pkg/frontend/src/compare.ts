/** Side-by-side comparison: pick 2-4 completed entries and describe the
 * panels to render.  Bad ids are dropped with a warning rather than
 * breaking the view; past the cap, the earliest selections win. */

import type { HistoryEntry, Session } from "./session.js";
import { MAX_COMPARE } from "./session.js";

export interface CompareView {
  panels: HistoryEntry[];
  warnings: string[];
}

export function buildCompareView(session: Session, ids: readonly number[]): CompareView {
  const panels: HistoryEntry[] = [];
  const warnings: string[] = [];
  const seen = new Set<number>();
  let overflow = 0;

  for (const id of ids) {
    if (seen.has(id)) continue;
    seen.add(id);
    const entry = session.entry(id);
    if (!entry) {
      warnings.push(`ignoring unknown entry ${id}`);
      continue;
    }
    if (entry.status !== "done") {
      warnings.push(`ignoring entry ${id}: not completed (${entry.status})`);
      continue;
    }
    if (panels.length >= MAX_COMPARE) {
      overflow += 1;
      continue;
    }
    panels.push(entry);
  }

  if (overflow > 0) {
    warnings.push(
      `showing the first ${MAX_COMPARE} entries; ${overflow} more were selected`,
    );
  }
  if (panels.length < 2) {
    warnings.push("select at least two completed entries to compare");
  }
  return { panels, warnings };
}
