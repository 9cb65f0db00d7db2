/** Exact-token extraction from raw JSON response bodies.
 *
 * Numbers shown in the UI must be the very bytes the engine served.
 * Re-serializing a parsed double can change its spelling (exponent style,
 * trailing digits), so score and importance values are lifted straight out
 * of the raw body text instead. */

const NUMBER = "-?(?:0|[1-9][0-9]*)(?:\\.[0-9]+)?(?:[eE][+-]?[0-9]+)?";

/** The literal token of the first `"key": <number>` in the body, or null. */
export function rawJsonNumber(rawBody: string, key: string): string | null {
  const re = new RegExp(`"${key}"\\s*:\\s*(${NUMBER})`);
  const m = re.exec(rawBody);
  return m ? (m[1] ?? null) : null;
}

/** Literal tokens of every `"key": <number>` in body order. */
export function rawJsonNumbers(rawBody: string, key: string): string[] {
  const re = new RegExp(`"${key}"\\s*:\\s*(${NUMBER})`, "g");
  const out: string[] = [];
  let m: RegExpExecArray | null;
  while ((m = re.exec(rawBody)) !== null) {
    if (m[1] !== undefined) out.push(m[1]);
  }
  return out;
}
