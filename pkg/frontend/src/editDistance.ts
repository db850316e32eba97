/**
 * Character-level Levenshtein distance with unit costs.
 *
 * Operates on Unicode code points (not UTF-16 code units) so values match
 * the server's counter exactly; parity is enforced against the shared
 * vector set in test/fixtures/edit_distance_vectors.json.
 */
export function editDistance(a: string, b: string): number {
  if (a === b) return 0;
  const ca = Array.from(a);
  const cb = Array.from(b);
  if (ca.length === 0) return cb.length;
  if (cb.length === 0) return ca.length;

  let prev = new Array<number>(cb.length + 1);
  let cur = new Array<number>(cb.length + 1);
  for (let j = 0; j <= cb.length; j++) prev[j] = j;
  for (let i = 1; i <= ca.length; i++) {
    cur[0] = i;
    for (let j = 1; j <= cb.length; j++) {
      const cost = ca[i - 1] === cb[j - 1] ? 0 : 1;
      cur[j] = Math.min(prev[j]! + 1, cur[j - 1]! + 1, prev[j - 1]! + cost);
    }
    [prev, cur] = [cur, prev];
  }
  return prev[cb.length]!;
}

/** Number of maximal non-whitespace runs, matching the server's word counter. */
export function wordCount(text: string): number {
  const trimmed = text.trim();
  if (trimmed === "") return 0;
  return trimmed.split(/\s+/u).length;
}
