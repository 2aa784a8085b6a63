/** Split note text around a snippet span so the middle part can be marked.
 *
 * Offsets count Unicode code points, matching how the service measures
 * them, so the text is sliced through Array.from rather than String
 * indexing (which would miscount astral characters).
 */

export interface SplitText {
  before: string;
  marked: string;
  after: string;
}

export function splitAtSpan(text: string, start: number, end: number): SplitText | null {
  if (!Number.isInteger(start) || !Number.isInteger(end)) return null;
  const points = Array.from(text);
  if (start < 0 || end > points.length) return null;
  if (start >= end) return null; // zero-width or inverted: nothing to mark
  return {
    before: points.slice(0, start).join(""),
    marked: points.slice(start, end).join(""),
    after: points.slice(end).join(""),
  };
}
