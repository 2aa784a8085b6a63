/** DOM construction for the annotator-facing item view.
 *
 * The view shows the note with the snippet marked, the code and its
 * title, and the three rating choices. It never shows which method
 * produced the snippet; blinded sheets do not carry that field and
 * nothing here re-derives it.
 */

import { Rating, SheetItem } from "./api.js";
import { splitAtSpan } from "./highlight.js";

export const RATING_CHOICES: ReadonlyArray<{ value: Rating; label: string }> = [
  { value: "highly_informative", label: "highly informative" },
  { value: "informative", label: "informative" },
  { value: "irrelevant", label: "irrelevant" },
];

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className !== undefined) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Build the card for one sheet item, or null when the span is broken.
 *
 * A span that is empty or runs past the note cannot be shown honestly,
 * so the item is flagged for skipping and the problem logged.
 */
export function renderItem(
  doc: Document, item: SheetItem, index: number, total: number,
): HTMLElement | null {
  const split = splitAtSpan(item.note_text, item.snippet.start, item.snippet.end);
  if (split === null) {
    console.warn(
      `item ${item.item_id}: broken span [${item.snippet.start}, ${item.snippet.end})` +
      ` for note of length ${Array.from(item.note_text).length}, skipping`);
    return null;
  }

  const card = el(doc, "section", "item-card");
  card.dataset.itemId = item.item_id;

  card.appendChild(el(doc, "p", "progress", `Item ${index + 1} of ${total}`));

  const heading = el(doc, "h2", "code-heading");
  heading.appendChild(el(doc, "span", "code", item.code));
  heading.appendChild(doc.createTextNode(" "));
  heading.appendChild(el(doc, "span", "title", item.title));
  card.appendChild(heading);

  const note = el(doc, "p", "note-text");
  note.appendChild(doc.createTextNode(split.before));
  const mark = el(doc, "mark", "snippet", split.marked);
  mark.dataset.start = String(item.snippet.start);
  mark.dataset.end = String(item.snippet.end);
  note.appendChild(mark);
  note.appendChild(doc.createTextNode(split.after));
  card.appendChild(note);

  card.appendChild(el(
    doc, "p", "question",
    "How informative is the highlighted text for the code above?"));

  const form = el(doc, "form", "rating-form");
  for (const choice of RATING_CHOICES) {
    const label = el(doc, "label", "rating-choice");
    const input = doc.createElement("input");
    input.type = "radio";
    input.name = "rating";
    input.value = choice.value;
    label.appendChild(input);
    label.appendChild(doc.createTextNode(" " + choice.label));
    form.appendChild(label);
  }
  const submit = doc.createElement("button");
  submit.type = "submit";
  submit.textContent = "Submit rating";
  form.appendChild(submit);
  card.appendChild(form);

  const error = el(doc, "p", "inline-error");
  error.hidden = true;
  card.appendChild(error);

  return card;
}

/** Shown once every item is rated (or skipped as broken). */
export function renderDone(doc: Document, rated: number, skipped: number): HTMLElement {
  const box = el(doc, "section", "done");
  box.appendChild(el(doc, "h2", undefined, "Session complete"));
  const detail = skipped > 0
    ? `${rated} items rated, ${skipped} skipped as broken.`
    : `${rated} items rated.`;
  box.appendChild(el(doc, "p", undefined, detail));
  return box;
}
