/** Admin summary view: group agreement, rating histograms, per-method
 * breakdown. This view is not blinded; it exists for whoever runs the
 * study, after annotators have submitted.
 */

import { ConsistencyReport } from "./api.js";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, className?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className !== undefined) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function table(doc: Document, rows: Array<[string, string]>, className: string): HTMLTableElement {
  const node = el(doc, "table", className);
  for (const [key, value] of rows) {
    const tr = doc.createElement("tr");
    tr.appendChild(el(doc, "th", undefined, key));
    tr.appendChild(el(doc, "td", undefined, value));
    node.appendChild(tr);
  }
  return node;
}

/** Render the consistency report; null means no ratings exist yet. */
export function renderSummary(doc: Document, report: ConsistencyReport | null): HTMLElement {
  const box = el(doc, "section", "summary");
  box.appendChild(el(doc, "h2", undefined, "Consistency summary"));

  if (report === null) {
    box.appendChild(el(
      doc, "p", "empty-state",
      "No ratings recorded yet. The summary appears once both groups have submitted."));
    return box;
  }

  const jaccard = el(doc, "p", "jaccard");
  jaccard.appendChild(doc.createTextNode("Inter-group jaccard: "));
  // String() keeps the server's full precision; rounding here would
  // misreport ties near the threshold
  const value = el(doc, "strong", "jaccard-value", String(report.jaccard));
  value.dataset.jaccard = String(report.jaccard);
  jaccard.appendChild(value);
  box.appendChild(jaccard);

  if (report.below_threshold) {
    box.appendChild(el(
      doc, "p", "warning",
      `Agreement is below the ${report.threshold} floor; ratings may not be reliable.`));
  }

  const groups = el(doc, "div", "groups");
  for (const group of report.groups) {
    const panel = el(doc, "div", "group-panel");
    panel.appendChild(el(doc, "h3", undefined, `Group ${group}`));
    const hist = report.histograms[group] ?? {};
    const rows: Array<[string, string]> = Object.keys(hist).sort().map(
      (label) => [label.replace(/_/g, " "), String(hist[label] ?? 0)]);
    panel.appendChild(table(doc, rows, "histogram"));
    const informative = report.informative_or_better[group] ?? [];
    panel.appendChild(el(
      doc, "p", "informative-count",
      `${informative.length} items rated informative or better`));
    groups.appendChild(panel);
  }
  box.appendChild(groups);

  const methods = el(doc, "div", "per-method");
  methods.appendChild(el(doc, "h3", undefined, "Per-method agreement"));
  const rows: Array<[string, string]> = Object.keys(report.per_method).sort().map(
    (method) => [method, String(report.per_method[method] ?? 0)]);
  methods.appendChild(table(doc, rows, "method-table"));
  box.appendChild(methods);

  return box;
}
