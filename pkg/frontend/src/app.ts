/** Entry point: wires the api client, session state, and views together.
 *
 * The page is driven by query parameters: ?sheet=ID&annotator=NAME&group=A
 * opens the rating flow, and adding &view=summary opens the admin
 * summary instead. Missing parameters bring up a small start form.
 */

import { ApiClient, Group, Rating, Sheet } from "./api.js";
import {
  SessionState, firstUnrated, flushQueue, loadSession, newSession,
  saveSession, submitWithQueue,
} from "./state.js";
import { renderDone, renderItem } from "./render.js";
import { renderSummary } from "./summary.js";

interface PageParams {
  sheet: string;
  annotator: string;
  group: Group;
  view: "rate" | "summary";
}

function readParams(search: string): PageParams | null {
  const params = new URLSearchParams(search);
  const sheet = params.get("sheet");
  if (!sheet) return null;
  if (params.get("view") === "summary") {
    return { sheet, annotator: "", group: "A", view: "summary" };
  }
  const annotator = params.get("annotator");
  const group = params.get("group");
  if (!annotator || (group !== "A" && group !== "B")) return null;
  return { sheet, annotator, group, view: "rate" };
}

function renderStartForm(doc: Document, root: HTMLElement): void {
  root.textContent = "";
  const form = doc.createElement("form");
  form.className = "start-form";
  form.innerHTML = [
    '<h2>Open a rating session</h2>',
    '<label>Sheet id <input name="sheet" required></label>',
    '<label>Annotator id <input name="annotator" required></label>',
    '<label>Group <select name="group"><option>A</option><option>B</option></select></label>',
    '<button type="submit">Start</button>',
  ].join("\n");
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(form);
    const query = new URLSearchParams({
      sheet: String(data.get("sheet") ?? ""),
      annotator: String(data.get("annotator") ?? ""),
      group: String(data.get("group") ?? "A"),
    });
    doc.defaultView?.location.assign(`?${query.toString()}`);
  });
  root.appendChild(form);
}

export async function runRatingFlow(
  doc: Document, root: HTMLElement, client: ApiClient, storage: Storage,
  params: PageParams,
): Promise<void> {
  const sheet: Sheet = await client.fetchSheet(params.sheet);
  const state: SessionState =
    loadSession(storage, sheet.sheet_id, params.annotator)
    ?? newSession(sheet.sheet_id, params.annotator, params.group);

  doc.defaultView?.addEventListener("online", () => {
    void flushQueue(client, state).then(() => saveSession(storage, state));
  });

  let skipped = 0;
  const itemIds = sheet.items.map((item) => item.item_id);

  const showCurrent = (): void => {
    root.textContent = "";
    let index = firstUnrated(itemIds, state);
    while (index < sheet.items.length) {
      const item = sheet.items[index];
      if (item === undefined) break;
      const card = renderItem(doc, item, index, sheet.items.length);
      if (card === null) {
        // broken span: drop the item so the cursor moves past it
        skipped += 1;
        itemIds.splice(index, 1);
        sheet.items.splice(index, 1);
        index = firstUnrated(itemIds, state);
        continue;
      }
      wireForm(card, item.item_id);
      root.appendChild(card);
      return;
    }
    root.appendChild(renderDone(doc, Object.keys(state.ratings).length, skipped));
  };

  const wireForm = (card: HTMLElement, itemId: string): void => {
    const form = card.querySelector("form");
    const error = card.querySelector<HTMLElement>(".inline-error");
    if (!form || !error) return;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const choice = form.querySelector<HTMLInputElement>("input[name=rating]:checked");
      if (!choice) {
        error.hidden = false;
        error.textContent = "Choose a rating before submitting.";
        return;
      }
      void submitWithQueue(client, state, itemId, choice.value as Rating).then((outcome) => {
        if (outcome.kind === "rejected") {
          error.hidden = false;
          error.textContent = outcome.message;
          return;
        }
        saveSession(storage, state);
        showCurrent();
      });
    });
  };

  showCurrent();
}

export async function runSummaryFlow(
  doc: Document, root: HTMLElement, client: ApiClient, sheetId: string,
): Promise<void> {
  const report = await client.fetchConsistency(sheetId);
  root.textContent = "";
  root.appendChild(renderSummary(doc, report));
}

export async function boot(doc: Document, storage: Storage): Promise<void> {
  const root = doc.getElementById("app");
  if (!root) return;
  const client = new ApiClient();
  const params = readParams(doc.defaultView?.location.search ?? "");
  if (params === null) {
    renderStartForm(doc, root);
    return;
  }
  if (params.view === "summary") {
    await runSummaryFlow(doc, root, client, params.sheet);
    return;
  }
  await runRatingFlow(doc, root, client, storage, params);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document, window.localStorage);
}
