/** Shared loaders for the captured wire fixtures.
 *
 * The JSON files are real exchanges recorded against the service by
 * scripts/make_fixtures.py; nothing here is hand-written.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

import type { ConsistencyReport, Group, Rating, Sheet, SnippetSpan } from "../src/api.js";

export interface ExplainEntry {
  item_id: string;
  method: string;
  response: {
    note_id: string;
    code: string;
    method: string;
    snippets: SnippetSpan[];
  };
}

export interface ScriptEntry {
  item_id: string;
  annotator_id: string;
  group: Group;
  rating: Rating;
}

export interface SessionFixture {
  script: ScriptEntry[];
  report: ConsistencyReport;
}

function load<T>(name: string): T {
  // vitest runs with the package root as cwd; jsdom rewrites
  // import.meta.url, so the path is anchored there instead
  const path = join(process.cwd(), "tests", "fixtures", name);
  return JSON.parse(readFileSync(path, "utf-8")) as T;
}

export const sheetFixture = (): Sheet => load<Sheet>("sheet.json");
export const explainFixture = (): ExplainEntry[] => load<ExplainEntry[]>("explain.json");
export const sessionFixture = (): SessionFixture => load<SessionFixture>("session.json");
