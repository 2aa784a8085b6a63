/** Typed client for the rating service's JSON endpoints.
 *
 * Every function talks to the same origin that served the page; the
 * service mounts this bundle as its static assets. Failures carry the
 * server's error envelope {error: {code, message}} when one was sent.
 */

export type Rating = "highly_informative" | "informative" | "irrelevant";
export type Group = "A" | "B";

export interface SnippetSpan {
  start: number;
  end: number;
  text: string;
  score: number;
}

export interface SheetItem {
  item_id: string;
  note_id: string;
  note_text: string;
  code: string;
  title: string;
  snippet: SnippetSpan;
}

export interface Sheet {
  sheet_id: string;
  config_digest: string;
  items: SheetItem[];
}

export interface RatingSubmission {
  item_id: string;
  annotator_id: string;
  group: Group;
  rating: Rating;
  overwrite?: boolean;
}

export interface ConsistencyReport {
  groups: string[];
  informative_or_better: Record<string, string[]>;
  jaccard: number;
  per_method: Record<string, number>;
  histograms: Record<string, Record<string, number>>;
  below_threshold: boolean;
  threshold: number;
}

export interface PredictedCode {
  code: string;
  title: string;
  prob: number;
}

export interface ExplanationSet {
  note_id: string;
  code: string;
  method: string;
  snippets: SnippetSpan[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function fail(response: Response): Promise<never> {
  let code = "unknown";
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body && body.error) {
      code = body.error.code ?? code;
      message = body.error.message ?? message;
    }
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ApiError(response.status, code, message);
}

export class ApiClient {
  constructor(private readonly doFetch: typeof fetch = (...args) => fetch(...args)) {}

  private async post(url: string, body: unknown): Promise<Response> {
    return this.doFetch(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async fetchSheet(sheetId: string): Promise<Sheet> {
    const response = await this.doFetch(`/api/sheets/${encodeURIComponent(sheetId)}`);
    if (!response.ok) await fail(response);
    return response.json();
  }

  async submitRating(sheetId: string, submission: RatingSubmission): Promise<void> {
    const response = await this.post(
      `/api/sheets/${encodeURIComponent(sheetId)}/ratings`, submission);
    if (!response.ok) await fail(response);
  }

  /** null means the sheet has no ratings yet, which the server reports as 404. */
  async fetchConsistency(sheetId: string): Promise<ConsistencyReport | null> {
    const response = await this.doFetch(
      `/api/sheets/${encodeURIComponent(sheetId)}/consistency`);
    if (response.status === 404) return null;
    if (!response.ok) await fail(response);
    return response.json();
  }

  async predict(text: string): Promise<{ codes: PredictedCode[]; threshold: number }> {
    const response = await this.post("/api/predict", { text });
    if (!response.ok) await fail(response);
    return response.json();
  }

  async explain(text: string, code: string, method: string): Promise<ExplanationSet> {
    const response = await this.post("/api/explain", { text, code, method });
    if (!response.ok) await fail(response);
    return response.json();
  }
}
