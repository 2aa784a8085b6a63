/** Session persistence and the offline retry queue.
 *
 * The session lives in localStorage keyed by sheet and annotator, so a
 * reload lands on the first unrated item. Submissions that fail on the
 * network are queued and replayed; a 409 from the server means the
 * rating already landed, so the queue drops it instead of retrying.
 */

import { ApiClient, ApiError, Group, Rating, RatingSubmission } from "./api.js";

export interface SessionState {
  sheet_id: string;
  annotator_id: string;
  group: Group;
  ratings: Record<string, Rating>;
  queue: RatingSubmission[];
}

export function storageKey(sheetId: string, annotatorId: string): string {
  return `racx-session:${sheetId}:${annotatorId}`;
}

export function newSession(sheetId: string, annotatorId: string, group: Group): SessionState {
  return { sheet_id: sheetId, annotator_id: annotatorId, group, ratings: {}, queue: [] };
}

export function saveSession(storage: Storage, state: SessionState): void {
  storage.setItem(storageKey(state.sheet_id, state.annotator_id), JSON.stringify(state));
}

export function loadSession(
  storage: Storage, sheetId: string, annotatorId: string,
): SessionState | null {
  const raw = storage.getItem(storageKey(sheetId, annotatorId));
  if (raw === null) return null;
  try {
    const parsed = JSON.parse(raw);
    if (typeof parsed !== "object" || parsed === null) return null;
    if (parsed.sheet_id !== sheetId || parsed.annotator_id !== annotatorId) return null;
    if (typeof parsed.ratings !== "object" || !Array.isArray(parsed.queue)) return null;
    return parsed as SessionState;
  } catch {
    return null;
  }
}

/** Index of the first item without a rating; itemIds.length when done. */
export function firstUnrated(itemIds: string[], state: SessionState): number {
  for (let i = 0; i < itemIds.length; i++) {
    const id = itemIds[i];
    if (id !== undefined && !(id in state.ratings)) return i;
  }
  return itemIds.length;
}

export type SubmitOutcome =
  | { kind: "recorded" }
  | { kind: "queued" }
  | { kind: "rejected"; message: string };

/** Submit one rating, falling back to the queue when the network fails.
 *
 * A 409 counts as recorded: the server already holds this rating. A 422
 * is the caller's problem (bad payload) and is never queued.
 */
export async function submitWithQueue(
  client: ApiClient, state: SessionState, itemId: string, rating: Rating,
): Promise<SubmitOutcome> {
  const submission: RatingSubmission = {
    item_id: itemId,
    annotator_id: state.annotator_id,
    group: state.group,
    rating,
  };
  try {
    await client.submitRating(state.sheet_id, submission);
  } catch (err) {
    if (err instanceof ApiError) {
      if (err.status === 409) {
        state.ratings[itemId] = rating;
        return { kind: "recorded" };
      }
      return { kind: "rejected", message: err.message };
    }
    // fetch itself failed: offline or server unreachable
    state.ratings[itemId] = rating;
    state.queue.push(submission);
    return { kind: "queued" };
  }
  state.ratings[itemId] = rating;
  return { kind: "recorded" };
}

export interface FlushResult {
  delivered: number;
  rejected: number;
  remaining: number;
}

/** Replay the queue in order. Stops at the first network failure so the
 * remainder survives for the next reconnect; server-side rejections are
 * dropped (retrying an invalid payload can never succeed).
 */
export async function flushQueue(client: ApiClient, state: SessionState): Promise<FlushResult> {
  let delivered = 0;
  let rejected = 0;
  while (state.queue.length > 0) {
    const head = state.queue[0];
    if (head === undefined) break;
    try {
      await client.submitRating(state.sheet_id, head);
      delivered += 1;
    } catch (err) {
      if (err instanceof ApiError) {
        if (err.status === 409) {
          delivered += 1; // already recorded server-side
        } else {
          rejected += 1;
        }
      } else {
        break; // still offline
      }
    }
    state.queue.shift();
  }
  return { delivered, rejected, remaining: state.queue.length };
}
