/** Console view state and stream reconciliation.
 *
 * The invariant this module protects: the rendered plan version always equals
 * the latest plan-version message seen on the stream. On a sequence gap the
 * console refetches full state before rendering anything newer.
 */

import type { RecommendationWire, StreamMessage } from "./types.js";

export interface ViewState {
  scenarioId: string;
  lastSeq: number;
  planVersion: number;
  /** render generation: bump tells the UI to refetch the plan layers */
  planDirty: boolean;
  inbox: Map<string, RecommendationWire>;
  eventLog: { seq: number; summary: string }[];
  needsResync: boolean;
}

export function initialViewState(scenarioId: string, planVersion: number): ViewState {
  return {
    scenarioId,
    lastSeq: 0,
    planVersion,
    planDirty: true,
    inbox: new Map(),
    eventLog: [],
    needsResync: false,
  };
}

function summarize(message: StreamMessage): string {
  const p = message.payload as Record<string, any>;
  switch (message.kind) {
    case "event":
      return `event #${p.sequence ?? "?"} ${p.type ?? ""}`.trim();
    case "recommendation":
      return `recommendation ${p.id} ${p.status}`;
    case "plan-version":
      return `plan v${p.version}`;
    default:
      return message.kind;
  }
}

/** Fold a batch of ordered stream messages into the view state.
 *
 * Messages must be contiguous with what was already seen; any gap marks the
 * state for a full resync instead of applying partial updates.
 */
export function applyMessages(state: ViewState, messages: StreamMessage[]): ViewState {
  const next: ViewState = {
    ...state,
    inbox: new Map(state.inbox),
    eventLog: [...state.eventLog],
  };
  for (const message of messages) {
    if (message.seq <= next.lastSeq) {
      continue; // at-least-once delivery: duplicates are fine, skip them
    }
    if (message.seq !== next.lastSeq + 1) {
      next.needsResync = true;
      return next;
    }
    next.lastSeq = message.seq;
    next.eventLog.push({ seq: message.seq, summary: summarize(message) });
    if (message.kind === "plan-version") {
      const version = (message.payload as Record<string, any>).version;
      if (typeof version === "number" && version > next.planVersion) {
        next.planVersion = version;
        next.planDirty = true;
      }
    } else if (message.kind === "recommendation") {
      const rec = message.payload as unknown as RecommendationWire;
      next.inbox.set(rec.id, rec);
    }
  }
  return next;
}

/** Resolve a resync: adopt authoritative state fetched from the server. */
export function afterResync(state: ViewState, planVersion: number, lastSeq: number): ViewState {
  return {
    ...state,
    planVersion,
    lastSeq,
    planDirty: true,
    needsResync: false,
  };
}

/** A recommendation card becomes read-only once decided or expired; the TTL
 * countdown uses server timestamps only. */
export function cardInteractive(rec: RecommendationWire, serverClock: number): boolean {
  if (rec.status !== "proposed") return false;
  return serverClock - rec.created_at <= rec.ttl_s;
}
