/** Event form validation, mirroring the server's preconditions so obviously
 * broken payloads never leave the browser. The server remains authoritative;
 * these checks only pre-empt the round trip. */

import type { AdhocEventWire, OrderWire, TrafficEventWire } from "./types.js";

export interface ValidationResult {
  ok: boolean;
  errors: string[];
}

const EVENT_KINDS = ["accident", "congestion", "closure", "weather", "speed_limit"];

export function validateOrderForm(order: OrderWire): ValidationResult {
  const errors: string[] = [];
  if (!order.id.trim()) errors.push("order id is required");
  if (!Number.isInteger(order.size_units) || order.size_units <= 0) {
    errors.push("size must be a positive integer");
  }
  if (!order.pickup.trim() || !order.delivery.trim()) {
    errors.push("pickup and delivery nodes are required");
  }
  if (order.pickup === order.delivery) errors.push("pickup must differ from delivery");
  if (order.tw_delivery && order.tw_delivery[0] >= order.tw_delivery[1]) {
    errors.push("delivery window must be ordered");
  }
  return { ok: errors.length === 0, errors };
}

export function validateTrafficForm(event: TrafficEventWire): ValidationResult {
  const errors: string[] = [];
  if (!event.id.trim()) errors.push("event id is required");
  if (!EVENT_KINDS.includes(event.kind)) errors.push(`unknown kind '${event.kind}'`);
  if (event.valid_from >= event.valid_to) {
    errors.push("valid_from must precede valid_to");
  }
  if (event.severity < 0 || event.severity > 1) errors.push("severity must be in [0, 1]");
  if ("edges" in event.scope && event.scope.edges.length === 0) {
    errors.push("edge scope must not be empty");
  }
  if ("radius_m" in event.scope && event.scope.radius_m < 0) {
    errors.push("radius must be >= 0");
  }
  if ("speed_multiplier" in event.effect) {
    const m = event.effect.speed_multiplier;
    if (!(m > 0 && m <= 1)) errors.push("speed multiplier must be in (0, 1]");
  }
  if ("speed_cap_kmh" in event.effect && event.effect.speed_cap_kmh <= 0) {
    errors.push("speed cap must be positive");
  }
  return { ok: errors.length === 0, errors };
}

export function validateEventForm(event: AdhocEventWire): ValidationResult {
  switch (event.type) {
    case "new_order":
      return validateOrderForm(event.order);
    case "traffic":
    case "manual":
      return validateTrafficForm(event.event);
    case "vehicle_breakdown": {
      const errors: string[] = [];
      if (!event.vehicle_id.trim()) errors.push("vehicle id is required");
      if (!Number.isFinite(event.at)) errors.push("breakdown time must be a number");
      return { ok: errors.length === 0, errors };
    }
    case "missed_delivery": {
      const errors = event.order_id.trim() ? [] : ["order id is required"];
      return { ok: errors.length === 0, errors };
    }
    default:
      return { ok: false, errors: ["unknown event type"] };
  }
}

/** Lifecycle of an optimistic submission chip next to the submit button. */
export type SubmissionPhase = "idle" | "pending" | "confirmed" | "rejected" | "retry";

export interface Submission {
  phase: SubmissionPhase;
  /** stream sequence that confirmed the event, when confirmed */
  sequence?: number;
  error?: string;
}

export function submissionAfterPost(ok: boolean, error?: string): Submission {
  // network failure flips to retry; the user must explicitly re-send, so the
  // same event is never posted twice without their intent
  if (ok) return { phase: "pending" };
  return { phase: "retry", error };
}

export function submissionAfterStreamEcho(current: Submission, sequence: number): Submission {
  if (current.phase !== "pending") return current;
  return { phase: "confirmed", sequence };
}
