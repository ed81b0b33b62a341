import assert from "node:assert/strict";
import { test } from "node:test";

import {
  submissionAfterPost,
  submissionAfterStreamEcho,
  validateEventForm,
  validateTrafficForm,
} from "../src/forms.js";
import type { AdhocEventWire, TrafficEventWire } from "../src/types.js";

function trafficEvent(overrides: Partial<TrafficEventWire> = {}): TrafficEventWire {
  return {
    id: "jam-1",
    kind: "congestion",
    scope: { edges: ["e1"] },
    severity: 0.5,
    effect: { speed_multiplier: 0.5 },
    valid_from: 1000,
    valid_to: 2000,
    ...overrides,
  };
}

test("well-formed traffic event passes", () => {
  assert.deepEqual(validateTrafficForm(trafficEvent()), { ok: true, errors: [] });
});

test("reversed validity window is blocked client-side", () => {
  const result = validateTrafficForm(trafficEvent({ valid_from: 2000, valid_to: 1000 }));
  assert.equal(result.ok, false);
  assert.match(result.errors.join(";"), /valid_from/);
});

test("empty edge scope and bad multiplier are blocked", () => {
  assert.equal(validateTrafficForm(trafficEvent({ scope: { edges: [] } })).ok, false);
  assert.equal(
    validateTrafficForm(trafficEvent({ effect: { speed_multiplier: 1.5 } })).ok,
    false,
  );
});

test("order form mirrors server preconditions", () => {
  const event: AdhocEventWire = {
    type: "new_order",
    order: {
      id: "o1", size_units: 0, pickup: "a", delivery: "a",
      announce_time: 0, sla_deadline: 100,
    },
  };
  const result = validateEventForm(event);
  assert.equal(result.ok, false);
  assert.match(result.errors.join(";"), /positive integer/);
  assert.match(result.errors.join(";"), /differ/);
});

test("breakdown and missed-delivery forms validate ids", () => {
  assert.equal(
    validateEventForm({ type: "vehicle_breakdown", vehicle_id: "", at: 1 }).ok,
    false,
  );
  assert.equal(
    validateEventForm({ type: "missed_delivery", order_id: "o1" }).ok,
    true,
  );
});

test("submission chip lifecycle: post, echo, retry", () => {
  const pending = submissionAfterPost(true);
  assert.equal(pending.phase, "pending");
  const confirmed = submissionAfterStreamEcho(pending, 7);
  assert.deepEqual(confirmed, { phase: "confirmed", sequence: 7 });
  // network failure becomes an explicit retry state, never an auto re-post
  const failed = submissionAfterPost(false, "connection reset");
  assert.equal(failed.phase, "retry");
  // an echo cannot confirm a submission that never went pending
  assert.equal(submissionAfterStreamEcho(failed, 8).phase, "retry");
});
