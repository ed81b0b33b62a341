/** Live round-trip against a real service instance.
 *
 * Spawns `python -m coglo.cli serve` on a scratch port, drives it through
 * the console's own client/state machinery, and checks the two console
 * contracts: an injected event shows up in the log with its stream
 * sequence and an accepted recommendation bumps the rendered plan version;
 * a dry run leaves the server plan version untouched.
 */
import assert from "node:assert/strict";
import { after, before, test } from "node:test";
import { spawn, type ChildProcess } from "node:child_process";

import { AdvisorClient } from "../src/api.js";
import { applyMessages, initialViewState } from "../src/state.js";
import { DecisionQueue } from "../src/recommendations.js";
import { whatIf } from "../src/whatif.js";
import type { AdhocEventWire } from "../src/types.js";

const T0 = 28_800;
const PORT = 8300 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

function scenarioDocument() {
  return {
    graph: {
      nodes: [
        { id: "depot", lat: 46.0, lon: 15.0, kind: "depot", country: "XA" },
        { id: "c0", lat: 46.0, lon: 15.01, kind: "customer", country: "XA" },
        { id: "c1", lat: 46.0, lon: 15.02, kind: "customer", country: "XA" },
      ],
      edges: [
        { id: "a:f", from: "depot", to: "c0", length_m: 2000, free_flow_speed_kmh: 50 },
        { id: "a:r", from: "c0", to: "depot", length_m: 2000, free_flow_speed_kmh: 50 },
        { id: "b:f", from: "c0", to: "c1", length_m: 2000, free_flow_speed_kmh: 50 },
        { id: "b:r", from: "c1", to: "c0", length_m: 2000, free_flow_speed_kmh: 50 },
      ],
    },
    fleet: [
      { id: "van1", capacity_units: 10, home_depot: "depot", shift: [T0, T0 + 43200] },
      { id: "van2", capacity_units: 10, home_depot: "depot", shift: [T0, T0 + 43200] },
    ],
    orders: [
      { id: "o1", size_units: 2, pickup: "depot", delivery: "c0",
        announce_time: T0 - 600, sla_deadline: T0 + 14400 },
    ],
    monitored_routes: [{ id: "m1", from: "depot", to: "c1" }],
    noise: { miss_probability: 0, demand_rate_per_hour: 0 },
    seed: 11,
    weights: { w_dist: 1, w_time: 0.1, w_late: 0.5, w_vehicle: 1, w_unassigned: 10000 },
    knobs: { service_time_s: 60, horizon_s: 0, ttl_s: 600 },
    t0: T0,
    day_end: T0 + 43200,
  };
}

let server: ChildProcess;
const client = new AdvisorClient(BASE);

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/scenarios/nope/state`);
      if (response.status === 404) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("service did not come up in time");
}

before(async () => {
  server = spawn("python3", ["-m", "coglo.cli", "serve", "--port", String(PORT)], {
    stdio: "ignore",
  });
  await waitForServer();
});

after(() => {
  server.kill("SIGTERM");
});

test("console round-trip: event echoes on the stream, accept bumps plan version", async () => {
  const { id: scenarioId } = await client.loadScenario(scenarioDocument());

  let view = initialViewState(scenarioId, (await client.plan(scenarioId)).version!);
  const versionBefore = view.planVersion;

  const event: AdhocEventWire = {
    type: "new_order",
    order: {
      id: "console-order", size_units: 1, pickup: "depot", delivery: "c1",
      announce_time: T0 + 60, sla_deadline: T0 + 21600,
    },
  };
  const recommendation = await client.submitEvent(scenarioId, event);
  assert.equal(recommendation.status, "proposed");

  // the injected event must appear in the console log with its stream sequence
  const streamed = await client.stream(scenarioId, 0, 5);
  view = applyMessages(view, streamed.messages);
  assert.equal(view.needsResync, false);
  const echoed = view.eventLog.find((entry) => entry.summary.includes("new_order"));
  assert.ok(echoed, "injected event missing from the stream log");
  assert.ok(echoed!.seq > 0);
  assert.ok(view.inbox.has(recommendation.id));

  // accepting through the console's decision queue updates the rendered version
  const decisions = new DecisionQueue(client, scenarioId);
  const decided = await decisions.decide(recommendation.id, "accept");
  assert.equal(decided!.status, "accepted");

  const tail = await client.stream(scenarioId, view.lastSeq, 5);
  view = applyMessages(view, tail.messages);
  assert.ok(view.planVersion > versionBefore,
    `plan version must advance (${versionBefore} -> ${view.planVersion})`);
  const plan = await client.plan(scenarioId);
  assert.equal(plan.version, view.planVersion);
});

test("what-if isolation: dry run leaves the server plan version unchanged", async () => {
  const { id: scenarioId } = await client.loadScenario(scenarioDocument());
  const before = (await client.plan(scenarioId)).version!;

  const result = await whatIf(client, scenarioId, {
    type: "new_order",
    order: {
      id: "ghost-order", size_units: 1, pickup: "depot", delivery: "c0",
      announce_time: T0 + 120, sla_deadline: T0 + 21600,
    },
  }, (nodeId) => (nodeId === "depot" ? [15.0, 46.0] : [15.01, 46.0]));

  assert.equal(result.recommendation.ephemeral, true);
  assert.ok(result.ghost.length >= 1, "expected a ghost overlay for the proposed route");

  const after_ = await client.plan(scenarioId);
  assert.equal(after_.version, before, "dry run must not move the plan version");
  const state = await client.state(scenarioId);
  assert.ok(!("ghost-order" in state.orders), "dry run must not register the order");
  assert.ok(!(result.recommendation.id in state.recommendations),
    "dry run must not persist a recommendation");
});
