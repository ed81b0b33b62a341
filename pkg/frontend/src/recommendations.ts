/** Recommendation review helpers: human-readable route diffs and decision
 * posting. Diffs are presentation only - computed from the delta the server
 * already sent, never re-derived from plan math. */

import type { AdvisorClient } from "./api.js";
import type { PlanDeltaWire, RecommendationWire, RouteWire } from "./types.js";

export interface RouteDiffLine {
  vehicleId: string;
  added: string[];
  removed: string[];
  reordered: boolean;
}

function stopLabels(route: RouteWire): string[] {
  return route.stops
    .filter((s) => s.action === "pickup" || s.action === "delivery")
    .map((s) => `${s.action === "pickup" ? "+" : "-"}${s.order_ids.join(",")}@${s.node_id}`);
}

export function diffRoutes(delta: PlanDeltaWire): RouteDiffLine[] {
  const lines: RouteDiffLine[] = [];
  for (const vehicleId of Object.keys(delta.routes_after).sort()) {
    const after = delta.routes_after[vehicleId]!;
    const before = delta.routes_before[vehicleId];
    const afterLabels = stopLabels(after);
    const beforeLabels = before ? stopLabels(before) : [];
    const added = afterLabels.filter((l) => !beforeLabels.includes(l));
    const removed = beforeLabels.filter((l) => !afterLabels.includes(l));
    const sharedAfter = afterLabels.filter((l) => beforeLabels.includes(l));
    const sharedBefore = beforeLabels.filter((l) => afterLabels.includes(l));
    lines.push({
      vehicleId,
      added,
      removed,
      reordered: sharedAfter.join("|") !== sharedBefore.join("|"),
    });
  }
  return lines;
}

export interface CardModel {
  id: string;
  scopeBadge: string;
  objectiveBefore: number;
  objectiveAfter: number;
  improvement: number;
  diff: RouteDiffLine[];
  unassignedAdded: string[];
  unassignedRemoved: string[];
  status: string;
}

export function cardModel(rec: RecommendationWire): CardModel {
  return {
    id: rec.id,
    scopeBadge: rec.scope,
    objectiveBefore: rec.objective_before,
    objectiveAfter: rec.objective_after,
    improvement: rec.objective_before - rec.objective_after,
    diff: diffRoutes(rec.delta),
    unassignedAdded: rec.delta.unassigned_added,
    unassignedRemoved: rec.delta.unassigned_removed,
    status: rec.status,
  };
}

/** At most one in-flight decision per card; repeats while pending are dropped. */
export class DecisionQueue {
  private inFlight = new Set<string>();

  constructor(private readonly client: AdvisorClient, private readonly scenarioId: string) {}

  async decide(
    recommendationId: string,
    verdict: "accept" | "reject",
  ): Promise<RecommendationWire | null> {
    if (this.inFlight.has(recommendationId)) return null;
    this.inFlight.add(recommendationId);
    try {
      return await this.client.decide(this.scenarioId, recommendationId, verdict);
    } finally {
      this.inFlight.delete(recommendationId);
    }
  }
}
