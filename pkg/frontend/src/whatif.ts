/** What-if panel: dry-run results rendered as ghost layers next to the
 * committed plan. The server guarantees a dry run mutates nothing; the
 * integration test re-checks the plan version to hold it to that. */

import type { AdvisorClient } from "./api.js";
import type { AdhocEventWire, RecommendationWire, RouteWire } from "./types.js";
import { vehicleColor, type MapLayer } from "./map.js";

export type NodeLookup = (nodeId: string) => [number, number] | undefined;

/** Ghost overlay layers from a dry-run delta.
 *
 * Geometry needs node coordinates, which the console only has when it loaded
 * the scenario itself; without a lookup the caller falls back to the textual
 * diff panel.
 */
export function ghostLayers(
  routesAfter: Record<string, RouteWire>,
  lookup: NodeLookup,
): MapLayer[] {
  const layers: MapLayer[] = [];
  for (const vehicleId of Object.keys(routesAfter).sort()) {
    const route = routesAfter[vehicleId]!;
    const points: [number, number][] = [];
    for (const stop of route.stops) {
      const coord = lookup(stop.node_id);
      if (coord) points.push(coord);
    }
    if (points.length < 2) continue;
    layers.push({
      vehicleId,
      color: vehicleColor(vehicleId, true),
      legs: [{ points, load: 0, eta: null }],
      ghost: true,
    });
  }
  return layers;
}

export interface WhatIfResult {
  recommendation: RecommendationWire;
  ghost: MapLayer[];
}

export async function whatIf(
  client: AdvisorClient,
  scenarioId: string,
  event: AdhocEventWire,
  lookup: NodeLookup | null,
): Promise<WhatIfResult> {
  const recommendation = await client.dryRun(scenarioId, event);
  const ghost = lookup ? ghostLayers(recommendation.delta.routes_after, lookup) : [];
  return { recommendation, ghost };
}
