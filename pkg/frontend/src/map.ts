/** Plan rendering: GeoJSON route legs to SVG-ready layers.
 *
 * The console draws whatever the service exports - no routing or ETA math
 * happens here. Colors are derived by hashing the vehicle id so a vehicle
 * keeps its color across refreshes and screenshots stay reproducible.
 */

import type { GeoJsonPlan } from "./types.js";

export interface MapLayer {
  vehicleId: string;
  color: string;
  /** Per-leg polylines in projected [x, y] screen units. */
  legs: { points: [number, number][]; load: number; eta: number | null }[];
  ghost: boolean;
}

export interface RenderResult {
  layers: MapLayer[];
  /** lon/lat bounding box of everything drawn: [minLon, minLat, maxLon, maxLat]. */
  bounds: [number, number, number, number] | null;
  error?: string;
}

/** Deterministic hue from a vehicle id. */
export function vehicleColor(vehicleId: string, ghost = false): string {
  let hash = 0;
  for (let i = 0; i < vehicleId.length; i++) {
    hash = (hash * 31 + vehicleId.charCodeAt(i)) >>> 0;
  }
  const hue = hash % 360;
  return ghost ? `hsl(${hue} 60% 70% / 0.55)` : `hsl(${hue} 70% 45%)`;
}

function isLineString(feature: unknown): feature is {
  geometry: { type: "LineString"; coordinates: [number, number][] };
  properties: { vehicle: string; load: number; eta: number | null };
} {
  const f = feature as Record<string, any>;
  return (
    f !== null &&
    typeof f === "object" &&
    f.geometry?.type === "LineString" &&
    Array.isArray(f.geometry.coordinates) &&
    typeof f.properties?.vehicle === "string"
  );
}

/** Turn a plan GeoJSON export into one layer per vehicle.
 *
 * Returns an error (and no layers) for malformed documents, so the caller
 * can keep the previous layers on screen and show a banner instead.
 */
export function renderPlan(doc: GeoJsonPlan | unknown, ghost = false): RenderResult {
  const root = doc as Record<string, any>;
  if (!root || root.type !== "FeatureCollection" || !Array.isArray(root.features)) {
    return { layers: [], bounds: null, error: "malformed GeoJSON: not a FeatureCollection" };
  }
  const byVehicle = new Map<string, MapLayer>();
  let minLon = Infinity;
  let minLat = Infinity;
  let maxLon = -Infinity;
  let maxLat = -Infinity;
  for (const feature of root.features) {
    if (!isLineString(feature)) {
      return { layers: [], bounds: null, error: "malformed GeoJSON: bad feature" };
    }
    const vehicleId = feature.properties.vehicle;
    let layer = byVehicle.get(vehicleId);
    if (!layer) {
      layer = { vehicleId, color: vehicleColor(vehicleId, ghost), legs: [], ghost };
      byVehicle.set(vehicleId, layer);
    }
    for (const [lon, lat] of feature.geometry.coordinates) {
      if (typeof lon !== "number" || typeof lat !== "number") {
        return { layers: [], bounds: null, error: "malformed GeoJSON: bad coordinate" };
      }
      minLon = Math.min(minLon, lon);
      maxLon = Math.max(maxLon, lon);
      minLat = Math.min(minLat, lat);
      maxLat = Math.max(maxLat, lat);
    }
    layer.legs.push({
      points: feature.geometry.coordinates.map(([lon, lat]) => [lon, lat]),
      load: feature.properties.load,
      eta: feature.properties.eta,
    });
  }
  const layers = [...byVehicle.values()].sort((a, b) =>
    a.vehicleId.localeCompare(b.vehicleId),
  );
  const bounds: [number, number, number, number] | null = byVehicle.size
    ? [minLon, minLat, maxLon, maxLat]
    : null;
  return { layers, bounds };
}

/** Project lon/lat into a width x height viewport with padding. */
export function project(
  bounds: [number, number, number, number],
  width: number,
  height: number,
  pad = 20,
): (lon: number, lat: number) => [number, number] {
  const [minLon, minLat, maxLon, maxLat] = bounds;
  const spanLon = Math.max(maxLon - minLon, 1e-9);
  const spanLat = Math.max(maxLat - minLat, 1e-9);
  const scale = Math.min((width - 2 * pad) / spanLon, (height - 2 * pad) / spanLat);
  return (lon, lat) => [
    pad + (lon - minLon) * scale,
    height - pad - (lat - minLat) * scale,
  ];
}

/** SVG path string for one leg under a projection. */
export function legPath(
  points: [number, number][],
  projectFn: (lon: number, lat: number) => [number, number],
): string {
  return points
    .map(([lon, lat], i) => {
      const [x, y] = projectFn(lon, lat);
      return `${i === 0 ? "M" : "L"}${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}
