/** Wire types mirroring the advisor service's JSON schemas. */

export interface OrderWire {
  id: string;
  size_units: number;
  pickup: string;
  delivery: string;
  announce_time: number;
  sla_deadline: number;
  tw_delivery?: [number, number] | null;
  priority?: number;
  state?: string;
  via_waypoints?: string[];
}

export interface TrafficEventWire {
  id: string;
  kind: string;
  scope: { edges: string[] } | { center: { lat: number; lon: number }; radius_m: number };
  severity: number;
  effect: { speed_multiplier: number } | { speed_cap_kmh: number } | { closed: true };
  valid_from: number;
  valid_to: number;
  source?: string;
}

export type AdhocEventWire =
  | { type: "new_order"; order: OrderWire }
  | { type: "vehicle_breakdown"; vehicle_id: string; at: number }
  | { type: "traffic"; event: TrafficEventWire }
  | { type: "manual"; event: TrafficEventWire }
  | { type: "missed_delivery"; order_id: string };

export interface StopWire {
  node_id: string;
  action: string;
  order_ids: string[];
  eta: number | null;
  service_time_s: number;
  slack_s: number;
  leg_time_s: number;
  leg_distance_m: number;
  via: string[];
}

export interface RouteWire {
  vehicle_id: string;
  locked: number;
  stops: StopWire[];
}

export interface PlanWire {
  routes: Record<string, RouteWire>;
  unassigned: string[];
  objective: number | null;
  version?: number;
}

export interface PlanDeltaWire {
  routes_before: Record<string, RouteWire>;
  routes_after: Record<string, RouteWire>;
  unassigned_added: string[];
  unassigned_removed: string[];
}

export interface RecommendationWire {
  id: string;
  trigger: Record<string, unknown>;
  scope: "local" | "global";
  delta: PlanDeltaWire;
  objective_before: number;
  objective_after: number;
  status: "proposed" | "accepted" | "rejected" | "expired";
  created_at: number;
  ttl_s: number;
  sequence: number;
  ephemeral: boolean;
  notes: string[];
}

export interface StreamMessage {
  seq: number;
  kind: "event" | "recommendation" | "plan-version";
  payload: Record<string, unknown>;
}

export interface StreamResponse {
  messages: StreamMessage[];
  last_seq: number;
}

export interface KpiReportWire {
  load_factor: number;
  total_distance_km: number;
  total_fuel_l: number;
  total_cost: number;
  on_time_rate: number;
  delivered: number;
  missed: number;
  failed: number;
  reopt_count: number;
  recommendations: Record<string, number>;
}

export interface GeoJsonFeature {
  type: "Feature";
  geometry: { type: "LineString"; coordinates: [number, number][] };
  properties: { vehicle: string; load: number; eta: number | null; leg_index?: number };
}

export interface GeoJsonPlan {
  type: "FeatureCollection";
  features: GeoJsonFeature[];
}

export interface StateWire {
  clock: number;
  version: number;
  orders: Record<string, OrderWire>;
  vehicles: Record<string, string>;
  active_events: string[];
  plan: PlanWire | null;
  recommendations: Record<string, string>;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail?: string;
}
