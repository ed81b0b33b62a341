/** Thin typed client for the advisor service. Every number the console shows
 * comes out of these responses; nothing is computed locally. */

import type {
  AdhocEventWire,
  ApiErrorBody,
  GeoJsonPlan,
  KpiReportWire,
  PlanWire,
  RecommendationWire,
  StateWire,
  StreamResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
    public readonly detail: string = "",
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    let body: ApiErrorBody | undefined;
    try {
      body = (await response.json()) as ApiErrorBody;
    } catch {
      body = undefined;
    }
    throw new ApiError(
      response.status,
      body?.code ?? "http_error",
      body?.message ?? `HTTP ${response.status}`,
      body?.detail ?? "",
    );
  }
  return (await response.json()) as T;
}

export class AdvisorClient {
  constructor(public readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  loadScenario(scenario: unknown): Promise<{ id: string; version: number }> {
    return request(this.url("/scenarios"), {
      method: "POST",
      body: JSON.stringify(scenario),
    });
  }

  state(scenarioId: string): Promise<StateWire> {
    return request(this.url(`/scenarios/${scenarioId}/state`));
  }

  plan(scenarioId: string): Promise<PlanWire> {
    return request(this.url(`/scenarios/${scenarioId}/plan?format=json`));
  }

  planGeoJson(scenarioId: string): Promise<GeoJsonPlan> {
    return request(this.url(`/scenarios/${scenarioId}/plan?format=geojson`));
  }

  kpis(scenarioId: string): Promise<KpiReportWire> {
    return request(this.url(`/scenarios/${scenarioId}/kpis`));
  }

  rtti(scenarioId: string): Promise<Record<string, unknown>> {
    return request(this.url(`/scenarios/${scenarioId}/rtti`));
  }

  submitEvent(scenarioId: string, event: AdhocEventWire): Promise<RecommendationWire> {
    return request(this.url(`/scenarios/${scenarioId}/events`), {
      method: "POST",
      body: JSON.stringify(event),
    });
  }

  recommendations(scenarioId: string, status?: string): Promise<RecommendationWire[]> {
    const suffix = status ? `?status=${encodeURIComponent(status)}` : "";
    return request(this.url(`/scenarios/${scenarioId}/recommendations${suffix}`));
  }

  decide(
    scenarioId: string,
    recommendationId: string,
    verdict: "accept" | "reject",
  ): Promise<RecommendationWire> {
    return request(
      this.url(`/scenarios/${scenarioId}/recommendations/${recommendationId}/decision`),
      { method: "POST", body: JSON.stringify({ verdict }) },
    );
  }

  dryRun(scenarioId: string, event: AdhocEventWire): Promise<RecommendationWire> {
    return request(this.url(`/scenarios/${scenarioId}/dry-run`), {
      method: "POST",
      body: JSON.stringify(event),
    });
  }

  /** Long-poll the ordered message stream; resolves when messages arrive or
   * the server-side timeout elapses (empty list). */
  stream(scenarioId: string, after: number, timeoutS = 10): Promise<StreamResponse> {
    return request(
      this.url(`/scenarios/${scenarioId}/stream?after=${after}&timeout_s=${timeoutS}`),
    );
  }
}
