/** DOM bootstrap: wires the API client, stream loop, map, inbox and panels
 * into the page. All numbers shown are verbatim API responses. */

import { AdvisorClient, ApiError } from "./api.js";
import { validateEventForm, submissionAfterPost, submissionAfterStreamEcho, type Submission } from "./forms.js";
import { legPath, project, renderPlan, type MapLayer } from "./map.js";
import { cardModel, DecisionQueue } from "./recommendations.js";
import { applyMessages, cardInteractive, initialViewState, type ViewState } from "./state.js";
import { startStreamLoop } from "./stream.js";
import { whatIf, type NodeLookup } from "./whatif.js";
import type { AdhocEventWire } from "./types.js";

const $ = (id: string) => document.getElementById(id)!;

let client: AdvisorClient;
let view: ViewState | null = null;
let nodeLookup: NodeLookup | null = null;
let ghost: MapLayer[] = [];
let committed: MapLayer[] = [];
let bounds: [number, number, number, number] | null = null;
let decisions: DecisionQueue;
let submission: Submission = { phase: "idle" };

function banner(text: string, kind: "error" | "info" = "info"): void {
  const el = $("banner");
  el.textContent = text;
  el.className = kind;
  el.style.display = text ? "block" : "none";
}

async function refreshPlanLayers(): Promise<void> {
  if (!view) return;
  try {
    const doc = await client.planGeoJson(view.scenarioId);
    const result = renderPlan(doc);
    if (result.error) {
      banner(`plan render failed: ${result.error} (keeping previous layers)`, "error");
      return; // previous layers stay on screen
    }
    committed = result.layers;
    bounds = result.bounds ?? bounds;
    view = { ...view, planDirty: false };
    drawMap();
  } catch (error) {
    banner(`plan fetch failed: ${String(error)}`, "error");
  }
}

function drawMap(): void {
  const svg = $("map") as unknown as SVGSVGElement;
  svg.innerHTML = "";
  if (!bounds) return;
  const width = svg.clientWidth || 800;
  const height = svg.clientHeight || 520;
  const projectFn = project(bounds, width, height);
  const legend: string[] = [];
  for (const layer of [...committed, ...ghost]) {
    for (const leg of layer.legs) {
      const path = document.createElementNS("http://www.w3.org/2000/svg", "path");
      path.setAttribute("d", legPath(leg.points, projectFn));
      path.setAttribute("fill", "none");
      path.setAttribute("stroke", layer.color);
      path.setAttribute("stroke-width", layer.ghost ? "2" : "3");
      if (layer.ghost) path.setAttribute("stroke-dasharray", "6 4");
      svg.appendChild(path);
    }
    if (!layer.ghost) legend.push(layer.vehicleId);
  }
  $("legend").textContent = legend.length
    ? legend.map((v) => `● ${v}`).join("   ")
    : "no routes";
}

function renderInbox(): void {
  if (!view) return;
  const container = $("inbox");
  container.innerHTML = "";
  const cards = [...view.inbox.values()].sort((a, b) => b.sequence - a.sequence);
  for (const rec of cards) {
    const model = cardModel(rec);
    const card = document.createElement("div");
    card.className = `card ${model.status}`;
    const diff = model.diff
      .map((d) => {
        const bits = [
          d.added.length ? `+[${d.added.join(" ")}]` : "",
          d.removed.length ? `−[${d.removed.join(" ")}]` : "",
          d.reordered ? "(reordered)" : "",
        ].filter(Boolean);
        return bits.length ? `${d.vehicleId}: ${bits.join(" ")}` : "";
      })
      .filter(Boolean)
      .join("<br>");
    card.innerHTML = `
      <strong>${model.id}</strong> <span class="badge">${model.scopeBadge}</span>
      <span class="status">${model.status}</span><br>
      objective ${model.objectiveBefore.toFixed(1)} → ${model.objectiveAfter.toFixed(1)}
      (${model.improvement >= 0 ? "−" : "+"}${Math.abs(model.improvement).toFixed(1)})<br>
      ${diff || "no route changes"}
      ${model.unassignedAdded.length ? `<br>unassigned +${model.unassignedAdded.join(", ")}` : ""}`;
    if (rec.status === "proposed" && cardInteractive(rec, Date.now() / 1000)) {
      for (const verdict of ["accept", "reject"] as const) {
        const button = document.createElement("button");
        button.textContent = verdict;
        button.onclick = async () => {
          try {
            await decisions.decide(rec.id, verdict);
          } catch (error) {
            banner(error instanceof ApiError ? `${error.code}: ${error.message}` : String(error), "error");
          }
        };
        card.appendChild(button);
      }
    }
    container.appendChild(card);
  }
}

function renderLog(): void {
  if (!view) return;
  $("eventlog").textContent = view.eventLog
    .slice(-12)
    .map((entry) => `#${entry.seq} ${entry.summary}`)
    .join("\n");
  $("version").textContent = `plan v${view.planVersion}`;
  const chip = $("submission");
  chip.textContent =
    submission.phase === "idle" ? "" :
    submission.phase === "pending" ? "sending…" :
    submission.phase === "confirmed" ? `confirmed as stream #${submission.sequence}` :
    `failed: ${submission.error ?? "retry"}`;
}

async function refreshKpis(): Promise<void> {
  if (!view) return;
  const kpi = await client.kpis(view.scenarioId);
  $("kpis").textContent = [
    `distance ${kpi.total_distance_km.toFixed(1)} km`,
    `fuel ${kpi.total_fuel_l.toFixed(1)} l`,
    `cost ${kpi.total_cost.toFixed(1)}`,
    `load factor ${kpi.load_factor.toFixed(3)}`,
    `planned on-time ${(kpi.on_time_rate * 100).toFixed(0)}%`,
  ].join(" | ");
}

function onStreamUpdate(next: ViewState): void {
  const echoed = next.eventLog.filter((e) => e.summary.startsWith("event"));
  if (echoed.length && submission.phase === "pending") {
    submission = submissionAfterStreamEcho(submission, echoed[echoed.length - 1]!.seq);
  }
  view = next;
  renderInbox();
  renderLog();
  if (next.planDirty) {
    void refreshPlanLayers();
    void refreshKpis();
  }
}

async function submitEventFromTextarea(dry: boolean): Promise<void> {
  if (!view) return;
  let payload: AdhocEventWire;
  try {
    payload = JSON.parse(($("event-json") as HTMLTextAreaElement).value);
  } catch {
    banner("event JSON does not parse", "error");
    return;
  }
  const validation = validateEventForm(payload);
  if (!validation.ok) {
    banner(`blocked client-side: ${validation.errors.join("; ")}`, "error");
    return;
  }
  banner("");
  if (dry) {
    try {
      const result = await whatIf(client, view.scenarioId, payload, nodeLookup);
      ghost = result.ghost;
      $("whatif").textContent =
        `ephemeral ${result.recommendation.id}: objective ` +
        `${result.recommendation.objective_before.toFixed(1)} → ` +
        `${result.recommendation.objective_after.toFixed(1)} (nothing committed)`;
      drawMap();
    } catch (error) {
      banner(error instanceof ApiError ? `${error.code}: ${error.message}` : String(error), "error");
    }
    return;
  }
  try {
    await client.submitEvent(view.scenarioId, payload);
    submission = submissionAfterPost(true);
  } catch (error) {
    if (error instanceof ApiError) {
      banner(`${error.code}: ${error.message}`, "error");
      submission = { phase: "rejected", error: error.message };
    } else {
      submission = submissionAfterPost(false, String(error));
    }
  }
  renderLog();
}

async function boot(): Promise<void> {
  const base = (($("base-url") as HTMLInputElement).value || "http://127.0.0.1:8000").replace(/\/$/, "");
  client = new AdvisorClient(base);
  const scenarioText = ($("scenario-json") as HTMLTextAreaElement).value.trim();
  let scenarioId = ($("scenario-id") as HTMLInputElement).value.trim();
  if (scenarioText) {
    const scenario = JSON.parse(scenarioText);
    const loaded = await client.loadScenario(scenario);
    scenarioId = loaded.id;
    const coords = new Map<string, [number, number]>(
      (scenario.graph?.nodes ?? []).map((n: { id: string; lat: number; lon: number }) =>
        [n.id, [n.lon, n.lat] as [number, number]]),
    );
    nodeLookup = (nodeId) => coords.get(nodeId);
    ($("scenario-id") as HTMLInputElement).value = scenarioId;
  }
  if (!scenarioId) {
    banner("load a scenario or enter an existing scenario id", "error");
    return;
  }
  const state = await client.state(scenarioId);
  view = initialViewState(scenarioId, state.version);
  decisions = new DecisionQueue(client, scenarioId);
  startStreamLoop(client, () => view!, onStreamUpdate, (error) => banner(String(error), "error"));
  await refreshPlanLayers();
  await refreshKpis();
  renderLog();
}

$("connect").onclick = () => void boot().catch((e) => banner(String(e), "error"));
$("submit-event").onclick = () => void submitEventFromTextarea(false);
$("dry-run").onclick = () => void submitEventFromTextarea(true);
$("clear-ghost").onclick = () => {
  ghost = [];
  $("whatif").textContent = "";
  drawMap();
};
