// DOM wiring: subscribes to the state machine and re-renders the active
// section. All server-provided text lands via textContent, never markup.

import { HttpApi } from "./api.js";
import { drawScene } from "./render.js";
import { AppState, InspectionApp } from "./state.js";
import { ClusterContext, SessionSummary } from "./types.js";

const api = new HttpApi("");
const app = new InspectionApp(api);

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

const sections = {
  loading: byId<HTMLElement>("view-loading"),
  empty: byId<HTMLElement>("view-empty"),
  clusters: byId<HTMLElement>("view-clusters"),
  inspecting: byId<HTMLElement>("view-inspect"),
  summary: byId<HTMLElement>("view-summary"),
};

const banner = byId<HTMLElement>("banner");
const bannerText = byId<HTMLElement>("banner-text");
const canvas = byId<HTMLCanvasElement>("scene-canvas");
const flagButton = byId<HTMLButtonElement>("btn-flag");
const clearButton = byId<HTMLButtonElement>("btn-clear");

function clear(el: HTMLElement): void {
  while (el.firstChild) {
    el.removeChild(el.firstChild);
  }
}

function cell(text: string, header = false): HTMLTableCellElement {
  const el = document.createElement(header ? "th" : "td");
  el.textContent = text;
  return el as HTMLTableCellElement;
}

function budgetText(budget: number | null): string {
  return budget === null ? "unbounded" : String(budget);
}

function renderClusters(state: AppState): void {
  if (state.view.kind !== "clusters") {
    return;
  }
  byId("cluster-headline").textContent =
    `${state.view.clusters.length} clusters over ${state.view.nScenes} scenes. ` +
    "Smallest clusters are inspected first.";
  const body = byId<HTMLElement>("cluster-rows");
  clear(body);
  const ordered = [...state.view.clusters].sort(
    (a, b) => a.size - b.size || a.label - b.label
  );
  for (const row of ordered) {
    const tr = document.createElement("tr");
    tr.append(
      cell(`#${row.label}`),
      cell(String(row.size)),
      cell(budgetText(row.budget))
    );
    body.append(tr);
  }
}

function renderSample(state: AppState): void {
  if (state.view.kind !== "inspecting") {
    return;
  }
  const { sample, total, verdictPending, chosen } = state.view;
  byId("sample-title").textContent = `Scene ${sample.scene_id}`;
  byId("sample-progress").textContent = `Sample ${sample.index} of ${total}`;
  const clusterLine = byId("sample-cluster");
  if (sample.cluster) {
    const c = sample.cluster;
    clusterLine.textContent =
      `Cluster #${c.label}: scene ${c.served_in_cluster} of ` +
      `${budgetText(c.budget)} budgeted (cluster holds ${c.size} scenes)`;
  } else {
    clusterLine.textContent = "";
  }
  flagButton.disabled = verdictPending;
  clearButton.disabled = verdictPending;
  flagButton.classList.toggle("chosen", verdictPending && chosen === true);
  clearButton.classList.toggle("chosen", verdictPending && chosen === false);

  const container = byId<HTMLElement>("canvas-box");
  const width = Math.max(container.clientWidth, 320);
  const height = 540;
  const ratio = window.devicePixelRatio || 1;
  canvas.width = Math.round(width * ratio);
  canvas.height = Math.round(height * ratio);
  canvas.style.width = `${width}px`;
  canvas.style.height = `${height}px`;
  const ctx = canvas.getContext("2d");
  if (ctx) {
    ctx.setTransform(ratio, 0, 0, ratio, 0, 0);
    drawScene(ctx, width, height, sample);
  }
}

function renderSummary(summary: SessionSummary): void {
  const outcome = byId("summary-outcome");
  if (summary.found_tar === undefined) {
    outcome.textContent =
      `${summary.judged} of ${summary.served} served scenes judged; ` +
      `${summary.flagged_ids.length} flagged.`;
    outcome.dataset.outcome = "";
  } else if (summary.found_tar) {
    outcome.textContent =
      `Poisoning FOUND: ${summary.flagged_ids.length} scene(s) flagged.`;
    outcome.dataset.outcome = "found";
  } else {
    outcome.textContent = "No poisoning found within the inspected budget.";
    outcome.dataset.outcome = "not-found";
  }
  byId("summary-counts").textContent =
    `Served ${summary.served} of ${summary.total} budgeted samples; ` +
    `${summary.judged} judged, ${summary.flagged_ids.length} flagged.`;
  const body = byId<HTMLElement>("summary-rows");
  clear(body);
  for (const row of summary.clusters as ClusterContext[]) {
    const tr = document.createElement("tr");
    tr.append(
      cell(`#${row.label}`),
      cell(String(row.size)),
      cell(budgetText(row.budget)),
      cell(String(row.served_in_cluster))
    );
    body.append(tr);
  }
  const flagged = byId("summary-flagged");
  flagged.textContent =
    summary.flagged_ids.length > 0
      ? `Flagged scenes: ${summary.flagged_ids.join(", ")}`
      : "Flagged scenes: none";
}

function render(state: AppState): void {
  for (const section of Object.values(sections)) {
    section.hidden = true;
  }
  sections[state.view.kind].hidden = false;

  banner.hidden = state.banner === null;
  if (state.banner !== null) {
    bannerText.textContent = `${state.banner}.`;
  }

  renderClusters(state);
  renderSample(state);
  if (state.view.kind === "summary") {
    renderSummary(state.view.summary);
  }
}

function startFromForm(): void {
  const policy = byId<HTMLSelectElement>("policy-select").value;
  const seedField = byId<HTMLInputElement>("seed-input");
  const seed = Math.max(0, Math.trunc(Number(seedField.value) || 0));
  const flatField = byId<HTMLInputElement>("flat-input");
  const flat = Number(flatField.value);
  void app.startSession(
    policy,
    seed,
    policy === "flat" ? Math.max(1, Math.trunc(flat) || 1) : undefined
  );
}

function isTypingTarget(target: EventTarget | null): boolean {
  return (
    target instanceof HTMLInputElement ||
    target instanceof HTMLSelectElement ||
    target instanceof HTMLTextAreaElement
  );
}

byId<HTMLButtonElement>("btn-start").addEventListener("click", startFromForm);
byId<HTMLButtonElement>("banner-retry").addEventListener("click", () => {
  void app.retry();
});
byId<HTMLButtonElement>("btn-restart").addEventListener("click", () => {
  void app.backToClusters();
});
flagButton.addEventListener("click", () => void app.submitVerdict(true));
clearButton.addEventListener("click", () => void app.submitVerdict(false));
byId<HTMLSelectElement>("policy-select").addEventListener("change", (e) => {
  const flat = byId<HTMLInputElement>("flat-input");
  flat.disabled = (e.target as HTMLSelectElement).value !== "flat";
});

document.addEventListener("keydown", (event) => {
  if (isTypingTarget(event.target)) {
    return;
  }
  if (event.key === "f" || event.key === "F") {
    event.preventDefault();
    void app.submitVerdict(true);
  } else if (event.key === "c" || event.key === "C") {
    event.preventDefault();
    void app.submitVerdict(false);
  }
});

window.addEventListener("resize", () => {
  render(app.state);
});

app.subscribe(render);
void app.init();
