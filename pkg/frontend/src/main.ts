import { ApiClient } from "./api.js";
import { App } from "./app.js";
import { focusedItem } from "./queue.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function fmtScore(s: number): string {
  return s.toFixed(3);
}

function render(app: App): void {
  const banner = el<HTMLDivElement>("banner");
  banner.hidden = !app.offline && !app.lastError;
  banner.textContent = app.offline
    ? `service unreachable - queue is read-only (${app.lastError})`
    : app.lastError;

  const list = el<HTMLUListElement>("queue-list");
  list.innerHTML = "";
  app.queue.items.forEach((item, i) => {
    const li = document.createElement("li");
    li.className = i === app.queue.focus ? "queue-row focused" : "queue-row";
    li.textContent = `${item.id}  score ${fmtScore(item.peakScore)}  run ${item.runId}`;
    li.onclick = () => {
      app.queue = { ...app.queue, focus: i };
      render(app);
    };
    list.appendChild(li);
  });

  const empty = el<HTMLDivElement>("queue-empty");
  empty.hidden = app.queue.items.length > 0;

  const detail = el<HTMLDivElement>("detail");
  const item = focusedItem(app.queue);
  if (item) {
    detail.hidden = false;
    el<HTMLImageElement>("patch-img").src = item.patchUrl;
    el<HTMLImageElement>("context-img").src = item.contextUrl;
    el<HTMLSpanElement>("detail-title").textContent =
      `${item.id} - peak ${fmtScore(item.peakScore)}`;
  } else {
    detail.hidden = true;
  }

  const unsent = el<HTMLDivElement>("unsent");
  unsent.innerHTML = "";
  for (const action of app.queue.unsent) {
    const row = document.createElement("div");
    row.className = "unsent-row";
    row.textContent = `unsent: ${action.verdict} for ${action.itemId} `;
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.onclick = () => void app.retryUnsent(action.itemId);
    row.appendChild(retry);
    unsent.appendChild(row);
  }

  el<HTMLSpanElement>("manifest-counts").textContent =
    `manifest: ${app.manifest.total} samples (${app.manifest.feedback} from feedback)`;

  const trigger = el<HTMLButtonElement>("retrain-btn");
  const phase = app.retrain.phase;
  trigger.disabled = !app.retrain.triggerEnabled;
  const phaseText = el<HTMLSpanElement>("retrain-state");
  switch (phase.kind) {
    case "idle":
      phaseText.textContent = "";
      break;
    case "running":
      phaseText.textContent = `training in progress (job ${phase.jobId})`;
      break;
    case "busy":
      phaseText.textContent = "training in progress";
      break;
    case "done":
      phaseText.textContent = `done - model v${phase.version}`;
      break;
    case "failed":
      phaseText.textContent = `failed: ${phase.error}`;
      break;
  }

  const models = el<HTMLUListElement>("model-list");
  models.innerHTML = "";
  for (const entry of app.retrain.models) {
    const li = document.createElement("li");
    const auc = entry.eval_summary != null ? ` AUC ${entry.eval_summary.toFixed(3)}` : "";
    li.textContent = `v${entry.version}  ${entry.created_at}${auc}`;
    models.appendChild(li);
  }
}

function start(): void {
  const api = new ApiClient();
  const app = new App(api, () => render(app));

  document.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLTextAreaElement) {
      return;
    }
    void app.handleKey(ev.key);
  });

  el<HTMLButtonElement>("retrain-btn").onclick = () => {
    void app.retrain.trigger().then(() => app.retrain.pollUntilSettled());
  };
  el<HTMLButtonElement>("refresh-btn").onclick = () => void app.refresh();

  void app.refresh();
  void app.retrain.refreshModels().catch(() => undefined);
  setInterval(() => void app.refresh(), 15000);
}

start();
