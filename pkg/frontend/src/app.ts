import { ApiClient, ConflictError } from "./api.js";
import { actionForKey } from "./keys.js";
import {
  QueueState,
  applyServerDetections,
  clearUnsent,
  emptyQueue,
  focusedItem,
  moveFocus,
  parkUnsent,
  removeItem,
} from "./queue.js";
import { RetrainPanel } from "./retrain.js";
import type { ManifestCounts, Verdict } from "./types.js";

/**
 * Headless application controller: owns the queue, the retrain panel and
 * the connectivity banner. All state changes flow through the documented
 * service API; the DOM layer only renders what lives here.
 */
export class App {
  queue: QueueState = emptyQueue();
  manifest: ManifestCounts = { total: 0, feedback: 0 };
  offline = false;
  lastError = "";
  retrain: RetrainPanel;

  constructor(
    private api: ApiClient,
    private onChange: () => void = () => {},
  ) {
    this.retrain = new RetrainPanel(api, onChange);
  }

  /** Pull the pending queue; on failure keep the stale queue read-only. */
  async refresh(): Promise<void> {
    try {
      const resp = await this.api.pendingDetections();
      this.queue = applyServerDetections(this.queue, resp.detections);
      this.manifest = resp.manifest;
      this.offline = false;
      this.lastError = "";
    } catch (err) {
      this.offline = true;
      this.lastError = String(err);
    }
    this.onChange();
  }

  /** Label the focused item: optimistic advance, 409 surfaces the stored
   * verdict, network failure parks the action for retry. */
  async labelFocused(verdict: Verdict): Promise<void> {
    const item = focusedItem(this.queue);
    if (!item) {
      return;
    }
    this.queue = removeItem(this.queue, item.id);
    this.onChange();
    try {
      await this.api.label(item.id, verdict);
      await this.refresh();
    } catch (err) {
      if (err instanceof ConflictError) {
        // already labeled elsewhere; the server verdict stands
        await this.refresh();
        this.lastError = `already labeled: ${err.message}`;
        this.onChange();
      } else {
        this.offline = true;
        this.lastError = String(err);
        this.queue = parkUnsent(this.queue, { itemId: item.id, verdict });
        this.onChange();
      }
    }
  }

  /** Retry one parked label action. */
  async retryUnsent(itemId: string): Promise<void> {
    const action = this.queue.unsent.find((u) => u.itemId === itemId);
    if (!action) {
      return;
    }
    try {
      await this.api.label(action.itemId, action.verdict);
      this.queue = clearUnsent(this.queue, itemId);
      await this.refresh();
    } catch (err) {
      if (err instanceof ConflictError) {
        this.queue = clearUnsent(this.queue, itemId);
        await this.refresh();
      } else {
        this.offline = true;
        this.lastError = String(err);
        this.onChange();
      }
    }
  }

  async handleKey(key: string): Promise<void> {
    const action = actionForKey(key);
    if (action.kind === "label") {
      await this.labelFocused(action.verdict);
    } else if (action.kind === "move") {
      this.queue = moveFocus(this.queue, action.delta);
      this.onChange();
    }
  }
}
