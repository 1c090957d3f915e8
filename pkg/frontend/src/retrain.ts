import { ApiClient, ConflictError } from "./api.js";
import type { ModelEntry } from "./types.js";

export type RetrainPhase =
  | { kind: "idle" }
  | { kind: "running"; jobId: string }
  | { kind: "busy" } // another session's job holds the lock
  | { kind: "done"; version: number }
  | { kind: "failed"; error: string };

/**
 * Trigger/poll state machine for the retrain panel. The trigger is
 * disabled while a job runs; 409 from the service renders as busy, and
 * completion refreshes the model registry list.
 */
export class RetrainPanel {
  phase: RetrainPhase = { kind: "idle" };
  models: ModelEntry[] = [];

  constructor(
    private api: ApiClient,
    private onChange: () => void = () => {},
    private pollIntervalMs = 500,
  ) {}

  get triggerEnabled(): boolean {
    return this.phase.kind !== "running";
  }

  async refreshModels(): Promise<void> {
    this.models = (await this.api.models()).models;
    this.onChange();
  }

  async trigger(): Promise<void> {
    if (!this.triggerEnabled) {
      return;
    }
    try {
      const { job_id } = await this.api.triggerRetrain();
      this.phase = { kind: "running", jobId: job_id };
    } catch (err) {
      this.phase =
        err instanceof ConflictError
          ? { kind: "busy" }
          : { kind: "failed", error: String(err) };
    }
    this.onChange();
  }

  /** One poll step; returns true while the job is still running. */
  async poll(): Promise<boolean> {
    if (this.phase.kind !== "running") {
      return false;
    }
    const job = await this.api.retrainStatus(this.phase.jobId);
    if (job.state === "running") {
      this.onChange();
      return true;
    }
    if (job.state === "done") {
      this.phase = { kind: "done", version: job.model_version ?? -1 };
      await this.refreshModels();
    } else {
      this.phase = { kind: "failed", error: job.error ?? "training failed" };
    }
    this.onChange();
    return false;
  }

  /** Poll until the running job settles. */
  async pollUntilSettled(sleep: (ms: number) => Promise<void> = defaultSleep): Promise<void> {
    while (await this.poll()) {
      await sleep(this.pollIntervalMs);
    }
  }
}

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
