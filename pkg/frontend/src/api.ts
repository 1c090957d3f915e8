import type {
  Detection,
  DetectionsResponse,
  ModelEntry,
  RetrainJob,
  Verdict,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin JSON client over the review service. `fetchFn` is injectable so
 * tests can stub the network without a DOM.
 */
export class ApiClient {
  constructor(
    private fetchFn: FetchLike = (i, init) => fetch(i, init),
    private base = "",
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    const body = await resp.json().catch(() => ({}));
    if (resp.status === 409) {
      throw new ConflictError((body as { error?: string }).error ?? "conflict");
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, (body as { error?: string }).error ?? `HTTP ${resp.status}`);
    }
    return body as T;
  }

  pendingDetections(): Promise<DetectionsResponse> {
    return this.json<DetectionsResponse>("/api/detections?status=pending");
  }

  detection(id: string): Promise<Detection> {
    return this.json<Detection>(`/api/detections/${encodeURIComponent(id)}`);
  }

  label(id: string, verdict: Verdict): Promise<Detection> {
    return this.json<Detection>(`/api/detections/${encodeURIComponent(id)}/label`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ verdict }),
    });
  }

  triggerRetrain(): Promise<{ job_id: string }> {
    return this.json<{ job_id: string }>("/api/retrain", { method: "POST" });
  }

  retrainStatus(jobId: string): Promise<RetrainJob> {
    return this.json<RetrainJob>(`/api/retrain/${encodeURIComponent(jobId)}`);
  }

  models(): Promise<{ models: ModelEntry[] }> {
    return this.json<{ models: ModelEntry[] }>("/api/models");
  }
}
