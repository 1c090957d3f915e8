export type Verdict = "true_positive" | "false_positive";
export type DetectionStatus = "pending" | Verdict;

/** Detection as the service reports it; the UI never recomputes fields. */
export interface Detection {
  id: string;
  centroid: [number, number];
  peak_score: number;
  area_px: number;
  bbox: [number, number, number, number];
  status: DetectionStatus;
  run_id: string;
}

export interface ManifestCounts {
  total: number;
  feedback: number;
}

export interface DetectionsResponse {
  detections: Detection[];
  manifest: ManifestCounts;
}

/** One triage card: a detection plus its image URLs. */
export interface QueueItem {
  id: string;
  patchUrl: string;
  contextUrl: string;
  peakScore: number;
  runId: string;
  status: DetectionStatus;
}

export interface ModelEntry {
  version: number;
  path: string;
  created_at: string;
  eval_summary: number | null;
  manifest_digest: string;
}

export type RetrainJobState = "running" | "done" | "failed";

export interface RetrainJob {
  state: RetrainJobState;
  model_version: number | null;
  error: string | null;
}

export function toQueueItem(d: Detection): QueueItem {
  return {
    id: d.id,
    patchUrl: `/api/detections/${encodeURIComponent(d.id)}/patch.png`,
    contextUrl: `/api/detections/${encodeURIComponent(d.id)}/context.png`,
    peakScore: d.peak_score,
    runId: d.run_id,
    status: d.status,
  };
}
