/** JSON shapes of the gateway HTTP API, mirrored field for field. */

export type Phase = "defining" | "rating" | "training" | "selecting" | "done";

export type Label = "positive" | "negative";

export interface ItemRef {
  id: number;
  url: string;
  /** Gateway-relative path that 307-redirects to the image. */
  image_path: string;
}

export interface ConceptInfo {
  name: string;
  positive_phrases: string[];
  negative_phrases: string[];
}

export interface MetricsRow {
  round: number;
  samples_rated: number;
  auc_pr: number | null;
  auc_roc: number | null;
  f1: number | null;
  accuracy: number | null;
  threshold: number;
  n_pos: number;
  n_neg: number;
}

export interface Snapshot {
  session_id: string;
  phase: Phase;
  round: number;
  concept: ConceptInfo;
  config: Record<string, unknown>;
  pending_count: number;
  ledger_records: number;
  resolved_labels: number;
  resolved_positive: number;
  resolved_negative: number;
  trained_rounds: number[];
  votes_required: number;
  clamp_events: string[];
  metrics: MetricsRow[];
  last_error: string | null;
}

export interface BatchResponse {
  phase: Phase;
  round: number;
  votes_required: number;
  items: ItemRef[];
}

export interface Vote {
  item_id: number;
  label: Label;
}

export interface RatingsResponse {
  accepted: number;
  resolved: boolean;
  phase: Phase;
  round: number;
}

export interface StartedResponse {
  phase: Phase;
  round: number;
  status: string;
}

export interface CreateSessionResponse {
  session_id: string;
  phase: Phase;
}

export interface SessionSummary {
  session_id: string;
  concept: string;
  phase: Phase;
  round: number;
}

export interface HealthResponse {
  status: string;
  version: string;
  corpus_count: number;
  dim: number;
  index_kind: string;
  kernels: string;
}

export interface ConceptRequest {
  name: string;
  positive_phrases: string[];
  negative_phrases: string[];
}

/** `config` for session creation; the gateway rejects unknown keys. */
export type SessionConfigOverrides = Record<string, unknown>;
