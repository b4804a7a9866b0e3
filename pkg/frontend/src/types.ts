/** Payload shapes of the pipeline service API. */

export interface SessionResponse {
  session_id: string;
  user_id: string;
  created_at: number;
}

export interface GenerationParams {
  topic: string;
  industry: string;
  stakeholders: string;
  target_size: number;
  temperature: number;
  category: string;
  rng_seed: number | null;
}

export interface BackgroundContext {
  general_knowledge: string[];
  historical_events: [string, string][];
}

export interface CandidateSet {
  provider: string;
  items: string[];
  raw_text: string;
}

export interface IndicatorSet {
  summary: string;
  sources: string[];
  created_at?: string | null;
}

export interface IndicatorTaskResult {
  candidate_sets: CandidateSet[];
  failures: [string, string][];
  indicator_set: IndicatorSet;
}

export interface TaskStatus {
  task_id: string;
  state: "running" | "done" | "failed";
  kind: string;
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface ImportReport {
  imported: number;
  skipped: number;
  total_seeds: number;
}

export interface JobStatus {
  job_id: string;
  state: "pending" | "running" | "done" | "failed";
  requests_done: number;
  requests_total: number;
  messages_so_far: number;
  failures: unknown[];
}

export interface DedupReport {
  received: number;
  retained: number;
  filtered: number;
  insertion_rate: number;
  per_category: Record<string, Record<string, number>>;
}

export interface MessageRow {
  id: string;
  content: string;
  category: string;
  score: number | null;
  timestamp: string | null;
  source: string;
  session_id: string | null;
}

export interface DataPage {
  messages: MessageRow[];
  page: number;
  page_size: number;
  total: number;
}

export interface ValidationReport {
  accuracy_pct: number;
  n: number;
  threshold: number;
}

export type Provenance = "initial" | "deduplicated" | "final";
