/** UI session state and the pure update rules the views rely on. */

import type { BackgroundContext, DedupReport, GenerationParams, JobStatus } from "./types.js";

export interface FormState {
  topic: string;
  industry: string;
  stakeholders: string;
  size: number;
  temperature: number;
  category: string;
  rngSeed: string; // raw input text; empty means unseeded
  generalKnowledge: string;
  historicalEvents: string;
  // Advanced settings: override the server-configured models per role
  indicatorProviders: string;
  generationModel: string;
}

export function defaultForm(): FormState {
  return {
    topic: "",
    industry: "",
    stakeholders: "",
    size: 100,
    temperature: 0.8,
    category: "target",
    rngSeed: "",
    generalKnowledge: "",
    historicalEvents: "",
    indicatorProviders: "",
    generationModel: "",
  };
}

export function clampTemperature(value: number): number {
  if (Number.isNaN(value)) return 0.8;
  return Math.min(1, Math.max(0, value));
}

export function formToParams(form: FormState): GenerationParams {
  const seed = form.rngSeed.trim();
  return {
    topic: form.topic.trim(),
    industry: form.industry.trim(),
    stakeholders: form.stakeholders.trim(),
    target_size: Math.max(1, Math.floor(form.size)),
    temperature: clampTemperature(form.temperature),
    category: form.category,
    rng_seed: seed === "" ? null : Number(seed),
  };
}

/** "date - entity" per line; blank lines ignored. */
export function parseEvents(text: string): [string, string][] {
  const events: [string, string][] = [];
  for (const line of text.split("\n")) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    const sep = trimmed.indexOf(" - ");
    if (sep === -1) throw new Error(`event line needs "date - entity": ${trimmed}`);
    events.push([trimmed.slice(0, sep).trim(), trimmed.slice(sep + 3).trim()]);
  }
  return events;
}

/** Articles separated by blank lines. */
export function parseKnowledge(text: string): string[] {
  return text
    .split(/\n\s*\n/)
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

export function formToContext(form: FormState): BackgroundContext {
  return {
    general_knowledge: parseKnowledge(form.generalKnowledge),
    historical_events: parseEvents(form.historicalEvents),
  };
}

export function parseProviderList(text: string): string[] {
  return text
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}

export interface JobCard {
  jobId: string;
  state: string;
  requestsDone: number;
  requestsTotal: number;
  messagesSoFar: number;
  failures: number;
}

const TERMINAL = new Set(["done", "failed"]);

/** Merge a polled snapshot into a card without ever regressing: counters only
 * grow and a terminal state is never overwritten by a stale poll. */
export function applyJobUpdate(card: JobCard, status: JobStatus): JobCard {
  if (TERMINAL.has(card.state) && !TERMINAL.has(status.state)) {
    return card;
  }
  return {
    jobId: card.jobId,
    state: status.state,
    requestsDone: Math.max(card.requestsDone, status.requests_done),
    requestsTotal: Math.max(card.requestsTotal, status.requests_total),
    messagesSoFar: Math.max(card.messagesSoFar, status.messages_so_far),
    failures: Math.max(card.failures, status.failures.length),
  };
}

export function newJobCard(jobId: string): JobCard {
  return { jobId, state: "pending", requestsDone: 0, requestsTotal: 0, messagesSoFar: 0, failures: 0 };
}

export interface UiSessionState {
  sessionId: string | null;
  form: FormState;
  indicatorSummary: string;
  indicatorSources: string[];
  summaryDirty: boolean; // edited locally but not yet PUT
  seedCount: number;
  generatedCount: number;
  jobs: JobCard[];
  dedupReport: DedupReport | null;
  dedupRunning: boolean;
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    form: defaultForm(),
    indicatorSummary: "",
    indicatorSources: [],
    summaryDirty: false,
    seedCount: 0,
    generatedCount: 0,
    jobs: [],
    dedupReport: null,
    dedupRunning: false,
  };
}

/** The dedup button needs data to work on and no pass already running. */
export function canDedup(state: UiSessionState): boolean {
  return state.generatedCount > 0 && !state.dedupRunning;
}

export function dedupDisabledReason(state: UiSessionState): string | null {
  if (state.dedupRunning) return "a dedup pass is already running";
  if (state.generatedCount === 0) return "no generated data to deduplicate yet";
  return null;
}

export function upsertJob(jobs: JobCard[], updated: JobCard): JobCard[] {
  const index = jobs.findIndex((j) => j.jobId === updated.jobId);
  if (index === -1) return [...jobs, updated];
  const next = [...jobs];
  next[index] = updated;
  return next;
}
