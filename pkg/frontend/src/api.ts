/** Thin typed client for the pipeline service. All numbers shown in the UI
 * come from these responses; the client never derives its own. */

import type {
  BackgroundContext,
  DataPage,
  DedupReport,
  GenerationParams,
  ImportReport,
  IndicatorSet,
  JobStatus,
  Provenance,
  SessionResponse,
  TaskStatus,
  ValidationReport,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = (await resp.json()) as { detail?: string };
        if (parsed.detail) detail = parsed.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  createSession(userId: string): Promise<SessionResponse> {
    return this.request("POST", "/sessions", { user_id: userId });
  }

  startIndicators(
    sessionId: string,
    params: GenerationParams,
    context: BackgroundContext,
    providers: string[] = [],
  ): Promise<{ task_id: string }> {
    return this.request("POST", `/sessions/${sessionId}/indicators`, {
      params,
      context,
      providers,
    });
  }

  getTask(taskId: string): Promise<TaskStatus> {
    return this.request("GET", `/tasks/${taskId}`);
  }

  async waitForTask(taskId: string, opts: PollOptions = {}): Promise<TaskStatus> {
    const interval = opts.intervalMs ?? 500;
    const deadline = Date.now() + (opts.timeoutMs ?? 120_000);
    for (;;) {
      const status = await this.getTask(taskId);
      if (status.state !== "running") return status;
      if (Date.now() > deadline) throw new Error(`task ${taskId} timed out`);
      await sleep(interval);
    }
  }

  getIndicators(sessionId: string): Promise<IndicatorSet> {
    return this.request("GET", `/sessions/${sessionId}/indicators`);
  }

  saveIndicators(sessionId: string, summary: string): Promise<IndicatorSet> {
    return this.request("PUT", `/sessions/${sessionId}/indicators`, { summary });
  }

  uploadSeeds(
    sessionId: string,
    format: "jsonl" | "csv",
    content: string,
    category?: string,
  ): Promise<ImportReport> {
    return this.request("POST", `/sessions/${sessionId}/seeds`, {
      format,
      content,
      category: category ?? null,
    });
  }

  createJob(
    sessionId: string,
    params: GenerationParams,
    model?: string,
    useSeeds = true,
  ): Promise<{ job_id: string }> {
    return this.request("POST", `/sessions/${sessionId}/jobs`, {
      params,
      model: model ?? null,
      use_seeds: useSeeds,
    });
  }

  getJob(jobId: string): Promise<JobStatus> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  async waitForJob(
    jobId: string,
    onProgress: (status: JobStatus) => void,
    opts: PollOptions = {},
  ): Promise<JobStatus> {
    const interval = opts.intervalMs ?? 750;
    const deadline = Date.now() + (opts.timeoutMs ?? 600_000);
    for (;;) {
      const status = await this.getJob(jobId);
      onProgress(status);
      if (status.state === "done" || status.state === "failed") return status;
      if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`);
      await sleep(interval);
    }
  }

  runDedup(
    sessionId: string,
    cfg: { threshold?: number; batch_size?: number; ttl_hours?: number } = {},
  ): Promise<DedupReport> {
    return this.request("POST", `/sessions/${sessionId}/dedup`, cfg);
  }

  getData(
    sessionId: string,
    opts: { provenance?: Provenance; page?: number; pageSize?: number } = {},
  ): Promise<DataPage> {
    const params = new URLSearchParams();
    if (opts.provenance) params.set("provenance", opts.provenance);
    params.set("page", String(opts.page ?? 1));
    params.set("page_size", String(opts.pageSize ?? 25));
    return this.request("GET", `/sessions/${sessionId}/data?${params.toString()}`);
  }

  exportUrl(sessionId: string, format: "csv" | "json" | "jsonl", provenance?: Provenance): string {
    const params = new URLSearchParams({ format });
    if (provenance) params.set("provenance", provenance);
    return `${this.baseUrl}/sessions/${sessionId}/export?${params.toString()}`;
  }

  async fetchExport(
    sessionId: string,
    format: "csv" | "json" | "jsonl",
    provenance?: Provenance,
  ): Promise<string> {
    const resp = await this.fetchFn(this.exportUrl(sessionId, format, provenance));
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return resp.text();
  }

  startAnnotation(sessionId: string, limit?: number): Promise<{ task_id: string }> {
    return this.request("POST", `/sessions/${sessionId}/annotate`, {
      limit: limit ?? null,
    });
  }

  validate(
    sessionId: string,
    labels: Record<string, number>,
    threshold = 0.5,
  ): Promise<ValidationReport> {
    return this.request("POST", `/sessions/${sessionId}/validate`, { labels, threshold });
  }
}
