/** Application wiring: one session per page, panels for each workflow step.
 * Every displayed number comes from a service response. */

import { ApiClient, ApiError } from "./api.js";
import {
  applyJobUpdate,
  canDedup,
  dedupDisabledReason,
  formToContext,
  formToParams,
  initialState,
  newJobCard,
  parseProviderList,
  upsertJob,
  type UiSessionState,
} from "./state.js";
import type { IndicatorTaskResult, Provenance } from "./types.js";
import {
  clear,
  el,
  labeled,
  renderCandidates,
  renderDataGrid,
  renderDedupReport,
  renderError,
  renderJobCards,
} from "./views.js";

export interface AppHandles {
  state: UiSessionState;
  refreshGrid: () => Promise<void>;
}

export function mountApp(root: HTMLElement, api: ApiClient, pollIntervalMs = 400): AppHandles {
  const state = initialState();

  // --- layout ---------------------------------------------------------------

  const sidebar = el("aside", { class: "sidebar" });
  const mainCol = el("main", { class: "main" });
  root.append(el("div", { class: "layout" }, sidebar, mainCol));

  // --- parameter sidebar ------------------------------------------------------

  const topicInput = el("input", { id: "topic", type: "text", placeholder: "cyberattacks" });
  const industryInput = el("input", { id: "industry", type: "text", placeholder: "blockchain" });
  const stakeholdersInput = el("input", { id: "stakeholders", type: "text", placeholder: "exchanges" });
  const sizeInput = el("input", { id: "size", type: "number", min: 1, value: state.form.size });
  const temperatureInput = el("input", {
    id: "temperature",
    type: "number",
    min: 0,
    max: 1,
    step: 0.05,
    value: state.form.temperature,
  });
  const categorySelect = el("select", { id: "category" });
  categorySelect.append(el("option", { value: "target" }, "target"), el("option", { value: "general" }, "general"));
  const rngSeedInput = el("input", { id: "rng-seed", type: "text", placeholder: "(random)" });
  const knowledgeArea = el("textarea", {
    id: "general-knowledge",
    rows: 4,
    placeholder: "Background articles, separated by blank lines",
  });
  const eventsArea = el("textarea", {
    id: "historical-events",
    rows: 4,
    placeholder: "2024-01-12 - ExampleBridge exploit",
  });
  const indicatorProvidersInput = el("input", {
    id: "indicator-providers",
    type: "text",
    placeholder: "model refs, comma-separated",
  });
  const generationModelInput = el("input", { id: "generation-model", type: "text", placeholder: "server default" });

  const advanced = el("details", { class: "advanced" });
  advanced.append(
    el("summary", {}, "Advanced Settings"),
    labeled("Indicator models", indicatorProvidersInput),
    labeled("Generation model", generationModelInput),
  );

  sidebar.append(
    el("h2", {}, "Parameters"),
    labeled("Topic", topicInput),
    labeled("Industry", industryInput),
    labeled("Stakeholders", stakeholdersInput),
    labeled("Dataset size", sizeInput),
    labeled("Temperature", temperatureInput),
    labeled("Category", categorySelect),
    labeled("RNG seed", rngSeedInput),
    el("h3", {}, "Optional context"),
    labeled("General Knowledge", knowledgeArea),
    labeled("Historical Events", eventsArea),
    advanced,
  );

  function readForm(): void {
    state.form.topic = topicInput.value;
    state.form.industry = industryInput.value;
    state.form.stakeholders = stakeholdersInput.value;
    state.form.size = Number(sizeInput.value);
    state.form.temperature = Number(temperatureInput.value);
    state.form.category = categorySelect.value;
    state.form.rngSeed = rngSeedInput.value;
    state.form.generalKnowledge = knowledgeArea.value;
    state.form.historicalEvents = eventsArea.value;
    state.form.indicatorProviders = indicatorProvidersInput.value;
    state.form.generationModel = generationModelInput.value;
  }

  // --- session bar -------------------------------------------------------------

  const sessionLabel = el("span", { id: "session-label", class: "session-label" }, "no session");
  const startButton = el("button", { id: "start-session", type: "button" }, "Start session");
  const sessionError = el("div", { class: "error-region" });
  mainCol.append(el("section", { class: "panel" }, el("h2", {}, "Session"), startButton, sessionLabel, sessionError));

  startButton.addEventListener("click", () => void startSession());

  async function startSession(): Promise<void> {
    renderError(sessionError, null);
    try {
      const session = await api.createSession("ui-user");
      state.sessionId = session.session_id;
      sessionLabel.textContent = `session ${session.session_id}`;
      syncControls();
    } catch (err) {
      renderError(sessionError, describe(err), () => void startSession());
    }
  }

  // --- seeds panel ----------------------------------------------------------------

  const seedFormat = el("select", { id: "seed-format" });
  seedFormat.append(el("option", { value: "csv" }, "CSV"), el("option", { value: "jsonl" }, "JSONL"));
  const seedArea = el("textarea", { id: "seed-content", rows: 5, placeholder: "Paste seed rows here or pick a file" });
  const seedFile = el("input", { id: "seed-file", type: "file" });
  const seedUpload = el("button", { id: "upload-seeds", type: "button", disabled: true }, "Import seeds");
  const seedReport = el("span", { id: "seed-report", class: "report-line" });
  const seedError = el("div", { class: "error-region" });
  mainCol.append(
    el(
      "section",
      { class: "panel" },
      el("h2", {}, "Seed data"),
      el("p", { class: "hint" }, "Optional: without seeds, generation runs on your description and indicators alone."),
      labeled("Format", seedFormat),
      labeled("Content", seedArea),
      labeled("Or file", seedFile),
      seedUpload,
      seedReport,
      seedError,
    ),
  );

  seedFile.addEventListener("change", () => {
    const file = seedFile.files?.[0];
    if (!file) return;
    if (file.name.endsWith(".jsonl")) seedFormat.value = "jsonl";
    if (file.name.endsWith(".csv")) seedFormat.value = "csv";
    void file.text().then((text) => {
      seedArea.value = text;
    });
  });

  seedUpload.addEventListener("click", () => void uploadSeeds());

  async function uploadSeeds(): Promise<void> {
    if (!state.sessionId) return;
    renderError(seedError, null);
    try {
      const report = await api.uploadSeeds(
        state.sessionId,
        seedFormat.value as "csv" | "jsonl",
        seedArea.value,
      );
      state.seedCount = report.total_seeds;
      seedReport.textContent = `imported ${report.imported}, skipped ${report.skipped}, total ${report.total_seeds}`;
    } catch (err) {
      renderError(seedError, describe(err), () => void uploadSeeds());
    }
  }

  // --- indicators panel --------------------------------------------------------------

  const indicatorsButton = el("button", { id: "generate-indicators", type: "button", disabled: true }, "Generate indicators");
  const indicatorsStatus = el("span", { id: "indicators-status", class: "report-line" });
  const candidatesRegion = el("div", { id: "candidates" });
  const summaryArea = el("textarea", { id: "indicator-summary", rows: 5, placeholder: "Fused indicator summary" });
  const summarySave = el("button", { id: "save-summary", type: "button", disabled: true }, "Save edits");
  const summarySources = el("div", { id: "indicator-sources", class: "report-line" });
  const indicatorsError = el("div", { class: "error-region" });
  mainCol.append(
    el(
      "section",
      { class: "panel" },
      el("h2", {}, "Indicators"),
      indicatorsButton,
      indicatorsStatus,
      candidatesRegion,
      labeled("Summary (editable)", summaryArea),
      summarySave,
      summarySources,
      indicatorsError,
    ),
  );

  summaryArea.addEventListener("input", () => {
    state.summaryDirty = true;
    syncControls();
  });

  indicatorsButton.addEventListener("click", () => void generateIndicators());
  summarySave.addEventListener("click", () => void saveSummary());

  async function generateIndicators(): Promise<void> {
    if (!state.sessionId) return;
    renderError(indicatorsError, null);
    readForm();
    indicatorsStatus.textContent = "running...";
    try {
      const context = formToContext(state.form);
      const providers = parseProviderList(state.form.indicatorProviders);
      const { task_id } = await api.startIndicators(state.sessionId, formToParams(state.form), context, providers);
      const task = await api.waitForTask(task_id, { intervalMs: pollIntervalMs });
      if (task.state === "failed" || task.result === null) {
        throw new Error(task.error ?? "indicator task failed");
      }
      const result = task.result as unknown as IndicatorTaskResult;
      renderCandidates(candidatesRegion, result.candidate_sets, result.failures);
      state.indicatorSummary = result.indicator_set.summary;
      state.indicatorSources = result.indicator_set.sources;
      state.summaryDirty = false;
      summaryArea.value = state.indicatorSummary;
      summarySources.textContent = `sources: ${state.indicatorSources.join(", ")}`;
      indicatorsStatus.textContent = "done";
      syncControls();
    } catch (err) {
      indicatorsStatus.textContent = "";
      renderError(indicatorsError, describe(err), () => void generateIndicators());
    }
  }

  async function saveSummary(): Promise<void> {
    if (!state.sessionId) return;
    renderError(indicatorsError, null);
    try {
      const saved = await api.saveIndicators(state.sessionId, summaryArea.value);
      state.indicatorSummary = saved.summary;
      state.summaryDirty = false;
      summarySources.textContent = `sources: ${saved.sources.join(", ")}`;
      syncControls();
    } catch (err) {
      renderError(indicatorsError, describe(err), () => void saveSummary());
    }
  }

  // --- generation panel -----------------------------------------------------------------

  const launchButton = el("button", { id: "launch-job", type: "button", disabled: true }, "Launch generation job");
  const jobsRegion = el("div", { id: "jobs" });
  const jobsError = el("div", { class: "error-region" });
  mainCol.append(
    el(
      "section",
      { class: "panel" },
      el("h2", {}, "Generation"),
      el(
        "p",
        { class: "hint persistent-hint" },
        "Deduplication removes near-duplicates afterwards, so the final retained count can be smaller than the requested size.",
      ),
      launchButton,
      jobsRegion,
      jobsError,
    ),
  );
  renderJobCards(jobsRegion, state.jobs);

  launchButton.addEventListener("click", () => void launchJob());

  async function launchJob(): Promise<void> {
    if (!state.sessionId) return;
    renderError(jobsError, null);
    readForm();
    try {
      const model = state.form.generationModel.trim() || undefined;
      const { job_id } = await api.createJob(state.sessionId, formToParams(state.form), model);
      let card = newJobCard(job_id);
      state.jobs = upsertJob(state.jobs, card);
      renderJobCards(jobsRegion, state.jobs);
      const final = await api.waitForJob(
        job_id,
        (status) => {
          card = applyJobUpdate(card, status);
          state.jobs = upsertJob(state.jobs, card);
          renderJobCards(jobsRegion, state.jobs);
        },
        { intervalMs: pollIntervalMs },
      );
      if (final.state === "done") {
        state.generatedCount += final.messages_so_far;
      }
      syncControls();
      await refreshGrid();
    } catch (err) {
      renderError(jobsError, describe(err), () => void launchJob());
    }
  }

  // --- dedup panel --------------------------------------------------------------------------

  const thresholdInput = el("input", { id: "dedup-threshold", type: "number", min: 0.01, max: 1, step: 0.01, value: 0.9 });
  const dedupButton = el("button", { id: "run-dedup", type: "button", disabled: true }, "Deduplicate");
  const dedupRegion = el("div", { id: "dedup-report-region" });
  const dedupError = el("div", { class: "error-region" });
  mainCol.append(
    el(
      "section",
      { class: "panel" },
      el("h2", {}, "Deduplication"),
      labeled("Similarity threshold", thresholdInput),
      dedupButton,
      dedupRegion,
      dedupError,
    ),
  );

  dedupButton.addEventListener("click", () => void runDedup());

  async function runDedup(): Promise<void> {
    if (!state.sessionId || !canDedup(state)) return;
    renderError(dedupError, null);
    state.dedupRunning = true;
    syncControls();
    try {
      const report = await api.runDedup(state.sessionId, { threshold: Number(thresholdInput.value) });
      state.dedupReport = report;
      renderDedupReport(dedupRegion, report);
      gridProvenance.value = "deduplicated";
      await refreshGrid();
    } catch (err) {
      renderError(dedupError, describe(err), () => void runDedup());
    } finally {
      state.dedupRunning = false;
      syncControls();
    }
  }

  // --- data grid ------------------------------------------------------------------------------

  const gridProvenance = el("select", { id: "grid-provenance" });
  gridProvenance.append(
    el("option", { value: "" }, "latest"),
    el("option", { value: "initial" }, "initial"),
    el("option", { value: "deduplicated" }, "deduplicated"),
    el("option", { value: "final" }, "final"),
  );
  const gridPrev = el("button", { id: "grid-prev", type: "button" }, "Prev");
  const gridNext = el("button", { id: "grid-next", type: "button" }, "Next");
  const gridInfo = el("span", { id: "grid-info", class: "report-line" });
  const gridRegion = el("div", { id: "grid" });
  const exportCsv = el("a", { id: "export-csv", class: "export-link", href: "#", download: "dataset.csv" }, "Export CSV");
  const exportJson = el("a", { id: "export-json", class: "export-link", href: "#", download: "dataset.json" }, "Export JSON");
  const gridError = el("div", { class: "error-region" });
  let gridPage = 1;
  const gridPageSize = 25;
  mainCol.append(
    el(
      "section",
      { class: "panel" },
      el("h2", {}, "Data"),
      labeled("Provenance", gridProvenance),
      el("div", { class: "grid-controls" }, gridPrev, gridInfo, gridNext, exportCsv, exportJson),
      gridRegion,
      gridError,
    ),
  );

  gridProvenance.addEventListener("change", () => {
    gridPage = 1;
    void refreshGrid();
  });
  gridPrev.addEventListener("click", () => {
    if (gridPage > 1) {
      gridPage -= 1;
      void refreshGrid();
    }
  });
  gridNext.addEventListener("click", () => {
    gridPage += 1;
    void refreshGrid();
  });

  async function refreshGrid(): Promise<void> {
    if (!state.sessionId) return;
    renderError(gridError, null);
    const provenance = (gridProvenance.value || undefined) as Provenance | undefined;
    try {
      const page = await api.getData(state.sessionId, {
        provenance,
        page: gridPage,
        pageSize: gridPageSize,
      });
      renderDataGrid(gridRegion, page.messages);
      const maxPage = Math.max(1, Math.ceil(page.total / gridPageSize));
      gridInfo.textContent = `page ${page.page}/${maxPage} (${page.total} messages)`;
      exportCsv.setAttribute("href", api.exportUrl(state.sessionId, "csv", provenance));
      exportJson.setAttribute("href", api.exportUrl(state.sessionId, "json", provenance));
    } catch (err) {
      renderError(gridError, describe(err), () => void refreshGrid());
    }
  }

  // --- shared control state -----------------------------------------------------------------------

  function syncControls(): void {
    const haveSession = state.sessionId !== null;
    indicatorsButton.disabled = !haveSession;
    seedUpload.disabled = !haveSession;
    launchButton.disabled = !haveSession || state.indicatorSummary === "";
    summarySave.disabled = !haveSession || !state.summaryDirty;
    dedupButton.disabled = !haveSession || !canDedup(state);
    const reason = haveSession ? dedupDisabledReason(state) : "start a session first";
    if (reason) {
      dedupButton.setAttribute("title", reason);
    } else {
      dedupButton.removeAttribute("title");
    }
  }

  syncControls();
  return { state, refreshGrid };
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return err.message;
  return String(err);
}
