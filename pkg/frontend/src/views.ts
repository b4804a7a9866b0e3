/** DOM builders. No business logic here: panels render what the service
 * returned and surface callbacks for the app to wire. */

import type { CandidateSet, DedupReport, MessageRow } from "./types.js";
import type { JobCard } from "./state.js";

type Attrs = Record<string, string | boolean | number>;
type Child = Node | string;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (typeof value === "boolean") {
      if (value) node.setAttribute(key, "");
    } else {
      node.setAttribute(key, String(value));
    }
  }
  for (const child of children) {
    node.append(child instanceof Node ? child : document.createTextNode(child));
  }
  return node;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function labeled(labelText: string, input: HTMLElement): HTMLElement {
  const wrapper = el("label", { class: "field" });
  wrapper.append(el("span", { class: "field-label" }, labelText), input);
  return wrapper;
}

/** Inline error with a retry affordance; hidden when message is null. */
export function renderError(
  region: HTMLElement,
  message: string | null,
  onRetry?: () => void,
): void {
  clear(region);
  if (message === null) return;
  const box = el("div", { class: "error", role: "alert" }, message);
  if (onRetry) {
    const retry = el("button", { class: "retry", type: "button" }, "Retry");
    retry.addEventListener("click", onRetry);
    box.append(" ", retry);
  }
  region.append(box);
}

export function renderCandidates(region: HTMLElement, sets: CandidateSet[], failures: [string, string][]): void {
  clear(region);
  for (const set of sets) {
    const details = el("details", { class: "candidate-set" });
    details.append(el("summary", {}, `${set.provider} (${set.items.length} candidates)`));
    const list = el("ul", {});
    for (const item of set.items) list.append(el("li", {}, item));
    details.append(list);
    region.append(details);
  }
  for (const [provider, error] of failures) {
    region.append(el("div", { class: "provider-failure" }, `${provider}: ${error}`));
  }
}

export function renderJobCards(region: HTMLElement, jobs: JobCard[]): void {
  clear(region);
  if (jobs.length === 0) {
    region.append(el("p", { class: "placeholder" }, "No jobs launched yet."));
    return;
  }
  for (const job of jobs) {
    const card = el("div", { class: `job-card job-${job.state}`, "data-job": job.jobId });
    card.append(
      el("div", { class: "job-id" }, `Job ${job.jobId}`),
      el("div", { class: "job-state" }, job.state),
      el(
        "div",
        { class: "job-progress" },
        `${job.requestsDone}/${job.requestsTotal} requests, ${job.messagesSoFar} messages`,
      ),
    );
    if (job.failures > 0) {
      card.append(el("div", { class: "job-failures" }, `${job.failures} failed requests`));
    }
    region.append(card);
  }
}

export function renderDedupReport(region: HTMLElement, report: DedupReport | null): void {
  clear(region);
  if (report === null) return;
  const rate = (report.insertion_rate * 100).toFixed(1);
  const summary = el(
    "div",
    { class: "dedup-report" },
    el("span", { class: "stat" }, `received ${report.received}`),
    el("span", { class: "stat" }, `retained ${report.retained}`),
    el("span", { class: "stat" }, `filtered ${report.filtered}`),
    el("span", { class: "stat" }, `insertion rate ${rate}%`),
  );
  region.append(summary);
  const categories = Object.entries(report.per_category);
  if (categories.length > 0) {
    const list = el("ul", { class: "dedup-categories" });
    for (const [category, counts] of categories) {
      list.append(
        el(
          "li",
          {},
          `${category}: ${counts["retained"] ?? 0}/${counts["received"] ?? 0} retained`,
        ),
      );
    }
    region.append(list);
  }
}

export function renderDataGrid(region: HTMLElement, rows: MessageRow[]): void {
  clear(region);
  const table = el("table", { class: "data-grid" });
  const head = el("tr", {});
  for (const column of ["id", "content", "category", "score", "source"]) {
    head.append(el("th", {}, column));
  }
  table.append(head);
  for (const row of rows) {
    const tr = el("tr", {});
    tr.append(
      el("td", { class: "cell-id", title: row.id }, row.id.slice(0, 8)),
      el("td", { class: "cell-content" }, row.content),
      el("td", {}, row.category),
      el("td", {}, row.score === null ? "" : String(row.score)),
      el("td", {}, row.source),
    );
    table.append(tr);
  }
  region.append(table);
}
