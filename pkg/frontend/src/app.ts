/**
 * DOM wiring for the review console. All markup comes from the pure
 * renderers in model.ts; this module only manages state and events.
 */

import { ApiError, fetchAudit, fetchJob, fetchQueue, submitCorrections } from "./api.js";
import {
  DEFAULT_TAU,
  JobView,
  AuditEventView,
  changedFields,
  renderBannerHtml,
  renderDetailHtml,
  renderQueueHtml,
} from "./model.js";

interface AppState {
  tau: number;
  job: JobView | null;
  audit: AuditEventView[];
  edits: Record<string, string>;
  fieldErrors: Record<string, string>;
  notice: string;
}

const state: AppState = {
  tau: DEFAULT_TAU,
  job: null,
  audit: [],
  edits: {},
  fieldErrors: {},
  notice: "",
};

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshQueue(): Promise<void> {
  const target = el("queue-panel");
  try {
    const items = await fetchQueue();
    target.innerHTML = renderQueueHtml(items, state.tau);
    el("banner-slot").innerHTML = "";
  } catch (err) {
    target.innerHTML = "";
    el("banner-slot").innerHTML = renderBannerHtml(
      `Service unreachable (${err instanceof Error ? err.message : err})`, true);
  }
}

function captureEdits(): void {
  const form = document.getElementById("correction-form");
  if (!form) return;
  for (const input of form.querySelectorAll<HTMLInputElement>("input[name]")) {
    state.edits[input.name] = input.value;
  }
}

function renderDetail(): void {
  if (!state.job) {
    el("detail-panel").innerHTML = `<p class="empty">Select an invoice.</p>`;
    return;
  }
  el("detail-panel").innerHTML = renderDetailHtml(state.job, state.audit, {
    tau: state.tau,
    edits: state.edits,
    fieldErrors: state.fieldErrors,
    notice: state.notice,
  });
  const form = document.getElementById("correction-form");
  form?.addEventListener("submit", onSubmit);
}

async function selectJob(jobId: string): Promise<void> {
  state.edits = {};
  state.fieldErrors = {};
  state.notice = "";
  try {
    state.job = await fetchJob(jobId);
    state.audit = await fetchAudit(jobId);
  } catch (err) {
    el("banner-slot").innerHTML = renderBannerHtml(String(err), true);
    return;
  }
  renderDetail();
}

async function onSubmit(event: Event): Promise<void> {
  event.preventDefault();
  if (!state.job || !state.job.invoice) return;
  captureEdits();
  const corrections = changedFields(state.job.invoice, state.edits);
  if (corrections.length === 0) {
    state.notice = "No fields changed.";
    renderDetail();
    return;
  }
  const reviewer =
    (document.getElementById("reviewer") as HTMLInputElement | null)?.value
    || "reviewer";
  try {
    const updated = await submitCorrections(state.job.job_id, {
      reviewer,
      revision: state.job.revision,
      corrections,
    });
    state.fieldErrors = {};
    if (updated.state !== "needs_review") {
      // Item left the queue; clear the selection.
      state.job = null;
      state.edits = {};
      state.notice = "";
      await refreshQueue();
      renderDetail();
      return;
    }
    state.job = updated;
    state.audit = await fetchAudit(updated.job_id);
    state.edits = {};
    state.notice = "Correction saved, checks still failing.";
    renderDetail();
  } catch (err) {
    if (err instanceof ApiError && err.body.code === "NormalizationFailed") {
      // Field-level error rendered inline; every other edit is preserved.
      const field = err.body.field ?? "unknown";
      state.fieldErrors = { [field]: err.body.message };
      state.notice = "";
      renderDetail();
      return;
    }
    if (err instanceof ApiError && err.status === 409) {
      state.notice = `Job changed elsewhere (${err.body.code}); reload to continue.`;
      renderDetail();
      const detail = el("detail-panel");
      const reload = document.createElement("button");
      reload.id = "reload-job";
      reload.textContent = "Reload";
      reload.addEventListener("click", () => {
        if (state.job) void selectJob(state.job.job_id);
        else void refreshQueue();
      });
      detail.querySelector(".notice")?.appendChild(reload);
      return;
    }
    el("banner-slot").innerHTML = renderBannerHtml(String(err), true);
  }
}

export function bootstrap(): void {
  el("queue-panel").addEventListener("click", (event) => {
    const item = (event.target as HTMLElement).closest<HTMLElement>(".queue-item");
    if (item?.dataset.job) void selectJob(item.dataset.job);
  });
  el("banner-slot").addEventListener("click", (event) => {
    if ((event.target as HTMLElement).id === "retry") void refreshQueue();
  });
  el("refresh").addEventListener("click", () => void refreshQueue());
  void refreshQueue();
  renderDetail();
}

bootstrap();
