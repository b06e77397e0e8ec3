/**
 * View models and pure rendering for the review console.
 *
 * Everything here renders API values verbatim: confidence, validation and
 * status are never recomputed client-side. Renderers return HTML strings so
 * they stay testable without a browser.
 */

export const DEFAULT_TAU = 0.85;

export interface QueueItem {
  job_id: string;
  vendor: string | null;
  total: string | null;
  overall_confidence: number;
  revision: number;
  filename: string;
}

export interface FieldDetail {
  raw: string;
  normalized: string | null;
  confidence: number;
  provenance: string;
  validation: string;
}

export interface CheckEntry {
  id: string;
  passed: boolean;
  skipped: boolean;
  detail: string;
}

export interface LineItemView {
  description: string;
  quantity: string;
  unit_price: string;
  amount: string;
}

export interface InvoiceView {
  status: string;
  overall_confidence: number;
  line_items: LineItemView[];
  field_details: Record<string, FieldDetail>;
  [column: string]: unknown;
}

export interface JobView {
  job_id: string;
  state: string;
  filename: string;
  revision: number;
  error: string | null;
  invoice: InvoiceView | null;
  validation_report: CheckEntry[] | null;
  transitions: { state: string; timestamp: string }[];
}

export interface AuditEventView {
  timestamp: string;
  actor: string;
  action: string;
  before: string | null;
  after: string | null;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}

export type Band = "red" | "amber" | "green";

/** Ascending by confidence; job id breaks ties so the order is stable. */
export function sortQueue(items: QueueItem[]): QueueItem[] {
  return [...items].sort((a, b) =>
    a.overall_confidence !== b.overall_confidence
      ? a.overall_confidence - b.overall_confidence
      : a.job_id.localeCompare(b.job_id));
}

/** Confidence badge color: below 0.5 red, below the review threshold amber. */
export function badgeBand(confidence: number, tau: number = DEFAULT_TAU): Band {
  if (confidence < 0.5) return "red";
  if (confidence < tau) return "amber";
  return "green";
}

export function formatConfidence(confidence: number): string {
  return confidence.toFixed(2);
}

export function failingChecks(report: CheckEntry[] | null): CheckEntry[] {
  return (report ?? []).filter((c) => !c.passed && !c.skipped);
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function badge(confidence: number, tau: number): string {
  const band = badgeBand(confidence, tau);
  return `<span class="badge badge-${band}">${formatConfidence(confidence)}</span>`;
}

export function renderQueueHtml(items: QueueItem[], tau: number = DEFAULT_TAU): string {
  if (items.length === 0) {
    return `<p class="empty">Nothing to review.</p>`;
  }
  const rows = sortQueue(items).map((item) => `
    <li class="queue-item" data-job="${escapeHtml(item.job_id)}">
      <span class="vendor">${escapeHtml(item.vendor ?? "(unknown vendor)")}</span>
      <span class="total">${escapeHtml(item.total ?? "—")}</span>
      ${badge(item.overall_confidence, tau)}
    </li>`);
  return `<ul class="queue">${rows.join("")}</ul>`;
}

/** Every canonical field is correctable; export-schema order first. */
export const EDITABLE_FIELDS = [
  "invoice_number", "invoice_date", "due_date", "vendor_name", "currency",
  "subtotal", "tax_rate", "tax_amount", "discount_amount", "total_amount",
  "weight_kg", "vendor_address", "billing_address", "shipping_address",
];

export interface DetailOptions {
  tau?: number;
  edits?: Record<string, string>;
  fieldErrors?: Record<string, string>;
  notice?: string;
}

export function renderDetailHtml(job: JobView, audit: AuditEventView[],
                                 options: DetailOptions = {}): string {
  const tau = options.tau ?? DEFAULT_TAU;
  const edits = options.edits ?? {};
  const fieldErrors = options.fieldErrors ?? {};
  const invoice = job.invoice;
  if (!invoice) {
    return `<p class="empty">Job ${escapeHtml(job.job_id)} is ${escapeHtml(job.state)}.</p>`;
  }

  const fieldRows = EDITABLE_FIELDS.map((name) => {
    const detail = invoice.field_details[name];
    const value = edits[name] ?? detail?.raw ?? "";
    const error = fieldErrors[name];
    return `
      <tr class="field-row${error ? " field-error" : ""}" data-field="${name}">
        <th>${name}</th>
        <td><input name="${name}" value="${escapeHtml(value)}"></td>
        <td class="normalized">${escapeHtml(detail?.normalized ?? "")}</td>
        <td>${detail ? badge(detail.confidence, tau) : ""}</td>
        <td class="validation validation-${detail?.validation ?? "none"}">
          ${escapeHtml(detail?.validation ?? "")}</td>
        ${error ? `<td class="error-inline">${escapeHtml(error)}</td>` : "<td></td>"}
      </tr>`;
  });

  const failing = failingChecks(job.validation_report);
  const checksHtml = failing.length
    ? `<ul class="checks">${failing.map((c) =>
        `<li class="check-fail"><b>${escapeHtml(c.id)}</b> ${escapeHtml(c.detail)}</li>`)
        .join("")}</ul>`
    : `<p class="checks-ok">All arithmetic checks pass.</p>`;

  const auditHtml = audit.map((e) => `
    <li><time>${escapeHtml(e.timestamp)}</time> <b>${escapeHtml(e.actor)}</b>
      ${escapeHtml(e.action)}${e.before || e.after
        ? ` <span class="delta">${escapeHtml(e.before ?? "")} → ${escapeHtml(e.after ?? "")}</span>`
        : ""}</li>`);

  return `
    <div class="detail" data-job="${escapeHtml(job.job_id)}" data-revision="${job.revision}">
      <header>
        <h2>${escapeHtml(job.filename)}</h2>
        <span class="status status-${escapeHtml(invoice.status)}">${escapeHtml(invoice.status)}</span>
        ${badge(invoice.overall_confidence, tau)}
      </header>
      ${options.notice ? `<div class="notice">${escapeHtml(options.notice)}</div>` : ""}
      <div class="columns">
        <figure class="page">
          <img src="/v1/invoices/${escapeHtml(job.job_id)}/page/0.png"
               alt="page image" onerror="this.closest('figure').classList.add('missing')">
          <figcaption>original page</figcaption>
        </figure>
        <form id="correction-form">
          <table class="fields">
            <thead><tr><th>field</th><th>raw</th><th>normalized</th>
              <th>conf</th><th>validation</th><th></th></tr></thead>
            <tbody>${fieldRows.join("")}</tbody>
          </table>
          <label>reviewer <input id="reviewer" value="reviewer"></label>
          <button type="submit">Submit corrections</button>
        </form>
      </div>
      <section class="validation-report"><h3>Failing checks</h3>${checksHtml}</section>
      <section class="audit"><h3>Audit trail</h3><ul>${auditHtml.join("")}</ul></section>
    </div>`;
}

export function renderBannerHtml(message: string, retryable: boolean): string {
  return `<div class="banner">${escapeHtml(message)}${
    retryable ? ' <button id="retry">Retry</button>' : ""}</div>`;
}

/** Collect only the fields the reviewer actually changed. */
export function changedFields(invoice: InvoiceView,
                              edits: Record<string, string>):
    { field: string; new_value: string }[] {
  const out: { field: string; new_value: string }[] = [];
  for (const [field, value] of Object.entries(edits)) {
    const original = invoice.field_details[field]?.raw ?? "";
    if (value !== original) {
      out.push({ field, new_value: value });
    }
  }
  return out;
}
