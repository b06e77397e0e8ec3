/**
 * Typed client for the review-relevant slice of the REST API.
 *
 * The UI is a pure consumer: no endpoint result is transformed beyond JSON
 * parsing, and error bodies surface with their server-assigned code.
 */

import type { ApiErrorBody, AuditEventView, JobView, QueueItem } from "./model.js";

export class ApiError extends Error {
  constructor(public status: number, public body: ApiErrorBody) {
    super(`${body.code}: ${body.message}`);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(path, init);
  if (!response.ok) {
    let body: ApiErrorBody = {
      code: `HTTP${response.status}`,
      message: response.statusText,
    };
    try {
      const parsed = await response.json();
      if (parsed && parsed.error) body = parsed.error;
    } catch {
      // non-JSON error body; keep the status fallback
    }
    throw new ApiError(response.status, body);
  }
  return response.json() as Promise<T>;
}

export async function fetchQueue(limit?: number): Promise<QueueItem[]> {
  const suffix = limit ? `?limit=${limit}` : "";
  const data = await request<{ items: QueueItem[] }>(`/v1/review/queue${suffix}`);
  return data.items;
}

export function fetchJob(jobId: string): Promise<JobView> {
  return request<JobView>(`/v1/invoices/${jobId}`);
}

export async function fetchAudit(jobId: string): Promise<AuditEventView[]> {
  const data = await request<{ events: AuditEventView[] }>(
    `/v1/invoices/${jobId}/audit`);
  return data.events;
}

export interface CorrectionRequest {
  reviewer: string;
  revision: number;
  corrections: { field: string; new_value: string; note?: string }[];
}

export function submitCorrections(jobId: string,
                                  body: CorrectionRequest): Promise<JobView> {
  return request<JobView>(`/v1/review/${jobId}/corrections`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
}
