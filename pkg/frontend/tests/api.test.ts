import { readFileSync } from "node:fs";
import { afterEach, describe, expect, it, vi } from "vitest";

import {
  ApiError,
  fetchAudit,
  fetchJob,
  fetchQueue,
  submitCorrections,
} from "../src/api.js";

function fixture(name: string): unknown {
  return JSON.parse(readFileSync(new URL(`./fixtures/${name}`, import.meta.url), "utf-8"));
}

function mockFetch(status: number, body: unknown) {
  const fn = vi.fn(async () => new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  }));
  vi.stubGlobal("fetch", fn);
  return fn;
}

afterEach(() => vi.unstubAllGlobals());

describe("fetchQueue", () => {
  it("returns items from the recorded payload", async () => {
    const payload = fixture("queue.json") as { items: unknown[] };
    const fn = mockFetch(200, payload);
    const items = await fetchQueue();
    expect(items).toEqual(payload.items);
    expect(fn).toHaveBeenCalledWith("/v1/review/queue", undefined);
  });

  it("passes the limit through", async () => {
    const fn = mockFetch(200, { items: [] });
    await fetchQueue(5);
    expect(fn).toHaveBeenCalledWith("/v1/review/queue?limit=5", undefined);
  });
});

describe("fetchJob / fetchAudit", () => {
  it("returns the job view unchanged", async () => {
    const payload = fixture("job_needs_review.json") as { job_id: string };
    mockFetch(200, payload);
    const job = await fetchJob(payload.job_id);
    expect(job).toEqual(payload);
  });

  it("unwraps audit events", async () => {
    const payload = fixture("audit.json") as { events: unknown[] };
    mockFetch(200, payload);
    expect(await fetchAudit("j")).toEqual(payload.events);
  });
});

describe("submitCorrections", () => {
  it("POSTs the correction body", async () => {
    const payload = fixture("job_corrected.json");
    const fn = mockFetch(200, payload);
    const body = {
      reviewer: "rev-1",
      revision: 6,
      corrections: [{ field: "total_amount", new_value: "165.00" }],
    };
    const updated = await submitCorrections("job-1", body);
    expect(updated).toEqual(payload);
    const [url, init] = fn.mock.calls[0]!;
    expect(url).toBe("/v1/review/job-1/corrections");
    expect(init?.method).toBe("POST");
    expect(JSON.parse(init?.body as string)).toEqual(body);
  });

  it("surfaces NormalizationFailed with the field name", async () => {
    mockFetch(422, fixture("error_normalization.json"));
    const attempt = submitCorrections("job-1", {
      reviewer: "r", revision: 1,
      corrections: [{ field: "invoice_date", new_value: "31/02/2024" }],
    });
    await expect(attempt).rejects.toSatisfy((err: unknown) =>
      err instanceof ApiError
      && err.status === 422
      && err.body.code === "NormalizationFailed"
      && err.body.field === "invoice_date");
  });

  it("surfaces stale revisions as 409", async () => {
    mockFetch(409, fixture("error_stale.json"));
    const attempt = submitCorrections("job-1", {
      reviewer: "r", revision: 999,
      corrections: [{ field: "total_amount", new_value: "1.00" }],
    });
    await expect(attempt).rejects.toSatisfy((err: unknown) =>
      err instanceof ApiError && err.status === 409 && err.body.code === "StaleRevision");
  });

  it("keeps a usable error when the body is not JSON", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => new Response("boom", { status: 502 })));
    await expect(fetchQueue()).rejects.toSatisfy((err: unknown) =>
      err instanceof ApiError && err.body.code === "HTTP502");
  });
});
