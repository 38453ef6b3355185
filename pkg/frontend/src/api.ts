// Thin typed client for the review server. The fetch function is
// injectable so tests can run against a scripted fake.

import type { CandidateView, Decision, SessionStats, VerdictAck } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** The server answered with a 4xx/5xx status. */
export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`server ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body === "object") {
      const detail = (body as Record<string, unknown>).error
        ?? (body as Record<string, unknown>).detail;
      if (typeof detail === "string") return detail;
    }
  } catch {
    // non-JSON error body; fall through to the status text
  }
  return res.statusText || "request failed";
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
  return res.json() as Promise<T>;
}

export class ReviewApi {
  private readonly fetchFn: FetchLike;

  constructor(fetchFn?: FetchLike, private readonly base: string = "") {
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  candidates(): Promise<CandidateView[]> {
    return this.fetchFn(`${this.base}/api/candidates`).then((r) => asJson<CandidateView[]>(r));
  }

  stats(): Promise<SessionStats> {
    return this.fetchFn(`${this.base}/api/stats`).then((r) => asJson<SessionStats>(r));
  }

  submitVerdict(
    image: string,
    componentId: number,
    decision: Decision,
    reviewer?: string,
  ): Promise<VerdictAck> {
    const body: Record<string, unknown> = { image, component_id: componentId, decision };
    if (reviewer !== undefined) body.reviewer = reviewer;
    return this.fetchFn(`${this.base}/api/verdict`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => asJson<VerdictAck>(r));
  }

  cropUrl(candidate: CandidateView): string {
    return this.base + candidate.crop_url;
  }
}
