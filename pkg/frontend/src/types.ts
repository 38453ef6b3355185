// Shapes mirror the review server's JSON API verbatim; snake_case keys
// are kept so payloads pass through without mapping layers.

export type Decision = "confirmed" | "rejected" | "unsure";

export const DECISIONS: readonly Decision[] = ["confirmed", "rejected", "unsure"];

/** One ranked candidate as served by GET /api/candidates. */
export interface CandidateView {
  rank: number;
  image: string;
  component_id: number;
  class_id: number;
  class_name: string;
  size: number;
  score: number;
  bbox: [number, number, number, number];
  crop_url: string;
  /** Latest verdict known to the server, null when undecided. */
  verdict: Decision | null;
}

/** Running counts as served by GET /api/stats. */
export interface SessionStats {
  confirmed: number;
  rejected: number;
  unsure: number;
  reviewed: number;
  total: number;
  /** confirmed / reviewed; null before the first verdict. */
  precision: number | null;
  /** confirmed / (confirmed + rejected); null when both are zero. */
  precision_excl_unsure: number | null;
}

/** Acknowledgement returned by POST /api/verdict. */
export interface VerdictAck {
  ok: boolean;
  verdict: {
    image: string;
    component_id: number;
    decision: Decision;
    reviewer: string;
    timestamp: number;
  };
  stats: SessionStats;
}

/** A verdict that failed to reach the server and awaits retry. */
export interface PendingVerdict {
  image: string;
  component_id: number;
  decision: Decision;
}

export interface Banner {
  kind: "error" | "retry";
  text: string;
}
