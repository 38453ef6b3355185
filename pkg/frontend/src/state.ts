// Session state for the review queue. Pure logic, no DOM: the renderer
// subscribes to one Session instance and redraws after every mutation.
//
// Two invariants the server owns and this class must never break:
//  - candidates stay in the server's score-descending rank order; nothing
//    here ever re-sorts them, filtering only hides rows;
//  - the server is the state of record: stats adopt the server's numbers
//    on every acknowledgement, so after any settled verdict sequence the
//    UI equals a fresh GET /api/stats.

import { ApiError, ReviewApi } from "./api.js";
import type { Banner, CandidateView, Decision, PendingVerdict, SessionStats } from "./types.js";

export function emptyStats(): SessionStats {
  return {
    confirmed: 0,
    rejected: 0,
    unsure: 0,
    reviewed: 0,
    total: 0,
    precision: null,
    precision_excl_unsure: null,
  };
}

/**
 * Local stats update applied while a POST is in flight, using the same
 * latest-wins arithmetic as the server; the acknowledgement's stats
 * replace it the moment the server answers.
 */
export function bumpStats(
  stats: SessionStats,
  prev: Decision | null,
  next: Decision,
): SessionStats {
  const s: SessionStats = { ...stats };
  if (prev !== null) s[prev] -= 1;
  else s.reviewed += 1;
  s[next] += 1;
  s.precision = s.reviewed > 0 ? s.confirmed / s.reviewed : null;
  const hard = s.confirmed + s.rejected;
  s.precision_excl_unsure = hard > 0 ? s.confirmed / hard : null;
  return s;
}

export interface ClassGroup {
  class_id: number;
  class_name: string;
}

export class Session {
  candidates: CandidateView[] = [];
  stats: SessionStats = emptyStats();
  /** Active class-id filter; null shows every class. */
  filter: ReadonlySet<number> | null = null;
  /** Index into visible(); pinned at 0 while the queue is empty. */
  cursor = 0;
  banner: Banner | null = null;
  /** Verdicts that failed with a network error, oldest first. */
  pending: PendingVerdict[] = [];

  constructor(
    private readonly api: ReviewApi,
    private readonly reviewer?: string,
  ) {}

  /** Fetch candidates and stats; lands on the first undecided candidate. */
  async load(): Promise<void> {
    this.candidates = await this.api.candidates();
    this.stats = await this.api.stats();
    this.cursor = this.firstUndecidedIndex() ?? 0;
  }

  /** Candidates passing the class filter, in server rank order. */
  visible(): CandidateView[] {
    if (this.filter === null) return this.candidates;
    const filter = this.filter;
    return this.candidates.filter((c) => filter.has(c.class_id));
  }

  current(): CandidateView | null {
    return this.visible()[this.cursor] ?? null;
  }

  /** Every visible candidate carries a verdict (vacuously true when empty). */
  complete(): boolean {
    return this.visible().every((c) => c.verdict !== null);
  }

  firstUndecidedIndex(): number | null {
    const i = this.visible().findIndex((c) => c.verdict === null);
    return i === -1 ? null : i;
  }

  /** Distinct classes in first-seen rank order, for the filter chips. */
  classGroups(): ClassGroup[] {
    const seen = new Set<number>();
    const out: ClassGroup[] = [];
    for (const c of this.candidates) {
      if (!seen.has(c.class_id)) {
        seen.add(c.class_id);
        out.push({ class_id: c.class_id, class_name: c.class_name });
      }
    }
    return out;
  }

  setFilter(classIds: Iterable<number> | null): void {
    this.filter = classIds === null ? null : new Set(classIds);
    this.cursor = this.firstUndecidedIndex() ?? 0;
  }

  next(): void {
    const n = this.visible().length;
    if (n > 0) this.cursor = Math.min(this.cursor + 1, n - 1);
  }

  prev(): void {
    if (this.cursor > 0) this.cursor -= 1;
  }

  goTo(index: number): void {
    const n = this.visible().length;
    if (n > 0) this.cursor = Math.max(0, Math.min(index, n - 1));
  }

  /**
   * Record a verdict for the current candidate.
   *
   * Success: adopt the server's stats, jump to the first undecided
   * candidate. Server refusal (4xx): drop the verdict locally and show
   * the server's reason inline. Network failure: keep the verdict, queue
   * it for retry, keep going.
   */
  async submit(decision: Decision): Promise<void> {
    const c = this.current();
    if (c === null) return;
    const prevVerdict = c.verdict;
    const prevStats = this.stats;
    c.verdict = decision;
    this.stats = bumpStats(prevStats, prevVerdict, decision);
    try {
      const ack = await this.api.submitVerdict(c.image, c.component_id, decision, this.reviewer);
      this.stats = ack.stats;
      if (this.banner?.kind === "error") this.banner = null;
      this.advance();
    } catch (err) {
      if (err instanceof ApiError) {
        c.verdict = prevVerdict;
        this.stats = prevStats;
        this.banner = { kind: "error", text: err.message };
      } else {
        this.pending.push({ image: c.image, component_id: c.component_id, decision });
        this.banner = {
          kind: "retry",
          text: `offline: ${this.pending.length} verdict(s) queued for retry`,
        };
        this.advance();
      }
    }
  }

  /**
   * Replay queued verdicts in order. Stops at the first network failure
   * (the rest stay queued); a server refusal drops that verdict and
   * reverts its candidate to undecided. Returns true when the queue is
   * empty afterwards.
   */
  async retryPending(): Promise<boolean> {
    let refused: ApiError | null = null;
    while (this.pending.length > 0) {
      const p = this.pending[0];
      try {
        const ack = await this.api.submitVerdict(p.image, p.component_id, p.decision, this.reviewer);
        this.stats = ack.stats;
        this.pending.shift();
      } catch (err) {
        if (err instanceof ApiError) {
          this.pending.shift();
          const cand = this.byKey(p.image, p.component_id);
          if (cand !== null) cand.verdict = null;
          refused = err;
        } else {
          this.banner = {
            kind: "retry",
            text: `offline: ${this.pending.length} verdict(s) queued for retry`,
          };
          return false;
        }
      }
    }
    this.banner = refused === null ? null : { kind: "error", text: refused.message };
    return true;
  }

  /** Re-adopt the server's stats (used after reconnects). */
  async reconcile(): Promise<void> {
    this.stats = await this.api.stats();
  }

  byKey(image: string, componentId: number): CandidateView | null {
    return (
      this.candidates.find((c) => c.image === image && c.component_id === componentId) ?? null
    );
  }

  private advance(): void {
    const i = this.firstUndecidedIndex();
    if (i !== null) this.cursor = i;
  }
}
