/** Client-side rating queue for one batch.
 *
 * Ratings stage locally as the user moves through the batch, so "u" can
 * undo any vote that has not yet been sent. Staged votes flush to the
 * gateway in chunks, each chunk under one idempotency key that is reused on
 * every retry - a duplicate trigger or a retried request can therefore
 * never produce a second ledger record. Only one submission is ever in
 * flight, because the gateway rejects concurrent writers per session.
 */

import type { BatchResponse, ItemRef, Label, Phase, Vote } from "./types.js";
import { ApiError, isRetryable } from "./api.js";

/** Staged votes flush once more than CHUNK + TAIL of them accumulate... */
export const SUBMIT_CHUNK = 20;
/** ...keeping at least this many unsent so recent ratings stay undoable. */
export const UNDO_TAIL = 5;
/** Accepted rating keypresses are at least this far apart. */
export const RATE_MIN_INTERVAL_MS = 150;
/** Delay between retries of a failed submission. */
export const RETRY_DELAY_MS = 500;

export type RateOutcome = "ok" | "throttled" | "no-item";

export interface RaterDeps {
  submit(votes: Vote[], idempotencyKey: string): Promise<{ resolved: boolean; phase: Phase }>;
  /** Re-fetches the rater's remaining batch after a ledger conflict. */
  fetchBatch(): Promise<BatchResponse>;
  now(): number;
  sleep(ms: number): Promise<void>;
  newKey(): string;
  onChange(): void;
  /** The batch resolved server-side; `phase` is the server's new phase. */
  onResolved(phase: Phase): void;
  /** Submission failed with an error that retrying cannot fix. */
  onFatal(error: unknown): void;
  minIntervalMs?: number;
  chunkSize?: number;
  undoTail?: number;
}

export class BatchRater {
  readonly round: number;
  /** Batch size when the rater saw it first; the progress denominator. */
  readonly total: number;

  private items: ItemRef[];
  private cursor = 0;
  private staged: Vote[] = [];
  private inFlight: { votes: Vote[]; key: string } | null = null;
  private acked: number;
  private lastRateAt = Number.NEGATIVE_INFINITY;
  private pumping = false;
  private fatal = false;
  private resolvedNotified = false;
  private readonly deps: Required<Pick<RaterDeps, "minIntervalMs" | "chunkSize" | "undoTail">> &
    RaterDeps;

  constructor(batch: BatchResponse, deps: RaterDeps, alreadyVoted = 0) {
    this.items = [...batch.items];
    this.round = batch.round;
    this.total = batch.items.length + alreadyVoted;
    this.acked = alreadyVoted;
    this.deps = {
      ...deps,
      // ?? rather than spread-ordering: callers pass these keys explicitly
      // as undefined, which a spread would let clobber the defaults.
      minIntervalMs: deps.minIntervalMs ?? RATE_MIN_INTERVAL_MS,
      chunkSize: deps.chunkSize ?? SUBMIT_CHUNK,
      undoTail: deps.undoTail ?? UNDO_TAIL,
    };
  }

  /** The item awaiting a rating, or null once the batch is rated through. */
  get current(): ItemRef | null {
    return this.cursor < this.items.length ? (this.items[this.cursor] ?? null) : null;
  }

  get stagedCount(): number {
    return this.staged.length;
  }

  get inFlightCount(): number {
    return this.inFlight ? this.inFlight.votes.length : 0;
  }

  /** Votes the gateway has acknowledged (including pre-reload ones). */
  get ackedCount(): number {
    return this.acked;
  }

  /** Position for "k / N" progress: ratings made, staged or saved. */
  get ratedCount(): number {
    return this.acked + this.inFlightCount + this.staged.length;
  }

  get isFatal(): boolean {
    return this.fatal;
  }

  /** True once every vote is sent and the final submission acknowledged. */
  get isSettled(): boolean {
    return this.current === null && this.staged.length === 0 && this.inFlight === null;
  }

  rate(label: Label): RateOutcome {
    const item = this.current;
    if (item === null) {
      return "no-item";
    }
    const t = this.deps.now();
    if (t - this.lastRateAt < this.deps.minIntervalMs) {
      return "throttled";
    }
    this.lastRateAt = t;
    this.staged.push({ item_id: item.id, label });
    this.cursor += 1;
    this.deps.onChange();
    void this.pump();
    return "ok";
  }

  /** Un-stages the latest unsent vote; false when nothing is undoable. */
  undo(): boolean {
    if (this.staged.length === 0) {
      return false;
    }
    this.staged.pop();
    this.cursor -= 1;
    this.deps.onChange();
    return true;
  }

  /** Resume submissions after a fatal error. */
  retry(): void {
    if (this.fatal) {
      this.fatal = false;
      this.deps.onChange();
      void this.pump();
    }
  }

  /** Oldest staged votes that are due for submission, if any. */
  private takeReady(): Vote[] | null {
    if (this.cursor >= this.items.length) {
      // Batch rated through: flush everything that remains.
      return this.staged.length > 0 ? this.staged.splice(0) : null;
    }
    const over = this.staged.length - this.deps.undoTail;
    if (over >= this.deps.chunkSize) {
      return this.staged.splice(0, over);
    }
    return null;
  }

  private async pump(): Promise<void> {
    if (this.pumping || this.fatal) {
      return;
    }
    this.pumping = true;
    try {
      while (!this.fatal) {
        if (this.inFlight === null) {
          const votes = this.takeReady();
          if (votes === null) {
            break;
          }
          this.inFlight = { votes, key: this.deps.newKey() };
          this.deps.onChange();
        }
        const { votes, key } = this.inFlight;
        try {
          const response = await this.deps.submit(votes, key);
          this.inFlight = null;
          this.acked += votes.length;
          this.deps.onChange();
          if (response.resolved) {
            this.notifyResolved(response.phase);
            break;
          }
        } catch (err) {
          if (isRetryable(err)) {
            await this.deps.sleep(RETRY_DELAY_MS);
            continue; // same chunk, same idempotency key
          }
          if (
            err instanceof ApiError &&
            (err.code === "ledger_conflict" || err.code === "phase_violation")
          ) {
            await this.resync();
            continue;
          }
          this.fatal = true;
          this.deps.onChange();
          this.deps.onFatal(err);
          break;
        }
      }
    } finally {
      this.pumping = false;
    }
  }

  /**
   * The gateway disagrees about what this rater may vote on (another tab
   * submitted, or the batch resolved under us). Drop local staging and
   * rebuild from the server's view of the remaining items.
   */
  private async resync(): Promise<void> {
    let fresh: BatchResponse;
    try {
      fresh = await this.deps.fetchBatch();
    } catch (err) {
      if (isRetryable(err)) {
        await this.deps.sleep(RETRY_DELAY_MS);
        return;
      }
      this.fatal = true;
      this.deps.onChange();
      this.deps.onFatal(err);
      return;
    }
    this.inFlight = null;
    this.staged = [];
    if (fresh.phase !== "rating" || fresh.round !== this.round) {
      this.items = [];
      this.cursor = 0;
      this.acked = this.total;
      this.deps.onChange();
      this.notifyResolved(fresh.phase);
      return;
    }
    this.items = [...fresh.items];
    this.cursor = 0;
    this.acked = this.total - fresh.items.length;
    this.deps.onChange();
  }

  private notifyResolved(phase: Phase): void {
    if (!this.resolvedNotified) {
      this.resolvedNotified = true;
      this.deps.onResolved(phase);
    }
  }
}
