/** Session state machine: one controller drives the whole page.
 *
 * The gateway is the source of truth. This class mirrors its snapshot,
 * advances the loop automatically (expand after create, train once a batch
 * resolves, select once training lands), and polls at a fixed cadence while
 * the server works in the background. Each background step is triggered at
 * most once per (phase, round); a step that failed stays un-triggered until
 * the user asks for a retry, so a permanently failing operation is never
 * hammered. Errors carry the (phase, round) they happened in and clear on
 * their own once the loop demonstrably moves past that point.
 */

import type { Api } from "./api.js";
import { ApiError } from "./api.js";
import { BatchRater } from "./rater.js";
import type {
  HealthResponse,
  ItemRef,
  Label,
  MetricsRow,
  Phase,
  SessionConfigOverrides,
  SessionSummary,
  Snapshot,
} from "./types.js";

export const POLL_INTERVAL_MS = 1000;

export interface ControllerDeps {
  api: Api;
  now(): number;
  setTimeoutFn(fn: () => void, ms: number): unknown;
  clearTimeoutFn(handle: unknown): void;
  random(): number;
  onChange(state: AppState): void;
  /** Called once a session id (and rater id) exist, e.g. to update the URL. */
  onSessionEstablished?(sessionId: string, raterId: string): void;
  /** Override the keypress throttle window (tests drive a fake clock). */
  rateMinIntervalMs?: number;
}

export interface BatchViewState {
  round: number;
  total: number;
  rated: number;
  acked: number;
  staged: number;
  inFlight: number;
  current: ItemRef | null;
  fatal: boolean;
}

export interface AppState {
  screen: "form" | "session";
  health: HealthResponse | null;
  sessions: SessionSummary[];
  formError: string | null;
  creating: boolean;
  sessionId: string | null;
  raterId: string | null;
  conceptName: string | null;
  phase: Phase | null;
  round: number;
  votesRequired: number;
  batch: BatchViewState | null;
  /** This rater voted everything, but the batch needs more votes. */
  waiting: boolean;
  metrics: MetricsRow[];
  resolvedLabels: number;
  resolvedPositive: number;
  resolvedNegative: number;
  ledgerRecords: number;
  clampEvents: string[];
  /** Failure reported by the gateway's background work, if any. */
  lastError: string | null;
  /** Failure from a call this page made, if any. */
  error: string | null;
  notice: string | null;
  canRetry: boolean;
}

export class SessionController {
  private readonly deps: ControllerDeps;

  private health: HealthResponse | null = null;
  private sessions: SessionSummary[] = [];
  private formError: string | null = null;
  private creating = false;

  private sessionId: string | null = null;
  private raterId: string | null = null;
  private snapshot: Snapshot | null = null;
  private phaseHint: Phase | null = null;
  private rater: BatchRater | null = null;
  private waiting = false;
  private loadingBatch = false;

  private pollHandle: unknown = null;
  private readonly triggered = new Set<string>();
  private error: string | null = null;
  private errorContext: string | null = null;
  private errorTransport = false;
  private notice: string | null = null;
  private stopped = false;

  constructor(deps: ControllerDeps) {
    this.deps = deps;
  }

  get state(): AppState {
    const snap = this.snapshot;
    const phase = this.phaseHint ?? snap?.phase ?? null;
    const rater = this.rater;
    return {
      screen: this.sessionId === null ? "form" : "session",
      health: this.health,
      sessions: this.sessions,
      formError: this.formError,
      creating: this.creating,
      sessionId: this.sessionId,
      raterId: this.raterId,
      conceptName: snap?.concept.name ?? null,
      phase,
      round: snap?.round ?? 0,
      votesRequired: snap?.votes_required ?? 1,
      batch: rater
        ? {
            round: rater.round,
            total: rater.total,
            rated: rater.ratedCount,
            acked: rater.ackedCount,
            staged: rater.stagedCount,
            inFlight: rater.inFlightCount,
            current: rater.current,
            fatal: rater.isFatal,
          }
        : null,
      waiting: this.waiting,
      metrics: snap?.metrics ?? [],
      resolvedLabels: snap?.resolved_labels ?? 0,
      resolvedPositive: snap?.resolved_positive ?? 0,
      resolvedNegative: snap?.resolved_negative ?? 0,
      ledgerRecords: snap?.ledger_records ?? 0,
      clampEvents: snap?.clamp_events ?? [],
      lastError: snap?.last_error ?? null,
      error: this.error,
      notice: this.notice,
      canRetry:
        (rater?.isFatal ?? false) ||
        ((phase === "defining" || phase === "training" || phase === "selecting") &&
          ((snap?.last_error ?? null) !== null || this.error !== null)),
    };
  }

  private emit(): void {
    this.deps.onChange(this.state);
  }

  /** Populate the concept form screen (gateway info, resumable sessions). */
  async loadFormData(): Promise<void> {
    try {
      this.health = await this.deps.api.health();
    } catch {
      this.health = null;
    }
    try {
      this.sessions = await this.deps.api.listSessions();
    } catch {
      this.sessions = [];
    }
    this.emit();
  }

  /** Create a session from the concept form and enter the loop. */
  async create(
    name: string,
    positivePhrases: string[],
    negativePhrases: string[],
    overrides: SessionConfigOverrides = {},
  ): Promise<void> {
    const trimmed = name.trim();
    if (trimmed === "") {
      this.formError = "Concept name is required.";
      this.emit();
      return;
    }
    this.formError = null;
    this.creating = true;
    this.emit();
    try {
      const created = await this.deps.api.createSession(
        {
          name: trimmed,
          positive_phrases: positivePhrases.map((p) => p.trim()).filter((p) => p !== ""),
          negative_phrases: negativePhrases.map((p) => p.trim()).filter((p) => p !== ""),
        },
        overrides,
      );
      this.creating = false;
      this.establish(created.session_id, null);
    } catch (err) {
      this.creating = false;
      this.formError = messageOf(err);
      this.emit();
      return;
    }
    await this.refresh();
  }

  /** Rejoin an existing session, e.g. after a reload. */
  async resume(sessionId: string, raterId?: string): Promise<void> {
    this.establish(sessionId, raterId ?? null);
    await this.refresh();
  }

  private establish(sessionId: string, raterId: string | null): void {
    this.sessionId = sessionId;
    this.raterId = raterId ?? this.raterId ?? `rater-${randomHex(this.deps.random, 8)}`;
    this.deps.onSessionEstablished?.(sessionId, this.raterId);
    this.emit();
  }

  /** Pull a fresh snapshot and react to whatever phase it shows. */
  async refresh(): Promise<void> {
    if (this.sessionId === null || this.stopped) {
      return;
    }
    let snap: Snapshot;
    try {
      snap = await this.deps.api.snapshot(this.sessionId);
    } catch (err) {
      this.setError(err, { transport: true });
      if (this.shouldPoll()) {
        this.startPolling(); // one failed poll must not end the watch
      }
      this.emit();
      return;
    }
    this.adopt(snap);
  }

  private adopt(snap: Snapshot): void {
    this.snapshot = snap;
    this.phaseHint = null;
    this.clearStaleError();
    switch (snap.phase) {
      case "defining":
        this.stopPolling();
        this.triggerOnce("expand:0", async () => {
          await this.deps.api.expand(this.sessionId as string);
          await this.refresh();
        });
        break;
      case "rating":
        this.stopPolling();
        void this.ensureBatch(snap);
        break;
      case "training":
        this.rater = null;
        this.waiting = false;
        this.triggerOnce(`train:${snap.round}`, () =>
          this.deps.api.train(this.sessionId as string),
        );
        this.startPolling();
        break;
      case "selecting":
        this.rater = null;
        this.waiting = false;
        this.triggerOnce(`select:${snap.round}`, () =>
          this.deps.api.select(this.sessionId as string),
        );
        this.startPolling();
        break;
      case "done":
        this.rater = null;
        this.waiting = false;
        this.stopPolling();
        break;
    }
    this.emit();
  }

  /** Build the rating queue for the snapshot's round, once per round. */
  private async ensureBatch(snap: Snapshot): Promise<void> {
    if (this.loadingBatch) {
      return;
    }
    if (this.rater !== null && this.rater.round === snap.round) {
      return;
    }
    const sessionId = this.sessionId as string;
    const raterId = this.raterId as string;
    this.loadingBatch = true;
    try {
      const batch = await this.deps.api.batch(sessionId, raterId);
      if (batch.phase !== "rating" || batch.round !== snap.round) {
        void this.refresh(); // the phase moved while we were fetching
        return;
      }
      if (batch.items.length === 0) {
        // Everything is voted on from this rater's side; other raters
        // still owe votes. Watch for the batch to resolve.
        this.rater = null;
        this.waiting = true;
        this.startPolling();
        return;
      }
      this.waiting = false;
      this.rater = new BatchRater(
        batch,
        {
          submit: async (votes, key) => {
            const r = await this.deps.api.submitRatings(sessionId, raterId, votes, key);
            return { resolved: r.resolved, phase: r.phase };
          },
          fetchBatch: () => this.deps.api.batch(sessionId, raterId),
          now: this.deps.now,
          sleep: (ms) => new Promise((resolve) => this.deps.setTimeoutFn(resolve, ms)),
          newKey: () => `${raterId}-${randomHex(this.deps.random, 16)}`,
          onChange: () => this.emit(),
          onResolved: (phase) => {
            this.rater = null;
            this.waiting = false;
            this.phaseHint = phase; // show the training banner immediately
            this.emit();
            void this.refresh();
          },
          onFatal: (err) => {
            this.setError(err);
            this.emit();
          },
          minIntervalMs: this.deps.rateMinIntervalMs,
        },
        Math.max(0, snap.pending_count - batch.items.length),
      );
    } catch (err) {
      this.setError(err);
    } finally {
      this.loadingBatch = false;
      this.emit();
    }
  }

  rate(label: Label): void {
    if (this.rater === null) {
      return;
    }
    if (this.rater.rate(label) === "ok") {
      this.notice = null;
      this.emit();
    }
  }

  undo(): void {
    if (this.rater === null) {
      return;
    }
    this.notice = this.rater.undo()
      ? null
      : "Nothing to undo - earlier ratings are already submitted.";
    this.emit();
  }

  /** Re-attempt the failed step for the current phase. */
  async retry(): Promise<void> {
    this.error = null;
    this.errorContext = null;
    this.errorTransport = false;
    if (this.rater?.isFatal) {
      this.rater.retry();
      return;
    }
    const phase = this.snapshot?.phase;
    if (phase === "defining") {
      this.triggered.delete("expand:0");
    } else if (phase === "training") {
      this.triggered.delete(`train:${this.snapshot?.round ?? 0}`);
    } else if (phase === "selecting") {
      this.triggered.delete(`select:${this.snapshot?.round ?? 0}`);
    }
    await this.refresh();
  }

  /** Stop timers; the controller is dead afterwards (used by tests). */
  stop(): void {
    this.stopped = true;
    this.stopPolling();
  }

  private triggerOnce(key: string, action: () => Promise<unknown>): void {
    if (this.triggered.has(key)) {
      return;
    }
    this.triggered.add(key);
    void action().catch((err) => {
      if (err instanceof ApiError) {
        if (err.code === "busy") {
          return; // the operation is already running server-side
        }
        if (err.code === "phase_violation") {
          void this.refresh(); // the server is already past this phase
          return;
        }
        if (err.status === 0) {
          // Transient transport failure: let the next poll re-fire it and
          // the next successful fetch clear the message.
          this.triggered.delete(key);
          this.setError(err, { transport: true });
          this.emit();
          return;
        }
      }
      this.setError(err);
      this.emit();
    });
  }

  private shouldPoll(): boolean {
    const phase = this.snapshot?.phase;
    return this.waiting || phase === "training" || phase === "selecting";
  }

  private startPolling(): void {
    if (this.pollHandle !== null || this.stopped) {
      return;
    }
    this.pollHandle = this.deps.setTimeoutFn(() => {
      this.pollHandle = null;
      void this.refresh();
    }, POLL_INTERVAL_MS);
  }

  private stopPolling(): void {
    if (this.pollHandle !== null) {
      this.deps.clearTimeoutFn(this.pollHandle);
      this.pollHandle = null;
    }
  }

  private context(): string {
    const snap = this.snapshot;
    return snap === null ? "start" : `${snap.phase}:${snap.round}`;
  }

  private setError(err: unknown, opts: { transport?: boolean } = {}): void {
    this.error = messageOf(err);
    this.errorContext = this.context();
    this.errorTransport = opts.transport ?? false;
  }

  /**
   * Drop an error once it stops describing reality: transport errors clear
   * on the next successful fetch, action errors once the loop has moved
   * past the (phase, round) they happened in.
   */
  private clearStaleError(): void {
    if (this.error !== null && (this.errorTransport || this.errorContext !== this.context())) {
      this.error = null;
      this.errorContext = null;
      this.errorTransport = false;
    }
  }
}

export function messageOf(err: unknown): string {
  if (err instanceof ApiError) {
    return err.message;
  }
  return err instanceof Error ? err.message : String(err);
}

export function randomHex(random: () => number, chars: number): string {
  let out = "";
  for (let i = 0; i < chars; i += 1) {
    out += Math.floor(random() * 16).toString(16);
  }
  return out;
}
