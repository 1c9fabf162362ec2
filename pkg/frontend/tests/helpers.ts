/** Test doubles: an in-memory gateway faithful to the real semantics.
 *
 * The fake reproduces the behaviors the client is built against:
 * idempotency-key replay, rejection of duplicate votes, refusal of
 * concurrent writes, the phase machine, and per-rater batch filtering.
 * Training and selection complete only when the test says so, mirroring
 * the real background threads.
 */

import type { Api } from "../src/api.js";
import { ApiError } from "../src/api.js";
import type {
  BatchResponse,
  ConceptRequest,
  CreateSessionResponse,
  HealthResponse,
  ItemRef,
  Label,
  MetricsRow,
  Phase,
  RatingsResponse,
  SessionConfigOverrides,
  SessionSummary,
  Snapshot,
  StartedResponse,
  Vote,
} from "../src/types.js";

export function makeItems(count: number, offset = 0): ItemRef[] {
  return Array.from({ length: count }, (_, i) => {
    const id = 101 + offset + i;
    return { id, url: `https://img.test/${id}.jpg`, image_path: `/items/${id}/image` };
  });
}

export function metricsRow(round: number, samplesRated: number, aucPr: number | null): MetricsRow {
  return {
    round,
    samples_rated: samplesRated,
    auc_pr: aucPr,
    auc_roc: aucPr,
    f1: 0.5,
    accuracy: 0.5,
    threshold: 0.5,
    n_pos: 10,
    n_neg: 10,
  };
}

interface LedgerRecord {
  item_id: number;
  label: Label;
  rater_id: string;
  round: number;
}

export class FakeGateway implements Api {
  sessionId = "fake-session";
  conceptName = "test concept";
  phase: Phase = "defining";
  round = 0;
  rounds = 1;
  votesRequired = 1;
  pending: ItemRef[] = [];
  ledger: LedgerRecord[] = [];
  resolved = new Map<number, boolean>();
  metricsRows: MetricsRow[] = [];
  trainedRounds: number[] = [];
  lastError: string | null = null;
  clampEvents: string[] = [];

  /** Batch to install when the session expands. */
  expansionItems: ItemRef[] = makeItems(5);
  /** Batch to install when a selection completes. */
  nextSelection: ItemRef[] = makeItems(5, 1000);

  idempotent = new Map<string, RatingsResponse>();
  submitCalls: { votes: Vote[]; key: string }[] = [];
  createCalls: { concept: ConceptRequest; config: SessionConfigOverrides }[] = [];
  expandCalls = 0;
  trainCalls = 0;
  selectCalls = 0;
  snapshotCalls = 0;
  batchCalls = 0;

  /** Fail the next n submits before the gateway sees them (request lost). */
  failSubmitsBefore = 0;
  /** Process the next n submits fully, then fail (response lost). */
  failSubmitsAfter = 0;
  /** Reject the next n submits with 409 busy. */
  busySubmits = 0;
  /** Fail the next n snapshot reads with a network error. */
  failSnapshots = 0;
  /** Reject the next n train calls with 409 busy. */
  busyTrains = 0;

  private writing = false;

  // -- Api -----------------------------------------------------------------

  async health(): Promise<HealthResponse> {
    return {
      status: "ok",
      version: "0.0-test",
      corpus_count: 800,
      dim: 16,
      index_kind: "exact",
      kernels: "fake",
    };
  }

  async listSessions(): Promise<SessionSummary[]> {
    return [
      {
        session_id: this.sessionId,
        concept: this.conceptName,
        phase: this.phase,
        round: this.round,
      },
    ];
  }

  async createSession(
    concept: ConceptRequest,
    config: SessionConfigOverrides,
  ): Promise<CreateSessionResponse> {
    this.createCalls.push({ concept, config });
    this.conceptName = concept.name;
    if (typeof config.rounds === "number") {
      this.rounds = config.rounds;
    }
    this.phase = "defining";
    return { session_id: this.sessionId, phase: this.phase };
  }

  async snapshot(sessionId: string): Promise<Snapshot> {
    this.requireSession(sessionId);
    this.snapshotCalls += 1;
    if (this.failSnapshots > 0) {
      this.failSnapshots -= 1;
      throw new ApiError(0, "network", "connection refused");
    }
    let positive = 0;
    for (const value of this.resolved.values()) {
      if (value) {
        positive += 1;
      }
    }
    return {
      session_id: this.sessionId,
      phase: this.phase,
      round: this.round,
      concept: { name: this.conceptName, positive_phrases: [this.conceptName], negative_phrases: [] },
      config: {},
      pending_count: this.pending.length,
      ledger_records: this.ledger.length,
      resolved_labels: this.resolved.size,
      resolved_positive: positive,
      resolved_negative: this.resolved.size - positive,
      trained_rounds: [...this.trainedRounds],
      votes_required: this.votesRequired,
      clamp_events: [...this.clampEvents],
      metrics: this.metricsRows.map((r) => ({ ...r })),
      last_error: this.lastError,
    };
  }

  async expand(sessionId: string): Promise<unknown> {
    this.requireSession(sessionId);
    this.expandCalls += 1;
    if (this.phase !== "defining") {
      throw new ApiError(409, "phase_violation", "already expanded", this.phase);
    }
    this.pending = [...this.expansionItems];
    this.phase = "rating";
    this.round = 0;
    return { phase: this.phase, round: this.round, pending: [] };
  }

  async batch(sessionId: string, raterId: string): Promise<BatchResponse> {
    this.requireSession(sessionId);
    this.batchCalls += 1;
    const voted = new Set(
      this.ledger
        .filter((r) => r.round === this.round && r.rater_id === raterId)
        .map((r) => r.item_id),
    );
    return {
      phase: this.phase,
      round: this.round,
      votes_required: this.votesRequired,
      items: this.pending.filter((i) => !voted.has(i.id)),
    };
  }

  async submitRatings(
    sessionId: string,
    raterId: string,
    votes: Vote[],
    idempotencyKey: string,
  ): Promise<RatingsResponse> {
    this.requireSession(sessionId);
    this.submitCalls.push({ votes: votes.map((v) => ({ ...v })), key: idempotencyKey });
    if (this.busySubmits > 0) {
      this.busySubmits -= 1;
      throw new ApiError(409, "busy", "session has an operation in progress");
    }
    if (this.failSubmitsBefore > 0) {
      this.failSubmitsBefore -= 1;
      throw new ApiError(0, "network", "request lost");
    }
    if (this.writing) {
      throw new Error("overlapping submit: the client must serialize writes");
    }
    this.writing = true;
    try {
      const replay = this.idempotent.get(idempotencyKey);
      if (replay !== undefined) {
        return { ...replay };
      }
      if (this.phase !== "rating") {
        throw new ApiError(409, "phase_violation", `phase is ${this.phase}`, this.phase);
      }
      const pendingIds = new Set(this.pending.map((i) => i.id));
      const cast = new Set(
        this.ledger
          .filter((r) => r.round === this.round)
          .map((r) => `${r.item_id}:${r.rater_id}`),
      );
      for (const vote of votes) {
        if (!pendingIds.has(vote.item_id)) {
          throw new ApiError(409, "ledger_conflict", `item ${vote.item_id} is not pending`);
        }
        if (cast.has(`${vote.item_id}:${raterId}`)) {
          throw new ApiError(
            409,
            "ledger_conflict",
            `rater already voted on item ${vote.item_id} this round`,
          );
        }
        cast.add(`${vote.item_id}:${raterId}`);
      }
      for (const vote of votes) {
        this.ledger.push({
          item_id: vote.item_id,
          label: vote.label,
          rater_id: raterId,
          round: this.round,
        });
      }
      const resolved = this.tryResolve();
      const response: RatingsResponse = {
        accepted: votes.length,
        resolved,
        phase: this.phase,
        round: this.round,
      };
      this.idempotent.set(idempotencyKey, { ...response });
      if (this.failSubmitsAfter > 0) {
        this.failSubmitsAfter -= 1;
        throw new ApiError(0, "network", "response lost");
      }
      return response;
    } finally {
      this.writing = false;
    }
  }

  async train(sessionId: string): Promise<StartedResponse> {
    this.requireSession(sessionId);
    this.trainCalls += 1;
    if (this.busyTrains > 0) {
      this.busyTrains -= 1;
      throw new ApiError(409, "busy", "session has an operation in progress");
    }
    if (this.phase !== "training") {
      throw new ApiError(409, "phase_violation", `phase is ${this.phase}`, this.phase);
    }
    return { phase: this.phase, round: this.round, status: "started" };
  }

  async select(sessionId: string): Promise<StartedResponse> {
    this.requireSession(sessionId);
    this.selectCalls += 1;
    if (this.phase !== "selecting") {
      throw new ApiError(409, "phase_violation", `phase is ${this.phase}`, this.phase);
    }
    return { phase: this.phase, round: this.round, status: "started" };
  }

  async metrics(sessionId: string): Promise<MetricsRow[]> {
    this.requireSession(sessionId);
    return this.metricsRows.map((r) => ({ ...r }));
  }

  // -- test controls ---------------------------------------------------------

  /** Finish the background training work, as the real thread would. */
  completeTraining(row?: MetricsRow): void {
    if (this.phase !== "training") {
      throw new Error(`completeTraining in phase ${this.phase}`);
    }
    this.trainedRounds.push(this.round);
    if (row !== undefined) {
      this.metricsRows.push(row);
    }
    this.lastError = null;
    this.phase = this.round >= this.rounds ? "done" : "selecting";
  }

  /** Fail the background training work, leaving the phase unchanged. */
  failTraining(message: string): void {
    this.lastError = message;
  }

  /** Finish the background selection work with the preset next batch. */
  completeSelection(): void {
    if (this.phase !== "selecting") {
      throw new Error(`completeSelection in phase ${this.phase}`);
    }
    this.pending = [...this.nextSelection];
    this.round += 1;
    this.phase = "rating";
    this.lastError = null;
  }

  private tryResolve(): boolean {
    const byItem = new Map<number, Label[]>();
    for (const item of this.pending) {
      byItem.set(item.id, []);
    }
    for (const record of this.ledger) {
      if (record.round === this.round && byItem.has(record.item_id)) {
        byItem.get(record.item_id)?.push(record.label);
      }
    }
    for (const labels of byItem.values()) {
      if (labels.length < this.votesRequired) {
        return false;
      }
    }
    for (const [itemId, labels] of byItem) {
      const pos = labels.filter((l) => l === "positive").length;
      this.resolved.set(itemId, pos > labels.length - pos);
    }
    this.pending = [];
    this.phase = "training";
    return true;
  }

  private requireSession(sessionId: string): void {
    if (sessionId !== this.sessionId) {
      throw new ApiError(404, "unknown_session", `no session ${sessionId}`);
    }
  }
}

/** Delegate every Api method to the fake, with selected overrides. */
export function wrapApi(gw: FakeGateway, overrides: Partial<Api>): Api {
  return {
    health: () => gw.health(),
    listSessions: () => gw.listSessions(),
    createSession: (concept, config) => gw.createSession(concept, config),
    snapshot: (sid) => gw.snapshot(sid),
    expand: (sid) => gw.expand(sid),
    batch: (sid, raterId) => gw.batch(sid, raterId),
    submitRatings: (sid, raterId, votes, key) => gw.submitRatings(sid, raterId, votes, key),
    train: (sid) => gw.train(sid),
    select: (sid) => gw.select(sid),
    metrics: (sid) => gw.metrics(sid),
    ...overrides,
  };
}

/** Deterministic replacement for setTimeout/clearTimeout. */
export class ManualTimers {
  private queue: { id: number; fn: () => void; ms: number }[] = [];
  private nextId = 1;

  readonly set = (fn: () => void, ms: number): unknown => {
    const id = this.nextId;
    this.nextId += 1;
    this.queue.push({ id, fn, ms });
    return id;
  };

  readonly clear = (handle: unknown): void => {
    this.queue = this.queue.filter((t) => t.id !== handle);
  };

  get pending(): number {
    return this.queue.length;
  }

  /** Run the oldest scheduled callback. */
  fire(): void {
    const next = this.queue.shift();
    if (next === undefined) {
      throw new Error("no timer to fire");
    }
    next.fn();
  }
}

/** Let every chained microtask settle (no real time involved). */
export async function settle(ticks = 50): Promise<void> {
  for (let i = 0; i < ticks; i += 1) {
    await Promise.resolve();
  }
}

/** A clock the test moves by hand. */
export class ManualClock {
  t = 0;

  readonly now = (): number => this.t;

  advance(ms: number): void {
    this.t += ms;
  }
}

/** Counter-based stand-in for Math.random; collision-free keys. */
export function sequentialRandom(): () => number {
  let counter = 0;
  return () => {
    counter = (counter + 7) % 97;
    return counter / 97;
  };
}
