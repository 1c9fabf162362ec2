import { describe, expect, it } from "vitest";

import type { Api } from "../src/api.js";
import { ApiError } from "../src/api.js";
import type { AppState } from "../src/controller.js";
import { SessionController, randomHex } from "../src/controller.js";
import {
  FakeGateway,
  ManualClock,
  ManualTimers,
  makeItems,
  sequentialRandom,
  settle,
  wrapApi,
} from "./helpers.js";

interface Harness {
  controller: SessionController;
  gw: FakeGateway;
  timers: ManualTimers;
  clock: ManualClock;
  states: AppState[];
  established: { sessionId: string; raterId: string }[];
  state(): AppState;
  rate(label?: "positive" | "negative"): void;
  rateBatch(): Promise<void>;
  poll(): Promise<void>;
}

function makeHarness(options?: {
  configure?: (gw: FakeGateway) => void;
  wrap?: (gw: FakeGateway) => Partial<Api>;
}): Harness {
  const gw = new FakeGateway();
  gw.expansionItems = makeItems(5);
  gw.nextSelection = makeItems(5, 1000);
  options?.configure?.(gw);
  const api: Api = options?.wrap ? wrapApi(gw, options.wrap(gw)) : gw;
  const timers = new ManualTimers();
  const clock = new ManualClock();
  const states: AppState[] = [];
  const established: { sessionId: string; raterId: string }[] = [];
  const controller = new SessionController({
    api,
    now: clock.now,
    setTimeoutFn: timers.set,
    clearTimeoutFn: timers.clear,
    random: sequentialRandom(),
    onChange: (s) => states.push(s),
    onSessionEstablished: (sessionId, raterId) => established.push({ sessionId, raterId }),
  });
  const harness: Harness = {
    controller,
    gw,
    timers,
    clock,
    states,
    established,
    state: () => controller.state,
    rate(label = "positive") {
      clock.advance(1000);
      controller.rate(label);
    },
    async rateBatch() {
      let guard = 0;
      while (controller.state.batch?.current != null) {
        harness.rate();
        await settle();
        guard += 1;
        if (guard > 500) {
          throw new Error("batch never finished");
        }
      }
      await settle();
    },
    async poll() {
      timers.fire();
      await settle();
    },
  };
  return harness;
}

async function driveToRating(h: Harness): Promise<void> {
  await h.controller.create("sunset beach", ["orange dusk sky"], [], { rounds: 1 });
  await settle();
  expect(h.state().phase).toBe("rating");
}

describe("SessionController", () => {
  it("rejects an empty concept name inline without calling the gateway", async () => {
    const h = makeHarness();
    await h.controller.create("   ", ["phrase"], []);
    expect(h.state().formError).toBe("Concept name is required.");
    expect(h.state().screen).toBe("form");
    expect(h.gw.createCalls).toHaveLength(0);
  });

  it("surfaces a gateway rejection of the concept as a form error", async () => {
    const h = makeHarness({
      wrap: () => ({
        createSession: async () => {
          throw new ApiError(400, "invalid_request", "concept needs at least one phrase");
        },
      }),
    });
    await h.controller.create("sunset", [], []);
    expect(h.state().formError).toBe("concept needs at least one phrase");
    expect(h.state().screen).toBe("form");
    expect(h.state().creating).toBe(false);
  });

  it("loads gateway info for the form and tolerates failures", async () => {
    const h = makeHarness();
    await h.controller.loadFormData();
    expect(h.state().health?.status).toBe("ok");
    expect(h.state().sessions).toHaveLength(1);

    const failing = makeHarness({
      wrap: () => ({
        health: async () => {
          throw new ApiError(0, "network", "down");
        },
        listSessions: async () => {
          throw new ApiError(0, "network", "down");
        },
      }),
    });
    await failing.controller.loadFormData();
    expect(failing.state().health).toBeNull();
    expect(failing.state().sessions).toEqual([]);
  });

  it("creates a session, forwards config overrides, and auto-expands into rating", async () => {
    const h = makeHarness();
    await h.controller.create(
      "  sunset beach  ",
      [" orange dusk sky ", "", "waves at dusk"],
      ["snowy mountain"],
      { rounds: 2, batch_size: 50, strategy: "margin" },
    );
    await settle();
    expect(h.gw.createCalls).toHaveLength(1);
    expect(h.gw.createCalls[0]!.concept).toEqual({
      name: "sunset beach",
      positive_phrases: ["orange dusk sky", "waves at dusk"],
      negative_phrases: ["snowy mountain"],
    });
    expect(h.gw.createCalls[0]!.config).toEqual({ rounds: 2, batch_size: 50, strategy: "margin" });
    expect(h.gw.expandCalls).toBe(1);
    const s = h.state();
    expect(s.screen).toBe("session");
    expect(s.phase).toBe("rating");
    expect(s.batch?.total).toBe(5);
    expect(s.raterId).toMatch(/^rater-[0-9a-f]{8}$/);
    expect(h.established).toEqual([{ sessionId: h.gw.sessionId, raterId: s.raterId as string }]);
  });

  it("drives the full loop: rate, train, select, rate again, done", async () => {
    const h = makeHarness();
    await driveToRating(h);

    await h.rateBatch();
    // The final keypress resolves the batch; the banner flips to training
    // before any further fetch.
    expect(h.state().phase).toBe("training");
    expect(h.gw.trainCalls).toBe(1);
    expect(h.timers.pending).toBe(1); // polling while the server works

    // A poll that lands while training is still running changes nothing.
    await h.poll();
    expect(h.state().phase).toBe("training");
    expect(h.gw.trainCalls).toBe(1); // triggered once per round, not per poll
    expect(h.timers.pending).toBe(1);

    h.gw.completeTraining({
      round: 0,
      samples_rated: 5,
      auc_pr: 0.9,
      auc_roc: 0.9,
      f1: 0.8,
      accuracy: 0.8,
      threshold: 0.5,
      n_pos: 3,
      n_neg: 2,
    });
    await h.poll();
    expect(h.state().phase).toBe("selecting");
    expect(h.gw.selectCalls).toBe(1);
    expect(h.state().metrics).toHaveLength(1);

    h.gw.completeSelection();
    await h.poll();
    const s = h.state();
    expect(s.phase).toBe("rating");
    expect(s.round).toBe(1);
    expect(s.batch?.total).toBe(5);
    expect(s.batch?.rated).toBe(0);

    await h.rateBatch();
    expect(h.gw.trainCalls).toBe(2);
    h.gw.completeTraining(); // final round: the session completes
    await h.poll();
    expect(h.state().phase).toBe("done");
    expect(h.timers.pending).toBe(0); // polling stopped
    expect(h.gw.ledger).toHaveLength(10);
  });

  it("swallows busy when the background step is already running", async () => {
    const h = makeHarness({ configure: (gw) => (gw.busyTrains = 1) });
    await driveToRating(h);
    await h.rateBatch();
    expect(h.gw.trainCalls).toBe(1);
    expect(h.state().error).toBeNull();
    h.gw.completeTraining();
    await h.poll();
    expect(h.state().phase).toBe("selecting");
  });

  it("shows a failed background step and re-fires it only on retry", async () => {
    let trainFailures = 1;
    let trainAttempts = 0;
    const h = makeHarness({
      wrap: (gw) => ({
        train: async (sid) => {
          trainAttempts += 1;
          if (trainFailures > 0) {
            trainFailures -= 1;
            throw new ApiError(500, "internal", "trainer exploded");
          }
          return gw.train(sid);
        },
      }),
    });
    await driveToRating(h);
    await h.rateBatch();
    expect(trainAttempts).toBe(1);
    expect(h.state().error).toBe("trainer exploded");
    expect(h.state().canRetry).toBe(true);

    // Polling continues but the failed trigger is not hammered.
    await h.poll();
    expect(trainAttempts).toBe(1);
    expect(h.state().error).toBe("trainer exploded");

    await h.controller.retry();
    await settle();
    expect(trainAttempts).toBe(2);
    expect(h.state().error).toBeNull();
    expect(h.gw.trainCalls).toBe(1);
    h.gw.completeTraining();
    await h.poll();
    expect(h.state().phase).toBe("selecting");
  });

  it("re-fires a trigger lost to the network on the next poll", async () => {
    let drop = 1;
    const h = makeHarness({
      wrap: (gw) => ({
        train: async (sid) => {
          if (drop > 0) {
            drop -= 1;
            throw new ApiError(0, "network", "connection reset");
          }
          return gw.train(sid);
        },
      }),
    });
    await driveToRating(h);
    await h.rateBatch();
    expect(h.gw.trainCalls).toBe(0);
    expect(h.state().error).toBe("connection reset");
    await h.poll();
    // The next poll re-fired the trigger; the successful fetch cleared the error.
    expect(h.gw.trainCalls).toBe(1);
    expect(h.state().error).toBeNull();
    expect(h.state().phase).toBe("training");
  });

  it("keeps polling through a transport failure and clears it on recovery", async () => {
    const h = makeHarness();
    await driveToRating(h);
    await h.rateBatch();
    expect(h.state().phase).toBe("training");
    h.gw.failSnapshots = 1;
    await h.poll();
    expect(h.state().error).toBe("connection refused");
    expect(h.timers.pending).toBe(1); // the watch survived
    await h.poll();
    expect(h.state().error).toBeNull();
    expect(h.state().phase).toBe("training");
  });

  it("resumes mid-batch with progress carried over", async () => {
    const h = makeHarness();
    await h.gw.expand(h.gw.sessionId);
    await h.gw.submitRatings(
      h.gw.sessionId,
      "rater-carried",
      [
        { item_id: 101, label: "positive" },
        { item_id: 102, label: "negative" },
        { item_id: 103, label: "positive" },
      ],
      "pre-reload",
    );
    await h.controller.resume(h.gw.sessionId, "rater-carried");
    await settle();
    const s = h.state();
    expect(s.phase).toBe("rating");
    expect(s.raterId).toBe("rater-carried");
    expect(s.batch?.total).toBe(5);
    expect(s.batch?.acked).toBe(3);
    expect(s.batch?.rated).toBe(3);
    expect(s.batch?.current?.id).toBe(104);
    await h.rateBatch();
    expect(h.gw.resolved.size).toBe(5);
  });

  it("waits for other raters when this rater has voted everything", async () => {
    const h = makeHarness({ configure: (gw) => (gw.votesRequired = 2) });
    await h.gw.expand(h.gw.sessionId);
    const votes = makeItems(5).map((i) => ({ item_id: i.id, label: "positive" as const }));
    await h.gw.submitRatings(h.gw.sessionId, "rater-one", votes, "k-one");
    await h.controller.resume(h.gw.sessionId, "rater-one");
    await settle();
    expect(h.state().waiting).toBe(true);
    expect(h.state().batch).toBeNull();
    expect(h.timers.pending).toBe(1);

    // The second rater finishes the batch; the next poll finds training.
    await h.gw.submitRatings(h.gw.sessionId, "rater-two", votes, "k-two");
    expect(h.gw.phase).toBe("training");
    await h.poll();
    expect(h.state().phase).toBe("training");
    expect(h.state().waiting).toBe(false);
    expect(h.gw.trainCalls).toBe(1);
  });

  it("throttles injected double-keypresses into one staged vote", async () => {
    const h = makeHarness();
    await driveToRating(h);
    h.clock.advance(1000);
    h.controller.rate("positive");
    h.controller.rate("positive"); // same instant: the double-press
    await settle();
    expect(h.state().batch?.rated).toBe(1);
  });

  it("reports when there is nothing left to undo", async () => {
    const h = makeHarness();
    await driveToRating(h);
    h.controller.undo();
    expect(h.state().notice).toBe("Nothing to undo - earlier ratings are already submitted.");
    h.rate();
    h.controller.undo();
    expect(h.state().notice).toBeNull();
    expect(h.state().batch?.rated).toBe(0);
  });

  it("generates distinct hex ids from the random source", () => {
    const random = sequentialRandom();
    const a = randomHex(random, 8);
    const b = randomHex(random, 8);
    expect(a).toMatch(/^[0-9a-f]{8}$/);
    expect(b).toMatch(/^[0-9a-f]{8}$/);
    expect(a).not.toBe(b);
  });
});
