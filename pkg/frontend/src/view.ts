/** DOM rendering and keyboard wiring.
 *
 * The session screen is rebuilt from state on every change. The concept
 * form is built once and patched in place, so async refreshes (health
 * info, session list) never wipe text the user is typing.
 */

import type { AppState, SessionController } from "./controller.js";
import { renderMetricsChart } from "./chart.js";
import type { ItemRef, Phase } from "./types.js";

export interface ViewDeps {
  doc: Document;
  controller: SessionController;
  imageUrl(item: ItemRef): string;
  metricsCsvUrl(sessionId: string): string;
  sessionLink(sessionId: string): string;
}

const PHASE_LABEL: Record<Phase, string> = {
  defining: "Expanding the concept",
  rating: "Rating",
  training: "Training",
  selecting: "Selecting the next batch",
  done: "Complete",
};

export class AppView {
  private readonly root: HTMLElement;
  private readonly deps: ViewDeps;
  private form: HTMLElement | null = null;
  private formRefs: {
    name: HTMLInputElement;
    positives: HTMLTextAreaElement;
    negatives: HTMLTextAreaElement;
    rounds: HTMLInputElement;
    batchSize: HTMLInputElement;
    strategy: HTMLSelectElement;
    submit: HTMLButtonElement;
    error: HTMLElement;
    health: HTMLElement;
    sessions: HTMLElement;
  } | null = null;
  private readonly sessionRoot: HTMLElement;

  constructor(root: HTMLElement, deps: ViewDeps) {
    this.root = root;
    this.deps = deps;
    this.sessionRoot = this.el("div", { class: "session-screen" });
    deps.doc.addEventListener("keydown", (event) => this.onKeydown(event as KeyboardEvent));
  }

  render(state: AppState): void {
    if (state.screen === "form") {
      this.ensureForm();
      this.updateForm(state);
      if (this.sessionRoot.parentNode !== null) {
        this.sessionRoot.remove();
      }
      if (this.form !== null && this.form.parentNode === null) {
        this.root.appendChild(this.form);
      }
    } else {
      if (this.form !== null && this.form.parentNode !== null) {
        this.form.remove();
      }
      if (this.sessionRoot.parentNode === null) {
        this.root.appendChild(this.sessionRoot);
      }
      this.renderSession(state);
    }
  }

  private onKeydown(event: KeyboardEvent): void {
    const target = event.target as
      | { tagName?: string; isContentEditable?: boolean }
      | null;
    const tag = (target?.tagName ?? "").toUpperCase();
    if (tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT") {
      return;
    }
    if (target?.isContentEditable === true) {
      return;
    }
    if (event.ctrlKey || event.metaKey || event.altKey || event.repeat) {
      return;
    }
    const key = event.key.toLowerCase();
    if (key === "p") {
      this.deps.controller.rate("positive");
    } else if (key === "n") {
      this.deps.controller.rate("negative");
    } else if (key === "u") {
      this.deps.controller.undo();
    }
  }

  // -- concept form --------------------------------------------------------

  private ensureForm(): void {
    if (this.form !== null) {
      return;
    }
    const name = this.el("input", {
      id: "concept-name",
      type: "text",
      placeholder: "e.g. red kayak",
      autocomplete: "off",
    });
    const positives = this.el("textarea", {
      id: "positive-phrases",
      rows: "4",
      placeholder: "one phrase per line (the concept name is always included)",
    });
    const negatives = this.el("textarea", {
      id: "negative-phrases",
      rows: "4",
      placeholder: "one phrase per line, optional",
    });
    const rounds = this.el("input", { id: "cfg-rounds", type: "number", min: "0", value: "5" });
    const batchSize = this.el("input", {
      id: "cfg-batch-size",
      type: "number",
      min: "1",
      value: "100",
    });
    const strategy = this.el("select", { id: "cfg-strategy" });
    for (const name of ["margin", "margin_positive", "random"]) {
      const opt = this.el("option", { value: name });
      opt.textContent = name;
      strategy.appendChild(opt);
    }
    const submit = this.el("button", { id: "create-session", type: "submit" });
    submit.textContent = "Start labeling";
    const error = this.el("p", { id: "form-error", class: "error", role: "alert" });
    const health = this.el("p", { id: "gateway-info", class: "muted" });
    const sessions = this.el("div", { id: "session-list" });

    const form = this.el("form", { id: "concept-form" });
    form.appendChild(this.field("Concept name", name));
    form.appendChild(this.field("Positive phrases", positives));
    form.appendChild(this.field("Negative phrases", negatives));
    const advanced = this.el("details", { class: "advanced" });
    const summary = this.el("summary", {});
    summary.textContent = "Loop settings";
    advanced.appendChild(summary);
    advanced.appendChild(this.field("Rounds", rounds));
    advanced.appendChild(this.field("Batch size", batchSize));
    advanced.appendChild(this.field("Selection strategy", strategy));
    form.appendChild(advanced);
    form.appendChild(error);
    form.appendChild(submit);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.deps.controller.create(
        name.value,
        splitLines(positives.value),
        splitLines(negatives.value),
        {
          rounds: intOr(rounds.value, 5),
          batch_size: intOr(batchSize.value, 100),
          strategy: strategy.value,
        },
      );
    });

    const screen = this.el("div", { class: "form-screen" });
    const heading = this.el("h1", {});
    heading.textContent = "Define a concept";
    screen.appendChild(heading);
    const hint = this.el("p", { class: "muted" });
    hint.textContent =
      "Describe the concept in a few text phrases. You will rate one image " +
      "at a time; the model retrains after every batch.";
    screen.appendChild(hint);
    screen.appendChild(form);
    screen.appendChild(sessions);
    screen.appendChild(health);
    this.form = screen;
    this.formRefs = {
      name,
      positives,
      negatives,
      rounds,
      batchSize,
      strategy,
      submit,
      error,
      health,
      sessions,
    };
  }

  private updateForm(state: AppState): void {
    const refs = this.formRefs;
    if (refs === null) {
      return;
    }
    refs.error.textContent = state.formError ?? "";
    refs.error.style.display = state.formError === null ? "none" : "";
    refs.submit.disabled = state.creating;
    refs.submit.textContent = state.creating ? "Creating session..." : "Start labeling";
    if (state.health !== null) {
      refs.health.textContent =
        `gateway v${state.health.version} - ${state.health.corpus_count} items, ` +
        `${state.health.dim}-d embeddings, ${state.health.index_kind} index, ` +
        `${state.health.kernels} kernels`;
    } else {
      refs.health.textContent = "";
    }
    refs.sessions.replaceChildren();
    if (state.sessions.length > 0) {
      const heading = this.el("h2", {});
      heading.textContent = "Existing sessions";
      refs.sessions.appendChild(heading);
      const list = this.el("ul", { class: "session-list" });
      for (const s of state.sessions) {
        const item = this.el("li", {});
        const link = this.el("a", { href: this.deps.sessionLink(s.session_id) });
        link.textContent = s.concept;
        item.appendChild(link);
        const meta = this.el("span", { class: "muted" });
        meta.textContent = ` - ${s.phase}, round ${s.round}`;
        item.appendChild(meta);
        list.appendChild(item);
      }
      refs.sessions.appendChild(list);
    }
  }

  // -- session screen ------------------------------------------------------

  private renderSession(state: AppState): void {
    const parts: HTMLElement[] = [];
    parts.push(this.sessionHeader(state));
    const alerts = this.alerts(state);
    if (alerts !== null) {
      parts.push(alerts);
    }
    parts.push(this.mainPanel(state));
    parts.push(this.metricsPanel(state));
    const footnote = this.footnote(state);
    if (footnote !== null) {
      parts.push(footnote);
    }
    this.sessionRoot.replaceChildren(...parts);
  }

  private sessionHeader(state: AppState): HTMLElement {
    const header = this.el("header", { class: "session-header" });
    const title = this.el("h1", {});
    title.textContent = state.conceptName ?? "Session";
    header.appendChild(title);
    const meta = this.el("p", { class: "muted" });
    const phase = state.phase === null ? "loading" : PHASE_LABEL[state.phase];
    meta.textContent =
      `session ${state.sessionId ?? "?"} - round ${state.round} - ` +
      `${phase}` +
      (state.votesRequired > 1 ? ` - ${state.votesRequired} votes per item` : "");
    header.appendChild(meta);
    const badge = this.el("span", {
      class: `phase-badge phase-${state.phase ?? "loading"}`,
      id: "phase-badge",
    });
    badge.textContent = state.phase ?? "loading";
    header.appendChild(badge);
    return header;
  }

  private alerts(state: AppState): HTMLElement | null {
    const box = this.el("div", { class: "alerts" });
    let any = false;
    for (const [text, cls] of [
      [state.error, "error"],
      [state.lastError, "error"],
      [state.notice, "notice"],
    ] as const) {
      if (text !== null && text !== "") {
        const p = this.el("p", { class: cls });
        p.textContent = text;
        box.appendChild(p);
        any = true;
      }
    }
    if (any && state.canRetry) {
      const retry = this.el("button", { id: "retry", type: "button" });
      retry.textContent = "Retry";
      retry.addEventListener("click", () => {
        void this.deps.controller.retry();
      });
      box.appendChild(retry);
    }
    return any ? box : null;
  }

  private mainPanel(state: AppState): HTMLElement {
    if (state.phase === "rating" && state.batch !== null) {
      return state.batch.current !== null
        ? this.ratingPanel(state)
        : this.busyPanel("Saving the last ratings...");
    }
    if (state.phase === "rating" && state.waiting) {
      return this.busyPanel(
        "All of your votes are in. Waiting for the remaining raters to finish this batch.",
      );
    }
    if (state.phase === "training" || state.phase === "selecting") {
      return this.busyPanel(
        state.phase === "training"
          ? `Training the round-${state.round} model...`
          : "Selecting the next batch...",
      );
    }
    if (state.phase === "done") {
      return this.donePanel(state);
    }
    return this.busyPanel("Preparing the first batch...");
  }

  private ratingPanel(state: AppState): HTMLElement {
    const batch = state.batch as NonNullable<AppState["batch"]>;
    const item = batch.current as ItemRef;
    const panel = this.el("section", { class: "rating-panel" });

    const progress = this.el("div", { class: "progress" });
    const fill = this.el("div", { class: "progress-fill" });
    fill.style.width = `${Math.round((batch.rated / Math.max(batch.total, 1)) * 100)}%`;
    progress.appendChild(fill);
    panel.appendChild(progress);
    const counter = this.el("p", { class: "progress-text", id: "progress-text" });
    counter.textContent = `${batch.rated} / ${batch.total} rated`;
    panel.appendChild(counter);

    const card = this.el("figure", { class: "item-card" });
    const img = this.el("img", {
      id: "item-image",
      src: this.deps.imageUrl(item),
      alt: `item ${item.id}`,
    });
    img.addEventListener("error", () => {
      card.classList.add("image-missing");
    });
    card.appendChild(img);
    const placeholder = this.el("div", { class: "image-placeholder" });
    placeholder.textContent = `image unavailable - item ${item.id}`;
    card.appendChild(placeholder);
    const caption = this.el("figcaption", { class: "muted", id: "item-caption" });
    caption.textContent = `item ${item.id}`;
    card.appendChild(caption);
    panel.appendChild(card);

    const controls = this.el("div", { class: "controls" });
    const pos = this.el("button", { id: "rate-positive", type: "button" });
    pos.textContent = "Positive (p)";
    pos.addEventListener("click", () => this.deps.controller.rate("positive"));
    const neg = this.el("button", { id: "rate-negative", type: "button" });
    neg.textContent = "Negative (n)";
    neg.addEventListener("click", () => this.deps.controller.rate("negative"));
    const undo = this.el("button", { id: "undo", type: "button" });
    undo.textContent = "Undo (u)";
    undo.addEventListener("click", () => this.deps.controller.undo());
    controls.append(pos, neg, undo);
    panel.appendChild(controls);

    const status = this.el("p", { class: "muted", id: "save-status" });
    const saving = batch.inFlight > 0 ? ", saving..." : "";
    status.textContent = `${batch.staged} staged, ${batch.acked} saved${saving}`;
    panel.appendChild(status);

    const help = this.el("p", { class: "muted keys-help" });
    help.textContent = "keys: p = positive, n = negative, u = undo the last unsent rating";
    panel.appendChild(help);
    return panel;
  }

  private busyPanel(text: string): HTMLElement {
    const panel = this.el("section", { class: "busy-panel", id: "busy-panel" });
    const spinner = this.el("div", { class: "spinner" });
    panel.appendChild(spinner);
    const label = this.el("p", {});
    label.textContent = text;
    panel.appendChild(label);
    return panel;
  }

  private donePanel(state: AppState): HTMLElement {
    const panel = this.el("section", { class: "done-panel", id: "done-panel" });
    const heading = this.el("h2", {});
    heading.textContent = "Session complete";
    panel.appendChild(heading);
    const summary = this.el("p", {});
    summary.textContent =
      `${state.resolvedLabels} items labeled ` +
      `(${state.resolvedPositive} positive, ${state.resolvedNegative} negative) ` +
      `across ${state.round + 1} rounds.`;
    panel.appendChild(summary);
    return panel;
  }

  private metricsPanel(state: AppState): HTMLElement {
    const panel = this.el("section", { class: "metrics-panel", id: "metrics-panel" });
    const heading = this.el("h2", {});
    heading.textContent = "Model quality by round";
    panel.appendChild(heading);
    panel.appendChild(renderMetricsChart(this.deps.doc, state.metrics));
    if (state.metrics.length > 0 && state.sessionId !== null) {
      const link = this.el("a", {
        href: this.deps.metricsCsvUrl(state.sessionId),
        class: "muted csv-link",
      });
      link.textContent = "download CSV";
      panel.appendChild(link);
    }
    return panel;
  }

  private footnote(state: AppState): HTMLElement | null {
    if (state.clampEvents.length === 0) {
      return null;
    }
    const box = this.el("details", { class: "footnote" });
    const summary = this.el("summary", {});
    summary.textContent = `${state.clampEvents.length} adjustment(s)`;
    box.appendChild(summary);
    const list = this.el("ul", {});
    for (const event of state.clampEvents) {
      const li = this.el("li", {});
      li.textContent = event;
      list.appendChild(li);
    }
    box.appendChild(list);
    return box;
  }

  // -- helpers ---------------------------------------------------------------

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    attrs: Record<string, string>,
  ): HTMLElementTagNameMap[K] {
    const node = this.deps.doc.createElement(tag);
    for (const [key, value] of Object.entries(attrs)) {
      node.setAttribute(key, value);
    }
    return node;
  }

  private field(labelText: string, control: HTMLElement): HTMLElement {
    const wrap = this.el("label", { class: "field" });
    const span = this.el("span", {});
    span.textContent = labelText;
    wrap.appendChild(span);
    wrap.appendChild(control);
    return wrap;
  }
}

export function mountApp(root: HTMLElement, deps: ViewDeps): AppView {
  return new AppView(root, deps);
}

function splitLines(value: string): string[] {
  return value
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line !== "");
}

function intOr(value: string, fallback: number): number {
  const parsed = Number.parseInt(value, 10);
  return Number.isFinite(parsed) ? parsed : fallback;
}
