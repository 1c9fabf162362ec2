/** Browser bootstrap: wire the controller to the page and the URL.
 *
 * The only state kept outside the gateway is the session id (and this
 * agent's rater id) in the query string; a reload re-enters the session
 * from the gateway snapshot.
 */

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import type { AppView } from "./view.js";
import { mountApp } from "./view.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app element");
}

const api = new ApiClient({ baseUrl: "" });
let view: AppView | null = null;

const controller = new SessionController({
  api,
  now: () => performance.now(),
  setTimeoutFn: (fn, ms) => setTimeout(fn, ms),
  clearTimeoutFn: (handle) => clearTimeout(handle as ReturnType<typeof setTimeout>),
  random: Math.random,
  onChange: (state) => view?.render(state),
  onSessionEstablished: (sessionId, raterId) => {
    const params = new URLSearchParams(window.location.search);
    params.set("session", sessionId);
    params.set("rater", raterId);
    window.history.replaceState(null, "", `?${params.toString()}`);
  },
});

view = mountApp(root, {
  doc: document,
  controller,
  imageUrl: (item) => api.imageUrl(item),
  metricsCsvUrl: (sessionId) => api.metricsCsvUrl(sessionId),
  sessionLink: (sessionId) => `?session=${encodeURIComponent(sessionId)}`,
});
view.render(controller.state);

const params = new URLSearchParams(window.location.search);
const sessionId = params.get("session");
if (sessionId !== null && sessionId !== "") {
  void controller.resume(sessionId, params.get("rater") ?? undefined);
} else {
  void controller.loadFormData();
}
