/** Inline SVG line chart of model quality per round.
 *
 * X is the cumulative number of rated samples, Y is AUC-PR in [0, 1]; one
 * marker per trained round. Rounds whose AUC-PR is undefined (single-class
 * evaluation) keep their place on the X axis but draw no marker.
 */

import type { MetricsRow } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

const WIDTH = 640;
const HEIGHT = 260;
const MARGIN = { top: 16, right: 20, bottom: 34, left: 46 };

export function renderMetricsChart(doc: Document, rows: MetricsRow[]): HTMLElement {
  const wrap = doc.createElement("div");
  wrap.className = "chart";
  if (rows.length === 0) {
    const empty = doc.createElement("p");
    empty.className = "chart-empty";
    empty.textContent =
      "No evaluation series yet. Points appear after each training round " +
      "when the gateway is configured with ground truth.";
    wrap.appendChild(empty);
    return wrap;
  }

  const innerW = WIDTH - MARGIN.left - MARGIN.right;
  const innerH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const maxX = Math.max(...rows.map((r) => r.samples_rated), 1);
  const x = (v: number) => MARGIN.left + (v / maxX) * innerW;
  const y = (v: number) => MARGIN.top + (1 - v) * innerH;

  const svg = doc.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${WIDTH} ${HEIGHT}`);
  svg.setAttribute("role", "img");
  svg.setAttribute("aria-label", "AUC-PR per training round");

  for (const grid of [0, 0.25, 0.5, 0.75, 1]) {
    const line = doc.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(MARGIN.left));
    line.setAttribute("x2", String(WIDTH - MARGIN.right));
    line.setAttribute("y1", String(y(grid)));
    line.setAttribute("y2", String(y(grid)));
    line.setAttribute("class", "chart-grid");
    svg.appendChild(line);
    const label = doc.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(MARGIN.left - 6));
    label.setAttribute("y", String(y(grid) + 4));
    label.setAttribute("text-anchor", "end");
    label.setAttribute("class", "chart-tick");
    label.textContent = grid.toFixed(2);
    svg.appendChild(label);
  }

  const measured = rows.filter((r) => r.auc_pr !== null);
  if (measured.length > 1) {
    const path = doc.createElementNS(SVG_NS, "polyline");
    path.setAttribute(
      "points",
      measured.map((r) => `${x(r.samples_rated)},${y(r.auc_pr as number)}`).join(" "),
    );
    path.setAttribute("class", "chart-line");
    svg.appendChild(path);
  }

  for (const row of measured) {
    const dot = doc.createElementNS(SVG_NS, "circle");
    dot.setAttribute("cx", String(x(row.samples_rated)));
    dot.setAttribute("cy", String(y(row.auc_pr as number)));
    dot.setAttribute("r", "4");
    dot.setAttribute("class", "chart-point");
    const tip = doc.createElementNS(SVG_NS, "title");
    tip.textContent =
      `round ${row.round}: AUC-PR ${(row.auc_pr as number).toFixed(3)} ` +
      `after ${row.samples_rated} rated`;
    dot.appendChild(tip);
    svg.appendChild(dot);
  }

  const xLabel = doc.createElementNS(SVG_NS, "text");
  xLabel.setAttribute("x", String(MARGIN.left + innerW / 2));
  xLabel.setAttribute("y", String(HEIGHT - 8));
  xLabel.setAttribute("text-anchor", "middle");
  xLabel.setAttribute("class", "chart-tick");
  xLabel.textContent = "samples rated";
  svg.appendChild(xLabel);

  wrap.appendChild(svg);
  return wrap;
}
