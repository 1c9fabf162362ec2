import { Window } from "happy-dom";
import { describe, expect, it } from "vitest";

import { renderMetricsChart } from "../src/chart.js";
import { metricsRow } from "./helpers.js";

function doc(): Document {
  return new Window().document as unknown as Document;
}

describe("renderMetricsChart", () => {
  it("shows a placeholder when no rounds have been evaluated", () => {
    const chart = renderMetricsChart(doc(), []);
    expect(chart.querySelector("svg")).toBeNull();
    const empty = chart.querySelector(".chart-empty");
    expect(empty).not.toBeNull();
    expect(empty?.textContent).toContain("No evaluation series yet");
  });

  it("draws one marker per evaluated round and a line through them", () => {
    const rows = [metricsRow(0, 100, 0.62), metricsRow(1, 200, 0.74), metricsRow(2, 300, 0.81)];
    const chart = renderMetricsChart(doc(), rows);
    const points = chart.querySelectorAll("circle.chart-point");
    expect(points).toHaveLength(3);
    const line = chart.querySelector("polyline.chart-line");
    expect(line).not.toBeNull();
    expect(line?.getAttribute("points")?.split(" ")).toHaveLength(3);
    const titles = Array.from(points).map((p) => p.querySelector("title")?.textContent);
    expect(titles[0]).toBe("round 0: AUC-PR 0.620 after 100 rated");
    expect(titles[2]).toBe("round 2: AUC-PR 0.810 after 300 rated");
  });

  it("positions markers by cumulative samples rated", () => {
    const rows = [metricsRow(0, 100, 0.5), metricsRow(1, 400, 0.6)];
    const chart = renderMetricsChart(doc(), rows);
    const [a, b] = Array.from(chart.querySelectorAll("circle.chart-point"));
    const ax = Number(a?.getAttribute("cx"));
    const bx = Number(b?.getAttribute("cx"));
    expect(ax).toBeLessThan(bx);
    // 400 samples is the maximum, so its marker sits at the right edge.
    expect(bx).toBe(640 - 20);
  });

  it("scales higher AUC-PR values upward", () => {
    const rows = [metricsRow(0, 100, 0.2), metricsRow(1, 200, 0.9)];
    const chart = renderMetricsChart(doc(), rows);
    const [low, high] = Array.from(chart.querySelectorAll("circle.chart-point"));
    expect(Number(high?.getAttribute("cy"))).toBeLessThan(Number(low?.getAttribute("cy")));
  });

  it("skips markers for rounds whose AUC-PR is undefined", () => {
    const rows = [metricsRow(0, 100, 0.5), metricsRow(1, 200, null), metricsRow(2, 300, 0.7)];
    const chart = renderMetricsChart(doc(), rows);
    expect(chart.querySelectorAll("circle.chart-point")).toHaveLength(2);
    expect(chart.querySelector("polyline.chart-line")?.getAttribute("points")?.split(" ")).toHaveLength(2);
  });

  it("draws a single evaluated round as a marker without a line", () => {
    const chart = renderMetricsChart(doc(), [metricsRow(0, 100, 0.5)]);
    expect(chart.querySelectorAll("circle.chart-point")).toHaveLength(1);
    expect(chart.querySelector("polyline.chart-line")).toBeNull();
  });
});
