/** Posterior interval bands per template weight over time, plus the
 * realized information-gain trace with its stopping threshold. Pure
 * rendering of API data: the only arithmetic is display scaling.
 */

import type { History, Posterior } from "../types.js";

export interface TimelinePoint {
  t: number;
  posterior: Posterior;
}

export function bandPoints(history: History): TimelinePoint[] {
  const points: TimelinePoint[] = [
    { t: 0, posterior: history.prior_posterior },
  ];
  for (const step of history.steps) {
    points.push({ t: step.t, posterior: step.posterior });
  }
  return points;
}

const COLORS = ["#38bdf8", "#f59e0b", "#a78bfa", "#4ade80", "#f87171"];

function x(t: number, tMax: number, width: number): number {
  const pad = 30;
  return pad + (t / Math.max(tMax, 1)) * (width - 2 * pad);
}

function y(v: number, height: number): number {
  const pad = 14;
  return height - pad - v * (height - 2 * pad);
}

export function renderBandsSvg(
  points: TimelinePoint[],
  names: string[],
  width = 560,
  height = 220,
): string {
  const tMax = points[points.length - 1]?.t ?? 1;
  let out = "";
  names.forEach((name, c) => {
    const color = COLORS[c % COLORS.length];
    const upper = points.map(
      (p) => `${x(p.t, tMax, width).toFixed(1)},${y(p.posterior.hi[c], height).toFixed(1)}`,
    );
    const lower = [...points]
      .reverse()
      .map(
        (p) =>
          `${x(p.t, tMax, width).toFixed(1)},${y(p.posterior.lo[c], height).toFixed(1)}`,
      );
    const mean = points
      .map(
        (p) =>
          `${x(p.t, tMax, width).toFixed(1)},${y(p.posterior.mean[c], height).toFixed(1)}`,
      )
      .join(" ");
    out += `
      <polygon class="band band-${c}" data-name="${name}"
        points="${upper.join(" ")} ${lower.join(" ")}"
        fill="${color}" opacity="0.18"></polygon>
      <polyline class="mean mean-${c}" points="${mean}" fill="none"
        stroke="${color}" stroke-width="2"></polyline>`;
  });
  return out;
}

export function renderIgSvg(
  history: History,
  width = 560,
  height = 110,
): string {
  const steps = history.steps;
  const tMax = steps.length ? steps[steps.length - 1].t : 1;
  const igs = steps.map((s) => Math.max(s.ig_realized, 0));
  const top = Math.max(...igs, history.ig_threshold * 2, 1e-12);
  const pts = steps
    .map(
      (s) =>
        `${x(s.t, tMax, width).toFixed(1)},${y(Math.max(s.ig_realized, 0) / top, height).toFixed(1)}`,
    )
    .join(" ");
  const thr = y(history.ig_threshold / top, height).toFixed(1);
  return `
    <line class="ig-threshold" x1="${x(0, tMax, width).toFixed(1)}" y1="${thr}"
      x2="${x(tMax, tMax, width).toFixed(1)}" y2="${thr}"
      stroke="#f87171" stroke-dasharray="4 3"></line>
    <polyline class="ig-trace" points="${pts}" fill="none" stroke="#e2e8f0"
      stroke-width="1.5"></polyline>
    ${steps
      .map(
        (s) =>
          `<circle class="ig-point" cx="${x(s.t, tMax, width).toFixed(1)}" cy="${y(Math.max(s.ig_realized, 0) / top, height).toFixed(1)}" r="2.5" fill="#e2e8f0"></circle>`,
      )
      .join("")}`;
}

export interface TimelineView {
  render(history: History): void;
}

export function initTimeline(root: HTMLElement): TimelineView {
  root.innerHTML = `
    <h2>Posterior over time</h2>
    <div class="legend" data-role="legend"></div>
    <svg data-role="bands" viewBox="0 0 560 220" width="560" height="220"></svg>
    <h2>Information gain</h2>
    <svg data-role="ig" viewBox="0 0 560 110" width="560" height="110"></svg>
    <div class="banner hidden" data-role="stop-banner">
      information gain below threshold; observing can stop
    </div>
  `;
  const bands = root.querySelector('[data-role="bands"]') as SVGElement;
  const ig = root.querySelector('[data-role="ig"]') as SVGElement;
  const legend = root.querySelector('[data-role="legend"]') as HTMLElement;
  const banner = root.querySelector('[data-role="stop-banner"]') as HTMLElement;
  return {
    render(history: History): void {
      const points = bandPoints(history);
      bands.innerHTML = renderBandsSvg(points, history.template_names);
      ig.innerHTML = renderIgSvg(history);
      legend.innerHTML = history.template_names
        .map(
          (name, c) =>
            `<span class="legend-item"><span class="swatch" style="background:${COLORS[c % COLORS.length]}"></span>${name}</span>`,
        )
        .join("");
      banner.classList.toggle("hidden", history.status !== "stopped-by-ig");
    },
  };
}
