/** DOM rendering: plain SVG line charts and a probability table.
 *
 * Every rendered number is a served response field formatted with the same
 * canonical formatter used for CSV export; nothing is computed client-side.
 */

import { PredictionGrid } from "./api.js";
import { formatNumber, GhostTrace, SessionView } from "./session.js";

const W = 640;
const H = 320;
const PAD = 40;

function scale(
  times: number[],
  values: number[],
  tMin: number,
  tMax: number,
  vMin: number,
  vMax: number,
): string {
  const sx = (t: number) => PAD + ((t - tMin) / (tMax - tMin || 1)) * (W - 2 * PAD);
  const sy = (v: number) => H - PAD - ((v - vMin) / (vMax - vMin || 1)) * (H - 2 * PAD);
  return times.map((t, i) => `${i ? "L" : "M"}${sx(t).toFixed(1)},${sy(values[i]).toFixed(1)}`).join(" ");
}

function extent(traces: Array<{ times: number[] }>): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const tr of traces) {
    for (const t of tr.times) {
      if (t < lo) lo = t;
      if (t > hi) hi = t;
    }
  }
  return lo <= hi ? [lo, hi] : [0, 1];
}

export function renderSurvival(el: SVGElement, view: SessionView): void {
  el.innerHTML = "";
  const s = view.survival;
  if (!s) return;
  const all: Array<{ times: number[]; mean: number[] }> = [...view.ghosts, s];
  const [tMin, tMax] = extent(all);
  const ns = "http://www.w3.org/2000/svg";

  view.ghosts.forEach((g: GhostTrace, k: number) => {
    const p = document.createElementNS(ns, "path");
    p.setAttribute("d", scale(g.times, g.mean, tMin, tMax, 0, 1));
    p.setAttribute("class", "ghost");
    p.setAttribute("fill", "none");
    p.setAttribute("stroke", "#999");
    p.setAttribute("stroke-opacity", String(0.2 + (0.5 * (k + 1)) / (view.ghosts.length + 1)));
    p.setAttribute("data-conditioning-time", formatNumber(g.conditioningTime));
    el.appendChild(p);
  });

  const main = document.createElementNS(ns, "path");
  main.setAttribute("d", scale(s.times, s.mean, tMin, tMax, 0, 1));
  main.setAttribute("class", "survival-mean");
  main.setAttribute("fill", "none");
  main.setAttribute("stroke", "#0b5fa5");
  main.setAttribute("stroke-width", "2");
  el.appendChild(main);

  if (view.horizon) {
    const sx = PAD + ((view.horizon.time - tMin) / (tMax - tMin || 1)) * (W - 2 * PAD);
    const line = document.createElementNS(ns, "line");
    line.setAttribute("x1", String(sx));
    line.setAttribute("x2", String(sx));
    line.setAttribute("y1", String(PAD));
    line.setAttribute("y2", String(H - PAD));
    line.setAttribute("stroke", "#c0392b");
    line.setAttribute("stroke-dasharray", "4,3");
    line.setAttribute("class", "horizon-marker");
    el.appendChild(line);
  }
}

export function renderTable(el: HTMLElement, grid: PredictionGrid | null): void {
  el.innerHTML = "";
  if (!grid) return;
  const head = document.createElement("tr");
  for (const name of ["times", "mean", "median", "lower", "upper"]) {
    const th = document.createElement("th");
    th.textContent = name;
    head.appendChild(th);
  }
  el.appendChild(head);
  for (let i = 0; i < grid.times.length; i++) {
    const tr = document.createElement("tr");
    for (const v of [grid.times[i], grid.mean[i], grid.median[i], grid.lower[i], grid.upper[i]]) {
      const td = document.createElement("td");
      td.textContent = formatNumber(v);
      tr.appendChild(td);
    }
    el.appendChild(tr);
  }
}

export function renderReadout(el: HTMLElement, view: SessionView): void {
  if (view.validationMessage) {
    el.textContent = view.validationMessage;
    el.className = "readout error";
    return;
  }
  el.className = "readout";
  if (view.horizon) {
    const h = view.horizon;
    el.textContent =
      `S(${formatNumber(h.time)} | data) = ${formatNumber(h.mean)} ` +
      `[${formatNumber(h.lower)}, ${formatNumber(h.upper)}]`;
  } else {
    el.textContent = "";
  }
}

export function renderWeights(el: HTMLElement, weights: Record<string, number> | null): void {
  el.innerHTML = "";
  if (!weights) return;
  for (const [id, w] of Object.entries(weights)) {
    const li = document.createElement("li");
    li.textContent = `${id}: ${formatNumber(w)}`;
    el.appendChild(li);
  }
}
