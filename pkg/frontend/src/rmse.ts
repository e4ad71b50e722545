import * as fs from "fs";
import * as path from "path";

import { readRmseCsv, RmseSeries } from "./csv";

export interface RmseJob {
  inputs: string[];
  output: string;
  labels?: string[];
  /** which error column to plot */
  variable?: "s" | "p" | "u";
}

const PALETTE = [
  "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const WIDTH = 760;
const HEIGHT = 480;
const MARGIN = { left: 70, right: 180, top: 30, bottom: 55 };

function fmt(x: number): string {
  return Number(x.toPrecision(6)).toString();
}

function ticks(lo: number, hi: number, count: number): number[] {
  if (hi <= lo) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const candidates = [step, 2 * step, 5 * step, 10 * step];
  const chosen = candidates.find((c) => span / c <= count) ?? 10 * step;
  const out: number[] = [];
  for (let v = Math.ceil(lo / chosen) * chosen; v <= hi + 1e-12 * span; v += chosen) {
    out.push(v);
  }
  return out;
}

function seriesColumn(series: RmseSeries, variable: "s" | "p" | "u"): number[] {
  return variable === "s" ? series.rmseS : variable === "p" ? series.rmseP : series.rmseU;
}

/** Render one RMSE-vs-step curve per input run into a single SVG figure. */
export function plotRmse(job: RmseJob): void {
  if (job.inputs.length === 0) {
    throw new Error("rmse plot needs at least one input file");
  }
  const variable = job.variable ?? "s";
  const series = job.inputs.map(readRmseCsv);
  const stepsRef = series[0].steps;
  for (let k = 1; k < series.length; k++) {
    const s = series[k].steps;
    if (s.length !== stepsRef.length || s.some((v, i) => v !== stepsRef[i])) {
      throw new Error(
        `step grids differ: ${job.inputs[0]} has ${stepsRef.length} steps, ` +
          `${job.inputs[k]} does not match`,
      );
    }
  }
  const labels =
    job.labels && job.labels.length === job.inputs.length
      ? job.labels
      : job.inputs.map((p) => path.basename(path.dirname(path.resolve(p))) || p);

  const xs = stepsRef;
  const allY = series.flatMap((s) => seriesColumn(s, variable));
  const xLo = xs[0];
  const xHi = xs[xs.length - 1];
  const yLo = 0;
  const yHi = Math.max(...allY) * 1.05 || 1;

  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const sx = (x: number) => MARGIN.left + ((x - xLo) / (xHi - xLo || 1)) * plotW;
  const sy = (y: number) => MARGIN.top + plotH - ((y - yLo) / (yHi - yLo || 1)) * plotH;

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
      `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" ` +
      `fill="none" stroke="black"/>`,
  );
  for (const t of ticks(xLo, xHi, 8)) {
    const x = sx(t);
    parts.push(`<line x1="${fmt(x)}" y1="${MARGIN.top + plotH}" x2="${fmt(x)}" y2="${MARGIN.top + plotH + 5}" stroke="black"/>`);
    parts.push(`<text x="${fmt(x)}" y="${MARGIN.top + plotH + 20}" text-anchor="middle">${fmt(t)}</text>`);
  }
  for (const t of ticks(yLo, yHi, 6)) {
    const y = sy(t);
    parts.push(`<line x1="${MARGIN.left - 5}" y1="${fmt(y)}" x2="${MARGIN.left}" y2="${fmt(y)}" stroke="black"/>`);
    parts.push(`<text x="${MARGIN.left - 9}" y="${fmt(y + 4)}" text-anchor="end">${fmt(t)}</text>`);
  }
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${HEIGHT - 12}" text-anchor="middle">assimilation step</text>`,
  );
  parts.push(
    `<text x="18" y="${MARGIN.top + plotH / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 18 ${MARGIN.top + plotH / 2})">RMSE (${variable})</text>`,
  );
  series.forEach((s, k) => {
    const ys = seriesColumn(s, variable);
    const pts = xs.map((x, i) => `${fmt(sx(x))},${fmt(sy(ys[i]))}`).join(" ");
    const color = PALETTE[k % PALETTE.length];
    parts.push(`<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    const ly = MARGIN.top + 14 + 18 * k;
    const lx = MARGIN.left + plotW + 12;
    parts.push(`<line x1="${lx}" y1="${ly - 4}" x2="${lx + 22}" y2="${ly - 4}" stroke="${color}" stroke-width="2"/>`);
    parts.push(`<text x="${lx + 28}" y="${ly}">${labels[k]}</text>`);
  });
  parts.push("</svg>");
  fs.writeFileSync(job.output, parts.join("\n") + "\n");
}
