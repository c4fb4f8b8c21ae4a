import { EstimatePoint } from "./state.js";
import { ReportDoc } from "./types.js";

/** SVG chart builders. Input values are served by the backend; this module
 * only maps them to pixels. */

const W = 620;
const H = 230;
const PAD = { left: 52, right: 14, top: 12, bottom: 26 };

interface Scale {
  (v: number): number;
}

function linScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

function ticks(lo: number, hi: number, n: number): number[] {
  const out: number[] = [];
  for (let i = 0; i <= n; i++) out.push(lo + ((hi - lo) * i) / n);
  return out;
}

function fmtTick(v: number): string {
  return Math.abs(v) >= 100 ? v.toFixed(0) : v.toFixed(2);
}

/** Running estimate vs sample count, with the served confidence band. */
export function estimateChartSvg(series: EstimatePoint[], width = W, height = H): string {
  if (series.length === 0) {
    return `<svg class="chart" viewBox="0 0 ${width} ${height}" role="img">
      <text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="chart-empty">no estimate yet</text>
    </svg>`;
  }
  const xs = series.map((p) => p.n);
  const ysLo = series.map((p) => (p.lo === null ? p.g : p.lo));
  const ysHi = series.map((p) => (p.hi === null ? p.g : p.hi));
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  let y0 = Math.min(...ysLo);
  let y1 = Math.max(...ysHi);
  const margin = (y1 - y0 || Math.abs(y1) || 1) * 0.12;
  y0 -= margin;
  y1 += margin;

  const x = linScale(x0, x1, PAD.left, width - PAD.right);
  const y = linScale(y0, y1, height - PAD.bottom, PAD.top);

  const banded = series.filter((p) => p.lo !== null && p.hi !== null);
  let band = "";
  if (banded.length > 1) {
    const upper = banded.map((p) => `${x(p.n).toFixed(1)},${y(p.hi as number).toFixed(1)}`);
    const lower = banded
      .slice()
      .reverse()
      .map((p) => `${x(p.n).toFixed(1)},${y(p.lo as number).toFixed(1)}`);
    band = `<polygon class="band" points="${upper.concat(lower).join(" ")}"/>`;
  }
  const line = series.map((p) => `${x(p.n).toFixed(1)},${y(p.g).toFixed(1)}`).join(" ");
  const last = series[series.length - 1];

  const yTicks = ticks(y0 + margin, y1 - margin, 3)
    .map(
      (v) =>
        `<line class="grid" x1="${PAD.left}" y1="${y(v).toFixed(1)}" x2="${width - PAD.right}" y2="${y(v).toFixed(1)}"/>` +
        `<text class="tick" x="${PAD.left - 6}" y="${(y(v) + 4).toFixed(1)}" text-anchor="end">${fmtTick(v)}</text>`,
    )
    .join("");
  const xTicks = ticks(x0, x1, Math.min(4, Math.max(1, x1 - x0)))
    .map(
      (v) =>
        `<text class="tick" x="${x(v).toFixed(1)}" y="${height - 8}" text-anchor="middle">${Math.round(v)}</text>`,
    )
    .join("");

  return `<svg class="chart" viewBox="0 0 ${width} ${height}" role="img" aria-label="estimate by sample count">
    ${yTicks}${xTicks}
    ${band}
    <polyline class="series" fill="none" points="${line}"/>
    <circle class="latest" cx="${x(last.n).toFixed(1)}" cy="${y(last.g).toFixed(1)}" r="3.5"/>
  </svg>`;
}

/** Precision-recall line plot for the vector curve measure. The served
 * G_hat lays out L precisions then L recalls; intervals band the precision
 * coordinates. */
export function prCurveSvg(report: ReportDoc, width = W, height = H): string {
  const L = report.G_hat.length / 2;
  if (!Number.isInteger(L) || L < 1) {
    return `<svg class="chart" viewBox="0 0 ${width} ${height}"><text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="chart-empty">curve unavailable</text></svg>`;
  }
  const prec = report.G_hat.slice(0, L);
  const rec = report.G_hat.slice(L);
  const x = linScale(0, 1, PAD.left, width - PAD.right);
  const y = linScale(0, 1, height - PAD.bottom, PAD.top);

  // points ordered by recall so the polyline reads left to right
  const order = rec.map((_, i) => i).sort((a, b) => rec[a] - rec[b]);
  const pts = order
    .filter((i) => Number.isFinite(prec[i]) && Number.isFinite(rec[i]))
    .map((i) => ({ r: rec[i], p: prec[i], i }));
  const line = pts.map((q) => `${x(q.r).toFixed(1)},${y(q.p).toFixed(1)}`).join(" ");

  let band = "";
  if (report.intervals) {
    const withBand = pts.filter((q) => report.intervals![q.i]);
    if (withBand.length > 1) {
      const upper = withBand.map(
        (q) => `${x(q.r).toFixed(1)},${y(Math.min(1, report.intervals![q.i][1])).toFixed(1)}`,
      );
      const lower = withBand
        .slice()
        .reverse()
        .map((q) => `${x(q.r).toFixed(1)},${y(Math.max(0, report.intervals![q.i][0])).toFixed(1)}`);
      band = `<polygon class="band" points="${upper.concat(lower).join(" ")}"/>`;
    }
  }

  const axisTicks = [0, 0.25, 0.5, 0.75, 1]
    .map(
      (v) =>
        `<text class="tick" x="${x(v).toFixed(1)}" y="${height - 8}" text-anchor="middle">${v}</text>` +
        `<text class="tick" x="${PAD.left - 6}" y="${(y(v) + 4).toFixed(1)}" text-anchor="end">${v}</text>`,
    )
    .join("");

  return `<svg class="chart" viewBox="0 0 ${width} ${height}" role="img" aria-label="precision-recall curve">
    ${axisTicks}
    ${band}
    <polyline class="series" fill="none" points="${line}"/>
    <text class="axis-label" x="${(PAD.left + width - PAD.right) / 2}" y="${height - 1}" text-anchor="middle">recall</text>
  </svg>`;
}
