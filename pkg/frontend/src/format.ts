/** Display formatting only. Every number shown on screen is served by the
 * backend; nothing here aggregates or transforms beyond rounding for print. */

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Canonical on-screen form of an estimate coordinate. */
export function fmtEstimate(x: number): string {
  if (!Number.isFinite(x)) return "undefined";
  return x.toFixed(6);
}

export function fmtInterval(lo: number, hi: number): string {
  if (!Number.isFinite(lo) || !Number.isFinite(hi)) return "";
  return `[${lo.toFixed(6)}, ${hi.toFixed(6)}]`;
}

export function fmtBudget(consumed: number, max: number | null): string {
  return max === null ? `${consumed} labels` : `${consumed} / ${max}`;
}
