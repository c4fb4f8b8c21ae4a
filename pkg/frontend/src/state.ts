import { EstimateResponse, LabelAck, Progress, QueryPayload, ReportDoc, SessionMeta } from "./types.js";

/** One snapshot of the served scalar estimate, keyed by sample count. */
export interface EstimatePoint {
  n: number;
  g: number;
  lo: number | null;
  hi: number | null;
}

/** Client-side session state. Holds served values verbatim plus UI flags;
 * the only logic is bookkeeping: the plotted series must stay monotone in
 * sample count even when two fetches resolve out of order, and stage-advance
 * events must fire exactly once per server-side advance. */
export class SessionState {
  meta: SessionMeta;
  query: QueryPayload | null = null;
  report: ReportDoc | null = null;
  series: EstimatePoint[] = [];
  budgetConsumed: number;
  stage: number;
  status: "active" | "complete";
  offline = false;
  /** server-side advance count at the last successful response */
  private serverAdvances: number;
  /** advances surfaced as indicator fires by this tab */
  advancesSeen = 0;

  constructor(meta: SessionMeta) {
    this.meta = meta;
    this.budgetConsumed = meta.budget_consumed;
    this.stage = meta.stage;
    this.status = meta.status;
    this.serverAdvances = meta.stage_advances;
  }

  get nClasses(): number {
    return this.meta.n_classes;
  }

  get maxBudget(): number | null {
    return this.meta.max_budget;
  }

  /** Fold in a progress block; returns how many stage advances are new since
   * the last response this tab processed (0 for stale or repeat responses).
   * Every response type carries the same counter, so whichever arrives first
   * claims the advance and the rest are no-ops. */
  applyProgress(p: Progress): number {
    this.budgetConsumed = p.budget_consumed;
    this.stage = p.stage;
    this.status = p.status;
    const fresh = Math.max(0, p.stage_advances - this.serverAdvances);
    this.serverAdvances = Math.max(this.serverAdvances, p.stage_advances);
    this.advancesSeen += fresh;
    return fresh;
  }

  applyAck(ack: LabelAck): number {
    return this.applyProgress(ack);
  }

  /** Fold in a served estimate; returns the number of fresh stage advances.
   * Snapshots older than the latest series point are dropped, not reordered,
   * so the series stays monotone in sample count. */
  pushEstimate(est: EstimateResponse): number {
    const fresh = this.applyProgress(est);
    if (est.no_data || !est.report) return fresh;
    const rep = est.report;
    const g = rep.G_hat[0];
    if (!Number.isFinite(g)) {
      this.report = rep;
      return fresh;
    }
    const last = this.series[this.series.length - 1];
    if (last && rep.n_samples < last.n) return fresh;
    this.report = rep;
    if (last && rep.n_samples === last.n) {
      // same sample count, e.g. a refresh: replace rather than duplicate
      this.series.pop();
    }
    const band = rep.intervals ? rep.intervals[0] : null;
    this.series.push({
      n: rep.n_samples,
      g,
      lo: band ? band[0] : null,
      hi: band ? band[1] : null,
    });
    return fresh;
  }
}
