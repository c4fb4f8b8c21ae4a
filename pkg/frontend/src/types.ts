/** Wire types for the labeling service. These mirror the JSON the service
 * emits; the console renders them verbatim and computes nothing itself. */

export interface MeasureSpec {
  kind: string;
  [param: string]: unknown;
}

export interface SessionConfigInput {
  stage_size?: number;
  K?: number;
  branching?: number;
  depth?: number;
  epsilon0?: number;
  delta?: number;
  oracle?: "det" | "stoch";
  max_budget?: number | null;
  alpha?: number;
  seed?: number | null;
}

/** Progress block attached to most responses. */
export interface Progress {
  budget_consumed: number;
  stage: number;
  n_records: number;
  status: "active" | "complete";
  stage_advances: number;
}

export interface SessionMeta extends Progress {
  session_id: string;
  pool_id: string;
  pool_size: number;
  n_classes: number;
  measure: MeasureSpec;
  stage_size: number;
  oracle: "det" | "stoch";
  max_budget: number | null;
}

export interface QueryPayload {
  query_id: string;
  item_id: string;
  display: string;
  stage: number;
}

export interface QueriesResponse extends Progress {
  queries: QueryPayload[];
}

export interface LabelAck extends Progress {
  recorded: boolean;
  duplicate: boolean;
  stage_advanced: boolean;
}

/** Served estimate report. G_hat is the quantity on screen; intervals are
 * per-coordinate [lo, hi] rows at the session's confidence level. */
export interface ReportDoc {
  schema: string;
  G_hat: number[];
  R_hat: number[];
  n_samples: number;
  budget_consumed: number;
  stage: number;
  alpha: number | null;
  covariance: number[][] | null;
  intervals: number[][] | null;
  ellipsoid: Record<string, unknown> | null;
  undefined: boolean;
  degenerate: boolean;
  exhausted: boolean;
}

export interface EstimateResponse extends Progress {
  no_data: boolean;
  report?: ReportDoc;
}

export interface PoolInfo {
  size: number;
  n_classes: number;
}

export type PoolsResponse = Record<string, PoolInfo>;
