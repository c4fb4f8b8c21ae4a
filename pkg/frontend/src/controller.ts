import { ApiError, ServiceClient, isConflict, isSessionClosed } from "./api.js";
import { SessionState } from "./state.js";
import { QueryPayload } from "./types.js";
import {
  bindLabelInput,
  flashAdvance,
  renderShell,
  setButtonsEnabled,
  setComplete,
  setOffline,
  showNotice,
  updateEstimate,
  updateQuery,
} from "./ui.js";

export type ConsoleEvent = "query" | "estimate" | "advance" | "complete" | "notice";

export interface ControllerOptions {
  /** backoff before retry attempt k (ms); injectable for tests */
  retryDelay?: (attempt: number) => number;
  /** give up after this many network retries (default: never) */
  maxRetries?: number;
}

const defaultDelay = (attempt: number) => Math.min(4000, 400 * 2 ** attempt);
const sleep = (ms: number) => new Promise<void>((res) => setTimeout(res, ms));

/** Drives one annotator's label flow against a session: lease a query,
 * render it, submit the chosen label, refresh the served estimate, repeat.
 * One controller per browser tab; the annotator id scopes the lease. */
export class ConsoleController {
  readonly api: ServiceClient;
  readonly root: HTMLElement;
  readonly annotator: string;
  state!: SessionState;
  private unbind: (() => void) | null = null;
  private busy = false;
  private done = false;
  private listeners = new Map<ConsoleEvent, Set<(detail?: unknown) => void>>();
  private opts: Required<ControllerOptions>;

  constructor(api: ServiceClient, root: HTMLElement, annotator: string, opts: ControllerOptions = {}) {
    this.api = api;
    this.root = root;
    this.annotator = annotator;
    this.opts = {
      retryDelay: opts.retryDelay ?? defaultDelay,
      maxRetries: opts.maxRetries ?? Number.POSITIVE_INFINITY,
    };
  }

  on(event: ConsoleEvent, fn: (detail?: unknown) => void): void {
    if (!this.listeners.has(event)) this.listeners.set(event, new Set());
    this.listeners.get(event)!.add(fn);
  }

  private emit(event: ConsoleEvent, detail?: unknown): void {
    this.listeners.get(event)?.forEach((fn) => fn(detail));
  }

  /** Attach to an existing session and start the flow. */
  async attach(sessionId: string): Promise<void> {
    const meta = await this.withRetry(() => this.api.sessionMeta(sessionId));
    this.state = new SessionState(meta);
    renderShell(this.root, this.state);
    this.unbind = bindLabelInput(this.root, this.state.nClasses, (label) => {
      void this.submit(label);
    });
    await this.refreshEstimate();
    if (this.state.status === "complete") {
      this.finish();
      return;
    }
    await this.lease();
  }

  dispose(): void {
    this.unbind?.();
    this.unbind = null;
  }

  get sessionId(): string {
    return this.state.meta.session_id;
  }

  /** Current on-screen estimate text, for scripted audits. */
  get onScreenEstimate(): string {
    return this.root.querySelector("#g-value")?.textContent ?? "";
  }

  get advanceFires(): number {
    return Number(this.root.querySelector<HTMLElement>("#advance-flash")?.dataset.fires || "0");
  }

  private surfaceAdvances(count: number): void {
    for (let i = 0; i < count; i++) {
      flashAdvance(this.root);
      this.emit("advance", this.state.advancesSeen);
    }
  }

  private async refreshEstimate(): Promise<void> {
    const est = await this.withRetry(() => this.api.fetchEstimate(this.sessionId));
    this.surfaceAdvances(this.state.pushEstimate(est));
    updateEstimate(this.root, this.state);
    this.emit("estimate", est);
  }

  private async lease(): Promise<void> {
    while (!this.done) {
      let resp;
      try {
        resp = await this.withRetry(() => this.api.nextQueries(this.sessionId, 1, this.annotator));
      } catch (err) {
        if (isSessionClosed(err)) {
          this.finish();
          return;
        }
        throw err;
      }
      this.surfaceAdvances(this.state.applyProgress(resp));
      updateEstimate(this.root, this.state);
      if (this.state.status !== "active") {
        this.finish();
        return;
      }
      if (resp.queries.length > 0) {
        this.state.query = resp.queries[0];
        updateQuery(this.root, this.state.query);
        setButtonsEnabled(this.root, true);
        this.emit("query", this.state.query);
        return;
      }
      // active but nothing leased: another annotator holds the stage's
      // remaining capacity; poll until the stage turns over
      await sleep(this.opts.retryDelay(0));
    }
  }

  /** Submit a label for the pending query. Ignores input while a submit is
   * in flight and labels outside the session's label space. The busy window
   * covers only the submit and estimate refresh; by the time the next query
   * renders, new input goes through. */
  async submit(label: number): Promise<void> {
    if (this.busy || this.done) return;
    const query = this.state.query;
    if (!query || label < 0 || label >= this.state.nClasses) return;
    this.busy = true;
    setButtonsEnabled(this.root, false);
    try {
      try {
        const ack = await this.withRetry(() =>
          this.api.submitLabel(this.sessionId, query.query_id, label, this.annotator),
        );
        this.state.query = null;
        this.surfaceAdvances(this.state.applyAck(ack));
      } catch (err) {
        if (isConflict(err)) {
          // someone answered first; their label stands
          showNotice(this.root, "already answered elsewhere, first answer wins");
          this.emit("notice", "conflict");
          this.state.query = null;
        } else if (isSessionClosed(err)) {
          this.finish();
          return;
        } else {
          throw err;
        }
      }
      await this.refreshEstimate();
    } finally {
      this.busy = false;
    }
    if (this.done) return;
    if (this.state.status === "active") {
      await this.lease();
    } else {
      this.finish();
    }
  }

  private finish(): void {
    if (this.done) return;
    this.done = true;
    this.state.query = null;
    setComplete(this.root);
    this.emit("complete", this.state);
  }

  /** Run a request, retrying network failures with a visible offline state.
   * HTTP errors (ApiError) are the caller's problem and pass through. */
  private async withRetry<T>(fn: () => Promise<T>): Promise<T> {
    let attempt = 0;
    for (;;) {
      try {
        const out = await fn();
        if (this.state?.offline) {
          this.state.offline = false;
          setOffline(this.root, false);
        }
        return out;
      } catch (err) {
        if (err instanceof ApiError) throw err;
        if (attempt >= this.opts.maxRetries) throw err;
        if (this.state) this.state.offline = true;
        setOffline(this.root, true);
        await sleep(this.opts.retryDelay(attempt));
        attempt += 1;
      }
    }
  }
}
