import { afterEach, describe, expect, test } from "vitest";
import { ApiError, ServiceClient } from "../src/api.js";
import { ConsoleController } from "../src/controller.js";
import { fmtEstimate } from "../src/format.js";
import { EstimateResponse, LabelAck, QueriesResponse, SessionMeta } from "../src/types.js";

/** In-memory stand-in for the service: deterministic labels-to-completion
 * flow with a stage advance every `stageSize` records. */
class FakeService {
  labels = 0;
  advances = 0;
  queryCounter = 0;
  conflictOn: Set<number> = new Set();
  estimateFailures = 0;
  readonly stageSize: number;
  readonly maxBudget: number;

  constructor(stageSize: number, maxBudget: number) {
    this.stageSize = stageSize;
    this.maxBudget = maxBudget;
  }

  private get status(): "active" | "complete" {
    return this.labels >= this.maxBudget ? "complete" : "active";
  }

  private progress() {
    return {
      budget_consumed: this.labels,
      stage: this.advances,
      n_records: this.labels,
      status: this.status,
      stage_advances: this.advances,
    };
  }

  async sessionMeta(): Promise<SessionMeta> {
    return {
      session_id: "fake-session",
      pool_id: "p0",
      pool_size: 40,
      n_classes: 2,
      measure: { kind: "accuracy" },
      stage_size: this.stageSize,
      oracle: "stoch",
      max_budget: this.maxBudget,
      ...this.progress(),
    };
  }

  async nextQueries(): Promise<QueriesResponse> {
    if (this.status !== "active") {
      throw new ApiError(409, "session_complete", "session is complete");
    }
    this.queryCounter += 1;
    return {
      queries: [
        {
          query_id: `q-${this.queryCounter}`,
          item_id: `item-${this.queryCounter}`,
          display: `item ${this.queryCounter}`,
          stage: this.advances,
        },
      ],
      ...this.progress(),
    };
  }

  async submitLabel(_sid: string, queryId: string): Promise<LabelAck> {
    const qn = Number(queryId.split("-")[1]);
    if (this.conflictOn.has(qn)) {
      this.conflictOn.delete(qn);
      throw new ApiError(409, "conflict", "first answer wins");
    }
    this.labels += 1;
    let advanced = false;
    if (this.labels % this.stageSize === 0) {
      this.advances += 1;
      advanced = true;
    }
    return { recorded: true, duplicate: false, stage_advanced: advanced, ...this.progress() };
  }

  async fetchEstimate(): Promise<EstimateResponse> {
    if (this.estimateFailures > 0) {
      this.estimateFailures -= 1;
      throw new TypeError("fetch failed");
    }
    if (this.labels === 0) return { no_data: true, ...this.progress() };
    const g = 0.5 + 0.01 * this.labels;
    return {
      no_data: false,
      report: {
        schema: "estimate-report/1",
        G_hat: [g],
        R_hat: [g],
        n_samples: this.labels,
        budget_consumed: this.labels,
        stage: this.advances,
        alpha: 0.05,
        covariance: [[0.02]],
        intervals: [[g - 0.05, g + 0.05]],
        ellipsoid: null,
        undefined: false,
        degenerate: false,
        exhausted: false,
      },
      ...this.progress(),
    };
  }
}

function mountController(
  svc: FakeService,
  retryDelay: () => number = () => 1,
): { root: HTMLElement; controller: ConsoleController } {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const controller = new ConsoleController(svc as unknown as ServiceClient, root, "tab-1", {
    retryDelay,
  });
  return { root, controller };
}

/** Answer every rendered query from the keyboard until the session ends. */
function scriptKeyboard(controller: ConsoleController, pickLabel: (i: number) => number): Promise<number> {
  return new Promise((resolve) => {
    let i = 0;
    controller.on("query", () => {
      const label = pickLabel(i);
      i += 1;
      queueMicrotask(() => {
        document.dispatchEvent(new KeyboardEvent("keydown", { key: String(label), bubbles: true }));
      });
    });
    controller.on("complete", () => resolve(i));
  });
}

afterEach(() => {
  document.body.innerHTML = "";
});

describe("label flow", () => {
  test("keyboard-only session runs to completion", async () => {
    const svc = new FakeService(3, 6);
    const { root, controller } = mountController(svc);
    const done = scriptKeyboard(controller, (i) => i % 2);
    await controller.attach("fake-session");
    const answered = await done;

    expect(answered).toBe(6);
    expect(svc.labels).toBe(6);
    // two server advances, two indicator fires, no doubles
    expect(controller.advanceFires).toBe(2);
    expect(controller.state.advancesSeen).toBe(2);
    // final on-screen value is the served one
    expect(controller.onScreenEstimate).toBe(fmtEstimate(0.5 + 0.01 * 6));
    expect(root.querySelector<HTMLElement>("#complete-banner")!.hidden).toBe(false);
    expect(root.querySelector<HTMLButtonElement>(".label-btn")!.disabled).toBe(true);
    controller.dispose();
  });

  test("a lost submission race shows the first-answer-wins notice and moves on", async () => {
    const svc = new FakeService(3, 3);
    svc.conflictOn.add(2); // second query collides
    const { root, controller } = mountController(svc);
    let notices = 0;
    controller.on("notice", () => (notices += 1));
    const done = scriptKeyboard(controller, () => 1);
    await controller.attach("fake-session");
    const answered = await done;

    // four queries issued: one lost to the conflict, three recorded
    expect(answered).toBe(4);
    expect(svc.labels).toBe(3);
    expect(notices).toBe(1);
    expect(root.querySelector<HTMLElement>("#notice")!.textContent).toContain("first answer wins");
    controller.dispose();
  });

  test("network failures retry with a visible offline state", async () => {
    const svc = new FakeService(2, 2);
    svc.estimateFailures = 2; // the first estimate fetch fails twice, then recovers
    const { root, controller } = mountController(svc, () => 60);
    const offlineSeen: boolean[] = [];
    controller.on("estimate", () => {
      offlineSeen.push(!root.querySelector<HTMLElement>("#offline-banner")!.hidden);
    });
    const done = scriptKeyboard(controller, () => 0);

    const attach = controller.attach("fake-session");
    // the banner goes up while the estimate endpoint is failing
    await new Promise((res) => setTimeout(res, 15));
    expect(root.querySelector<HTMLElement>("#offline-banner")!.hidden).toBe(false);
    await attach;
    await done;

    // recovered: banner cleared by the successful retry
    expect(root.querySelector<HTMLElement>("#offline-banner")!.hidden).toBe(true);
    expect(offlineSeen.every((v) => v === false)).toBe(true);
    expect(svc.labels).toBe(2);
    controller.dispose();
  });

  test("input outside the label space is ignored", async () => {
    const svc = new FakeService(2, 2);
    const { controller } = mountController(svc);
    let queries = 0;
    const done = new Promise<void>((resolve) => {
      controller.on("complete", () => resolve());
    });
    controller.on("query", () => {
      queries += 1;
      queueMicrotask(() => {
        // the out-of-range digit must not consume the query
        document.dispatchEvent(new KeyboardEvent("keydown", { key: "7", bubbles: true }));
        document.dispatchEvent(new KeyboardEvent("keydown", { key: "1", bubbles: true }));
      });
    });
    await controller.attach("fake-session");
    await done;
    expect(queries).toBe(2);
    expect(svc.labels).toBe(2);
    controller.dispose();
  });
});
