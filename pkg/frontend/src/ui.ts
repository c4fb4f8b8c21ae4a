import { estimateChartSvg, prCurveSvg } from "./chart.js";
import { escapeHtml, fmtBudget, fmtEstimate, fmtInterval } from "./format.js";
import { SessionState } from "./state.js";
import { QueryPayload } from "./types.js";

/** DOM layer. Renders served state into a fixed skeleton and turns clicks
 * and digit keys into label callbacks. No statistics are computed here. */

export function renderShell(root: HTMLElement, state: SessionState): void {
  const m = state.meta;
  root.innerHTML = `
    <div class="console">
      <header class="topbar">
        <div>
          <span class="session-label">session</span>
          <span id="session-id" class="session-id">${escapeHtml(m.session_id)}</span>
          <span class="pool-tag">${escapeHtml(m.pool_id)} (${m.pool_size} items)</span>
        </div>
        <div class="top-right">
          <span id="stage-badge" class="stage-badge">stage ${state.stage}</span>
          <span id="advance-flash" class="advance-flash" data-fires="0" hidden>model updated</span>
        </div>
      </header>
      <div id="offline-banner" class="offline-banner" hidden>connection lost, retrying</div>
      <div id="notice" class="notice" hidden></div>
      <main class="layout">
        <section class="query-panel">
          <div id="query-card" class="query-card">
            <div class="query-meta">
              <span id="query-id" class="query-id"></span>
            </div>
            <div id="query-display" class="query-display">loading first query</div>
          </div>
          <div id="label-buttons" class="label-buttons">${labelButtonsHtml(state.nClasses)}</div>
          <p class="key-hint">press 0${state.nClasses > 1 ? `-${state.nClasses - 1}` : ""} to label from the keyboard</p>
        </section>
        <aside class="estimate-panel">
          <div class="estimate-head">
            <div><span class="estimate-label">estimate</span> <span id="g-value" class="g-value">-</span></div>
            <div id="g-interval" class="g-interval"></div>
          </div>
          <div id="chart-box" class="chart-box"></div>
          <div class="gauge-row">
            <div class="gauge-track"><div id="gauge-fill" class="gauge-fill"></div></div>
            <span id="gauge-text" class="gauge-text"></span>
          </div>
        </aside>
      </main>
      <div id="complete-banner" class="complete-banner" hidden>session complete</div>
    </div>
  `;
  updateGauge(root, state);
}

function labelButtonsHtml(nClasses: number): string {
  // exactly one button per class; the label space is the session's, nothing else
  let html = "";
  for (let y = 0; y < nClasses; y++) {
    html += `<button type="button" class="label-btn" data-label="${y}">
      <span class="key-cap">${y}</span> label ${y}
    </button>`;
  }
  return html;
}

export function updateQuery(root: HTMLElement, query: QueryPayload | null): void {
  const card = root.querySelector<HTMLElement>("#query-display");
  const qid = root.querySelector<HTMLElement>("#query-id");
  if (!card || !qid) return;
  if (query === null) {
    card.textContent = "no pending query";
    qid.textContent = "";
    return;
  }
  card.textContent = query.display;
  qid.textContent = query.query_id;
}

export function updateEstimate(root: HTMLElement, state: SessionState): void {
  const gEl = root.querySelector<HTMLElement>("#g-value");
  const ivEl = root.querySelector<HTMLElement>("#g-interval");
  const box = root.querySelector<HTMLElement>("#chart-box");
  if (!gEl || !ivEl || !box) return;
  const rep = state.report;
  if (!rep) {
    gEl.textContent = "-";
    ivEl.textContent = "";
    box.innerHTML = estimateChartSvg([]);
    return;
  }
  if (state.meta.measure.kind === "pr_curve") {
    gEl.textContent = `${rep.G_hat.length / 2}-point curve`;
    ivEl.textContent = "";
    box.innerHTML = prCurveSvg(rep);
  } else {
    gEl.textContent = fmtEstimate(rep.G_hat[0]);
    const band = rep.intervals ? rep.intervals[0] : null;
    ivEl.textContent = band ? fmtInterval(band[0], band[1]) : "";
    box.innerHTML = estimateChartSvg(state.series);
  }
  updateStage(root, state);
  updateGauge(root, state);
}

export function updateStage(root: HTMLElement, state: SessionState): void {
  const badge = root.querySelector<HTMLElement>("#stage-badge");
  if (badge) badge.textContent = `stage ${state.stage}`;
}

export function updateGauge(root: HTMLElement, state: SessionState): void {
  const fill = root.querySelector<HTMLElement>("#gauge-fill");
  const text = root.querySelector<HTMLElement>("#gauge-text");
  if (!fill || !text) return;
  text.textContent = fmtBudget(state.budgetConsumed, state.maxBudget);
  if (state.maxBudget !== null && state.maxBudget > 0) {
    const pct = Math.min(100, (100 * state.budgetConsumed) / state.maxBudget);
    fill.style.width = `${pct.toFixed(1)}%`;
  } else {
    fill.style.width = "0%";
  }
}

const FLASH_MS = 1800;

/** Brief "model updated" indicator after a stage advance. data-fires counts
 * every firing so scripted sessions can audit the exact number. */
export function flashAdvance(root: HTMLElement): void {
  const el = root.querySelector<HTMLElement>("#advance-flash");
  if (!el) return;
  el.dataset.fires = String(Number(el.dataset.fires || "0") + 1);
  el.hidden = false;
  window.clearTimeout(Number(el.dataset.timer || "0"));
  el.dataset.timer = String(
    window.setTimeout(() => {
      el.hidden = true;
    }, FLASH_MS),
  );
}

export function setOffline(root: HTMLElement, offline: boolean): void {
  const el = root.querySelector<HTMLElement>("#offline-banner");
  if (el) el.hidden = !offline;
}

export function showNotice(root: HTMLElement, text: string): void {
  const el = root.querySelector<HTMLElement>("#notice");
  if (!el) return;
  el.textContent = text;
  el.hidden = false;
  window.clearTimeout(Number(el.dataset.timer || "0"));
  el.dataset.timer = String(
    window.setTimeout(() => {
      el.hidden = true;
    }, 4000),
  );
}

export function setComplete(root: HTMLElement): void {
  const banner = root.querySelector<HTMLElement>("#complete-banner");
  if (banner) banner.hidden = false;
  const buttons = root.querySelectorAll<HTMLButtonElement>(".label-btn");
  buttons.forEach((b) => (b.disabled = true));
  updateQuery(root, null);
}

export function setButtonsEnabled(root: HTMLElement, enabled: boolean): void {
  root.querySelectorAll<HTMLButtonElement>(".label-btn").forEach((b) => (b.disabled = !enabled));
}

/** Wire clicks and digit keys to the label callback. Keys 0-9 map straight
 * to class indices, so the whole flow works without a pointer. Returns an
 * unbind function. */
export function bindLabelInput(
  root: HTMLElement,
  nClasses: number,
  onLabel: (label: number) => void,
): () => void {
  const onClick = (ev: Event) => {
    const btn = (ev.target as HTMLElement).closest<HTMLButtonElement>(".label-btn");
    if (!btn || btn.disabled) return;
    onLabel(Number(btn.dataset.label));
  };
  const onKey = (ev: KeyboardEvent) => {
    if (ev.altKey || ev.ctrlKey || ev.metaKey) return;
    if (ev.key < "0" || ev.key > "9") return;
    const label = Number(ev.key);
    if (label >= nClasses) return;
    onLabel(label);
  };
  root.addEventListener("click", onClick);
  root.ownerDocument.addEventListener("keydown", onKey);
  return () => {
    root.removeEventListener("click", onClick);
    root.ownerDocument.removeEventListener("keydown", onKey);
  };
}
