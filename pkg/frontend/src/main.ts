import { ServiceClient } from "./api.js";
import { ConsoleController } from "./controller.js";
import { escapeHtml } from "./format.js";

/** Entry point. With ?session=<id> the console attaches straight away;
 * otherwise it offers the registered pools and a resume box. One tab is one
 * annotator: the id lives in sessionStorage so reloads keep the lease. */

const MEASURE_KINDS = ["accuracy", "balanced_accuracy", "precision", "recall", "mcc"];

function annotatorId(): string {
  let id = sessionStorage.getItem("annotator-id");
  if (!id) {
    id = `tab-${Math.random().toString(36).slice(2, 10)}`;
    sessionStorage.setItem("annotator-id", id);
  }
  return id;
}

async function startConsole(root: HTMLElement, api: ServiceClient, sessionId: string): Promise<void> {
  const controller = new ConsoleController(api, root, annotatorId());
  controller.on("advance", () => {
    // badge text is refreshed by the estimate pass; nothing extra here
  });
  await controller.attach(sessionId);
  const url = new URL(window.location.href);
  url.searchParams.set("session", sessionId);
  window.history.replaceState(null, "", url);
}

async function renderStartPanel(root: HTMLElement, api: ServiceClient): Promise<void> {
  let pools: Record<string, { size: number; n_classes: number }> = {};
  try {
    pools = await api.listPools();
  } catch {
    root.innerHTML = `<div class="start-panel"><p class="error-text">service unreachable, reload to retry</p></div>`;
    return;
  }
  const poolOptions = Object.entries(pools)
    .map(([id, p]) => `<option value="${escapeHtml(id)}">${escapeHtml(id)} (${p.size} items)</option>`)
    .join("");
  const measureOptions = MEASURE_KINDS.map((k) => `<option value="${k}">${k}</option>`).join("");
  root.innerHTML = `
    <div class="start-panel">
      <h1>labeling console</h1>
      <form id="new-session" class="start-form">
        <label>pool <select name="pool" required>${poolOptions}</select></label>
        <label>measure <select name="measure">${measureOptions}</select></label>
        <button type="submit" ${poolOptions ? "" : "disabled"}>start session</button>
      </form>
      <form id="resume-session" class="start-form">
        <label>resume <input name="sid" placeholder="session id" required></label>
        <button type="submit">attach</button>
      </form>
    </div>
  `;
  root.querySelector<HTMLFormElement>("#new-session")?.addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const form = ev.target as HTMLFormElement;
    const data = new FormData(form);
    try {
      const meta = await api.createSession(String(data.get("pool")), {
        kind: String(data.get("measure")),
      });
      await startConsole(root, api, meta.session_id);
    } catch (err) {
      alert(`could not start session: ${err instanceof Error ? err.message : err}`);
    }
  });
  root.querySelector<HTMLFormElement>("#resume-session")?.addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const sid = String(new FormData(ev.target as HTMLFormElement).get("sid")).trim();
    if (!sid) return;
    try {
      await startConsole(root, api, sid);
    } catch (err) {
      alert(`could not attach: ${err instanceof Error ? err.message : err}`);
    }
  });
}

export async function boot(root: HTMLElement, base = ""): Promise<void> {
  const api = new ServiceClient(base);
  const sid = new URLSearchParams(window.location.search).get("session");
  if (sid) {
    await startConsole(root, api, sid);
  } else {
    await renderStartPanel(root, api);
  }
}

const mount = document.getElementById("app");
if (mount) {
  void boot(mount);
}
