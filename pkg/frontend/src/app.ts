/** Console wiring: session picker, panels, and the poll loop.
 *
 * The page holds no inference state: every render reads the API responses,
 * so a reload reconstructs the identical view.
 */

import { ApiRequestError, SessionApi } from "./api.js";
import { Poller } from "./state.js";
import { initObservationForm } from "./views/observation.js";
import { initRecommendationPanel } from "./views/recommendation.js";
import { initTimeline } from "./views/timeline.js";
import type { SessionSummary } from "./types.js";

export function initApp(root: HTMLElement, api: SessionApi): { poller: Poller } {
  root.innerHTML = `
    <header>
      <h1>seq<span>design</span> observing console</h1>
      <div class="picker">
        <select data-role="session-list"></select>
        <button data-role="load">load</button>
        <span data-role="status-line" class="status-line"></span>
      </div>
    </header>
    <main>
      <section class="panel" data-role="recommendation"></section>
      <section class="panel" data-role="observation"></section>
      <section class="panel wide" data-role="timeline"></section>
      <div class="error-banner hidden" data-role="api-error"></div>
    </main>
  `;
  const sessionSelect = root.querySelector('[data-role="session-list"]') as HTMLSelectElement;
  const loadButton = root.querySelector('[data-role="load"]') as HTMLButtonElement;
  const statusLine = root.querySelector('[data-role="status-line"]') as HTMLElement;
  const errorBanner = root.querySelector('[data-role="api-error"]') as HTMLElement;

  const recommendation = initRecommendationPanel(
    root.querySelector('[data-role="recommendation"]') as HTMLElement,
  );
  const timeline = initTimeline(root.querySelector('[data-role="timeline"]') as HTMLElement);

  let current: SessionSummary | null = null;

  const observation = initObservationForm(
    root.querySelector('[data-role="observation"]') as HTMLElement,
    async (count) => {
      if (!current) throw new Error("load a session first");
      const filterId = recommendation.selectedFilter();
      if (!filterId) throw new Error("no filter selected");
      await api.submitObservation(current.id, filterId, count);
      await refresh();
    },
  );

  function showError(message: string | null): void {
    errorBanner.textContent = message ?? "";
    errorBanner.classList.toggle("hidden", message === null);
  }

  async function refresh(): Promise<void> {
    if (!current) return;
    try {
      const summary = await api.getSession(current.id);
      current = summary;
      statusLine.textContent = `${summary.id} · ${summary.status} · t=${summary.t}` +
        (summary.t_max !== null ? `/${summary.t_max}` : "");
      const history = await api.getHistory(summary.id);
      timeline.render(history);
      if (summary.status === "awaiting-recommendation" || summary.status === "awaiting-observation") {
        const rec = await api.getRecommendation(summary.id);
        recommendation.render(rec, summary.filter_ids);
        recommendation.setStale(false);
        observation.setEnabled(true);
      } else {
        recommendation.render(null, summary.filter_ids);
        observation.setEnabled(false);
      }
      showError(null);
    } catch (err) {
      recommendation.setStale(true);
      showError(err instanceof ApiRequestError ? `${err.code}: ${err.message}` : String(err));
    }
  }

  async function loadSessionList(): Promise<void> {
    const ids = await api.listSessions();
    sessionSelect.innerHTML = ids.map((id) => `<option>${id}</option>`).join("");
  }

  loadButton.addEventListener("click", () => {
    const id = sessionSelect.value;
    if (!id) return;
    current = { id } as SessionSummary;
    void refresh();
  });

  const poller = new Poller(refresh, 2000);
  poller.start();
  void loadSessionList();
  return { poller };
}

declare global {
  interface Window {
    __SEQDESIGN_NO_BOOT__?: boolean;
  }
}

if (typeof document !== "undefined" && !window.__SEQDESIGN_NO_BOOT__) {
  document.addEventListener("DOMContentLoaded", () => {
    const root = document.getElementById("app");
    if (root) initApp(root, new SessionApi(".."));
  });
}
