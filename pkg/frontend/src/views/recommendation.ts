/** Score bars for every filter with the recommended one highlighted.
 *
 * What-if exploration works off the already-returned score map: picking
 * another filter in the override select re-highlights client-side, no
 * server call.
 */

import type { Recommendation } from "../types.js";

export interface RecommendationView {
  render(rec: Recommendation | null, filterIds: string[]): void;
  selectedFilter(): string | null;
  setStale(stale: boolean): void;
}

export function initRecommendationPanel(root: HTMLElement): RecommendationView {
  root.innerHTML = `
    <h2>Recommendation</h2>
    <div class="bars" data-role="bars"></div>
    <label class="override">observe through
      <select data-role="override"></select>
    </label>
    <span class="stale-badge hidden" data-role="stale">stale</span>
  `;
  const bars = root.querySelector('[data-role="bars"]') as HTMLElement;
  const select = root.querySelector('[data-role="override"]') as HTMLSelectElement;
  const stale = root.querySelector('[data-role="stale"]') as HTMLElement;

  let current: Recommendation | null = null;

  function highlight(): void {
    const chosen = select.value;
    for (const el of Array.from(bars.querySelectorAll(".bar-row"))) {
      el.classList.toggle(
        "recommended",
        el.getAttribute("data-filter") === current?.filter_id,
      );
      el.classList.toggle("selected", el.getAttribute("data-filter") === chosen);
    }
  }

  select.addEventListener("change", highlight);

  return {
    render(rec: Recommendation | null, filterIds: string[]): void {
      current = rec;
      const scores = rec?.eig_scores ?? {};
      const values = filterIds.map((fid) => scores[fid] ?? 0);
      const top = Math.max(...values, 0);
      bars.innerHTML = filterIds
        .map((fid, i) => {
          const width = top > 0 ? Math.max((values[i] / top) * 100, 0.5) : 0.5;
          return `
            <div class="bar-row" data-filter="${fid}">
              <span class="bar-label">${fid}</span>
              <span class="bar-track"><span class="bar-fill" style="width:${width.toFixed(1)}%"></span></span>
              <span class="bar-value">${values[i].toExponential(2)}</span>
            </div>`;
        })
        .join("");
      select.innerHTML = filterIds
        .map((fid) => `<option value="${fid}">${fid}</option>`)
        .join("");
      if (rec) select.value = rec.filter_id;
      highlight();
    },
    selectedFilter(): string | null {
      return select.value || null;
    },
    setStale(s: boolean): void {
      stale.classList.toggle("hidden", !s);
    },
  };
}
