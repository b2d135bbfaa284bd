/** Count entry form: client-side validation plus an in-flight submit guard. */

export interface ObservationForm {
  setEnabled(enabled: boolean): void;
  /** Testing/bootstrap hook: read the currently validated count, if any. */
  readCount(): number | null;
}

export function validateCount(raw: string): number | null {
  const trimmed = raw.trim();
  if (!/^\d+$/.test(trimmed)) return null;
  const value = Number(trimmed);
  return Number.isSafeInteger(value) && value >= 0 ? value : null;
}

export function initObservationForm(
  root: HTMLElement,
  onSubmit: (count: number) => Promise<void>,
): ObservationForm {
  root.innerHTML = `
    <h2>Observation</h2>
    <form data-role="form">
      <label>photon count
        <input data-role="count" inputmode="numeric" autocomplete="off" placeholder="e.g. 42">
      </label>
      <button type="submit" data-role="submit">submit</button>
      <span class="error hidden" data-role="error"></span>
    </form>
  `;
  const form = root.querySelector('[data-role="form"]') as HTMLFormElement;
  const input = root.querySelector('[data-role="count"]') as HTMLInputElement;
  const button = root.querySelector('[data-role="submit"]') as HTMLButtonElement;
  const error = root.querySelector('[data-role="error"]') as HTMLElement;

  let inFlight = false;

  function showError(message: string | null): void {
    error.textContent = message ?? "";
    error.classList.toggle("hidden", message === null);
  }

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    if (inFlight) return; // double-click guard: one request per count
    const count = validateCount(input.value);
    if (count === null) {
      showError("enter a nonnegative whole number");
      return;
    }
    showError(null);
    inFlight = true;
    button.disabled = true;
    onSubmit(count)
      .then(() => {
        input.value = "";
      })
      .catch((err: unknown) => {
        showError(err instanceof Error ? err.message : String(err));
      })
      .finally(() => {
        inFlight = false;
        button.disabled = false;
      });
  });

  return {
    setEnabled(enabled: boolean): void {
      input.disabled = !enabled;
      button.disabled = !enabled;
    },
    readCount(): number | null {
      return validateCount(input.value);
    },
  };
}
