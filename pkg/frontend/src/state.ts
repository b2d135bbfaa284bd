/** Session polling with per-session in-flight deduplication.
 *
 * Sessions are human-paced, so the console polls status every couple of
 * seconds; a tick is skipped while the previous one is still running.
 */

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(
    private readonly tick: () => Promise<void>,
    private readonly intervalMs = 2000,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => void this.run(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One poll cycle; concurrent invocations collapse into one request. */
  async run(): Promise<boolean> {
    if (this.inFlight) return false;
    this.inFlight = true;
    try {
      await this.tick();
      return true;
    } finally {
      this.inFlight = false;
    }
  }
}
