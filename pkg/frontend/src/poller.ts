// Auto-refresh loop for the pending queue. The server is the source of
// truth; each tick replaces local state wholesale (no optimistic merges
// beyond the in-flight decision reconciliation in main.ts).

import type { GatewayClient } from "./api.js";
import type { PendingSummary } from "./types.js";

export interface PollerHooks {
  onUpdate: (items: PendingSummary[]) => void;
  onError?: (error: unknown) => void;
}

export class QueuePoller {
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly client: GatewayClient,
    private readonly hooks: PollerHooks,
    private readonly intervalMs: number = 2000,
  ) {}

  async tick(): Promise<void> {
    try {
      this.hooks.onUpdate(await this.client.listPending());
    } catch (error) {
      this.hooks.onError?.(error);
    }
  }

  start(): void {
    if (this.timer !== null) return;
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
