// Browser bootstrap: wires the client, poller, and renderers to the page.

import { ConflictError, GatewayClient } from "./api.js";
import { QueuePoller } from "./poller.js";
import {
  renderAudit,
  renderConflictNotice,
  renderDetail,
  renderErrorBanner,
  renderQueue,
} from "./views.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("gateway") ?? "http://127.0.0.1:8787";
  const token = params.get("token")
    ?? window.prompt("Reviewer token")
    ?? "";
  const reviewer = params.get("reviewer")
    ?? window.prompt("Reviewer name")
    ?? "reviewer";

  const client = new GatewayClient(baseUrl, token);
  const queueEl = el("queue");
  const detailEl = el("detail");
  const auditEl = el("audit");
  const bannerEl = el("banner");

  async function showDetail(id: string): Promise<void> {
    detailEl.innerHTML = renderDetail(await client.pendingDetail(id));
  }

  async function refreshAudit(): Promise<void> {
    auditEl.innerHTML = renderAudit(await client.auditSince(0));
  }

  const poller = new QueuePoller(client, {
    onUpdate: (items) => {
      queueEl.innerHTML = renderQueue(items);
      bannerEl.classList.remove("visible");
    },
    onError: (error) => {
      bannerEl.innerHTML = renderErrorBanner(`gateway unreachable: ${String(error)}`);
      bannerEl.classList.add("visible");
    },
  });

  queueEl.addEventListener("click", (event) => {
    const row = (event.target as HTMLElement).closest<HTMLElement>(".queue-row");
    if (row?.dataset.id) void showDetail(row.dataset.id);
  });

  detailEl.addEventListener("click", async (event) => {
    const button = (event.target as HTMLElement).closest<HTMLButtonElement>("button[data-id]");
    if (!button) return;
    const decision = button.classList.contains("approve") ? "approve" : "deny";
    try {
      await client.submitDecision(button.dataset.id!, decision, reviewer);
      await showDetail(button.dataset.id!);
    } catch (error) {
      if (error instanceof ConflictError) {
        bannerEl.innerHTML = renderConflictNotice(button.dataset.id!);
        bannerEl.classList.add("visible");
        await showDetail(button.dataset.id!);
      } else {
        bannerEl.innerHTML = renderErrorBanner(String(error));
        bannerEl.classList.add("visible");
      }
    }
    await poller.tick();
    await refreshAudit();
  });

  poller.start();
  void refreshAudit();
}

if (typeof document !== "undefined" && document.getElementById("queue")) {
  boot();
}
