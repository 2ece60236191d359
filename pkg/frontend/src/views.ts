// Pure HTML renderers for the console views. Everything shown comes
// straight from the API payloads so the tests can assert on strings
// without a DOM.

import type { AuditEventRecord, PendingDetail, PendingSummary } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function riskBadge(risk: number): string {
  const band = risk >= 0.8 ? "deny" : risk >= 0.5 ? "escalate" : "low";
  return `<span class="risk risk-${band}">${risk.toFixed(3)}</span>`;
}

function stateBadge(state: string): string {
  return `<span class="state state-${state}">${state}</span>`;
}

export function renderQueue(items: PendingSummary[]): string {
  if (items.length === 0) {
    return `<div class="empty-state">No pending actions. The agent is running within policy.</div>`;
  }
  const rows = items
    .map(
      (item) => `
      <tr data-id="${escapeHtml(item.id)}" class="queue-row">
        <td><code>${escapeHtml(item.id)}</code></td>
        <td>${escapeHtml(item.goal)}</td>
        <td>${riskBadge(item.risk)}</td>
        <td>${stateBadge(item.state)}</td>
        <td>${item.decided_by ? escapeHtml(item.decided_by) : "—"}</td>
      </tr>`,
    )
    .join("");
  return `
    <table class="queue">
      <thead><tr><th>id</th><th>goal</th><th>risk</th><th>state</th><th>reviewer</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}

export function renderDetail(detail: PendingDetail): string {
  const plan = detail.step.plan;
  const steps = (plan?.steps ?? [])
    .map((step, i) => {
      const args = step.args.map(([k, v]) => `${k}=${v}`).join(" ");
      const flags = [
        step.reversible === false ? `<span class="flag flag-irreversible">irreversible</span>` : "",
        step.writes.length ? `<span class="flag">writes ${escapeHtml(step.writes.join(", "))}</span>` : "",
      ]
        .filter(Boolean)
        .join(" ");
      return `<li class="plan-step">${i + 1}. <code>${escapeHtml(step.tool)} ${escapeHtml(args)}</code> ${flags}</li>`;
    })
    .join("");
  const weights = detail.risk_breakdown?.weights ?? {};
  const weightRows = Object.entries(weights)
    .map(([name, w]) => `<li>${escapeHtml(name)}: ${w}</li>`)
    .join("");
  const segments = (detail.provenance.segment_ids ?? [])
    .map((sid) => `<span class="segment-badge tier-external">${escapeHtml(sid)}</span>`)
    .join(" ");
  const actionable = detail.state === "pending";
  const actions = actionable
    ? `<button class="approve" data-id="${escapeHtml(detail.id)}">Approve</button>
       <button class="deny" data-id="${escapeHtml(detail.id)}">Deny</button>`
    : `<div class="decided">state: ${stateBadge(detail.state)}${
        detail.decided_by ? ` by ${escapeHtml(detail.decided_by)}` : ""
      } (not actionable)</div>`;

  return `
    <section class="detail" data-id="${escapeHtml(detail.id)}">
      <h2>Pending action <code>${escapeHtml(detail.id)}</code></h2>
      <div class="risk-line">risk ${riskBadge(detail.risk)}</div>
      <ul class="risk-weights">${weightRows}</ul>
      <h3>Plan: ${escapeHtml(plan?.goal ?? "")}</h3>
      <ol class="plan-steps">${steps}</ol>
      <h3>Provenance</h3>
      <div class="provenance">
        <div>manifest <code class="manifest-hash">${escapeHtml(detail.provenance.manifest_hash ?? "")}</code></div>
        <div>session <code>${escapeHtml(detail.provenance.session ?? "")}</code></div>
        <div class="segments">${segments}</div>
      </div>
      <div class="actions">${actions}</div>
    </section>`;
}

export function renderAudit(events: AuditEventRecord[]): string {
  const rows = events
    .map(
      (ev) => `
      <tr class="audit-row audit-${ev.verdict.decision}">
        <td>${ev.seq}</td>
        <td>${escapeHtml(ev.layer)}</td>
        <td>${escapeHtml(ev.verdict.decision)}</td>
        <td>${escapeHtml(ev.subject)}</td>
        <td>${escapeHtml(ev.verdict.reason)}</td>
      </tr>`,
    )
    .join("");
  return `
    <table class="audit">
      <thead><tr><th>seq</th><th>layer</th><th>decision</th><th>subject</th><th>reason</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner banner-error">${escapeHtml(message)}</div>`;
}

export function renderConflictNotice(id: string): string {
  return `<div class="banner banner-conflict">Action <code>${escapeHtml(id)}</code> was already decided by another reviewer. Refreshing.</div>`;
}
