// Wire types mirroring the gateway HTTP API. The console displays these
// fields verbatim; it never recomputes risk or policy outcomes client-side.

export type PendingState = "pending" | "approved" | "denied" | "expired";

export interface PendingSummary {
  id: string;
  risk: number;
  state: PendingState;
  created_at: number;
  deadline: number;
  goal: string;
  decided_by: string | null;
}

export interface PlanStep {
  tool: string;
  args: [string, string][];
  reads: string[];
  writes: string[];
  reversible?: boolean;
}

export interface PendingDetail {
  id: string;
  step: { plan?: { goal: string; steps: PlanStep[] } };
  risk: number;
  provenance: {
    plan_goal?: string;
    manifest_hash?: string;
    segment_ids?: string[];
    session?: string;
  };
  state: PendingState;
  created_at: number;
  deadline: number;
  decided_by: string | null;
  risk_breakdown?: {
    weights: Record<string, number>;
  };
}

export interface AuditEventRecord {
  seq: number;
  timestamp: number;
  layer: string;
  subject: string;
  verdict: { decision: string; layer: string; reason: string; risk: number };
  prev_hash: string;
  this_hash: string;
}

export interface HealthRecord {
  status: string;
  manifest_hash: string | null;
  audit_events: number;
  chain_verifies: boolean;
}

export type Decision = "approve" | "deny";
