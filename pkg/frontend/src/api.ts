// Typed client for the gateway review API. The reviewer token is supplied
// once (login) and attached to every decision request.

import type {
  AuditEventRecord,
  Decision,
  HealthRecord,
  PendingDetail,
  PendingSummary,
} from "./types.js";

export class ConflictError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConflictError";
  }
}

export class UnauthorizedError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "UnauthorizedError";
  }
}

export class GatewayError extends Error {
  constructor(message: string, public readonly status: number) {
    super(message);
    this.name = "GatewayError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(
    private readonly baseUrl: string,
    private readonly reviewerToken: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!resp.ok) {
      throw new GatewayError(`GET ${path} failed: ${resp.status}`, resp.status);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<HealthRecord> {
    return this.get<HealthRecord>("/health");
  }

  listPending(): Promise<PendingSummary[]> {
    return this.get<PendingSummary[]>("/pending");
  }

  pendingDetail(id: string): Promise<PendingDetail> {
    return this.get<PendingDetail>(`/pending/${encodeURIComponent(id)}`);
  }

  auditSince(seq: number): Promise<AuditEventRecord[]> {
    return this.get<AuditEventRecord[]>(`/audit?since=${seq}`);
  }

  async submitDecision(
    id: string,
    decision: Decision,
    reviewer: string,
  ): Promise<PendingDetail> {
    const resp = await this.fetchImpl(
      `${this.baseUrl}/pending/${encodeURIComponent(id)}/decision`,
      {
        method: "POST",
        headers: {
          "Content-Type": "application/json",
          "X-Reviewer-Token": this.reviewerToken,
        },
        body: JSON.stringify({ decision, reviewer }),
      },
    );
    if (resp.status === 409) {
      throw new ConflictError(`action ${id} was already decided`);
    }
    if (resp.status === 401) {
      throw new UnauthorizedError("reviewer token rejected");
    }
    if (!resp.ok) {
      throw new GatewayError(`decision failed: ${resp.status}`, resp.status);
    }
    return (await resp.json()) as PendingDetail;
  }
}
