import { describe, expect, it, vi } from "vitest";

import { ConflictError, GatewayClient, UnauthorizedError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("GatewayClient", () => {
  it("lists pending actions", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse([{ id: "a", risk: 0.6 }]));
    const client = new GatewayClient("http://gw", "tok", fetchMock);
    const items = await client.listPending();
    expect(items[0].id).toBe("a");
    expect(fetchMock).toHaveBeenCalledWith("http://gw/pending");
  });

  it("sends the reviewer token and body on decisions", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ id: "a", state: "denied" }));
    const client = new GatewayClient("http://gw", "secret-token", fetchMock);
    const result = await client.submitDecision("a", "deny", "dana");
    expect(result.state).toBe("denied");
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("http://gw/pending/a/decision");
    expect(init.headers["X-Reviewer-Token"]).toBe("secret-token");
    expect(JSON.parse(init.body)).toEqual({ decision: "deny", reviewer: "dana" });
  });

  it("maps 409 to ConflictError", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ code: "AlreadyDecided" }, 409));
    const client = new GatewayClient("http://gw", "tok", fetchMock);
    await expect(client.submitDecision("a", "approve", "bob")).rejects.toBeInstanceOf(ConflictError);
  });

  it("maps 401 to UnauthorizedError", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ code: "BadReviewerToken" }, 401));
    const client = new GatewayClient("http://gw", "wrong", fetchMock);
    await expect(client.submitDecision("a", "deny", "bob")).rejects.toBeInstanceOf(UnauthorizedError);
  });

  it("fetches the audit stream from a sequence number", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse([]));
    const client = new GatewayClient("http://gw", "tok", fetchMock);
    await client.auditSince(7);
    expect(fetchMock).toHaveBeenCalledWith("http://gw/audit?since=7");
  });

  it("encodes action ids in paths", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ id: "a/b" }));
    const client = new GatewayClient("http://gw", "tok", fetchMock);
    await client.pendingDetail("a/b");
    expect(fetchMock).toHaveBeenCalledWith("http://gw/pending/a%2Fb");
  });
});
