// Thin fetch client for the inspection backend. Every response body goes
// through the parsers in types.ts, so a payload that is malformed or that
// carries oracle-only fields never reaches the UI.

import {
  ClusterList,
  NextPayload,
  SessionCreated,
  SessionSummary,
  parseClusterList,
  parseNextPayload,
  parseSessionCreated,
  parseSummary,
} from "./types.js";

export class BackendUnreachableError extends Error {
  constructor(public readonly reason: unknown) {
    super("backend unreachable");
    this.name = "BackendUnreachableError";
  }
}

export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export interface Api {
  getClusters(): Promise<ClusterList>;
  createSession(
    policy: string,
    seed: number,
    flatBudget?: number
  ): Promise<SessionCreated>;
  nextSample(sessionId: string): Promise<NextPayload>;
  submitVerdict(
    sessionId: string,
    sceneId: string,
    flagged: boolean
  ): Promise<void>;
  getSummary(sessionId: string): Promise<SessionSummary>;
}

async function request(
  base: string,
  method: "GET" | "POST",
  path: string,
  body?: unknown
): Promise<unknown> {
  let response: Response;
  try {
    response = await fetch(base + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  } catch (err) {
    throw new BackendUnreachableError(err);
  }
  const text = await response.text();
  let payload: unknown = null;
  if (text) {
    try {
      payload = JSON.parse(text);
    } catch {
      throw new ApiError(response.status, "backend returned non-JSON data");
    }
  }
  if (!response.ok) {
    const detail =
      payload !== null &&
      typeof payload === "object" &&
      typeof (payload as { error?: unknown }).error === "string"
        ? (payload as { error: string }).error
        : `HTTP ${response.status}`;
    throw new ApiError(response.status, detail);
  }
  return payload;
}

export class HttpApi implements Api {
  constructor(private readonly base: string = "") {}

  async getClusters(): Promise<ClusterList> {
    return parseClusterList(await request(this.base, "GET", "/api/clusters"));
  }

  async createSession(
    policy: string,
    seed: number,
    flatBudget?: number
  ): Promise<SessionCreated> {
    const body: Record<string, unknown> = { policy, seed };
    if (flatBudget !== undefined) {
      body.flat_budget = flatBudget;
    }
    return parseSessionCreated(
      await request(this.base, "POST", "/api/sessions", body)
    );
  }

  async nextSample(sessionId: string): Promise<NextPayload> {
    return parseNextPayload(
      await request(this.base, "GET", `/api/sessions/${sessionId}/next`)
    );
  }

  async submitVerdict(
    sessionId: string,
    sceneId: string,
    flagged: boolean
  ): Promise<void> {
    await request(this.base, "POST", `/api/sessions/${sessionId}/verdict`, {
      scene_id: sceneId,
      flagged,
    });
  }

  async getSummary(sessionId: string): Promise<SessionSummary> {
    return parseSummary(
      await request(this.base, "GET", `/api/sessions/${sessionId}/summary`)
    );
  }
}
