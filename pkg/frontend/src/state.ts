// Session state machine behind the UI. One active session per tab; every
// verdict POSTs immediately and the viewer advances only on the server's
// say-so, so the server stays the source of truth while the buttons react
// optimistically (they lock the moment a verdict is chosen).

import { Api, ApiError } from "./api.js";
import {
  ClusterRow,
  SamplePayload,
  SessionSummary,
} from "./types.js";

export type View =
  | { kind: "loading" }
  | { kind: "empty" }
  | { kind: "clusters"; clusters: ClusterRow[]; nScenes: number }
  | {
      kind: "inspecting";
      sessionId: string;
      total: number;
      sample: SamplePayload;
      verdictPending: boolean;
      chosen?: boolean;
    }
  | { kind: "summary"; summary: SessionSummary };

export interface AppState {
  view: View;
  banner: string | null;
}

type Listener = (state: AppState) => void;

export class InspectionApp {
  private view: View = { kind: "loading" };
  private banner: string | null = null;
  private listeners: Listener[] = [];
  private retryAction: (() => Promise<void>) | null = null;

  constructor(private readonly api: Api) {}

  get state(): AppState {
    return { view: this.view, banner: this.banner };
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
    listener(this.state);
  }

  private emit(): void {
    const snapshot = this.state;
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }

  private setView(view: View): void {
    this.view = view;
    this.banner = null;
    this.retryAction = null;
    this.emit();
  }

  private fail(message: string, retry: () => Promise<void>): void {
    this.banner = message;
    this.retryAction = retry;
    this.emit();
  }

  async retry(): Promise<void> {
    const action = this.retryAction;
    if (action === null) {
      return;
    }
    this.banner = null;
    this.retryAction = null;
    this.emit();
    await action();
  }

  async init(): Promise<void> {
    this.view = { kind: "loading" };
    this.emit();
    let clusters;
    try {
      clusters = await this.api.getClusters();
    } catch (err) {
      this.fail(describe(err), () => this.init());
      return;
    }
    if (clusters.clusters.length === 0) {
      this.setView({ kind: "empty" });
      return;
    }
    this.setView({
      kind: "clusters",
      clusters: clusters.clusters,
      nScenes: clusters.n_scenes,
    });
  }

  async startSession(
    policy = "oracle",
    seed = 0,
    flatBudget?: number
  ): Promise<void> {
    if (this.view.kind !== "clusters") {
      return;
    }
    let created;
    try {
      created = await this.api.createSession(policy, seed, flatBudget);
    } catch (err) {
      this.fail(describe(err), () => this.startSession(policy, seed, flatBudget));
      return;
    }
    await this.advance(created.session_id, created.total);
  }

  private async advance(sessionId: string, total: number): Promise<void> {
    let next;
    try {
      next = await this.api.nextSample(sessionId);
    } catch (err) {
      this.fail(describe(err), () => this.advance(sessionId, total));
      return;
    }
    if (next.done) {
      await this.showSummary(sessionId);
      return;
    }
    this.setView({
      kind: "inspecting",
      sessionId,
      total,
      sample: next,
      verdictPending: false,
    });
  }

  private async showSummary(sessionId: string): Promise<void> {
    let summary;
    try {
      summary = await this.api.getSummary(sessionId);
    } catch (err) {
      this.fail(describe(err), () => this.showSummary(sessionId));
      return;
    }
    this.setView({ kind: "summary", summary });
  }

  /** Submit the verdict for the sample on screen. Re-entrant calls while a
   * POST is in flight are dropped, so a held-down key or double click can
   * never record two verdicts for one scene. */
  async submitVerdict(flagged: boolean): Promise<void> {
    const view = this.view;
    if (view.kind !== "inspecting" || view.verdictPending) {
      return;
    }
    this.view = { ...view, verdictPending: true, chosen: flagged };
    this.emit();
    try {
      await this.api.submitVerdict(view.sessionId, view.sample.scene_id, flagged);
    } catch (err) {
      // A 400 "already has a verdict" means a previous attempt did land on
      // the server before its response got lost; the server's record wins.
      if (err instanceof ApiError && err.status === 400 && /already/.test(err.message)) {
        await this.advance(view.sessionId, view.total);
        return;
      }
      this.view = { ...view, verdictPending: false, chosen: undefined };
      this.fail(describe(err), () => this.submitVerdict(flagged));
      return;
    }
    await this.advance(view.sessionId, view.total);
  }

  async backToClusters(): Promise<void> {
    await this.init();
  }
}

function describe(err: unknown): string {
  if (err instanceof Error) {
    return err.message;
  }
  return String(err);
}
