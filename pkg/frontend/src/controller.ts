import { ApiClient } from "./api.js";
import type { AdjudicateResult, FetchLike, ReplayResult } from "./api.js";
import { subscribeEvents } from "./events.js";
import type { Subscription } from "./events.js";
import { initialViewState, reduce } from "./store.js";
import type { Action, ViewState } from "./store.js";
import type { ReplayMeta, ReplayRequest, ServerState } from "./types.js";

export interface DashboardOptions {
  baseUrl: string;
  fetchImpl?: FetchLike;
  pollIntervalMs?: number;
  backoffMs?: number[];
}

function replayKey(meta: ReplayMeta | null | undefined): string {
  // identity of a replay, ignoring pacing and completion
  return JSON.stringify([
    meta?.profile ?? null,
    meta?.trace_id ?? null,
    meta?.seed ?? null,
    meta?.ticks ?? null,
  ]);
}

/**
 * The dashboard engine: one event-stream subscription plus a polling loop,
 * folded into a ViewState through the store reducer. The DOM layer renders
 * whatever this holds; tests drive it headlessly. Detection state is only
 * ever mutated through startReplay and adjudicate.
 */
export class Dashboard {
  readonly api: ApiClient;
  private view: ViewState = initialViewState();
  private readonly listeners = new Set<(view: ViewState) => void>();
  private readonly pollIntervalMs: number;
  private readonly backoffMs: number[] | undefined;
  private readonly fetchImpl: FetchLike | undefined;
  private subscription: Subscription | null = null;
  private pollTimer: ReturnType<typeof setTimeout> | null = null;
  private refreshing = false;
  private running = false;

  constructor(options: DashboardOptions) {
    this.api = new ApiClient(options.baseUrl, options.fetchImpl);
    this.fetchImpl = options.fetchImpl;
    this.pollIntervalMs = options.pollIntervalMs ?? 250;
    this.backoffMs = options.backoffMs;
  }

  state(): ViewState {
    return this.view;
  }

  subscribe(listener: (view: ViewState) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private dispatch(action: Action): void {
    this.view = reduce(this.view, action);
    for (const listener of this.listeners) {
      listener(this.view);
    }
  }

  start(): void {
    if (this.running) {
      return;
    }
    this.running = true;
    this.openStream();
    this.schedulePoll(0);
  }

  async stop(): Promise<void> {
    this.running = false;
    if (this.pollTimer !== null) {
      clearTimeout(this.pollTimer);
      this.pollTimer = null;
    }
    if (this.subscription !== null) {
      this.subscription.stop();
      await this.subscription.done;
      this.subscription = null;
    }
  }

  // -- stream ---------------------------------------------------------------

  private openStream(): void {
    if (this.subscription !== null) {
      this.subscription.stop();
    }
    const options: Parameters<typeof subscribeEvents>[0] = {
      url: this.api.baseUrl + "/api/events",
      onBatch: (events, firstPosition) => {
        this.dispatch({ type: "events", events, firstPosition });
        this.schedulePoll(0);
      },
      onStatus: (status) => {
        this.dispatch({ type: "connection", status });
        if (status === "live") {
          // resume: backfill anything missed while disconnected
          this.schedulePoll(0);
        }
      },
    };
    if (this.fetchImpl !== undefined) {
      options.fetchImpl = this.fetchImpl;
    }
    if (this.backoffMs !== undefined) {
      options.backoffMs = this.backoffMs;
    }
    this.subscription = subscribeEvents(options);
  }

  // -- polling --------------------------------------------------------------

  private schedulePoll(delayMs: number): void {
    if (!this.running) {
      return;
    }
    if (this.pollTimer !== null && delayMs > 0) {
      return; // a poll is already queued
    }
    if (this.pollTimer !== null) {
      clearTimeout(this.pollTimer);
    }
    this.pollTimer = setTimeout(() => {
      this.pollTimer = null;
      void this.refresh().finally(() => this.schedulePoll(this.pollIntervalMs));
    }, delayMs);
  }

  /** One polling round: state, new error rows, correlation snapshot. */
  async refresh(): Promise<void> {
    if (this.refreshing) {
      return;
    }
    this.refreshing = true;
    try {
      const from = this.view.errors.nextIndex;
      const [stateRes, errorsRes, correlationRes] = await Promise.allSettled([
        this.api.state(),
        this.api.errors(from),
        this.api.correlation(),
      ]);
      let resetHappened = false;
      if (stateRes.status === "fulfilled") {
        resetHappened = this.applyServerState(stateRes.value);
      }
      // rows and correlation fetched before a reset describe the old replay
      if (!resetHappened) {
        if (errorsRes.status === "fulfilled") {
          this.dispatch({ type: "error-rows", payload: errorsRes.value });
        }
        if (correlationRes.status === "fulfilled") {
          this.dispatch({ type: "correlation", payload: correlationRes.value });
        }
      }
    } finally {
      this.refreshing = false;
    }
  }

  /** Returns true when the snapshot revealed a replay this view predates. */
  private applyServerState(server: ServerState): boolean {
    const reset = this.isReset(server);
    if (reset) {
      this.dispatch({ type: "replay-reset", meta: server.replay });
      // stream positions do not survive a reset on the server; reconnect
      this.openStream();
    }
    this.dispatch({ type: "server-state", state: server });
    return reset;
  }

  private isReset(server: ServerState): boolean {
    const view = this.view;
    if (server.event_count < view.eventsApplied) {
      return true;
    }
    if (server.error_count < view.errors.nextIndex - 1) {
      return true;
    }
    if (view.server !== null) {
      if (server.windows_seen < view.server.windows_seen) {
        return true;
      }
      if (replayKey(server.replay) !== replayKey(view.server.replay)) {
        return true;
      }
    }
    return false;
  }

  // -- commands ------------------------------------------------------------

  async startReplay(request: ReplayRequest): Promise<ReplayResult> {
    const result = await this.api.replay(request);
    if (result.kind === "ok") {
      const meta: ReplayMeta = { ...request, done: false };
      this.dispatch({ type: "replay-reset", meta });
      this.openStream();
      this.schedulePoll(0);
    } else {
      this.dispatch({ type: "notice", message: result.error });
    }
    return result;
  }

  /**
   * Adjudicate a pending alarm. On 2xx the alarm leaves the queue and the
   * acknowledged mode becomes the badge; on 409 the queue is left intact and
   * a state refresh reconciles with whoever won the race.
   */
  async adjudicate(alarmId: number, approve: boolean): Promise<AdjudicateResult> {
    const alarm = this.view.alarms.find((entry) => entry.id === alarmId);
    if (alarm === undefined) {
      return { kind: "error", status: 0, error: `no alarm ${alarmId}` };
    }
    this.dispatch({ type: "adjudication-sent", alarmId });
    const result = await this.api.adjudicate(approve);
    if (result.kind === "ok") {
      this.dispatch({ type: "adjudication-ack", alarmId, mode: result.mode });
    } else if (result.kind === "conflict") {
      this.dispatch({ type: "adjudication-conflict", alarmId });
      try {
        this.applyServerState(await this.api.state());
      } catch {
        // next poll round will reconcile
      }
    } else {
      this.dispatch({ type: "adjudication-conflict", alarmId });
      this.dispatch({ type: "notice", message: result.error });
    }
    return result;
  }
}
