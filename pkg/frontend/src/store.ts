import type { StreamStatus } from "./events.js";
import type {
  CorrelationPayload,
  DetectionEvent,
  ErrorRow,
  ErrorsPayload,
  Mode,
  ReplayMeta,
  ServerState,
} from "./types.js";

/** Charts keep a sliding view of at most this many windows. */
export const WINDOW_CAP = 5000;

/** How much correlation history an alarm captures for its context panel. */
const RHO_CONTEXT = 100;

export interface AlarmEntry {
  /** Stream position of the suspension event; stable across reconnects. */
  id: number;
  windowIndex: number;
  /** Correlation against the disk-encryption template at suspension time. */
  rho: number | null;
  rhoHistory: number[];
  /** Suspension only happens for administrator-privileged processes. */
  privileged: boolean;
  status: "pending" | "submitting";
}

export interface ViewState {
  connection: StreamStatus;
  mode: Mode;
  server: ServerState | null;
  errors: {
    rows: ErrorRow[];
    threshold1: number | null;
    threshold2: number | null;
    /** Next window index to request via /api/errors?from=. */
    nextIndex: number;
  };
  correlation: {
    label: string | null;
    templateLength: number | null;
    rho: number[];
  };
  events: DetectionEvent[];
  /** Stream positions consumed so far; reconnect replays are deduped by this. */
  eventsApplied: number;
  alarms: AlarmEntry[];
  banner: { windowIndex: number; rho: number | null } | null;
  /** Mode reached by the last server-acknowledged adjudication, for the badge. */
  lastAdjudication: Mode | null;
  replay: ReplayMeta | null;
  notice: string | null;
}

export type Action =
  | { type: "connection"; status: StreamStatus }
  | { type: "events"; events: DetectionEvent[]; firstPosition: number }
  | { type: "error-rows"; payload: ErrorsPayload }
  | { type: "correlation"; payload: CorrelationPayload }
  | { type: "server-state"; state: ServerState }
  | { type: "replay-reset"; meta: ReplayMeta | null }
  | { type: "adjudication-sent"; alarmId: number }
  | { type: "adjudication-ack"; alarmId: number; mode: Mode }
  | { type: "adjudication-conflict"; alarmId: number }
  | { type: "notice"; message: string | null };

export function initialViewState(): ViewState {
  return {
    connection: "connecting",
    mode: "Monitoring",
    server: null,
    errors: { rows: [], threshold1: null, threshold2: null, nextIndex: 0 },
    correlation: { label: null, templateLength: null, rho: [] },
    events: [],
    eventsApplied: 0,
    alarms: [],
    banner: null,
    lastAdjudication: null,
    replay: null,
    notice: null,
  };
}

/** Pure transition; every mutation of the view goes through here. */
export function reduce(state: ViewState, action: Action): ViewState {
  switch (action.type) {
    case "connection":
      return { ...state, connection: action.status };

    case "events":
      return applyEvents(state, action.events, action.firstPosition);

    case "error-rows":
      return applyErrorRows(state, action.payload);

    case "correlation": {
      const rho = action.payload.rho;
      // no windows fold while an adjudication is pending, so a late snapshot
      // still captures the decision-time history for a fresh alarm
      const alarms = state.alarms.map((alarm) =>
        alarm.rhoHistory.length === 0
          ? { ...alarm, rhoHistory: rho.slice(-RHO_CONTEXT) }
          : alarm,
      );
      return {
        ...state,
        alarms,
        correlation: {
          label: action.payload.label,
          templateLength: action.payload.template_length,
          rho,
        },
      };
    }

    case "server-state":
      return applyServerState(state, action.state);

    case "replay-reset":
      return {
        ...initialViewState(),
        connection: state.connection,
        errors: { ...initialViewState().errors,
          threshold1: state.errors.threshold1,
          threshold2: state.errors.threshold2,
        },
        correlation: {
          label: state.correlation.label,
          templateLength: state.correlation.templateLength,
          rho: [],
        },
        replay: action.meta,
      };

    case "adjudication-sent":
      return withAlarmStatus(state, action.alarmId, "submitting");

    case "adjudication-ack":
      return {
        ...state,
        mode: action.mode,
        lastAdjudication: action.mode,
        alarms: state.alarms.filter((alarm) => alarm.id !== action.alarmId),
      };

    case "adjudication-conflict":
      // the queue survives a lost race untouched; a state refresh resolves it
      return withAlarmStatus(state, action.alarmId, "pending");

    case "notice":
      return { ...state, notice: action.message };
  }
}

function withAlarmStatus(
  state: ViewState,
  alarmId: number,
  status: AlarmEntry["status"],
): ViewState {
  return {
    ...state,
    alarms: state.alarms.map((alarm) =>
      alarm.id === alarmId ? { ...alarm, status } : alarm,
    ),
  };
}

function applyEvents(
  state: ViewState,
  batch: DetectionEvent[],
  firstPosition: number,
): ViewState {
  let events = state.events;
  let alarms = state.alarms;
  let banner = state.banner;
  let lastAdjudication = state.lastAdjudication;
  let mode = state.mode;
  let changed = false;

  batch.forEach((event, offset) => {
    const position = firstPosition + offset;
    if (position < state.eventsApplied) {
      return; // reconnect replayed an event we already hold
    }
    changed = true;
    events = events.concat([event]);
    // adjudication-flow events are the server's own record of a mode change,
    // so the badge flips with the stream instead of waiting for a poll
    switch (event.kind) {
      case "SuspendedAwaitingUser": {
        const rho = latestSuspectRho(events, event.window_index);
        alarms = alarms.concat([
          {
            id: position,
            windowIndex: event.window_index,
            rho,
            rhoHistory: state.correlation.rho.slice(-RHO_CONTEXT),
            privileged: true,
            status: "pending",
          },
        ]);
        mode = "AwaitingAdjudication";
        break;
      }
      case "RansomwareVerdict": {
        const rho = event.payload["rho"];
        banner = {
          windowIndex: event.window_index,
          rho: typeof rho === "number" ? rho : null,
        };
        mode = "TerminatedRansomware";
        break;
      }
      case "UserApproved":
        alarms = [];
        lastAdjudication = "ResumedDiskEncryption";
        mode = "ResumedDiskEncryption";
        break;
      case "UserDenied":
        alarms = [];
        lastAdjudication = "TerminatedRansomware";
        mode = "TerminatedRansomware";
        break;
      default:
        break;
    }
  });

  if (!changed) {
    return state;
  }
  return {
    ...state,
    events,
    alarms,
    banner,
    lastAdjudication,
    mode,
    eventsApplied: Math.max(state.eventsApplied, firstPosition + batch.length),
  };
}

function latestSuspectRho(
  events: DetectionEvent[],
  windowIndex: number,
): number | null {
  for (let i = events.length - 1; i >= 0; i -= 1) {
    const event = events[i];
    if (
      event !== undefined &&
      event.kind === "DiskEncryptionSuspect" &&
      event.window_index === windowIndex
    ) {
      const rho = event.payload["rho"];
      return typeof rho === "number" ? rho : null;
    }
  }
  return null;
}

function applyErrorRows(state: ViewState, payload: ErrorsPayload): ViewState {
  let rows = state.errors.rows;
  let nextIndex = state.errors.nextIndex;
  const fresh = payload.errors.filter((row) => row[0] >= nextIndex);
  if (fresh.length > 0) {
    rows = rows.concat(fresh);
    if (rows.length > WINDOW_CAP) {
      rows = rows.slice(rows.length - WINDOW_CAP);
    }
    const last = fresh[fresh.length - 1];
    if (last !== undefined) {
      nextIndex = last[0] + 1;
    }
  }
  return {
    ...state,
    errors: {
      rows,
      threshold1: payload.threshold_1,
      threshold2: payload.threshold_2,
      nextIndex,
    },
  };
}

function applyServerState(state: ViewState, server: ServerState): ViewState {
  let alarms = state.alarms;
  let lastAdjudication = state.lastAdjudication;
  if (
    alarms.length > 0 &&
    (server.mode === "ResumedDiskEncryption" ||
      server.mode === "TerminatedRansomware")
  ) {
    // the server records the adjudication as done; drop the stale entry
    alarms = [];
    lastAdjudication = server.mode;
  }
  return {
    ...state,
    server,
    mode: server.mode,
    replay: server.replay,
    alarms,
    lastAdjudication,
  };
}

/**
 * The exact series the charts draw. Values are the payload rows as parsed,
 * with no transformation, so what is rendered is bit-equal to the API data.
 */
export function chartSeries(state: ViewState): {
  rows: ErrorRow[];
  threshold1: number | null;
  threshold2: number | null;
} {
  return {
    rows: state.errors.rows,
    threshold1: state.errors.threshold1,
    threshold2: state.errors.threshold2,
  };
}

export function correlationSeries(state: ViewState): number[] {
  return state.correlation.rho;
}
