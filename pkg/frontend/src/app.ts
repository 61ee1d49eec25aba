import { Dashboard } from "./controller.js";
import { chartSeries, correlationSeries } from "./store.js";
import type { ViewState } from "./store.js";
import type { ErrorRow, RecoveryPayload } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  return override ?? window.location.origin;
}

// -- charts -----------------------------------------------------------------

interface ChartTheme {
  line: string;
  threshold: string;
  grid: string;
}

function prepare(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const dpr = window.devicePixelRatio || 1;
  const rect = canvas.getBoundingClientRect();
  canvas.width = Math.max(1, Math.floor(rect.width * dpr));
  canvas.height = Math.max(1, Math.floor(rect.height * dpr));
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    throw new Error("canvas 2d context unavailable");
  }
  ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
  ctx.clearRect(0, 0, rect.width, rect.height);
  return ctx;
}

function drawErrorChart(
  canvas: HTMLCanvasElement,
  rows: ErrorRow[],
  pick: (row: ErrorRow) => number | null,
  threshold: number | null,
  theme: ChartTheme,
): void {
  const ctx = prepare(canvas);
  const w = canvas.getBoundingClientRect().width;
  const h = canvas.getBoundingClientRect().height;
  const points: Array<[number, number]> = [];
  rows.forEach((row, i) => {
    const value = pick(row);
    if (value !== null) {
      points.push([i, value]);
    }
  });
  if (points.length === 0) {
    return;
  }
  let top = threshold ?? 0;
  for (const [, value] of points) {
    top = Math.max(top, value);
  }
  top = top * 1.1 || 1;
  const n = rows.length;
  const x = (i: number) => (n <= 1 ? 0 : (i / (n - 1)) * (w - 8)) + 4;
  const y = (v: number) => h - 4 - (v / top) * (h - 8);

  ctx.strokeStyle = theme.grid;
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);

  if (threshold !== null) {
    ctx.strokeStyle = theme.threshold;
    ctx.setLineDash([6, 4]);
    ctx.beginPath();
    ctx.moveTo(4, y(threshold));
    ctx.lineTo(w - 4, y(threshold));
    ctx.stroke();
    ctx.setLineDash([]);
  }

  ctx.strokeStyle = theme.line;
  ctx.lineWidth = 1.25;
  ctx.beginPath();
  points.forEach(([i, value], k) => {
    if (k === 0) {
      ctx.moveTo(x(i), y(value));
    } else {
      ctx.lineTo(x(i), y(value));
    }
  });
  ctx.stroke();
}

function drawRhoChart(
  canvas: HTMLCanvasElement,
  rho: number[],
  high: number,
  low: number,
  theme: ChartTheme,
): void {
  const ctx = prepare(canvas);
  const w = canvas.getBoundingClientRect().width;
  const h = canvas.getBoundingClientRect().height;
  const y = (v: number) => h - 4 - ((v + 1) / 2) * (h - 8);
  const x = (i: number) =>
    (rho.length <= 1 ? 0 : (i / (rho.length - 1)) * (w - 8)) + 4;

  ctx.strokeStyle = theme.grid;
  ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
  ctx.setLineDash([6, 4]);
  for (const band of [high, low, 0]) {
    ctx.strokeStyle = band === 0 ? theme.grid : theme.threshold;
    ctx.beginPath();
    ctx.moveTo(4, y(band));
    ctx.lineTo(w - 4, y(band));
    ctx.stroke();
  }
  ctx.setLineDash([]);

  if (rho.length === 0) {
    return;
  }
  ctx.strokeStyle = theme.line;
  ctx.lineWidth = 1.25;
  ctx.beginPath();
  rho.forEach((value, i) => {
    if (i === 0) {
      ctx.moveTo(x(i), y(value));
    } else {
      ctx.lineTo(x(i), y(value));
    }
  });
  ctx.stroke();
}

// -- panels -----------------------------------------------------------------

function renderAlarms(view: ViewState, dashboard: Dashboard): void {
  const list = el<HTMLUListElement>("alarm-list");
  list.replaceChildren();
  if (view.alarms.length === 0) {
    const empty = document.createElement("li");
    empty.className = "empty";
    empty.textContent = "no pending adjudications";
    list.append(empty);
    return;
  }
  for (const alarm of view.alarms) {
    const item = document.createElement("li");
    item.className = "alarm";
    const label = document.createElement("div");
    const rho = alarm.rho === null ? "n/a" : alarm.rho.toFixed(4);
    const priv = alarm.privileged ? "administrator" : "user";
    label.textContent =
      `window ${alarm.windowIndex}: disk-encryption pattern, ` +
      `rho ${rho}, ${priv} privilege`;
    const actions = document.createElement("div");
    actions.className = "actions";
    const approve = document.createElement("button");
    approve.textContent = "Approve";
    const deny = document.createElement("button");
    deny.textContent = "Deny";
    deny.className = "danger";
    const busy = alarm.status === "submitting";
    approve.disabled = busy;
    deny.disabled = busy;
    approve.addEventListener("click", () => {
      void dashboard.adjudicate(alarm.id, true);
    });
    deny.addEventListener("click", () => {
      void dashboard.adjudicate(alarm.id, false);
    });
    actions.append(approve, deny);
    item.append(label, actions);
    list.append(item);
  }
}

function renderEvents(view: ViewState): void {
  const log = el<HTMLUListElement>("event-log");
  log.replaceChildren();
  for (const event of view.events.slice(-30).reverse()) {
    const item = document.createElement("li");
    item.textContent = `#${event.window_index} ${event.kind}`;
    log.append(item);
  }
}

let recoveryShownFor: string | null = null;

function maybeShowRecovery(view: ViewState, dashboard: Dashboard): void {
  const panel = el<HTMLDivElement>("recovery");
  if (view.mode !== "TerminatedRansomware") {
    panel.hidden = true;
    recoveryShownFor = null;
    return;
  }
  const key = JSON.stringify(view.replay ?? {});
  if (recoveryShownFor === key) {
    return;
  }
  recoveryShownFor = key;
  void dashboard.api.recovery().then((report: RecoveryPayload | null) => {
    if (report === null) {
      return;
    }
    panel.hidden = false;
    el<HTMLSpanElement>("recovery-summary").textContent =
      `${report.total_encrypted} encrypted, ` +
      `${report.recovered.length} recovered, ${report.lost.length} lost`;
  });
}

function render(view: ViewState, dashboard: Dashboard): void {
  const status = el<HTMLSpanElement>("status");
  status.textContent = view.connection;
  status.className = `status ${view.connection}`;

  const badge = el<HTMLSpanElement>("mode-badge");
  badge.textContent = view.lastAdjudication ?? view.mode;
  badge.className = `badge ${view.mode}`;

  const banner = el<HTMLDivElement>("banner");
  if (view.banner !== null) {
    banner.hidden = false;
    const rho =
      view.banner.rho === null ? "no template match" : `rho ${view.banner.rho.toFixed(4)}`;
    banner.textContent =
      `Ransomware verdict at window ${view.banner.windowIndex} (${rho}); ` +
      "process terminated";
  } else {
    banner.hidden = true;
  }

  const notice = el<HTMLDivElement>("notice");
  notice.hidden = view.notice === null;
  notice.textContent = view.notice ?? "";

  const replay = el<HTMLSpanElement>("replay-status");
  if (view.replay === null) {
    replay.textContent = "idle";
  } else {
    const name = view.replay.profile ?? view.replay.trace_id ?? "trace";
    replay.textContent = view.replay.done ? `${name} (done)` : `${name} (running)`;
  }

  const theme: ChartTheme = {
    line: "#7fd1b9",
    threshold: "#e0a458",
    grid: "#39415a",
  };
  const series = chartSeries(view);
  drawErrorChart(
    el<HTMLCanvasElement>("chart-stage1"),
    series.rows,
    (row) => row[1],
    series.threshold1,
    theme,
  );
  drawErrorChart(
    el<HTMLCanvasElement>("chart-stage2"),
    series.rows,
    (row) => row[2],
    series.threshold2,
    { ...theme, line: "#9fb4ff" },
  );
  const high = view.server?.config.rho_high ?? 0.8;
  const low = view.server?.config.rho_low ?? 0.3;
  drawRhoChart(
    el<HTMLCanvasElement>("chart-rho"),
    correlationSeries(view),
    high,
    low,
    { ...theme, line: "#e58fb1" },
  );

  renderAlarms(view, dashboard);
  renderEvents(view);
  maybeShowRecovery(view, dashboard);
}

function wireReplayForm(dashboard: Dashboard): void {
  el<HTMLButtonElement>("replay-start").addEventListener("click", () => {
    const profile = el<HTMLSelectElement>("replay-profile").value;
    const seed = Number(el<HTMLInputElement>("replay-seed").value) || 1;
    const ticks = Number(el<HTMLInputElement>("replay-ticks").value) || 3000;
    const speed = Number(el<HTMLInputElement>("replay-speed").value) || 50;
    void dashboard.startReplay({
      profile,
      seed,
      ticks,
      speed_multiplier: speed,
    });
  });
}

export function main(): void {
  const dashboard = new Dashboard({ baseUrl: apiBase() });
  dashboard.subscribe((view) => render(view, dashboard));
  wireReplayForm(dashboard);
  dashboard.start();
  window.addEventListener("beforeunload", () => {
    void dashboard.stop();
  });
}

if (typeof document !== "undefined") {
  main();
}
