import { spawn } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { ApiClient } from "../src/api.js";
import { Dashboard } from "../src/controller.js";
import { chartSeries } from "../src/store.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const repoRoot = path.resolve(here, "..", "..");
const manifestDir = path.join(repoRoot, "assets", "default-manifest");

let proc: ChildProcess | null = null;
let baseUrl = "";
let api: ApiClient;

beforeAll(async () => {
  proc = spawn(
    "python3",
    [
      "-m",
      "hpcguard",
      "serve",
      "--manifest",
      manifestDir,
      "--port",
      "0",
      "--recovery-sim",
    ],
    { cwd: repoRoot, stdio: ["ignore", "pipe", "pipe"] },
  );
  baseUrl = await new Promise<string>((resolve, reject) => {
    let out = "";
    let err = "";
    proc!.stdout!.on("data", (data) => {
      out += String(data);
      const match = out.match(/serving on (http:\/\/[\d.]+:\d+)\//);
      if (match !== null) {
        resolve(match[1]!);
      }
    });
    proc!.stderr!.on("data", (data) => {
      err += String(data);
    });
    proc!.on("exit", (code) =>
      reject(new Error(`service exited early (${code}): ${out}${err}`)),
    );
    setTimeout(
      () => reject(new Error(`service did not come up: ${out}${err}`)),
      90_000,
    );
  });
  api = new ApiClient(baseUrl);
});

afterAll(async () => {
  if (proc !== null) {
    proc.kill("SIGTERM");
    await new Promise((resolve) => setTimeout(resolve, 500));
    if (proc.exitCode === null) {
      proc.kill("SIGKILL");
    }
  }
});

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitFor<T>(
  probe: () => T | undefined | null | false,
  what: string,
  timeoutMs = 150_000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const got = probe();
    if (got !== undefined && got !== null && got !== false) {
      return got;
    }
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}`);
    }
    await sleep(50);
  }
}

function dashboard(): Dashboard {
  return new Dashboard({
    baseUrl,
    pollIntervalMs: 50,
    backoffMs: [100, 250, 500],
  });
}

describe("operator console against a live service", () => {
  test("disk replay raises an alarm and approval shows the resumed badge", async () => {
    const dash = dashboard();
    dash.start();
    try {
      const started = await dash.startReplay({
        profile: "DiskEncryption",
        seed: 2,
        ticks: 400,
        speed_multiplier: 10000,
      });
      expect(started.kind).toBe("ok");

      const alarm = await waitFor(
        () => dash.state().alarms[0],
        "the suspension alarm to reach the queue",
      );
      expect(dash.state().mode).toBe("AwaitingAdjudication");
      expect(alarm.privileged).toBe(true);
      expect(alarm.windowIndex).toBeGreaterThanOrEqual(1);
      expect(alarm.rho).not.toBeNull();
      expect(alarm.rho!).toBeGreaterThanOrEqual(0.8);
      await waitFor(
        () => dash.state().alarms[0]!.rhoHistory.length > 0,
        "correlation context on the alarm",
      );

      // the chart reflects the full error history up to the suspension
      await waitFor(
        () => dash.state().errors.rows.length >= alarm.windowIndex,
        "error rows to catch up",
      );
      const rows = dash.state().errors.rows;
      expect(rows[0]![0]).toBe(0);
      expect(rows.at(-1)![0]).toBe(dash.state().server!.windows_seen - 1);

      const result = await dash.adjudicate(alarm.id, true);
      expect(result.kind).toBe("ok");
      expect(dash.state().alarms).toHaveLength(0);
      expect(dash.state().lastAdjudication).toBe("ResumedDiskEncryption");

      const server = await api.state();
      expect(server.mode).toBe("ResumedDiskEncryption");

      await waitFor(
        () => dash.state().replay?.done === true,
        "the replay to finish after approval",
      );
      expect(dash.state().mode).toBe("ResumedDiskEncryption");
      expect(dash.state().banner).toBeNull();
    } finally {
      await dash.stop();
    }
  });

  test("concurrent duplicate adjudication produces exactly one transition", async () => {
    const dash = dashboard();
    dash.start();
    try {
      await dash.startReplay({
        profile: "DiskEncryption",
        seed: 3,
        ticks: 400,
        speed_multiplier: 10000,
      });
      const alarm = await waitFor(
        () => dash.state().alarms[0],
        "the suspension alarm to reach the queue",
      );

      // a double click: two denials race; the service serializes them
      const [first, second] = await Promise.all([
        dash.adjudicate(alarm.id, false),
        dash.adjudicate(alarm.id, false),
      ]);
      const kinds = [first.kind, second.kind].sort();
      expect(kinds).toEqual(["conflict", "ok"]);

      expect(dash.state().alarms).toHaveLength(0);
      expect(dash.state().lastAdjudication).toBe("TerminatedRansomware");
      const server = await api.state();
      expect(server.mode).toBe("TerminatedRansomware");

      // the stream carries exactly one denial and one verdict
      await waitFor(
        () =>
          dash.state().events.filter((e) => e.kind === "RansomwareVerdict")
            .length > 0,
        "the verdict event",
      );
      const events = dash.state().events;
      expect(events.filter((e) => e.kind === "UserDenied")).toHaveLength(1);
      expect(events.filter((e) => e.kind === "RansomwareVerdict")).toHaveLength(1);
      expect(dash.state().banner).not.toBeNull();

      // denial triggers the backup recovery pass
      const deadline = Date.now() + 60_000;
      let report = await api.recovery();
      while (report === null && Date.now() < deadline) {
        await sleep(200);
        report = await api.recovery();
      }
      expect(report).not.toBeNull();
      expect(report!.total_encrypted).toBeGreaterThan(0);
      expect(report!.recovered.length + report!.lost.length).toBe(
        report!.total_encrypted,
      );
    } finally {
      await dash.stop();
    }
  });

  test("an encryption replay crosses the threshold and raises the banner", async () => {
    const dash = dashboard();
    dash.start();
    try {
      await dash.startReplay({
        profile: "RepeatedEncryption",
        seed: 1,
        ticks: 400,
        speed_multiplier: 10000,
      });
      await waitFor(() => dash.state().banner, "the verdict banner");
      expect(dash.state().mode).toBe("TerminatedRansomware");
      // an unprivileged process is never queued for human adjudication
      expect(dash.state().alarms).toHaveLength(0);
      expect(dash.state().lastAdjudication).toBeNull();
      await waitFor(() => dash.state().replay?.done === true, "replay finish");
      await waitFor(() => {
        const series = chartSeries(dash.state());
        return (
          series.threshold1 !== null &&
          series.rows.some((row) => row[1] > series.threshold1!)
        );
      }, "a visible threshold crossing");
    } finally {
      await dash.stop();
    }
  });

  test("charted values are bit-equal to the error payload over 1000 windows", async () => {
    const dash = dashboard();
    dash.start();
    try {
      // 1099 ticks of 100-sample windows at stride 1 is exactly 1000 windows
      await dash.startReplay({
        profile: "Baseline",
        seed: 5,
        ticks: 1099,
        speed_multiplier: 10000,
      });
      await waitFor(() => dash.state().replay?.done === true, "replay finish");
      await waitFor(
        () => dash.state().errors.rows.length === 1000,
        "all 1000 rows to arrive",
      );

      const truth = await api.errors(0);
      expect(truth.errors).toHaveLength(1000);
      const charted = chartSeries(dash.state());
      expect(charted.rows).toHaveLength(1000);
      truth.errors.forEach((row, i) => {
        const mine = charted.rows[i]!;
        expect(mine[0]).toBe(row[0]);
        expect(Object.is(mine[1], row[1])).toBe(true);
        if (row[2] === null) {
          expect(mine[2]).toBeNull();
        } else {
          expect(Object.is(mine[2], row[2])).toBe(true);
        }
      });
      expect(Object.is(charted.threshold1, truth.threshold_1)).toBe(true);
      expect(Object.is(charted.threshold2, truth.threshold_2)).toBe(true);

      // a quiet baseline run: flat sub-threshold chart, empty queue
      for (const row of charted.rows) {
        expect(row[1]).toBeLessThan(truth.threshold_1);
      }
      expect(dash.state().alarms).toHaveLength(0);
      expect(dash.state().banner).toBeNull();
    } finally {
      await dash.stop();
    }
  });
});
