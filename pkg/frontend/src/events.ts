import type { FetchLike } from "./api.js";
import type { DetectionEvent } from "./types.js";

export type StreamStatus = "connecting" | "live" | "stale";

export interface SubscribeOptions {
  url: string;
  fetchImpl?: FetchLike;
  /** Called with each parsed batch and the stream position of its first event. */
  onBatch: (events: DetectionEvent[], firstPosition: number) => void;
  onStatus?: (status: StreamStatus) => void;
  /** Retry delays in ms; the last one repeats. */
  backoffMs?: number[];
}

export interface Subscription {
  stop(): void;
  done: Promise<void>;
}

const DEFAULT_BACKOFF = [500, 1000, 2000, 5000];

function sleep(ms: number, signal: AbortSignal): Promise<void> {
  return new Promise((resolve) => {
    if (signal.aborted) {
      resolve();
      return;
    }
    const timer = setTimeout(() => {
      signal.removeEventListener("abort", onAbort);
      resolve();
    }, ms);
    const onAbort = () => {
      clearTimeout(timer);
      resolve();
    };
    signal.addEventListener("abort", onAbort, { once: true });
  });
}

/**
 * Subscribe to the NDJSON event stream.
 *
 * The service writes one JSON object per line and a blank line as a
 * keepalive. Every connection replays the event list from the start, so the
 * reported positions restart at 0 after a reconnect; the consumer dedupes by
 * position. Connection loss triggers a retry with backoff and is surfaced
 * through onStatus so the console can show a stale indicator.
 */
export function subscribeEvents(options: SubscribeOptions): Subscription {
  const fetchImpl: FetchLike =
    options.fetchImpl ?? ((input, init) => fetch(input, init));
  const backoff = options.backoffMs ?? DEFAULT_BACKOFF;
  const controller = new AbortController();
  const signal = controller.signal;
  const onStatus = options.onStatus ?? (() => undefined);

  const done = (async () => {
    let attempt = 0;
    while (!signal.aborted) {
      onStatus(attempt === 0 ? "connecting" : "stale");
      try {
        const res = await fetchImpl(options.url, { signal });
        if (!res.ok || res.body === null) {
          throw new Error(`event stream returned http ${res.status}`);
        }
        onStatus("live");
        attempt = 0;
        await readLines(res.body, options.onBatch, signal);
        // orderly end of stream: the service is shutting down
        if (signal.aborted) {
          return;
        }
        throw new Error("event stream closed");
      } catch (err) {
        if (signal.aborted) {
          return;
        }
        onStatus("stale");
        const delay = backoff[Math.min(attempt, backoff.length - 1)] ?? 1000;
        attempt += 1;
        await sleep(delay, signal);
      }
    }
  })();

  return {
    stop: () => controller.abort(),
    done: done.catch(() => undefined),
  };
}

async function readLines(
  body: ReadableStream<Uint8Array>,
  onBatch: (events: DetectionEvent[], firstPosition: number) => void,
  signal: AbortSignal,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  let position = 0;
  try {
    while (!signal.aborted) {
      const { done, value } = await reader.read();
      if (done) {
        return;
      }
      buffer += decoder.decode(value, { stream: true });
      const lines = buffer.split("\n");
      buffer = lines.pop() ?? "";
      const batch: DetectionEvent[] = [];
      for (const line of lines) {
        if (line.trim() === "") {
          continue; // keepalive
        }
        batch.push(JSON.parse(line) as DetectionEvent);
      }
      if (batch.length > 0) {
        onBatch(batch, position);
        position += batch.length;
      }
    }
  } finally {
    reader.releaseLock();
    try {
      await body.cancel();
    } catch {
      // already closed
    }
  }
}
