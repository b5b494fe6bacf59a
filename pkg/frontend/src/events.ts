/**
 * Live view transport: server-push first, polling as the fallback.
 *
 * The coordination service exposes one event-stream endpoint carrying
 * named decision/classification/sample events. A browser EventSource
 * reconnects on its own after transient drops; this module layers on
 * top of that a visible status signal, a REST resync poll every
 * pollIntervalMs while the stream is down, and a full reopen when the
 * source gives up for good (readyState CLOSED).
 */

import type { ServerEvent, ServerEventName } from './types.js';

export type FeedStatus = 'connecting' | 'live' | 'reconnecting' | 'polling';

const EVENT_NAMES: readonly ServerEventName[] = ['decision', 'classification', 'sample'];

/** The slice of EventSource the feed uses; tests substitute a fake. */
export interface EventSourceLike {
  addEventListener(name: string, handler: (event: MessageEvent) => void): void;
  close(): void;
  onopen: ((this: any, ev: any) => any) | null;
  onerror: ((this: any, ev: any) => any) | null;
  readyState?: number;
}

const CLOSED = 2;

export interface EventFeedOptions {
  onEvent: (event: ServerEvent) => void;
  onStatus?: (status: FeedStatus) => void;
  /** One REST resync pass, run while the stream is down. */
  refresh?: () => Promise<void>;
  url?: string;
  pollIntervalMs?: number;
  newEventSource?: (url: string) => EventSourceLike;
}

/** Starts the feed and returns a closure that stops it. */
export function startEventFeed(options: EventFeedOptions): () => void {
  const url = options.url ?? '/api/v1/events';
  const pollIntervalMs = options.pollIntervalMs ?? 2000;
  const factory = options.newEventSource ?? ((target: string) => new EventSource(target));

  let stopped = false;
  let live = false;
  let source: EventSourceLike | null = null;
  let pollTimer: ReturnType<typeof setTimeout> | null = null;
  let reopenTimer: ReturnType<typeof setTimeout> | null = null;

  const setStatus = (status: FeedStatus) => {
    if (!stopped) options.onStatus?.(status);
  };

  function cancelPoll(): void {
    if (pollTimer !== null) {
      clearTimeout(pollTimer);
      pollTimer = null;
    }
  }

  function schedulePoll(): void {
    if (stopped || live || pollTimer !== null) return;
    pollTimer = setTimeout(async () => {
      pollTimer = null;
      if (stopped || live) return;
      setStatus('polling');
      try {
        await options.refresh?.();
      } catch {
        // the next tick retries; the status pill already says degraded
      }
      schedulePoll();
    }, pollIntervalMs);
  }

  function scheduleReopen(): void {
    if (stopped || reopenTimer !== null) return;
    reopenTimer = setTimeout(() => {
      reopenTimer = null;
      if (!stopped) openStream();
    }, pollIntervalMs);
  }

  function openStream(): void {
    try {
      source = factory(url);
    } catch {
      source = null; // no EventSource here; run on polling alone
      setStatus('polling');
      schedulePoll();
      return;
    }
    for (const name of EVENT_NAMES) {
      source.addEventListener(name, (event: MessageEvent) => {
        if (stopped) return;
        let parsed: ServerEvent;
        try {
          parsed = JSON.parse(event.data);
        } catch {
          return;
        }
        options.onEvent(parsed);
      });
    }
    source.onopen = () => {
      if (stopped) return;
      live = true;
      setStatus('live');
      cancelPoll();
    };
    source.onerror = () => {
      if (stopped) return;
      live = false;
      if (source?.readyState === CLOSED) {
        // the source will not retry on its own anymore; resubscribe
        source.close();
        source = null;
        scheduleReopen();
      }
      setStatus('reconnecting');
      schedulePoll();
    };
  }

  setStatus('connecting');
  openStream();

  return () => {
    stopped = true;
    cancelPoll();
    if (reopenTimer !== null) clearTimeout(reopenTimer);
    source?.close();
    source = null;
  };
}
