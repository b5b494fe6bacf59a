/**
 * The console's one piece of mutable state: a map of per-stream views.
 *
 * Every view is a pure projection of payloads fed in, whether those
 * payloads arrived over the event stream, the polling fallback, or a
 * warm-start history fetch. Reload plus refetch therefore reproduces
 * identical badges and drift markers for identical backend state. The
 * only session-local extras are injection markers, which come from
 * command acks (the backend does not store acks).
 *
 * No clocks in here: every timestamp is copied off a payload.
 */

import type { AckPayload, ClassPayload, CommandBody, DecisionPayload, SamplePayload } from './types.js';

/** Rolling series bound. Oldest points fall off first. */
export const SERIES_CAP = 2000;

/** Marker bound per stream, enough for a long demo session. */
export const MARKER_CAP = 100;

export interface SeriesPoint {
  t: number;
  v: number;
}

export type MarkerKind = 'onset' | 'clear' | 'injection';

export interface Marker {
  at: number;
  kind: MarkerKind;
  label: string;
}

export interface StreamView {
  streamId: string;
  site: string;
  sensorType: string;
  points: SeriesPoint[];
  decision: DecisionPayload | null;
  classification: ClassPayload | null;
  markers: Marker[];
}

export type StoreListener = (streamId: string) => void;

export interface ViewStore {
  ensureStream(streamId: string, site?: string, sensorType?: string): StreamView;
  applySample(payload: SamplePayload): boolean;
  applyDecision(payload: DecisionPayload): boolean;
  applyClassification(payload: ClassPayload): boolean;
  /** Chart annotations for a command the operator just had acked. */
  noteInjection(command: CommandBody, acks: AckPayload[]): number;
  get(streamId: string): StreamView | undefined;
  views(): StreamView[];
  onChange(listener: StoreListener): () => void;
}

function newView(streamId: string): StreamView {
  return {
    streamId,
    site: '',
    sensorType: '',
    points: [],
    decision: null,
    classification: null,
    markers: [],
  };
}

function pushMarker(view: StreamView, marker: Marker): void {
  // History replay and the live feed overlap at the seam; identical
  // markers from both paths collapse to one.
  if (view.markers.some((m) => m.kind === marker.kind && m.at === marker.at)) return;
  view.markers.push(marker);
  view.markers.sort((a, b) => a.at - b.at);
  if (view.markers.length > MARKER_CAP) {
    view.markers.splice(0, view.markers.length - MARKER_CAP);
  }
}

export function createViewStore(): ViewStore {
  const streams = new Map<string, StreamView>();
  const listeners = new Set<StoreListener>();

  function notify(streamId: string): void {
    for (const listener of listeners) listener(streamId);
  }

  function ensureStream(streamId: string, site = '', sensorType = ''): StreamView {
    let view = streams.get(streamId);
    if (view === undefined) {
      view = newView(streamId);
      streams.set(streamId, view);
    }
    if (view.site === '' && site !== '') view.site = site;
    if (view.sensorType === '' && sensorType !== '') view.sensorType = sensorType;
    return view;
  }

  function applySample(payload: SamplePayload): boolean {
    const view = ensureStream(payload.stream_id, payload.site, payload.metadata?.sensor_type ?? '');
    const last = view.points[view.points.length - 1];
    if (last !== undefined && payload.timestamp === last.t && payload.value === last.v) {
      return false; // duplicate delivery
    }
    view.points.push({ t: payload.timestamp, v: payload.value });
    if (view.points.length > SERIES_CAP) {
      view.points.splice(0, view.points.length - SERIES_CAP);
    }
    notify(view.streamId);
    return true;
  }

  function applyDecision(payload: DecisionPayload): boolean {
    const view = ensureStream(payload.stream_id, payload.site);
    const prev = view.decision;
    if (prev !== null) {
      if (payload.decided_at < prev.decided_at) return false; // stale poll echo
      if (payload.decided_at === prev.decided_at && payload.drifting === prev.drifting) {
        return false;
      }
    }
    const wasDrifting = prev?.drifting ?? false;
    view.decision = payload;
    if (payload.drifting && !wasDrifting) {
      pushMarker(view, { at: payload.decided_at, kind: 'onset', label: 'drift flagged' });
    } else if (!payload.drifting && wasDrifting) {
      pushMarker(view, { at: payload.decided_at, kind: 'clear', label: 'drift cleared' });
    }
    notify(view.streamId);
    return true;
  }

  function applyClassification(payload: ClassPayload): boolean {
    const view = ensureStream(payload.stream_id, payload.site);
    const prev = view.classification;
    if (prev !== null) {
      if (payload.classified_at < prev.classified_at) return false;
      if (payload.classified_at === prev.classified_at && payload.kind === prev.kind) {
        return false;
      }
    }
    view.classification = payload;
    notify(view.streamId);
    return true;
  }

  function noteInjection(command: CommandBody, acks: AckPayload[]): number {
    const sign = command.magnitude >= 0 ? '+' : '';
    const label = `${command.kind} ${sign}${command.magnitude}`;
    let marked = 0;
    for (const ack of acks) {
      if (!ack.ok) continue;
      const view = ensureStream(ack.stream_id, ack.site);
      pushMarker(view, { at: ack.acked_at, kind: 'injection', label });
      notify(view.streamId);
      marked += 1;
    }
    return marked;
  }

  return {
    ensureStream,
    applySample,
    applyDecision,
    applyClassification,
    noteInjection,
    get: (streamId) => streams.get(streamId),
    views: () =>
      [...streams.values()].sort((a, b) =>
        a.site === b.site ? a.streamId.localeCompare(b.streamId) : a.site.localeCompare(b.site),
      ),
    onChange: (listener) => {
      listeners.add(listener);
      return () => listeners.delete(listener);
    },
  };
}
