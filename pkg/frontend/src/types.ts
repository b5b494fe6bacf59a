/**
 * Wire shapes served by the coordination service, field for field.
 *
 * The console is a pure client of that service: everything here mirrors
 * the JSON documented in docs/protocol.md and nothing else. Payload
 * fields keep their wire casing (snake_case); console-side view state
 * lives in store.ts and uses camelCase.
 */

export type DriftKindName = 'step' | 'ramp' | 'stuck_at' | 'noise_scale';
export type DriftScopeName = 'single' | 'all_of_type';
export type ClassKindName = 'none' | 'natural' | 'abnormal';
export type EntityKindName = 'endpoint' | 'emulator' | 'streamer' | 'detector' | 'aggregator';

export interface SampleMetadata {
  sensor_type: string;
  unit: string;
  extra: Record<string, string>;
}

/** One relayed sensor reading. Seen only when a detector relays. */
export interface SamplePayload {
  stream_id: string;
  site: string;
  timestamp: number;
  value: number;
  seq: number;
  metadata: SampleMetadata;
}

export interface KsResult {
  statistic_d: number;
  p_value: number;
  n_recent: number;
  n_reference: number;
}

/** A detector's per-stream drift verdict. */
export interface DecisionPayload {
  stream_id: string;
  detector_id: string;
  site: string;
  decided_at: number;
  drifting: boolean;
  votes: Record<string, boolean>;
  seq_at_decision: number;
  ks: KsResult | null;
  metadata: Record<string, string>;
}

/** An aggregator's natural/abnormal ruling for one stream. */
export interface ClassPayload {
  stream_id: string;
  aggregator_id: string;
  site: string;
  kind: ClassKindName;
  evidence: {
    concurrent_peers: number;
    window_ms: number;
    contributing_streams: string[];
  };
  classified_at: number;
}

/** Body POSTed to the control proxy. issued_at is filled server-side. */
export interface CommandBody {
  target_stream_id: string;
  kind: DriftKindName;
  magnitude: number;
  duration_ms: number;
  scope: DriftScopeName;
  sensor_type: string;
  issued_at?: number;
}

export interface AckPayload {
  stream_id: string;
  site: string;
  kind: DriftKindName;
  ok: boolean;
  acked_at: number;
  reason: string | null;
}

export interface EntityRow {
  entity_id: string;
  kind: EntityKindName;
  site: string;
  sensor_type: string;
  announced_at: number;
  heartbeat_at: number;
  /** Present on listings: true once the heartbeat fell out of the liveness window. */
  stale?: boolean;
}

export interface AssignmentRow {
  source_entity_id: string;
  detector_entity_id: string;
  stream_id: string;
  created_at: number;
}

export interface HealthzReport {
  ok: boolean;
  entities: number;
  stale_entities: number;
  assignments: number;
  decision_streams: number;
  classification_streams: number;
  event_clients: number;
  bridge_errors: number;
  bus_attached: boolean;
}

export type ServerEventName = 'decision' | 'classification' | 'sample';

/** One message off the server-push channel (or the polling fallback). */
export interface ServerEvent {
  event: ServerEventName;
  stream_id: string;
  payload: DecisionPayload | ClassPayload | SamplePayload;
}
