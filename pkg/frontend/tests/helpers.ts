import type { AckPayload, ClassPayload, DecisionPayload, SamplePayload } from '../src/types.js';

export function decision(over: Partial<DecisionPayload> = {}): DecisionPayload {
  return {
    stream_id: 's1',
    detector_id: 'det-a',
    site: 'site-a',
    decided_at: 1000,
    drifting: false,
    votes: { adwin: false, page_hinkley: false, kswin: false },
    seq_at_decision: 10,
    ks: null,
    metadata: {},
    ...over,
  };
}

export function classification(over: Partial<ClassPayload> = {}): ClassPayload {
  return {
    stream_id: 's1',
    aggregator_id: 'agg-a',
    site: 'site-a',
    kind: 'none',
    evidence: { concurrent_peers: 0, window_ms: 5000, contributing_streams: [] },
    classified_at: 1000,
    ...over,
  };
}

export function sample(over: Partial<SamplePayload> = {}): SamplePayload {
  return {
    stream_id: 's1',
    site: 'site-a',
    timestamp: 1000,
    value: 21.5,
    seq: 1,
    metadata: { sensor_type: 'temperature', unit: 'C', extra: {} },
    ...over,
  };
}

export function ack(over: Partial<AckPayload> = {}): AckPayload {
  return {
    stream_id: 's1',
    site: 'site-a',
    kind: 'step',
    ok: true,
    acked_at: 2000,
    reason: null,
    ...over,
  };
}
