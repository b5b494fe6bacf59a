/**
 * Thin fetch wrappers over the coordination service's REST surface.
 *
 * The console never talks to the message broker; this module is its
 * entire view of the world. Paths and response envelopes match
 * docs/protocol.md: latest wraps one payload (or null), history wraps a
 * list oldest first, control wraps the gathered acks. Errors come back
 * as {"error": reason} with a 4xx/5xx status and surface here as
 * ApiError so the UI can show the reason verbatim.
 */

import type {
  AckPayload,
  AssignmentRow,
  ClassPayload,
  CommandBody,
  DecisionPayload,
  EntityRow,
  HealthzReport,
} from './types.js';

export type StateKind = 'decision' | 'classification';

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ApiClient {
  latestState(kind: 'decision', streamId: string): Promise<DecisionPayload | null>;
  latestState(kind: 'classification', streamId: string): Promise<ClassPayload | null>;
  stateHistory(kind: 'decision', streamId: string): Promise<DecisionPayload[]>;
  stateHistory(kind: 'classification', streamId: string): Promise<ClassPayload[]>;
  assignments(): Promise<AssignmentRow[]>;
  entities(filter?: { site?: string; kind?: string }): Promise<EntityRow[]>;
  control(command: CommandBody): Promise<AckPayload[]>;
  healthz(): Promise<HealthzReport>;
}

export function createApiClient(baseUrl = '', fetcher: FetchLike = fetch): ApiClient {
  const root = baseUrl.replace(/\/$/, '');

  async function request(path: string, init?: RequestInit): Promise<any> {
    const response = await fetcher(`${root}${path}`, init);
    let body: any;
    try {
      body = await response.json();
    } catch {
      throw new ApiError(`bad response body from ${path}`, response.status);
    }
    if (!response.ok) {
      const reason = typeof body?.error === 'string' ? body.error : `HTTP ${response.status}`;
      throw new ApiError(reason, response.status);
    }
    return body;
  }

  function statePath(kind: StateKind, streamId: string, leaf: string): string {
    return `/api/v1/state/${encodeURIComponent(kind)}/${encodeURIComponent(streamId)}/${leaf}`;
  }

  return {
    latestState: async (kind: StateKind, streamId: string) =>
      (await request(statePath(kind, streamId, 'latest'))).payload ?? null,
    stateHistory: async (kind: StateKind, streamId: string) =>
      (await request(statePath(kind, streamId, 'history'))).payloads ?? [],
    assignments: async () => (await request('/api/v1/assignments')).assignments ?? [],
    entities: async (filter = {}) => {
      const params = new URLSearchParams();
      if (filter.site) params.set('site', filter.site);
      if (filter.kind) params.set('kind', filter.kind);
      const suffix = params.size > 0 ? `?${params}` : '';
      return (await request(`/api/v1/entities${suffix}`)).entities ?? [];
    },
    control: async (command: CommandBody) =>
      (
        await request('/api/v1/control', {
          method: 'POST',
          headers: { 'Content-Type': 'application/json' },
          body: JSON.stringify(command),
        })
      ).acks ?? [],
    healthz: async () => request('/api/v1/healthz'),
  } as ApiClient;
}
