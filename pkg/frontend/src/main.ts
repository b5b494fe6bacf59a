/**
 * Console bootstrap: warm the view store from the coordination
 * service's retained state, mount the shell, then go live on the event
 * stream with the 2 s polling fallback behind it.
 */

import { createApiClient } from './api.js';
import { startEventFeed } from './events.js';
import { createViewStore } from './store.js';
import { mountConsole } from './ui.js';
import type { ClassPayload, DecisionPayload, SamplePayload } from './types.js';

const api = createApiClient();
const store = createViewStore();

/** Streams come from assignments; sites and types from their source entities. */
async function discoverStreams(): Promise<string[]> {
  const [assignments, entities] = await Promise.all([api.assignments(), api.entities()]);
  const byId = new Map(entities.map((e) => [e.entity_id, e]));
  const ids: string[] = [];
  for (const assignment of assignments) {
    const source = byId.get(assignment.source_entity_id);
    store.ensureStream(assignment.stream_id, source?.site ?? '', source?.sensor_type ?? '');
    ids.push(assignment.stream_id);
  }
  return ids;
}

/**
 * One REST resync pass. Decision history replays through the same
 * reducer the live feed uses, so badges and onset/clear markers come
 * out identical either way; a late page load lands on the current
 * retained state instead of a blank screen.
 */
async function refresh(seedHistory: boolean): Promise<void> {
  const ids = await discoverStreams();
  await Promise.all(
    ids.map(async (streamId) => {
      if (seedHistory) {
        for (const payload of await api.stateHistory('decision', streamId)) {
          store.applyDecision(payload);
        }
      } else {
        const decision = await api.latestState('decision', streamId);
        if (decision !== null) store.applyDecision(decision);
      }
      const klass = await api.latestState('classification', streamId);
      if (klass !== null) store.applyClassification(klass);
    }),
  );
}

async function init(): Promise<void> {
  const root = document.querySelector<HTMLDivElement>('#app')!;
  const handle = mountConsole(root, {
    store,
    submit: (command) => api.control(command),
    onInjected: (command, acks) => store.noteInjection(command, acks),
  });

  try {
    await refresh(true);
  } catch (err) {
    console.warn('warm start failed, continuing with live data only', err);
  }
  handle.renderPanels();

  startEventFeed({
    onEvent: (event) => {
      if (event.event === 'decision') store.applyDecision(event.payload as DecisionPayload);
      else if (event.event === 'classification') store.applyClassification(event.payload as ClassPayload);
      else if (event.event === 'sample') store.applySample(event.payload as SamplePayload);
    },
    onStatus: (status) => handle.setFeedStatus(status),
    refresh: () => refresh(false),
  });

  const pollHealth = async () => {
    try {
      handle.setHealth(await api.healthz());
    } catch {
      // header keeps the last good numbers until the service answers again
    }
  };
  await pollHealth();
  setInterval(() => void pollHealth(), 5000);
}

void init();
