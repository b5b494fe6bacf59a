import { describe, expect, it } from 'vitest';
import {
  chartHtml,
  classBadge,
  decisionBadge,
  panelIds,
  registerPanel,
  renderStreamPanel,
  unregisterPanel,
} from '../src/panels.js';
import { createViewStore } from '../src/store.js';
import { classification, decision, sample } from './helpers.js';
import type { StreamView } from '../src/store.js';

function viewWith(setup: (store: ReturnType<typeof createViewStore>) => void): StreamView {
  const store = createViewStore();
  setup(store);
  const view = store.views()[0];
  if (view === undefined) throw new Error('setup created no stream');
  return view;
}

describe('badges', () => {
  it('maps decision state to badge text', () => {
    expect(decisionBadge(viewWith((s) => s.ensureStream('s1')))).toEqual({
      text: 'no data',
      cls: 'idle',
    });
    expect(decisionBadge(viewWith((s) => s.applyDecision(decision({ drifting: true }))))).toEqual({
      text: 'drifting',
      cls: 'alert',
    });
    expect(decisionBadge(viewWith((s) => s.applyDecision(decision({ drifting: false }))))).toEqual({
      text: 'steady',
      cls: 'ok',
    });
  });

  it('maps classification kinds to badge text', () => {
    expect(classBadge(viewWith((s) => s.ensureStream('s1')))).toEqual({
      text: 'no data',
      cls: 'idle',
    });
    expect(
      classBadge(viewWith((s) => s.applyClassification(classification({ kind: 'abnormal' })))),
    ).toEqual({ text: 'abnormal', cls: 'alert' });
    expect(
      classBadge(viewWith((s) => s.applyClassification(classification({ kind: 'natural' })))),
    ).toEqual({ text: 'natural', cls: 'warn' });
    expect(
      classBadge(viewWith((s) => s.applyClassification(classification({ kind: 'none' })))),
    ).toEqual({ text: 'none', cls: 'idle' });
  });
});

describe('chart', () => {
  it('shows the privacy note instead of an empty chart when nothing is relayed', () => {
    const html = chartHtml(viewWith((s) => s.applyDecision(decision())));
    expect(html).toContain('privacy mode');
    expect(html).not.toContain('<svg');
  });

  it('draws a sparkline once samples arrive', () => {
    const view = viewWith((s) => {
      s.applySample(sample({ timestamp: 1000, value: 20, seq: 1 }));
      s.applySample(sample({ timestamp: 2000, value: 21, seq: 2 }));
      s.applySample(sample({ timestamp: 3000, value: 22, seq: 3 }));
    });
    const html = chartHtml(view);
    expect(html).toContain('<svg');
    expect(html).toContain('polyline');
    expect(html).toContain('3 pts');
  });

  it('draws marker rules only inside the visible time range', () => {
    const view = viewWith((s) => {
      s.applySample(sample({ timestamp: 1000, value: 20, seq: 1 }));
      s.applySample(sample({ timestamp: 3000, value: 25, seq: 2 }));
      s.applyDecision(decision({ decided_at: 2000, drifting: true })); // inside
      s.applyDecision(decision({ decided_at: 9000, drifting: false })); // outside
    });
    const html = chartHtml(view);
    expect(html.match(/marker-line/g)).toHaveLength(1);
    expect(html).toContain('marker-onset');
  });
});

describe('panel rendering and the plug-in registry', () => {
  it('ships the three built-in slots in order', () => {
    expect(panelIds()).toEqual(['badges', 'chart', 'markers']);
  });

  it('renders a full panel with the stream header and slots', () => {
    const view = viewWith((s) => {
      s.ensureStream('s1', 'site-a', 'temperature');
      s.applyDecision(decision({ drifting: true }));
      s.applyClassification(classification({ kind: 'abnormal' }));
    });
    const html = renderStreamPanel(view);
    expect(html).toContain('data-stream="s1"');
    expect(html).toContain('site-a | temperature');
    expect(html).toContain('data-badge="decision"');
    expect(html).toContain('drifting');
    expect(html).toContain('abnormal');
    expect(html).toContain('data-slot="markers"');
  });

  it('escapes payload-derived text', () => {
    const view = viewWith((s) => s.ensureStream('<img src=x>', '<b>site</b>'));
    const html = renderStreamPanel(view);
    expect(html).not.toContain('<img');
    expect(html).not.toContain('<b>site</b>');
    expect(html).toContain('&lt;img src=x&gt;');
  });

  it('lets a registered plug-in add a slot to every panel', () => {
    registerPanel({ id: 'votes', render: ({ view }) => `votes for ${view.streamId}` });
    try {
      const html = renderStreamPanel(viewWith((s) => s.ensureStream('s1')));
      expect(html).toContain('data-slot="votes"');
      expect(html).toContain('votes for s1');
    } finally {
      expect(unregisterPanel('votes')).toBe(true);
    }
  });

  it('replaces a plug-in registered under an existing id in place', () => {
    registerPanel({ id: 'chart', render: () => 'custom chart' });
    try {
      const html = renderStreamPanel(viewWith((s) => s.ensureStream('s1')));
      expect(html).toContain('custom chart');
      expect(panelIds()).toEqual(['badges', 'chart', 'markers']);
    } finally {
      registerPanel({ id: 'chart', render: ({ view }) => chartHtml(view) });
    }
  });
});
