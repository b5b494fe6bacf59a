/**
 * Per-stream panels and the registry that makes them extensible.
 *
 * A panel plug-in is a named pure function from a stream view to an
 * HTML fragment. The built-ins (badges, chart, markers) register
 * themselves here at import time; anything else can call
 * registerPanel() before the first render and its section appears on
 * every stream panel. Rendering is string-in, string-out so the whole
 * layer is testable without a DOM.
 */

import { escapeHtml, fmtTime, fmtValue } from './format.js';
import type { Marker, StreamView } from './store.js';

export interface PanelContext {
  view: StreamView;
}

export interface PanelPlugin {
  /** Stable id; registering the same id again replaces the panel. */
  id: string;
  render(ctx: PanelContext): string;
}

const registry: PanelPlugin[] = [];

export function registerPanel(plugin: PanelPlugin): void {
  const index = registry.findIndex((p) => p.id === plugin.id);
  if (index >= 0) {
    registry[index] = plugin;
  } else {
    registry.push(plugin);
  }
}

export function unregisterPanel(id: string): boolean {
  const index = registry.findIndex((p) => p.id === id);
  if (index < 0) return false;
  registry.splice(index, 1);
  return true;
}

export function panelIds(): string[] {
  return registry.map((p) => p.id);
}

// ------------------------------------------------------------- badges

export interface Badge {
  text: string;
  cls: 'idle' | 'ok' | 'warn' | 'alert';
}

export function decisionBadge(view: StreamView): Badge {
  if (view.decision === null) return { text: 'no data', cls: 'idle' };
  return view.decision.drifting ? { text: 'drifting', cls: 'alert' } : { text: 'steady', cls: 'ok' };
}

export function classBadge(view: StreamView): Badge {
  if (view.classification === null) return { text: 'no data', cls: 'idle' };
  const kind = view.classification.kind;
  if (kind === 'abnormal') return { text: 'abnormal', cls: 'alert' };
  if (kind === 'natural') return { text: 'natural', cls: 'warn' };
  return { text: 'none', cls: 'idle' };
}

function badgesHtml(view: StreamView): string {
  const decision = decisionBadge(view);
  const klass = classBadge(view);
  const decidedAt = view.decision === null ? '' : ` title="decided at ${fmtTime(view.decision.decided_at)}"`;
  const classifiedAt =
    view.classification === null ? '' : ` title="classified at ${fmtTime(view.classification.classified_at)}"`;
  return (
    `<div class="badges">` +
    `<span class="badge badge-${decision.cls}" data-badge="decision"${decidedAt}>${escapeHtml(decision.text)}</span>` +
    `<span class="badge badge-${klass.cls}" data-badge="classification"${classifiedAt}>${escapeHtml(klass.text)}</span>` +
    `</div>`
  );
}

// -------------------------------------------------------------- chart

const CHART_W = 240;
const CHART_H = 60;
const PAD = 3;

function markerX(at: number, tMin: number, tMax: number): number | null {
  if (at < tMin || at > tMax) return null;
  const span = tMax - tMin;
  const frac = span === 0 ? 0.5 : (at - tMin) / span;
  return PAD + frac * (CHART_W - 2 * PAD);
}

/**
 * Inline SVG sparkline over the rolling series, with vertical rules for
 * the markers that fall inside the visible time range. No samples means
 * no relay for this stream, which is the privacy mode the detectors
 * enforce; the panel says so instead of drawing an empty chart.
 */
export function chartHtml(view: StreamView): string {
  if (view.points.length === 0) {
    return `<p class="privacy-note">no relayed samples, badges only (privacy mode)</p>`;
  }
  const ts = view.points.map((p) => p.t);
  const vs = view.points.map((p) => p.v);
  const tMin = Math.min(...ts);
  const tMax = Math.max(...ts);
  const vMin = Math.min(...vs);
  const vMax = Math.max(...vs);
  const vSpan = vMax - vMin || 1;
  const tSpan = tMax - tMin || 1;
  const coords = view.points
    .map((p) => {
      const x = PAD + ((p.t - tMin) / tSpan) * (CHART_W - 2 * PAD);
      const y = CHART_H - PAD - ((p.v - vMin) / vSpan) * (CHART_H - 2 * PAD);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
  const rules = view.markers
    .map((marker) => {
      const x = markerX(marker.at, tMin, tMax);
      if (x === null) return '';
      return (
        `<line class="marker-line marker-${marker.kind}" x1="${x.toFixed(1)}" y1="0"` +
        ` x2="${x.toFixed(1)}" y2="${CHART_H}"><title>${escapeHtml(marker.label)}</title></line>`
      );
    })
    .join('');
  const latest = view.points[view.points.length - 1];
  return (
    `<figure class="chart">` +
    `<svg viewBox="0 0 ${CHART_W} ${CHART_H}" preserveAspectRatio="none" role="img">` +
    `<polyline class="series" points="${coords}" fill="none"></polyline>${rules}</svg>` +
    `<figcaption>latest ${fmtValue(latest.v)} at ${fmtTime(latest.t)} (${view.points.length} pts)</figcaption>` +
    `</figure>`
  );
}

// ------------------------------------------------------------- markers

function markerItem(marker: Marker): string {
  return (
    `<li class="marker marker-${marker.kind}">` +
    `<span class="marker-at">${fmtTime(marker.at)}</span> ${escapeHtml(marker.label)}</li>`
  );
}

const MARKERS_SHOWN = 8;

function markersHtml(view: StreamView): string {
  if (view.markers.length === 0) return '';
  const recent = view.markers.slice(-MARKERS_SHOWN);
  return `<ul class="markers">${recent.map(markerItem).join('')}</ul>`;
}

// -------------------------------------------------------------- panel

registerPanel({ id: 'badges', render: ({ view }) => badgesHtml(view) });
registerPanel({ id: 'chart', render: ({ view }) => chartHtml(view) });
registerPanel({ id: 'markers', render: ({ view }) => markersHtml(view) });

export function renderStreamPanel(view: StreamView): string {
  const ctx: PanelContext = { view };
  const meta = [view.site, view.sensorType].filter((part) => part !== '').map(escapeHtml).join(' | ');
  const slots = registry
    .map((plugin) => `<section class="panel-slot" data-slot="${escapeHtml(plugin.id)}">${plugin.render(ctx)}</section>`)
    .join('');
  return (
    `<article class="panel" data-stream="${escapeHtml(view.streamId)}">` +
    `<header><h3>${escapeHtml(view.streamId)}</h3><small>${meta}</small></header>${slots}</article>`
  );
}
