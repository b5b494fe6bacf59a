/**
 * DOM shell: header with feed status and health counts, the panel
 * grid, the drift injection form, and the ack log. All state lives in
 * the view store; this layer only projects it into innerHTML and rails
 * user input back out through the submit callback.
 */

import { escapeHtml, fmtTime } from './format.js';
import { renderStreamPanel } from './panels.js';
import type { ViewStore } from './store.js';
import type { FeedStatus } from './events.js';
import { isClearing, validateCommandForm, type CommandForm } from './validate.js';
import type { AckPayload, CommandBody, HealthzReport } from './types.js';

export interface ConsoleDeps {
  store: ViewStore;
  submit: (command: CommandBody) => Promise<AckPayload[]>;
  onInjected?: (command: CommandBody, acks: AckPayload[]) => void;
}

export interface ConsoleHandle {
  renderPanels(): void;
  setFeedStatus(status: FeedStatus): void;
  setHealth(report: HealthzReport): void;
}

const SHELL = `
  <header class="topbar">
    <h1>LE3D console</h1>
    <span id="feed-status" class="pill pill-connecting">connecting</span>
    <span id="health-line"></span>
  </header>
  <main id="panels" class="panel-grid"></main>
  <aside class="controls">
    <h2>inject drift</h2>
    <form id="inject-form">
      <label>kind
        <select name="kind">
          <option value="step">step</option>
          <option value="ramp">ramp</option>
          <option value="stuck_at">stuck_at</option>
          <option value="noise_scale">noise_scale</option>
        </select>
      </label>
      <label>scope
        <select name="scope">
          <option value="single">single</option>
          <option value="all_of_type">all_of_type</option>
        </select>
      </label>
      <label>target stream <input name="target" placeholder="stream id (single scope)"></label>
      <label>sensor type <input name="sensorType" placeholder="e.g. temperature"></label>
      <label>magnitude <input name="magnitude" value="5"></label>
      <label>duration ms <input name="durationMs" value="0"></label>
      <button type="submit">send</button>
      <span id="form-hint"></span>
      <p id="form-error" role="alert"></p>
    </form>
    <h2>acks</h2>
    <ul id="ack-log"></ul>
  </aside>
`;

const ACK_LOG_CAP = 50;

function must<T extends Element>(root: ParentNode, selector: string): T {
  const el = root.querySelector<T>(selector);
  if (el === null) throw new Error(`console shell is missing ${selector}`);
  return el;
}

function readForm(form: HTMLFormElement): CommandForm {
  const data = new FormData(form);
  const text = (name: string) => String(data.get(name) ?? '');
  return {
    target: text('target'),
    kind: text('kind'),
    magnitude: text('magnitude'),
    durationMs: text('durationMs'),
    scope: text('scope'),
    sensorType: text('sensorType'),
  };
}

export function mountConsole(root: HTMLElement, deps: ConsoleDeps): ConsoleHandle {
  root.innerHTML = SHELL;
  const panels = must<HTMLElement>(root, '#panels');
  const statusPill = must<HTMLElement>(root, '#feed-status');
  const healthLine = must<HTMLElement>(root, '#health-line');
  const form = must<HTMLFormElement>(root, '#inject-form');
  const formHint = must<HTMLElement>(root, '#form-hint');
  const formError = must<HTMLElement>(root, '#form-error');
  const ackLog = must<HTMLUListElement>(root, '#ack-log');

  let renderQueued = false;

  function renderPanels(): void {
    renderQueued = false;
    const views = deps.store.views();
    if (views.length === 0) {
      panels.innerHTML = `<p class="empty">no streams assigned yet</p>`;
      return;
    }
    panels.innerHTML = views.map(renderStreamPanel).join('');
  }

  // Event bursts collapse into one repaint per macrotask.
  deps.store.onChange(() => {
    if (renderQueued) return;
    renderQueued = true;
    setTimeout(renderPanels, 0);
  });

  function logAck(text: string, ok: boolean): void {
    const item = document.createElement('li');
    item.className = ok ? 'ack-ok' : 'ack-bad';
    item.innerHTML = text;
    ackLog.prepend(item);
    while (ackLog.children.length > ACK_LOG_CAP) {
      ackLog.lastElementChild?.remove();
    }
  }

  function updateHint(): void {
    const parsed = validateCommandForm(readForm(form));
    if (!parsed.ok) {
      formHint.textContent = '';
      return;
    }
    const { kind, magnitude } = parsed.command;
    formHint.textContent = isClearing(kind, magnitude) ? 'clears the active drift' : '';
  }
  form.addEventListener('input', updateHint);

  async function send(command: CommandBody): Promise<void> {
    const button = must<HTMLButtonElement>(form, 'button[type=submit]');
    button.disabled = true;
    try {
      const acks = await deps.submit(command);
      if (acks.length === 0) {
        logAck('no emulator acknowledged the command', false);
      }
      for (const ack of acks) {
        const verdict = ack.ok ? 'ack' : `nack: ${escapeHtml(ack.reason ?? 'unspecified')}`;
        logAck(
          `<time>${fmtTime(ack.acked_at)}</time> ${escapeHtml(ack.stream_id)} ${escapeHtml(ack.kind)} ${verdict}`,
          ack.ok,
        );
      }
      deps.onInjected?.(command, acks);
      formError.innerHTML = '';
    } catch (err) {
      // server rejections read as-is; transport failures get a retry button
      const reason = err instanceof Error ? err.message : String(err);
      formError.innerHTML = `send failed: ${escapeHtml(reason)} <button type="button" id="retry-send">retry</button>`;
      formError.querySelector('#retry-send')?.addEventListener('click', () => void send(command));
    } finally {
      button.disabled = false;
    }
  }

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    const parsed = validateCommandForm(readForm(form));
    if (!parsed.ok) {
      formError.textContent = parsed.reason;
      return;
    }
    formError.textContent = '';
    void send(parsed.command);
  });

  renderPanels();

  return {
    renderPanels,
    setFeedStatus(status: FeedStatus): void {
      statusPill.textContent = status;
      statusPill.className = `pill pill-${status}`;
    },
    setHealth(report: HealthzReport): void {
      const bus = report.bus_attached ? 'bus up' : 'no bus';
      healthLine.textContent =
        `${report.entities} entities, ${report.assignments} assignments, ` +
        `${report.decision_streams} decided, ${report.classification_streams} classified, ${bus}`;
    },
  };
}
