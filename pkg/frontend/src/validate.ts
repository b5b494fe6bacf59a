/**
 * Client-side mirror of the emulator's drift command rules.
 *
 * The coordination service forwards commands as-is and the emulators
 * nack bad ones, so none of this is load-bearing for safety. It exists
 * so an operator gets the rejection before the round trip, with the
 * same reason text the emulator would have sent back.
 */

import type { CommandBody, DriftKindName, DriftScopeName } from './types.js';

export const DRIFT_KINDS: readonly DriftKindName[] = ['step', 'ramp', 'stuck_at', 'noise_scale'];
export const DRIFT_SCOPES: readonly DriftScopeName[] = ['single', 'all_of_type'];

/** Raw form state, straight off the inputs. Numbers arrive as text. */
export interface CommandForm {
  target: string;
  kind: string;
  magnitude: string | number;
  durationMs: string | number;
  scope: string;
  sensorType: string;
}

export type ValidationResult =
  | { ok: true; command: CommandBody }
  | { ok: false; reason: string };

function parseNumber(raw: string | number): number | null {
  if (typeof raw === 'number') return raw;
  const text = raw.trim();
  if (text === '') return null;
  const value = Number(text);
  return Number.isNaN(value) ? null : value;
}

/**
 * A command that undoes its kind rather than starting a drift: zero-magnitude
 * step or ramp, or a noise scale back at neutral. Mirrors the emulator's
 * clearing convention so the form can label the action honestly.
 */
export function isClearing(kind: DriftKindName, magnitude: number): boolean {
  if (kind === 'step' || kind === 'ramp') return magnitude === 0;
  if (kind === 'noise_scale') return magnitude === 1.0;
  return false;
}

export function validateCommandForm(form: CommandForm): ValidationResult {
  const kind = form.kind.trim() as DriftKindName;
  if (!DRIFT_KINDS.includes(kind)) {
    return { ok: false, reason: `unknown drift kind ${JSON.stringify(form.kind)}` };
  }
  const scope = form.scope.trim() as DriftScopeName;
  if (!DRIFT_SCOPES.includes(scope)) {
    return { ok: false, reason: `unknown drift scope ${JSON.stringify(form.scope)}` };
  }

  const magnitude = parseNumber(form.magnitude);
  if (magnitude === null || !Number.isFinite(magnitude)) {
    return { ok: false, reason: 'magnitude must be finite' };
  }
  if (kind === 'noise_scale' && magnitude <= 0) {
    return { ok: false, reason: 'magnitude must be > 0' };
  }

  const duration = parseNumber(form.durationMs) ?? 0;
  if (!Number.isInteger(duration)) {
    return { ok: false, reason: 'duration_ms must be a whole number of milliseconds' };
  }
  if (duration < 0) {
    return { ok: false, reason: 'duration_ms must be >= 0' };
  }
  if (kind === 'ramp' && duration <= 0 && magnitude !== 0) {
    return { ok: false, reason: 'ramp requires duration_ms > 0' };
  }

  const target = form.target.trim();
  const sensorType = form.sensorType.trim();
  if (scope === 'single' && target === '') {
    return { ok: false, reason: 'single-scope commands need a target_stream_id' };
  }
  if (scope === 'all_of_type' && sensorType === '') {
    // same guard the control proxy applies, same reason text
    return { ok: false, reason: 'all_of_type commands need a sensor_type' };
  }

  return {
    ok: true,
    command: {
      target_stream_id: scope === 'single' ? target : '',
      kind,
      magnitude,
      duration_ms: duration,
      scope,
      sensor_type: sensorType,
    },
  };
}
