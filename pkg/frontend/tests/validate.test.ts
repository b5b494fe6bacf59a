import { describe, expect, it } from 'vitest';
import { isClearing, validateCommandForm, type CommandForm } from '../src/validate.js';

function form(over: Partial<CommandForm> = {}): CommandForm {
  return {
    target: 's1',
    kind: 'step',
    magnitude: '5',
    durationMs: '0',
    scope: 'single',
    sensorType: 'temperature',
    ...over,
  };
}

describe('validateCommandForm', () => {
  it('accepts a plain step and parses the numbers', () => {
    const result = validateCommandForm(form());
    expect(result.ok).toBe(true);
    if (!result.ok) return;
    expect(result.command).toEqual({
      target_stream_id: 's1',
      kind: 'step',
      magnitude: 5,
      duration_ms: 0,
      scope: 'single',
      sensor_type: 'temperature',
    });
  });

  it('rejects an unknown kind before anything else', () => {
    const result = validateCommandForm(form({ kind: 'spike' }));
    expect(result).toEqual({ ok: false, reason: 'unknown drift kind "spike"' });
  });

  it('rejects an unknown scope', () => {
    const result = validateCommandForm(form({ scope: 'everything' }));
    expect(result).toEqual({ ok: false, reason: 'unknown drift scope "everything"' });
  });

  it.each(['', 'abc', 'Infinity', 'NaN'])('rejects non-finite magnitude %j', (raw) => {
    const result = validateCommandForm(form({ magnitude: raw }));
    expect(result).toEqual({ ok: false, reason: 'magnitude must be finite' });
  });

  it('rejects a zero noise scale before send', () => {
    const result = validateCommandForm(form({ kind: 'noise_scale', magnitude: '0' }));
    expect(result).toEqual({ ok: false, reason: 'magnitude must be > 0' });
  });

  it('rejects a negative noise scale', () => {
    const result = validateCommandForm(form({ kind: 'noise_scale', magnitude: '-2' }));
    expect(result).toEqual({ ok: false, reason: 'magnitude must be > 0' });
  });

  it('accepts the neutral noise scale as a clearing command', () => {
    const result = validateCommandForm(form({ kind: 'noise_scale', magnitude: '1.0' }));
    expect(result.ok).toBe(true);
  });

  it('requires a duration for a real ramp', () => {
    const result = validateCommandForm(form({ kind: 'ramp', magnitude: '3', durationMs: '0' }));
    expect(result).toEqual({ ok: false, reason: 'ramp requires duration_ms > 0' });
  });

  it('lets a zero-magnitude ramp through without a duration (it clears)', () => {
    const result = validateCommandForm(form({ kind: 'ramp', magnitude: '0', durationMs: '0' }));
    expect(result.ok).toBe(true);
  });

  it('rejects a negative duration', () => {
    const result = validateCommandForm(form({ durationMs: '-5' }));
    expect(result).toEqual({ ok: false, reason: 'duration_ms must be >= 0' });
  });

  it('rejects a fractional duration', () => {
    const result = validateCommandForm(form({ durationMs: '10.5' }));
    expect(result).toEqual({
      ok: false,
      reason: 'duration_ms must be a whole number of milliseconds',
    });
  });

  it('treats a blank duration as zero', () => {
    const result = validateCommandForm(form({ durationMs: '' }));
    expect(result.ok).toBe(true);
    if (result.ok) expect(result.command.duration_ms).toBe(0);
  });

  it('requires a target for single scope', () => {
    const result = validateCommandForm(form({ target: '  ' }));
    expect(result).toEqual({ ok: false, reason: 'single-scope commands need a target_stream_id' });
  });

  it('requires a sensor type for all_of_type scope', () => {
    const result = validateCommandForm(form({ scope: 'all_of_type', sensorType: '' }));
    expect(result).toEqual({ ok: false, reason: 'all_of_type commands need a sensor_type' });
  });

  it('blanks the target on a broadcast so the body matches the scope', () => {
    const result = validateCommandForm(form({ scope: 'all_of_type', target: 's1' }));
    expect(result.ok).toBe(true);
    if (result.ok) expect(result.command.target_stream_id).toBe('');
  });

  it('trims whitespace off text fields', () => {
    const result = validateCommandForm(form({ target: ' s1 ', sensorType: ' temperature ' }));
    expect(result.ok).toBe(true);
    if (!result.ok) return;
    expect(result.command.target_stream_id).toBe('s1');
    expect(result.command.sensor_type).toBe('temperature');
  });
});

describe('isClearing', () => {
  it('mirrors the emulator convention per kind', () => {
    expect(isClearing('step', 0)).toBe(true);
    expect(isClearing('step', 5)).toBe(false);
    expect(isClearing('ramp', 0)).toBe(true);
    expect(isClearing('ramp', -2)).toBe(false);
    expect(isClearing('noise_scale', 1.0)).toBe(true);
    expect(isClearing('noise_scale', 3)).toBe(false);
    expect(isClearing('stuck_at', 0)).toBe(false);
  });
});
