/** Small pure formatting helpers shared by panels and the shell. */

const ENTITIES: Record<string, string> = {
  '&': '&amp;',
  '<': '&lt;',
  '>': '&gt;',
  '"': '&quot;',
  "'": '&#39;',
};

/** Every payload-derived string goes through here before innerHTML. */
export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => ENTITIES[ch]);
}

/** Clock-on-the-wall rendering of an epoch-ms timestamp. */
export function fmtTime(epochMs: number): string {
  if (!Number.isFinite(epochMs)) return '?';
  return new Date(epochMs).toISOString().slice(11, 23);
}

export function fmtValue(value: number): string {
  if (!Number.isFinite(value)) return String(value);
  const rounded = Math.round(value * 1000) / 1000;
  return String(rounded);
}
