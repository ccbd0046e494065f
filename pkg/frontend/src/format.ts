export function formatPercent(p: number, decimals = 1): string {
  return `${(100 * p).toFixed(decimals)}%`;
}

export function formatValue(v: number): string {
  return `${v.toFixed(1)} g/dL`;
}

export const RECOMMENDATION_LABELS: Record<string, string> = {
  accept: 'Accept',
  defer: 'Defer',
  'retest-informative': 'Retest informative',
};
