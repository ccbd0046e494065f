// What-if analysis: probability of eligibility against a grid of
// hypothetical second measurements, so the operator can see whether a
// retest could change the decision before performing it. Responses are
// cached per (stratum, x1, x2, cutoff) and stale runs are cancelled.

import { DecisionApi } from './api.js';

export interface WhatIfPoint {
  x2: number;
  probability: number;
}

export interface WhatIfCurve {
  x1: number;
  points: WhatIfPoint[];
}

// hypothetical-retest band: below it heavy-tailed error models discount the
// second measurement as an outlier and the curve is no longer monotone
export const GRID_BELOW_CUTOFF = 0.8;
export const GRID_ABOVE_CUTOFF = 2.0;
export const GRID_POINTS = 25;

export function whatIfGrid(cutoff: number, points = GRID_POINTS): number[] {
  const lo = cutoff - GRID_BELOW_CUTOFF;
  const hi = cutoff + GRID_ABOVE_CUTOFF;
  const out: number[] = [];
  for (let i = 0; i < points; i++) {
    out.push(lo + ((hi - lo) * i) / (points - 1));
  }
  return out;
}

export class WhatIfRunner {
  private cache = new Map<string, number>();
  private generation = 0;

  constructor(private readonly api: DecisionApi) {}

  private key(stratum: string, x1: number, x2: number, cutoff: number): string {
    return `${stratum}|${x1}|${x2}|${cutoff}`;
  }

  /**
   * Evaluate the curve; resolves to null when a newer run superseded this
   * one (later inputs cancel earlier ones).
   */
  async run(
    stratum: string,
    x1: number,
    cutoff: number,
    points = GRID_POINTS,
  ): Promise<WhatIfCurve | null> {
    const gen = ++this.generation;
    const grid = whatIfGrid(cutoff, points);
    const out: WhatIfPoint[] = [];
    for (const x2 of grid) {
      const k = this.key(stratum, x1, x2, cutoff);
      let p = this.cache.get(k);
      if (p === undefined) {
        const resp = await this.api.decide({ stratum, x1, x2, cutoff });
        if (gen !== this.generation) return null; // superseded mid-flight
        p = resp.probability_eligible;
        this.cache.set(k, p);
      }
      out.push({ x2, probability: p });
    }
    if (gen !== this.generation) return null;
    return { x1, points: out };
  }

  invalidate(): void {
    this.cache.clear();
  }
}

export function isNondecreasing(points: WhatIfPoint[], tol = 1e-9): boolean {
  for (let i = 1; i < points.length; i++) {
    if (points[i].probability < points[i - 1].probability - tol) return false;
  }
  return true;
}
