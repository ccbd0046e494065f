// Screening session state machine: one donor visit, up to two measurements,
// every probability sourced from the endpoint.

import { DecisionApi, DecisionResponse, ApiError } from './api.js';

export const VALUE_MIN = 3;
export const VALUE_MAX = 25;

export interface SessionState {
  stratum: string;
  cutoff: number;
  x1: number | null;
  x2: number | null;
  firstResponse: DecisionResponse | null;
  secondResponse: DecisionResponse | null;
  history: DecisionResponse[];
  error: string | null; // non-blocking banner; prior state retained on failure
  pending: boolean;
}

export type Which = 'first' | 'second';

export function parseMeasurement(raw: string): number | string {
  const v = Number(raw.trim());
  if (raw.trim() === '' || !Number.isFinite(v)) {
    return 'enter a number in g/dL';
  }
  if (v < VALUE_MIN || v > VALUE_MAX) {
    return `value must be between ${VALUE_MIN} and ${VALUE_MAX} g/dL`;
  }
  return v;
}

export class ScreeningSession {
  state: SessionState;

  constructor(
    private readonly api: DecisionApi,
    stratum: string,
    cutoff: number,
  ) {
    this.state = {
      stratum,
      cutoff,
      x1: null,
      x2: null,
      firstResponse: null,
      secondResponse: null,
      history: [],
      error: null,
      pending: false,
    };
  }

  /** The probability the operator should currently see (latest response). */
  get displayed(): DecisionResponse | null {
    return this.state.secondResponse ?? this.state.firstResponse;
  }

  get canEnterSecond(): boolean {
    return this.state.firstResponse !== null;
  }

  reset(stratum?: string, cutoff?: number): void {
    this.state = {
      stratum: stratum ?? this.state.stratum,
      cutoff: cutoff ?? this.state.cutoff,
      x1: null,
      x2: null,
      firstResponse: null,
      secondResponse: null,
      history: [],
      error: null,
      pending: false,
    };
  }

  async submitMeasurement(raw: string, which: Which): Promise<DecisionResponse | null> {
    const parsed = parseMeasurement(raw);
    if (typeof parsed === 'string') {
      this.state.error = parsed; // inline validation: no request sent
      return null;
    }
    if (which === 'second' && !this.canEnterSecond) {
      this.state.error = 'enter the first measurement before a repeat';
      return null;
    }
    const req = {
      stratum: this.state.stratum,
      x1: which === 'first' ? parsed : (this.state.x1 as number),
      ...(which === 'second' ? { x2: parsed } : {}),
      cutoff: this.state.cutoff,
    };
    this.state.pending = true;
    try {
      const resp = await this.api.decide(req);
      if (which === 'first') {
        this.state.x1 = parsed;
        this.state.x2 = null;
        this.state.firstResponse = resp;
        this.state.secondResponse = null;
      } else {
        this.state.x2 = parsed;
        this.state.secondResponse = resp;
      }
      this.state.history.push(resp);
      this.state.error = null;
      return resp;
    } catch (err) {
      // keep the previous probability on screen; surface a banner only
      this.state.error =
        err instanceof ApiError ? `server error: ${err.message}` : String(err);
      return null;
    } finally {
      this.state.pending = false;
    }
  }
}
