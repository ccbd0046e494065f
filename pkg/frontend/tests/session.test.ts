import { describe, expect, it } from 'vitest';

import { DecisionApi, DecisionResponse } from '../src/api.js';
import { ScreeningSession, parseMeasurement } from '../src/session.js';

function fakeResponse(partial: Partial<DecisionResponse>): DecisionResponse {
  return {
    stratum: 'M',
    x1: 12.8,
    x2: null,
    cutoff: 13,
    probability_eligible: 0.5,
    posterior_mean: 13.5,
    posterior_sd: 0.8,
    recommendation: 'retest-informative',
    band: [0.2, 0.8],
    grid: [12, 13, 14],
    prior_density: [0.1, 0.2, 0.1],
    likelihood_density: [0.1, 0.2, 0.1],
    posterior_density: [0.1, 0.2, 0.1],
    averaged_over_draws: false,
    n_draws: 1,
    warnings: [],
    ...partial,
  };
}

function mockApi(
  handler: (body: Record<string, unknown>) => DecisionResponse | { status: number; error: string },
): DecisionApi {
  const fetchImpl = async (url: string, init?: RequestInit): Promise<Response> => {
    if (url.endsWith('/model')) {
      return new Response(
        JSON.stringify({ kind: 'point-params', strata: ['M'], cutoffs: { M: 13 } }),
        { status: 200 },
      );
    }
    const body = JSON.parse(String(init?.body ?? '{}'));
    const out = handler(body);
    if ('status' in out && 'error' in out) {
      return new Response(JSON.stringify({ error: out.error }), { status: out.status });
    }
    return new Response(JSON.stringify(out), { status: 200 });
  };
  return new DecisionApi('http://test', fetchImpl);
}

describe('parseMeasurement', () => {
  it('accepts sensible values', () => {
    expect(parseMeasurement('12.8')).toBe(12.8);
    expect(parseMeasurement(' 14 ')).toBe(14);
  });

  it('rejects non-numbers without a request', () => {
    expect(typeof parseMeasurement('abc')).toBe('string');
    expect(typeof parseMeasurement('')).toBe('string');
  });

  it('rejects values outside the sanity band', () => {
    expect(typeof parseMeasurement('2.5')).toBe('string');
    expect(typeof parseMeasurement('40')).toBe('string');
  });
});

describe('ScreeningSession', () => {
  it('submits the first measurement and enables the second', async () => {
    const api = mockApi((body) =>
      fakeResponse({ probability_eligible: body.x2 == null ? 0.47 : 0.59 }),
    );
    const session = new ScreeningSession(api, 'M', 13);
    expect(session.canEnterSecond).toBe(false);

    const first = await session.submitMeasurement('12.8', 'first');
    expect(first?.probability_eligible).toBe(0.47);
    expect(session.canEnterSecond).toBe(true);
    expect(session.displayed?.probability_eligible).toBe(0.47);

    const second = await session.submitMeasurement('13.2', 'second');
    expect(second?.probability_eligible).toBe(0.59);
    expect(session.displayed?.probability_eligible).toBe(0.59);
    expect(session.state.history).toHaveLength(2);
  });

  it('refuses a second measurement before the first', async () => {
    const api = mockApi(() => fakeResponse({}));
    const session = new ScreeningSession(api, 'M', 13);
    const out = await session.submitMeasurement('12.4', 'second');
    expect(out).toBeNull();
    expect(session.state.error).toMatch(/first measurement/);
  });

  it('does not send a request on invalid input', async () => {
    let calls = 0;
    const api = mockApi(() => {
      calls += 1;
      return fakeResponse({});
    });
    const session = new ScreeningSession(api, 'M', 13);
    const out = await session.submitMeasurement('abc', 'first');
    expect(out).toBeNull();
    expect(calls).toBe(0);
    expect(session.state.error).toBeTruthy();
  });

  it('keeps prior state on server failure (non-blocking banner)', async () => {
    let fail = false;
    const api = mockApi(() => {
      if (fail) return { status: 500, error: 'boom' };
      return fakeResponse({ probability_eligible: 0.47 });
    });
    const session = new ScreeningSession(api, 'M', 13);
    await session.submitMeasurement('12.8', 'first');
    fail = true;
    const out = await session.submitMeasurement('12.4', 'second');
    expect(out).toBeNull();
    expect(session.state.error).toMatch(/boom/);
    // previous displayed probability retained
    expect(session.displayed?.probability_eligible).toBe(0.47);
  });

  it('entering a new first measurement clears the second', async () => {
    const api = mockApi((body) =>
      fakeResponse({ probability_eligible: body.x2 == null ? 0.4 : 0.6 }),
    );
    const session = new ScreeningSession(api, 'M', 13);
    await session.submitMeasurement('12.8', 'first');
    await session.submitMeasurement('13.2', 'second');
    await session.submitMeasurement('12.5', 'first');
    expect(session.state.x2).toBeNull();
    expect(session.displayed?.probability_eligible).toBe(0.4);
  });
});
