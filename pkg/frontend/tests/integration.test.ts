// End-to-end acceptance against the real decision endpoint:
//   B1: the three reference scenarios displayed by the session logic match
//       the CLI decide output to 0.1 percentage point;
//   B2: the what-if curve (>= 20 points) is monotone nondecreasing and each
//       point equals a direct endpoint call exactly.
//
// Spawns the Python server and CLI from the repository root.

import { spawn, spawnSync, ChildProcess } from 'node:child_process';
import { mkdtempSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { DecisionApi } from '../src/api.js';
import { ScreeningSession } from '../src/session.js';
import { WhatIfRunner, isNondecreasing } from '../src/whatif.js';

const REPO_ROOT = resolve(__dirname, '..', '..');
const PY_ENV = {
  ...process.env,
  PYTHONPATH: join(REPO_ROOT, 'src'),
};
const PORT = 8743;
const BASE = `http://127.0.0.1:${PORT}`;

const POINT_PARAMS = {
  kind: 'point-params',
  model_id: 'b',
  strata: ['M', 'F'],
  bounds: {},
  theta: {
    M: { mu: 15.74, sigma_pop: Math.sqrt(1.63), s: 0.36, df: 2.6 },
    F: { mu: 13.82, sigma_pop: Math.sqrt(1.13), s: 0.36, df: 3.28 },
  },
  cutoffs: { M: 13.0, F: 12.5 },
};

let server: ChildProcess | null = null;
let paramsPath = '';

async function waitForServer(url: string, attempts = 60): Promise<void> {
  for (let i = 0; i < attempts; i++) {
    try {
      const resp = await fetch(`${url}/model`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`server at ${url} did not come up`);
}

function cliDecide(x1: number, x2: number | null): number {
  const args = [
    '-m', 'retestkit.cli', 'decide',
    '--x1', String(x1),
    ...(x2 !== null ? ['--x2', String(x2)] : []),
    '--cutoff', '13', '--stratum', 'M',
    '--params', paramsPath, '--no-grid',
  ];
  const out = spawnSync('python3', args, { env: PY_ENV, encoding: 'utf-8' });
  if (out.status !== 0) {
    throw new Error(`cli decide failed: ${out.stderr}`);
  }
  const doc = JSON.parse(out.stdout);
  return doc.results.probability_eligible as number;
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), 'retest-ui-'));
  paramsPath = join(dir, 'params.json');
  writeFileSync(paramsPath, JSON.stringify(POINT_PARAMS));
  server = spawn(
    'python3',
    ['-m', 'retestkit.cli', 'serve', '--params', paramsPath,
     '--port', String(PORT), '--host', '127.0.0.1'],
    { env: PY_ENV, stdio: ['ignore', 'pipe', 'pipe'] },
  );
  await waitForServer(BASE);
}, 40_000);

afterAll(() => {
  server?.kill();
});

describe('B1: scenario replay equals CLI output', () => {
  it('reproduces the three reference scenarios to 0.1 pp', async () => {
    const api = new DecisionApi(BASE);
    const session = new ScreeningSession(api, 'M', 13);

    const first = await session.submitMeasurement('12.8', 'first');
    expect(first).not.toBeNull();
    const uiA = session.displayed!.probability_eligible;
    expect(Math.abs(uiA - cliDecide(12.8, null))).toBeLessThan(0.001);

    const low = await session.submitMeasurement('12.4', 'second');
    expect(low).not.toBeNull();
    const uiB = session.displayed!.probability_eligible;
    expect(Math.abs(uiB - cliDecide(12.8, 12.4))).toBeLessThan(0.001);

    const high = await session.submitMeasurement('13.2', 'second');
    expect(high).not.toBeNull();
    const uiC = session.displayed!.probability_eligible;
    expect(Math.abs(uiC - cliDecide(12.8, 13.2))).toBeLessThan(0.001);

    // adding the lower repeat moves the probability down, the higher one up
    expect(uiB).toBeLessThan(uiA);
    expect(uiC).toBeGreaterThan(uiA);
  }, 60_000);
});

describe('B2: what-if curve', () => {
  it('renders >= 20 monotone points that match the endpoint exactly', async () => {
    const api = new DecisionApi(BASE);
    const runner = new WhatIfRunner(api);
    const curve = await runner.run('M', 12.8, 13);
    expect(curve).not.toBeNull();
    expect(curve!.points.length).toBeGreaterThanOrEqual(20);
    expect(isNondecreasing(curve!.points)).toBe(true);
    // every cached/rendered value equals a fresh endpoint response exactly
    for (const pt of [curve!.points[0], curve!.points[12],
                      curve!.points[curve!.points.length - 1]]) {
      const direct = await api.decide({ stratum: 'M', x1: 12.8, x2: pt.x2, cutoff: 13 });
      expect(pt.probability).toBe(direct.probability_eligible);
    }
  }, 120_000);
});
