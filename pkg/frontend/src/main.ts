// DOM wiring for the screening companion page.

import { DecisionApi, ApiError, DecisionResponse } from './api.js';
import { ScreeningSession } from './session.js';
import { WhatIfRunner, isNondecreasing } from './whatif.js';
import { debounce } from './debounce.js';
import { drawDensities, drawWhatIf } from './chart.js';
import { formatPercent, RECOMMENDATION_LABELS } from './format.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const state = {
  api: new DecisionApi('http://localhost:8433'),
  session: null as ScreeningSession | null,
  whatIf: null as WhatIfRunner | null,
  cutoffs: {} as Record<string, number>,
};

function setBanner(message: string | null): void {
  const banner = el<HTMLDivElement>('banner');
  banner.textContent = message ?? '';
  banner.style.display = message ? 'block' : 'none';
}

function renderResponse(resp: DecisionResponse): void {
  el<HTMLDivElement>('probability').textContent =
    formatPercent(resp.probability_eligible);
  const rec = el<HTMLDivElement>('recommendation');
  rec.textContent = RECOMMENDATION_LABELS[resp.recommendation] ?? resp.recommendation;
  rec.dataset.kind = resp.recommendation;
  el<HTMLDivElement>('posterior-stats').textContent =
    `posterior mean ${resp.posterior_mean.toFixed(2)} g/dL, ` +
    `sd ${resp.posterior_sd.toFixed(2)}`;
  drawDensities(el<HTMLCanvasElement>('density-chart'), resp);
  el<HTMLInputElement>('x2-input').disabled = false;
  el<HTMLButtonElement>('x2-submit').disabled = false;
}

async function connect(): Promise<void> {
  const base = el<HTMLInputElement>('endpoint-input').value.replace(/\/+$/, '');
  state.api = new DecisionApi(base);
  try {
    const info = await state.api.model();
    state.cutoffs = info.cutoffs;
    const select = el<HTMLSelectElement>('stratum-select');
    select.innerHTML = '';
    for (const s of info.strata) {
      const opt = document.createElement('option');
      opt.value = s;
      opt.textContent = s;
      select.appendChild(opt);
    }
    onStratumChange();
    setBanner(null);
    el<HTMLDivElement>('connected').textContent =
      `connected (${info.kind}${info.converged === false ? ', non-converged fit' : ''})`;
  } catch (err) {
    setBanner(err instanceof ApiError ? err.message : String(err));
  }
}

function onStratumChange(): void {
  const stratum = el<HTMLSelectElement>('stratum-select').value;
  const cutoff = state.cutoffs[stratum];
  el<HTMLInputElement>('cutoff-input').value = String(cutoff ?? '');
  state.session = new ScreeningSession(state.api, stratum, cutoff);
  state.whatIf = new WhatIfRunner(state.api);
  el<HTMLInputElement>('x2-input').disabled = true;
  el<HTMLButtonElement>('x2-submit').disabled = true;
  el<HTMLDivElement>('probability').textContent = '—';
  el<HTMLDivElement>('recommendation').textContent = '';
}

async function submit(which: 'first' | 'second'): Promise<void> {
  if (!state.session) return;
  const cutoff = Number(el<HTMLInputElement>('cutoff-input').value);
  state.session.state.cutoff = cutoff;
  const input = el<HTMLInputElement>(which === 'first' ? 'x1-input' : 'x2-input');
  const resp = await state.session.submitMeasurement(input.value, which);
  if (resp) {
    renderResponse(resp);
    setBanner(null);
    if (which === 'first') scheduleWhatIf();
  } else {
    setBanner(state.session.state.error);
  }
}

const scheduleWhatIf = debounce(async () => {
  if (!state.session || !state.whatIf) return;
  const s = state.session.state;
  if (s.x1 === null) return;
  const curve = await state.whatIf.run(s.stratum, s.x1, s.cutoff);
  if (!curve) return; // superseded by newer input
  drawWhatIf(el<HTMLCanvasElement>('whatif-chart'), curve, s.cutoff,
             state.session.displayed?.band ?? [0.2, 0.8]);
  el<HTMLDivElement>('whatif-note').textContent = isNondecreasing(curve.points)
    ? 'repeat value helps monotonically across this range'
    : 'note: curve not monotone across this range';
}, 150);

export function init(): void {
  el<HTMLButtonElement>('connect-btn').addEventListener('click', () => void connect());
  el<HTMLSelectElement>('stratum-select').addEventListener('change', onStratumChange);
  el<HTMLButtonElement>('x1-submit').addEventListener('click', () => void submit('first'));
  el<HTMLButtonElement>('x2-submit').addEventListener('click', () => void submit('second'));
  el<HTMLInputElement>('x1-input').addEventListener('keydown', (e) => {
    if (e.key === 'Enter') void submit('first');
  });
  el<HTMLInputElement>('x2-input').addEventListener('keydown', (e) => {
    if (e.key === 'Enter') void submit('second');
  });
  void connect();
}

if (typeof document !== 'undefined' && document.readyState !== 'loading') {
  init();
} else if (typeof document !== 'undefined') {
  document.addEventListener('DOMContentLoaded', init);
}
